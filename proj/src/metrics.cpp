#include "tenvoo/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "tenvoo/conv3d.hpp"
#include "tenvoo/rng.hpp"

namespace tenvoo {

namespace {

// Valid (no padding) separable filtering of a [D,H,W] volume along one axis.
Tensor filter_axis_valid(const Tensor& x, const std::vector<double>& taps, int axis) {
    const std::int64_t k = static_cast<std::int64_t>(taps.size());
    Shape out_shape = x.shape;
    out_shape[static_cast<std::size_t>(axis)] -= k - 1;
    if (out_shape[static_cast<std::size_t>(axis)] < 1) {
        throw std::invalid_argument("ms_ssim_3d: volume too small for window");
    }
    Tensor y = Tensor::zeros(out_shape);
    const auto& xs = x.shape;
    const std::int64_t D = out_shape[0], H = out_shape[1], W = out_shape[2];
    for (std::int64_t d = 0; d < D; ++d) {
        for (std::int64_t h = 0; h < H; ++h) {
            for (std::int64_t w = 0; w < W; ++w) {
                double acc = 0.0;
                for (std::int64_t j = 0; j < k; ++j) {
                    std::int64_t dd = d, hh = h, ww = w;
                    (axis == 0 ? dd : axis == 1 ? hh : ww) += j;
                    acc += taps[static_cast<std::size_t>(j)] *
                           x.data[static_cast<std::size_t>((dd * xs[1] + hh) * xs[2] + ww)];
                }
                y.data[static_cast<std::size_t>((d * H + h) * W + w)] = acc;
            }
        }
    }
    return y;
}

Tensor gaussian_blur_valid(const Tensor& x, const std::vector<double>& taps) {
    return filter_axis_valid(filter_axis_valid(filter_axis_valid(x, taps, 0), taps, 1), taps, 2);
}

// 2x average pooling, truncating odd trailing extents.
Tensor avg_pool2(const Tensor& x) {
    const std::int64_t D = x.shape[0] / 2, H = x.shape[1] / 2, W = x.shape[2] / 2;
    if (D < 1 || H < 1 || W < 1) throw std::invalid_argument("ms_ssim_3d: pooled volume empty");
    Tensor y = Tensor::zeros({D, H, W});
    for (std::int64_t d = 0; d < D; ++d)
        for (std::int64_t h = 0; h < H; ++h)
            for (std::int64_t w = 0; w < W; ++w) {
                double acc = 0.0;
                for (std::int64_t a = 0; a < 2; ++a)
                    for (std::int64_t b = 0; b < 2; ++b)
                        for (std::int64_t c = 0; c < 2; ++c)
                            acc += x.at({2 * d + a, 2 * h + b, 2 * w + c});
                y.data[static_cast<std::size_t>((d * H + h) * W + w)] = acc / 8.0;
            }
    return y;
}

Tensor elementwise_product(const Tensor& a, const Tensor& b) {
    Tensor out = a;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = a.data[i] * b.data[i];
    return out;
}

}  // namespace

double ms_ssim_3d(const Tensor& a, const Tensor& b, const MsSsimOptions& opt) {
    if (a.rank() != 3 || b.rank() != 3) throw std::invalid_argument("ms_ssim_3d: volumes are [D,H,W]");
    if (a.shape != b.shape) throw std::invalid_argument("ms_ssim_3d: shape mismatch");
    if (opt.scales < 1 || opt.scales > 3) throw std::invalid_argument("ms_ssim_3d: 1..3 scales supported");
    const std::int64_t need = opt.window * (std::int64_t{1} << (opt.scales - 1));
    for (std::int64_t e : a.shape) {
        if (e < need) {
            throw std::invalid_argument("ms_ssim_3d: extent " + std::to_string(e) +
                                        " < window*2^(scales-1) = " + std::to_string(need));
        }
    }

    // Standard 5-scale exponents, truncated to the first `scales` and
    // renormalized to sum 1.
    static const double kExp[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
    std::vector<double> w(static_cast<std::size_t>(opt.scales));
    double wsum = 0.0;
    for (int j = 0; j < opt.scales; ++j) wsum += kExp[j];
    for (int j = 0; j < opt.scales; ++j) w[static_cast<std::size_t>(j)] = kExp[j] / wsum;

    std::vector<double> taps(static_cast<std::size_t>(opt.window));
    const double centre = (opt.window - 1) / 2.0;
    double tsum = 0.0;
    for (int i = 0; i < opt.window; ++i) {
        const double d = i - centre;
        taps[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * opt.sigma * opt.sigma));
        tsum += taps[static_cast<std::size_t>(i)];
    }
    for (double& t : taps) t /= tsum;

    const double c1 = (0.01 * opt.dynamic_range) * (0.01 * opt.dynamic_range);
    const double c2 = (0.03 * opt.dynamic_range) * (0.03 * opt.dynamic_range);

    Tensor xa = a, xb = b;
    double result = 1.0;
    for (int scale = 0; scale < opt.scales; ++scale) {
        if (scale > 0) {
            xa = avg_pool2(xa);
            xb = avg_pool2(xb);
        }
        Tensor mu_a = gaussian_blur_valid(xa, taps);
        Tensor mu_b = gaussian_blur_valid(xb, taps);
        Tensor m_aa = gaussian_blur_valid(elementwise_product(xa, xa), taps);
        Tensor m_bb = gaussian_blur_valid(elementwise_product(xb, xb), taps);
        Tensor m_ab = gaussian_blur_valid(elementwise_product(xa, xb), taps);

        const std::size_t nvox = mu_a.data.size();
        double cs_sum = 0.0, l_sum = 0.0;
        for (std::size_t i = 0; i < nvox; ++i) {
            // Stored products keep numerator and denominator bitwise symmetric
            // for identical inputs, so ms_ssim_3d(a, a) is exactly 1.0 (the
            // build disables FP contraction for this file for the same reason).
            const double ma = mu_a.data[i], mb = mu_b.data[i];
            const double pa = ma * ma, pb = mb * mb, pab = ma * mb;
            const double va = m_aa.data[i] - pa;
            const double vb = m_bb.data[i] - pb;
            const double vab = m_ab.data[i] - pab;
            cs_sum += (vab + vab + c2) / (va + vb + c2);
            l_sum += (pab + pab + c1) / (pa + pb + c1);
        }
        const double cs = std::max(cs_sum / static_cast<double>(nvox), 0.0);
        result *= std::pow(cs, w[static_cast<std::size_t>(scale)]);
        if (scale == opt.scales - 1) {
            const double lum = std::max(l_sum / static_cast<double>(nvox), 0.0);
            result *= std::pow(lum, w[static_cast<std::size_t>(scale)]);
        }
    }
    return result;
}

double pairwise_ms_ssim(const std::vector<Tensor>& vols, std::uint64_t pair_seed,
                        const MsSsimOptions& opt, std::int64_t max_pairs) {
    const std::int64_t n = static_cast<std::int64_t>(vols.size());
    if (n < 2) throw std::invalid_argument("pairwise_ms_ssim: need at least 2 volumes");
    std::vector<std::pair<std::int64_t, std::int64_t>> pairs;
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
    if (static_cast<std::int64_t>(pairs.size()) > max_pairs) {
        Rng rng(pair_seed);
        // Partial Fisher-Yates: the first max_pairs slots become the sample.
        for (std::int64_t i = 0; i < max_pairs; ++i) {
            const std::int64_t j =
                i + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(
                        static_cast<std::int64_t>(pairs.size()) - i)));
            std::swap(pairs[static_cast<std::size_t>(i)], pairs[static_cast<std::size_t>(j)]);
        }
        pairs.resize(static_cast<std::size_t>(max_pairs));
    }
    double acc = 0.0;
    for (const auto& [i, j] : pairs) {
        acc += ms_ssim_3d(vols[static_cast<std::size_t>(i)], vols[static_cast<std::size_t>(j)],
                          opt);
    }
    return acc / static_cast<double>(pairs.size());
}

double ms_ssim_nearest_real(const std::vector<Tensor>& gen, const std::vector<Tensor>& real,
                            const MsSsimOptions& opt) {
    if (gen.empty() || real.empty()) throw std::invalid_argument("ms_ssim_nearest_real: empty set");
    double acc = 0.0;
    for (const Tensor& g : gen) {
        double best = -1.0;
        for (const Tensor& r : real) best = std::max(best, ms_ssim_3d(g, r, opt));
        acc += best;
    }
    return acc / static_cast<double>(gen.size());
}

Tensor encode_volume(const Tensor& vol, std::uint64_t encoder_seed) {
    if (vol.rank() != 3) throw std::invalid_argument("encode_volume: volume must be [D,H,W]");
    Rng rng(encoder_seed);
    const std::int64_t chans[4] = {1, 8, 16, 64};
    Tensor x = reshape(vol, {1, 1, vol.shape[0], vol.shape[1], vol.shape[2]});
    for (int layer = 0; layer < 3; ++layer) {
        const std::int64_t ci = chans[layer], co = chans[layer + 1];
        const double sigma = std::sqrt(2.0 / static_cast<double>(ci * 27));
        Tensor w = Tensor::random_normal({co, ci, 3, 3, 3}, rng, sigma);
        Tensor bias = Tensor::zeros({co});
        x = conv3d_forward(x, w, bias, {2, 2, 2}, {1, 1, 1});
        for (double& v : x.data) v = std::max(v, 0.0);
    }
    const std::int64_t c = x.shape[1];
    const std::int64_t spatial = x.shape[2] * x.shape[3] * x.shape[4];
    Tensor f = Tensor::zeros({c});
    for (std::int64_t ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (std::int64_t i = 0; i < spatial; ++i) {
            acc += x.data[static_cast<std::size_t>(ch * spatial + i)];
        }
        f.data[static_cast<std::size_t>(ch)] = acc / static_cast<double>(spatial);
    }
    return f;
}

MmdResult mmd_features(const std::vector<Tensor>& fa, const std::vector<Tensor>& fb) {
    const std::int64_t m = static_cast<std::int64_t>(fa.size());
    const std::int64_t n = static_cast<std::int64_t>(fb.size());
    if (m == 0 || n == 0) throw std::invalid_argument("mmd: empty feature set");

    std::vector<const Tensor*> all;
    all.reserve(static_cast<std::size_t>(m + n));
    for (const Tensor& f : fa) all.push_back(&f);
    for (const Tensor& f : fb) all.push_back(&f);

    auto dist2 = [](const Tensor& x, const Tensor& y) {
        if (x.shape != y.shape) throw std::invalid_argument("mmd: feature shape mismatch");
        double acc = 0.0;
        for (std::size_t i = 0; i < x.data.size(); ++i) {
            const double d = x.data[i] - y.data[i];
            acc += d * d;
        }
        return acc;
    };

    std::vector<double> dists;
    for (std::size_t i = 0; i < all.size(); ++i)
        for (std::size_t j = i + 1; j < all.size(); ++j)
            dists.push_back(std::sqrt(dist2(*all[i], *all[j])));
    double h = 1.0;
    if (!dists.empty()) {
        std::sort(dists.begin(), dists.end());
        h = dists[(dists.size() - 1) / 2];
        if (h <= 0.0) h = 1.0;
    }
    const double gamma = 1.0 / (2.0 * h * h);
    auto kern = [&](const Tensor& x, const Tensor& y) { return std::exp(-gamma * dist2(x, y)); };

    double s_aa = 0.0, s_bb = 0.0, s_ab = 0.0;   // full sums incl. diagonal
    double u_aa = 0.0, u_bb = 0.0;               // off-diagonal sums
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < m; ++j) {
            const double k = kern(fa[static_cast<std::size_t>(i)], fa[static_cast<std::size_t>(j)]);
            s_aa += k;
            if (i != j) u_aa += k;
        }
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < n; ++j) {
            const double k = kern(fb[static_cast<std::size_t>(i)], fb[static_cast<std::size_t>(j)]);
            s_bb += k;
            if (i != j) u_bb += k;
        }
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j)
            s_ab += kern(fa[static_cast<std::size_t>(i)], fb[static_cast<std::size_t>(j)]);

    MmdResult r;
    r.bandwidth = h;
    const double dm = static_cast<double>(m), dn = static_cast<double>(n);
    r.biased = s_aa / (dm * dm) + s_bb / (dn * dn) - 2.0 * s_ab / (dm * dn);
    if (m > 1 && n > 1) {
        r.unbiased_raw =
            u_aa / (dm * (dm - 1.0)) + u_bb / (dn * (dn - 1.0)) - 2.0 * s_ab / (dm * dn);
    } else {
        r.unbiased_raw = r.biased;  // too few points for the U-statistic
    }
    r.unbiased = std::max(r.unbiased_raw, 0.0);
    return r;
}

MmdResult mmd(const std::vector<Tensor>& a, const std::vector<Tensor>& b,
              std::uint64_t encoder_seed) {
    if (a.empty() || b.empty()) throw std::invalid_argument("mmd: empty volume set");
    std::vector<Tensor> fa, fb;
    fa.reserve(a.size());
    fb.reserve(b.size());
    for (const Tensor& v : a) fa.push_back(encode_volume(v, encoder_seed));
    for (const Tensor& v : b) fb.push_back(encode_volume(v, encoder_seed));
    return mmd_features(fa, fb);
}

double nearest_real_mse(const std::vector<Tensor>& gen, const std::vector<Tensor>& real) {
    if (gen.empty() || real.empty()) throw std::invalid_argument("nearest_real_mse: empty set");
    double acc = 0.0;
    for (const Tensor& g : gen) {
        double best = 0.0;
        bool first = true;
        for (const Tensor& r : real) {
            if (r.shape != g.shape) throw std::invalid_argument("nearest_real_mse: shape mismatch");
            double mse = 0.0;
            for (std::size_t i = 0; i < g.data.size(); ++i) {
                const double d = g.data[i] - r.data[i];
                mse += d * d;
            }
            mse /= static_cast<double>(g.data.size());
            if (first || mse < best) {
                best = mse;
                first = false;
            }
        }
        acc += best;
    }
    return acc / static_cast<double>(gen.size());
}

}  // namespace tenvoo
