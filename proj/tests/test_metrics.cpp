#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "tenvoo/metrics.hpp"
#include "tenvoo/rng.hpp"

using namespace tenvoo;

TEST_SUITE("metrics") {

TEST_CASE("ms_ssim is exactly 1 on itself, symmetric and range-bounded") {
    Rng rng(11);
    Tensor a = Tensor::random_uniform({32, 32, 32}, rng, 0.0, 1.0);
    Tensor b = Tensor::random_uniform({32, 32, 32}, rng, 0.0, 1.0);

    CHECK(ms_ssim_3d(a, a) == 1.0);
    const double sab = ms_ssim_3d(a, b);
    CHECK(std::abs(sab - ms_ssim_3d(b, a)) < 1e-12);
    CHECK(sab > -1.0);
    CHECK(sab < 1.0);

    SUBCASE("self-identity holds at every scale count") {
        for (int scales = 1; scales <= 3; ++scales) {
            MsSsimOptions opt;
            opt.scales = scales;
            CHECK(ms_ssim_3d(a, a, opt) == 1.0);
        }
    }
    SUBCASE("anti-correlated volumes score low") {
        Tensor neg = a;
        for (double& v : neg.data) v = -v;
        CHECK(ms_ssim_3d(a, neg) < 0.5);
    }
    SUBCASE("rescaling both inputs and the dynamic range is invariant") {
        Tensor a2 = a, b2 = b;
        for (double& v : a2.data) v *= 3.5;
        for (double& v : b2.data) v *= 3.5;
        MsSsimOptions opt;
        opt.dynamic_range = 3.5;
        CHECK(std::abs(ms_ssim_3d(a2, b2, opt) - sab) < 1e-6);
    }
    SUBCASE("volumes below window * 2^(scales-1) are rejected") {
        Tensor small = Tensor::zeros({16, 32, 32});
        CHECK_THROWS_AS((void)ms_ssim_3d(small, small), std::invalid_argument);
        MsSsimOptions opt;
        opt.scales = 2;
        CHECK(ms_ssim_3d(small, small, opt) == 1.0);  // 7 * 2 <= 16 is fine
    }
}

TEST_CASE("pairwise and nearest-real protocols reduce correctly") {
    Rng rng(11);
    Tensor a = Tensor::random_uniform({32, 32, 32}, rng, 0.0, 1.0);
    Tensor b = Tensor::random_uniform({32, 32, 32}, rng, 0.0, 1.0);
    const double sab = ms_ssim_3d(a, b);

    CHECK(pairwise_ms_ssim({a, a, a}) == 1.0);
    CHECK(std::abs(pairwise_ms_ssim({a, b}) - sab) < 1e-15);

    // mean over gen of max over real: exact twin wins for both entries
    CHECK(ms_ssim_nearest_real({a, b}, {b, a}) == 1.0);
    CHECK(std::abs(ms_ssim_nearest_real({a}, {b}) - sab) < 1e-15);

    SUBCASE("seeded pair subsample is reproducible") {
        std::vector<Tensor> many;
        Rng r2(5);
        for (int i = 0; i < 12; ++i) {
            many.push_back(Tensor::random_uniform({16, 16, 16}, r2, 0.0, 1.0));
        }
        MsSsimOptions opt;
        opt.scales = 2;
        const double p1 = pairwise_ms_ssim(many, 42, opt, 10);
        CHECK(p1 == pairwise_ms_ssim(many, 42, opt, 10));
        // full enumeration differs once subsampling truncates pairs
        CHECK(pairwise_ms_ssim(many, 42, opt, 1000) != p1);
    }
}

TEST_CASE("mmd matches a brute-force kernel sum and vanishes on equal sets") {
    Rng r3(7);
    std::vector<Tensor> a_set, b_set;
    for (int i = 0; i < 6; ++i) a_set.push_back(Tensor::random_uniform({8, 8, 8}, r3, 0.0, 1.0));
    for (int i = 0; i < 5; ++i) b_set.push_back(Tensor::random_uniform({8, 8, 8}, r3, 0.3, 1.0));

    const MmdResult same = mmd(a_set, a_set, 1);
    CHECK(std::abs(same.biased) <= 1e-12);
    CHECK(same.unbiased == 0.0);  // U-statistic is negative here, clamped

    const MmdResult ab = mmd(a_set, b_set, 1);
    const MmdResult ba = mmd(b_set, a_set, 1);
    CHECK(std::abs(ab.biased - ba.biased) < 1e-15);

    std::vector<Tensor> ones(5, Tensor::full({8, 8, 8}, 1.0));
    std::vector<Tensor> zeros(5, Tensor::zeros({8, 8, 8}));
    CHECK(mmd(zeros, ones, 1).biased > 0.0);

    SUBCASE("feature-space estimate equals explicit loops") {
        std::vector<Tensor> fa, fb;
        for (const Tensor& v : a_set) fa.push_back(encode_volume(v, 1));
        for (const Tensor& v : b_set) fb.push_back(encode_volume(v, 1));
        const MmdResult est = mmd_features(fa, fb);

        const auto d2 = [](const Tensor& x, const Tensor& y) {
            double acc = 0.0;
            for (std::size_t i = 0; i < x.data.size(); ++i) {
                const double d = x.data[i] - y.data[i];
                acc += d * d;
            }
            return acc;
        };
        std::vector<Tensor> all = fa;
        all.insert(all.end(), fb.begin(), fb.end());
        std::vector<double> ds;
        for (std::size_t i = 0; i < all.size(); ++i)
            for (std::size_t j = i + 1; j < all.size(); ++j)
                ds.push_back(std::sqrt(d2(all[i], all[j])));
        std::sort(ds.begin(), ds.end());
        const double h = ds[(ds.size() - 1) / 2];
        const double g = 1.0 / (2 * h * h);
        const std::size_t m = fa.size(), n = fb.size();
        double saa = 0.0, sbb = 0.0, sab = 0.0, uaa = 0.0, ubb = 0.0;
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < m; ++j) {
                const double k = std::exp(-g * d2(fa[i], fa[j]));
                saa += k;
                if (i != j) uaa += k;
            }
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                const double k = std::exp(-g * d2(fb[i], fb[j]));
                sbb += k;
                if (i != j) ubb += k;
            }
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) sab += std::exp(-g * d2(fa[i], fb[j]));
        const double want_b = saa / static_cast<double>(m * m) + sbb / static_cast<double>(n * n) -
                              2 * sab / static_cast<double>(m * n);
        const double want_u = uaa / (m * (m - 1.0)) + ubb / (n * (n - 1.0)) -
                              2 * sab / static_cast<double>(m * n);
        CHECK(std::abs(est.biased - want_b) < 1e-15);
        CHECK(std::abs(est.unbiased_raw - want_u) < 1e-15);
        CHECK(est.bandwidth == h);
    }

    SUBCASE("encoder is deterministic per seed with a fixed feature width") {
        const Tensor f1 = encode_volume(a_set[0], 33);
        const Tensor f2 = encode_volume(a_set[0], 33);
        CHECK(f1.shape == (Shape{64}));
        CHECK(f1.data == f2.data);
        const Tensor f3 = encode_volume(a_set[0], 34);
        CHECK(f1.data != f3.data);
    }
}

TEST_CASE("nearest-real mse finds the best match per generated volume") {
    Rng rng(11);
    Tensor a = Tensor::random_uniform({8, 8, 8}, rng, 0.0, 1.0);
    Tensor b = Tensor::random_uniform({8, 8, 8}, rng, 0.0, 1.0);
    CHECK(nearest_real_mse({a}, {a, b}) == 0.0);
    Tensor c = a;
    for (double& v : c.data) v += 0.1;
    CHECK(std::abs(nearest_real_mse({c}, {a, b}) - 0.01) < 1e-12);
}

}  // TEST_SUITE("metrics")
