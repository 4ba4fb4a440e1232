#include "tenvoo/phantom.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

#include "tenvoo/rng.hpp"

namespace tenvoo {

std::string to_string(DatasetTag tag) {
    switch (tag) {
        case DatasetTag::pretrain: return "pretrain";
        case DatasetTag::shift_a: return "shiftA";
        case DatasetTag::shift_b: return "shiftB";
        case DatasetTag::lesion: return "lesion";
    }
    throw std::logic_error("to_string: unknown dataset tag");
}

DatasetTag tag_from_string(const std::string& s) {
    if (s == "pretrain") return DatasetTag::pretrain;
    if (s == "shiftA") return DatasetTag::shift_a;
    if (s == "shiftB") return DatasetTag::shift_b;
    if (s == "lesion") return DatasetTag::lesion;
    throw std::invalid_argument("unknown dataset tag: " + s);
}

namespace {

constexpr double kPi = 3.14159265358979323846;

void validate(const PhantomConfig& cfg) {
    if (cfg.d < 4 || cfg.h < 4 || cfg.w < 4) {
        throw std::invalid_argument("generate_phantom: grid extents must be >= 4");
    }
    if (cfg.n_shells < 1) throw std::invalid_argument("generate_phantom: n_shells must be >= 1");
    if (!(cfg.amplitude >= 0.0)) throw std::invalid_argument("generate_phantom: amplitude must be >= 0");
    if (!(cfg.noise_sigma >= 0.0)) throw std::invalid_argument("generate_phantom: noise_sigma must be >= 0");
    if (cfg.tag == DatasetTag::lesion) {
        if (cfg.lesion_count < 0) throw std::invalid_argument("generate_phantom: lesion_count must be >= 0");
        if (!(cfg.lesion_radius_lo >= 1.0) || cfg.lesion_radius_hi < cfg.lesion_radius_lo) {
            throw std::invalid_argument("generate_phantom: need 1 <= lesion_radius_lo <= lesion_radius_hi");
        }
        const double min_extent = static_cast<double>(std::min({cfg.d, cfg.h, cfg.w}));
        if (cfg.lesion_radius_hi > min_extent / 4.0) {
            throw std::invalid_argument("generate_phantom: lesion radius too large for the grid");
        }
    }
}

struct Wave {
    double kx, ky, kz, amp, phase;
};

struct Lesion {
    double cd, ch, cw, r;
};

}  // namespace

VolumeRecord generate_phantom(const PhantomConfig& cfg, std::uint64_t seed) {
    validate(cfg);
    Rng rng(seed);

    // Tag-dependent texture knobs. shift_a raises band frequency, deformation
    // strength and wave frequency; shift_b folds the band profile (sharper
    // shells) with gentler, lower-frequency deformation.
    double band_freq = static_cast<double>(cfg.n_shells);
    double phase_shift = 0.0;
    double amp_scale = 1.0;
    double wave_freq = 3.0;
    bool folded_bands = false;
    switch (cfg.tag) {
        case DatasetTag::pretrain:
        case DatasetTag::lesion:
            break;
        case DatasetTag::shift_a:
            band_freq *= 1.3;
            phase_shift = kPi / 2.0;
            amp_scale = 1.6;
            wave_freq = 4.5;
            break;
        case DatasetTag::shift_b:
            amp_scale = 0.6;
            wave_freq = 2.0;
            folded_bands = true;
            break;
    }

    const double phase0 = rng.uniform(0.0, 2.0 * kPi) + phase_shift;
    std::array<Wave, 4> waves;
    for (Wave& wv : waves) {
        wv.kx = rng.uniform(-wave_freq, wave_freq);
        wv.ky = rng.uniform(-wave_freq, wave_freq);
        wv.kz = rng.uniform(-wave_freq, wave_freq);
        wv.amp = 0.35 * amp_scale * rng.normal();
        wv.phase = rng.uniform(0.0, 2.0 * kPi);
    }

    // Lesion centres are drawn before the voxel sweep; re-draw on overlap so
    // distinct lesions stay distinct connected components.
    std::vector<Lesion> lesions;
    if (cfg.tag == DatasetTag::lesion) {
        for (int i = 0; i < cfg.lesion_count; ++i) {
            Lesion cand{};
            for (int attempt = 0; attempt < 64; ++attempt) {
                cand.cd = rng.uniform(0.28 * static_cast<double>(cfg.d - 1), 0.72 * static_cast<double>(cfg.d - 1));
                cand.ch = rng.uniform(0.28 * static_cast<double>(cfg.h - 1), 0.72 * static_cast<double>(cfg.h - 1));
                cand.cw = rng.uniform(0.28 * static_cast<double>(cfg.w - 1), 0.72 * static_cast<double>(cfg.w - 1));
                cand.r = rng.uniform(cfg.lesion_radius_lo, cfg.lesion_radius_hi);
                bool ok = true;
                for (const Lesion& prev : lesions) {
                    const double dd = cand.cd - prev.cd, dh = cand.ch - prev.ch, dw = cand.cw - prev.cw;
                    if (std::sqrt(dd * dd + dh * dh + dw * dw) < cand.r + prev.r + 2.0) ok = false;
                }
                if (ok) break;
            }
            lesions.push_back(cand);
        }
    }

    const double cd = static_cast<double>(cfg.d - 1) / 2.0;
    const double ch = static_cast<double>(cfg.h - 1) / 2.0;
    const double cw = static_cast<double>(cfg.w - 1) / 2.0;
    const double ad = 0.42 * static_cast<double>(cfg.d);
    const double ah = 0.42 * static_cast<double>(cfg.h);
    const double aw = 0.42 * static_cast<double>(cfg.w);

    Tensor vox = Tensor::zeros({cfg.d, cfg.h, cfg.w});
    std::size_t idx = 0;
    for (std::int64_t dd = 0; dd < cfg.d; ++dd) {
        for (std::int64_t hh = 0; hh < cfg.h; ++hh) {
            for (std::int64_t ww = 0; ww < cfg.w; ++ww) {
                const double x = (static_cast<double>(dd) - cd) / ad;
                const double y = (static_cast<double>(hh) - ch) / ah;
                const double z = (static_cast<double>(ww) - cw) / aw;
                const double rho = std::sqrt(x * x + y * y + z * z);
                double g = 0.0;
                for (const Wave& wv : waves) {
                    g += wv.amp * std::sin(wv.kx * x + wv.ky * y + wv.kz * z + wv.phase);
                }
                // amplitude == 0 leaves rho bit-exact, so the pure-ellipsoid
                // reflection symmetry holds without a separate code path.
                const double rho_def = rho * (1.0 + cfg.amplitude * g);
                const double envelope = 0.5 * (1.0 - std::tanh((rho_def - 1.0) / 0.08));
                const double arg = 2.0 * kPi * band_freq * rho_def + phase0;
                const double band = folded_bands ? 0.15 + 0.73 * std::fabs(std::cos(arg))
                                                 : 0.515 + 0.365 * std::cos(arg);
                double v = envelope * band;  // <= 0.88, leaving >0.9 for lesions
                for (const Lesion& les : lesions) {
                    const double qd = (static_cast<double>(dd) - les.cd) / les.r;
                    const double qh = (static_cast<double>(hh) - les.ch) / les.r;
                    const double qw = (static_cast<double>(ww) - les.cw) / les.r;
                    const double q2 = qd * qd + qh * qh + qw * qw;
                    if (q2 < 1.0) v = std::max(v, 0.96 * (1.0 - q2 * q2));
                }
                vox.data[idx++] = v;
            }
        }
    }

    if (cfg.noise_sigma > 0.0) {
        for (double& v : vox.data) v += cfg.noise_sigma * rng.normal();
    }
    for (double& v : vox.data) {
        v = std::clamp(v, 0.0, 1.0);
        v = static_cast<double>(static_cast<float>(v));  // match on-disk f32 payloads
    }

    VolumeRecord rec;
    rec.voxels = std::move(vox);
    rec.tag = cfg.tag;
    rec.seed = seed;
    return rec;
}

std::pair<std::vector<VolumeRecord>, std::vector<VolumeRecord>> make_split(
    std::vector<VolumeRecord> records, double fraction, std::uint64_t seed) {
    if (records.empty()) throw std::invalid_argument("make_split: empty input");
    if (!(fraction > 0.0 && fraction < 1.0)) {
        throw std::invalid_argument("make_split: fraction must be in (0,1)");
    }
    Rng rng(seed);
    const std::size_t n = records.size();
    for (std::size_t i = 0; i + 1 < n; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(n - i)));
        std::swap(records[i], records[j]);
    }
    std::size_t n_train = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    n_train = std::min(n_train, n);
    std::vector<VolumeRecord> train(std::make_move_iterator(records.begin()),
                                    std::make_move_iterator(records.begin() + static_cast<std::ptrdiff_t>(n_train)));
    std::vector<VolumeRecord> eval(std::make_move_iterator(records.begin() + static_cast<std::ptrdiff_t>(n_train)),
                                   std::make_move_iterator(records.end()));
    return {std::move(train), std::move(eval)};
}

}  // namespace tenvoo
