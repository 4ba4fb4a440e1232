#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tenvoo/tensor.hpp"

namespace tenvoo {

enum class DatasetTag { pretrain, shift_a, shift_b, lesion };

std::string to_string(DatasetTag tag);
DatasetTag tag_from_string(const std::string& s);

// Procedural generator settings. The tag selects the structural variant:
// shift_a / shift_b change the shell-intensity profile and the deformation
// statistics relative to pretrain; lesion adds hyperintense spheres on top of
// the pretrain structure. Lesion fields are ignored for the other tags.
struct PhantomConfig {
    std::int64_t d = 32, h = 32, w = 32;
    DatasetTag tag = DatasetTag::pretrain;
    int n_shells = 3;
    double amplitude = 0.25;    // shell deformation strength; 0 = pure ellipsoids
    double noise_sigma = 0.02;  // additive Gaussian noise, clamped back to [0,1]
    int lesion_count = 2;
    double lesion_radius_lo = 3.0;  // voxels
    double lesion_radius_hi = 5.0;
};

struct VolumeRecord {
    Tensor voxels;  // [D,H,W], values in [0,1], quantised to f32 at generation
    DatasetTag tag = DatasetTag::pretrain;
    std::uint64_t seed = 0;
};

// Deterministic in (cfg, seed): all structural draws happen before the voxel
// sweep, noise draws follow row-major order. With amplitude 0 and noise 0 the
// non-lesion variants are symmetric under the three axis reflections through
// the grid centre.
VolumeRecord generate_phantom(const PhantomConfig& cfg, std::uint64_t seed);

// Deterministic shuffled split; train receives llround(fraction * n) records,
// the split is disjoint and the union equals the input.
std::pair<std::vector<VolumeRecord>, std::vector<VolumeRecord>> make_split(
    std::vector<VolumeRecord> records, double fraction, std::uint64_t seed);

}  // namespace tenvoo
