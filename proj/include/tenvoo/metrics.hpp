#pragma once

#include <cstdint>
#include <vector>

#include "tenvoo/tensor.hpp"

namespace tenvoo {

struct MsSsimOptions {
    int scales = 3;
    int window = 7;
    double sigma = 1.5;
    double dynamic_range = 1.0;  // L in C1=(0.01L)^2, C2=(0.03L)^2
};

// Multi-scale structural similarity between two [D,H,W] volumes: per scale a
// Gaussian-windowed contrast/structure mean (valid filtering, separable
// window), luminance only at the coarsest scale, 2x average pooling between
// scales, exponents (0.0448, 0.2856, 0.3001) renormalized to sum 1 for
// 3 scales. Negative scale means are clamped to 0 before exponentiation.
// Requires min spatial extent >= window * 2^(scales-1).
double ms_ssim_3d(const Tensor& a, const Tensor& b, const MsSsimOptions& opt = {});

// Mean MS-SSIM over unordered pairs; when there are more than max_pairs
// pairs, a seeded subsample of exactly max_pairs distinct pairs is used.
double pairwise_ms_ssim(const std::vector<Tensor>& vols, std::uint64_t pair_seed = 1234,
                        const MsSsimOptions& opt = {}, std::int64_t max_pairs = 100);

// Mean over generated volumes of the best MS-SSIM against any real volume;
// 1.0 when every generated volume has an exact real twin.
double ms_ssim_nearest_real(const std::vector<Tensor>& gen, const std::vector<Tensor>& real,
                            const MsSsimOptions& opt = {});

// Fixed random-projection feature map: three seeded stride-2 conv layers
// (1 -> 8 -> 16 -> 64 channels, 3^3 kernels) with ReLU, then global average
// pooling to a [64] vector. The seed fully determines the encoder.
Tensor encode_volume(const Tensor& vol, std::uint64_t encoder_seed);

struct MmdResult {
    double biased = 0.0;        // V-statistic; exactly 0 for identical sets
    double unbiased_raw = 0.0;  // U-statistic; may be negative
    double unbiased = 0.0;      // U-statistic clamped to 0 for reporting
    double bandwidth = 0.0;     // median pairwise feature distance
};

// RBF-kernel MMD^2 between two feature sets, k(x,y)=exp(-|x-y|^2/(2h^2)) with
// h the median pairwise distance over the pooled points (h=1 if degenerate).
MmdResult mmd_features(const std::vector<Tensor>& fa, const std::vector<Tensor>& fb);

// Encodes both volume sets with the seeded encoder, then mmd_features.
MmdResult mmd(const std::vector<Tensor>& a, const std::vector<Tensor>& b,
              std::uint64_t encoder_seed);

// Mean over generated volumes of the smallest voxel-MSE against any real
// volume (a fidelity proxy; 0 iff every generated volume replicates one).
double nearest_real_mse(const std::vector<Tensor>& gen, const std::vector<Tensor>& real);

}  // namespace tenvoo
