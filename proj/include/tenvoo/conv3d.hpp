#pragma once

#include <array>
#include <cstdint>

#include "tenvoo/tensor.hpp"

namespace tenvoo {

using Dims3 = std::array<std::int64_t, 3>;

// Output spatial extent per axis: floor((in + 2*pad - k)/stride) + 1.
Shape conv3d_out_shape(const Shape& x_shape, const Shape& w_shape, const Dims3& stride, const Dims3& pad);

// Direct correlation (no kernel flip): y[n,co,od,oh,ow] =
//   b[co] + sum_{ci,kd,kh,kw} w[co,ci,kd,kh,kw] * x[n,ci,od*s-p+kd,...]
// with zero padding outside the input extent.
Tensor conv3d_forward(const Tensor& x, const Tensor& w, const Tensor& bias,
                      const Dims3& stride, const Dims3& pad);

// Explicit correlation loops for the three gradients; any output pointer may
// be null to skip that gradient.
void conv3d_backward(const Tensor& x, const Tensor& w, const Dims3& stride, const Dims3& pad,
                     const Tensor& grad_y, Tensor* grad_x, Tensor* grad_w, Tensor* grad_b);

}  // namespace tenvoo
