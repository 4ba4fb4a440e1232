#include "tenvoo/conv3d.hpp"

#include <algorithm>
#include <stdexcept>

#include "tenvoo/threading.hpp"

namespace tenvoo {

namespace {

std::int64_t ceil_div(std::int64_t a, std::int64_t b) {
    return (a >= 0) ? (a + b - 1) / b : -((-a) / b);
}

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
    return (a >= 0) ? a / b : -((-a + b - 1) / b);
}

// Valid output range [o_min, o_max) such that o*stride + off lands in [0, in_extent).
void valid_range(std::int64_t out_extent, std::int64_t stride, std::int64_t off, std::int64_t in_extent,
                 std::int64_t& o_min, std::int64_t& o_max) {
    o_min = std::max<std::int64_t>(0, ceil_div(-off, stride));
    o_max = std::min<std::int64_t>(out_extent, floor_div(in_extent - 1 - off, stride) + 1);
    o_max = std::max(o_min, o_max);
}

void check_conv_args(const Tensor& x, const Tensor& w, const Dims3& stride, const Dims3& pad) {
    if (x.rank() != 5) throw std::invalid_argument("conv3d input must be rank 5 [n,c,D,H,W], got " + shape_str(x.shape));
    if (w.rank() != 5) throw std::invalid_argument("conv3d kernel must be rank 5 [co,ci,kd,kh,kw], got " + shape_str(w.shape));
    if (x.shape[1] != w.shape[1]) {
        throw std::invalid_argument("conv3d channel mismatch: input has " + std::to_string(x.shape[1]) +
                                    " channels, kernel expects " + std::to_string(w.shape[1]));
    }
    for (std::size_t a = 0; a < 3; ++a) {
        if (stride[a] < 1) throw std::invalid_argument("conv3d stride must be >= 1");
        if (pad[a] < 0) throw std::invalid_argument("conv3d padding must be >= 0");
    }
}

}  // namespace

Shape conv3d_out_shape(const Shape& x_shape, const Shape& w_shape, const Dims3& stride, const Dims3& pad) {
    Shape out{x_shape[0], w_shape[0]};
    for (std::size_t a = 0; a < 3; ++a) {
        const std::int64_t in = x_shape[2 + a];
        const std::int64_t k = w_shape[2 + a];
        if (in + 2 * pad[a] < k) {
            throw std::invalid_argument("conv3d empty output extent on spatial axis " + std::to_string(a) +
                                        " (input " + std::to_string(in) + ", kernel " + std::to_string(k) + ")");
        }
        out.push_back((in + 2 * pad[a] - k) / stride[a] + 1);
    }
    return out;
}

Tensor conv3d_forward(const Tensor& x, const Tensor& w, const Tensor& bias,
                      const Dims3& stride, const Dims3& pad) {
    check_conv_args(x, w, stride, pad);
    if (bias.shape != Shape{w.shape[0]}) {
        throw std::invalid_argument("conv3d bias shape " + shape_str(bias.shape) + " must be [" +
                                    std::to_string(w.shape[0]) + "]");
    }
    const Shape out_shape = conv3d_out_shape(x.shape, w.shape, stride, pad);
    Tensor y(out_shape);

    const std::int64_t N = x.shape[0], CI = x.shape[1], D = x.shape[2], H = x.shape[3], W = x.shape[4];
    const std::int64_t CO = w.shape[0], KD = w.shape[2], KH = w.shape[3], KW = w.shape[4];
    const std::int64_t OD = out_shape[2], OH = out_shape[3], OW = out_shape[4];
    const std::int64_t sd = stride[0], sh = stride[1], sw = stride[2];

    const double* px = x.data.data();
    const double* pw = w.data.data();
    double* py = y.data.data();

    // Each (n, co) slice is written by exactly one task, so the parallel split
    // cannot change results.
    parallel_for(N * CO, [&](std::int64_t task0, std::int64_t task1) {
        for (std::int64_t task = task0; task < task1; ++task) {
            const std::int64_t n = task / CO, co = task % CO;
            double* yvol = py + ((n * CO + co) * OD) * OH * OW;
            const double bv = bias.data[static_cast<std::size_t>(co)];
            for (std::int64_t i = 0; i < OD * OH * OW; ++i) yvol[i] = bv;
            for (std::int64_t ci = 0; ci < CI; ++ci) {
                const double* xvol = px + ((n * CI + ci) * D) * H * W;
                const double* wk = pw + ((co * CI + ci) * KD) * KH * KW;
                for (std::int64_t kd = 0; kd < KD; ++kd) {
                    const std::int64_t offd = kd - pad[0];
                    std::int64_t od0, od1;
                    valid_range(OD, sd, offd, D, od0, od1);
                    for (std::int64_t kh = 0; kh < KH; ++kh) {
                        const std::int64_t offh = kh - pad[1];
                        std::int64_t oh0, oh1;
                        valid_range(OH, sh, offh, H, oh0, oh1);
                        for (std::int64_t kw = 0; kw < KW; ++kw) {
                            const std::int64_t offw = kw - pad[2];
                            std::int64_t ow0, ow1;
                            valid_range(OW, sw, offw, W, ow0, ow1);
                            const double wv = wk[(kd * KH + kh) * KW + kw];
                            for (std::int64_t od = od0; od < od1; ++od) {
                                const std::int64_t id = od * sd + offd;
                                for (std::int64_t oh = oh0; oh < oh1; ++oh) {
                                    const std::int64_t ih = oh * sh + offh;
                                    const double* xrow = xvol + (id * H + ih) * W;
                                    double* yrow = yvol + (od * OH + oh) * OW;
                                    if (sw == 1) {
                                        const double* xp = xrow + offw;
                                        for (std::int64_t ow = ow0; ow < ow1; ++ow) yrow[ow] += wv * xp[ow];
                                    } else {
                                        for (std::int64_t ow = ow0; ow < ow1; ++ow) yrow[ow] += wv * xrow[ow * sw + offw];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    return y;
}

void conv3d_backward(const Tensor& x, const Tensor& w, const Dims3& stride, const Dims3& pad,
                     const Tensor& grad_y, Tensor* grad_x, Tensor* grad_w, Tensor* grad_b) {
    check_conv_args(x, w, stride, pad);
    const Shape out_shape = conv3d_out_shape(x.shape, w.shape, stride, pad);
    if (grad_y.shape != out_shape) {
        throw std::invalid_argument("conv3d grad_y shape " + shape_str(grad_y.shape) + " must be " +
                                    shape_str(out_shape));
    }

    const std::int64_t N = x.shape[0], CI = x.shape[1], D = x.shape[2], H = x.shape[3], W = x.shape[4];
    const std::int64_t CO = w.shape[0], KD = w.shape[2], KH = w.shape[3], KW = w.shape[4];
    const std::int64_t OD = out_shape[2], OH = out_shape[3], OW = out_shape[4];
    const std::int64_t sd = stride[0], sh = stride[1], sw = stride[2];

    const double* px = x.data.data();
    const double* pw = w.data.data();
    const double* pg = grad_y.data.data();

    if (grad_b) {
        *grad_b = Tensor::zeros({CO});
        for (std::int64_t n = 0; n < N; ++n) {
            for (std::int64_t co = 0; co < CO; ++co) {
                const double* gvol = pg + ((n * CO + co) * OD) * OH * OW;
                double acc = 0.0;
                for (std::int64_t i = 0; i < OD * OH * OW; ++i) acc += gvol[i];
                grad_b->data[static_cast<std::size_t>(co)] += acc;
            }
        }
    }

    // Input gradient: scatter of grad_y through the kernel. Each (n, ci)
    // slice is owned by one task; the co loop stays inside it.
    if (grad_x) {
        *grad_x = Tensor::zeros(x.shape);
        double* pgx = grad_x->data.data();
        parallel_for(N * CI, [&](std::int64_t task0, std::int64_t task1) {
            for (std::int64_t task = task0; task < task1; ++task) {
                const std::int64_t n = task / CI, ci = task % CI;
                double* gxvol = pgx + ((n * CI + ci) * D) * H * W;
                for (std::int64_t co = 0; co < CO; ++co) {
                    const double* gvol = pg + ((n * CO + co) * OD) * OH * OW;
                    const double* wk = pw + ((co * CI + ci) * KD) * KH * KW;
                    for (std::int64_t kd = 0; kd < KD; ++kd) {
                        const std::int64_t offd = kd - pad[0];
                        std::int64_t od0, od1;
                        valid_range(OD, sd, offd, D, od0, od1);
                        for (std::int64_t kh = 0; kh < KH; ++kh) {
                            const std::int64_t offh = kh - pad[1];
                            std::int64_t oh0, oh1;
                            valid_range(OH, sh, offh, H, oh0, oh1);
                            for (std::int64_t kw = 0; kw < KW; ++kw) {
                                const std::int64_t offw = kw - pad[2];
                                std::int64_t ow0, ow1;
                                valid_range(OW, sw, offw, W, ow0, ow1);
                                const double wv = wk[(kd * KH + kh) * KW + kw];
                                if (wv == 0.0) continue;
                                for (std::int64_t od = od0; od < od1; ++od) {
                                    const std::int64_t id = od * sd + offd;
                                    for (std::int64_t oh = oh0; oh < oh1; ++oh) {
                                        const std::int64_t ih = oh * sh + offh;
                                        double* gxrow = gxvol + (id * H + ih) * W;
                                        const double* grow = gvol + (od * OH + oh) * OW;
                                        if (sw == 1) {
                                            double* gxp = gxrow + offw;
                                            for (std::int64_t ow = ow0; ow < ow1; ++ow) gxp[ow] += wv * grow[ow];
                                        } else {
                                            for (std::int64_t ow = ow0; ow < ow1; ++ow) gxrow[ow * sw + offw] += wv * grow[ow];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
    }

    // Weight gradient: correlation of input with grad_y. Each (co, ci) kernel
    // plane is owned by one task; accumulation over n stays inside it.
    if (grad_w) {
        *grad_w = Tensor::zeros(w.shape);
        double* pgw = grad_w->data.data();
        parallel_for(CO * CI, [&](std::int64_t task0, std::int64_t task1) {
            for (std::int64_t task = task0; task < task1; ++task) {
                const std::int64_t co = task / CI, ci = task % CI;
                double* gwk = pgw + ((co * CI + ci) * KD) * KH * KW;
                for (std::int64_t kd = 0; kd < KD; ++kd) {
                    const std::int64_t offd = kd - pad[0];
                    std::int64_t od0, od1;
                    valid_range(OD, sd, offd, D, od0, od1);
                    for (std::int64_t kh = 0; kh < KH; ++kh) {
                        const std::int64_t offh = kh - pad[1];
                        std::int64_t oh0, oh1;
                        valid_range(OH, sh, offh, H, oh0, oh1);
                        for (std::int64_t kw = 0; kw < KW; ++kw) {
                            const std::int64_t offw = kw - pad[2];
                            std::int64_t ow0, ow1;
                            valid_range(OW, sw, offw, W, ow0, ow1);
                            double acc = 0.0;
                            for (std::int64_t n = 0; n < N; ++n) {
                                const double* xvol = px + ((n * CI + ci) * D) * H * W;
                                const double* gvol = pg + ((n * CO + co) * OD) * OH * OW;
                                for (std::int64_t od = od0; od < od1; ++od) {
                                    const std::int64_t id = od * sd + offd;
                                    for (std::int64_t oh = oh0; oh < oh1; ++oh) {
                                        const std::int64_t ih = oh * sh + offh;
                                        const double* xrow = xvol + (id * H + ih) * W;
                                        const double* grow = gvol + (od * OH + oh) * OW;
                                        if (sw == 1) {
                                            const double* xp = xrow + offw;
                                            for (std::int64_t ow = ow0; ow < ow1; ++ow) acc += grow[ow] * xp[ow];
                                        } else {
                                            for (std::int64_t ow = ow0; ow < ow1; ++ow) acc += grow[ow] * xrow[ow * sw + offw];
                                        }
                                    }
                                }
                            }
                            gwk[(kd * KH + kh) * KW + kw] = acc;
                        }
                    }
                }
            }
        });
    }
}

}  // namespace tenvoo
