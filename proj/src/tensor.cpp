#include "tenvoo/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace tenvoo {

std::int64_t numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor::Tensor(Shape s) : shape(std::move(s)) {
    for (auto d : shape) {
        if (d <= 0) throw std::invalid_argument("tensor axis length must be positive, got shape " + shape_str(shape));
    }
    data.assign(static_cast<std::size_t>(numel(shape)), 0.0);
}

Tensor::Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
    for (auto d : shape) {
        if (d <= 0) throw std::invalid_argument("tensor axis length must be positive, got shape " + shape_str(shape));
    }
    if (numel(shape) != static_cast<std::int64_t>(data.size())) {
        throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                    " does not match shape " + shape_str(shape));
    }
}

Tensor Tensor::full(Shape s, double value) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), value);
    return t;
}

Tensor Tensor::scalar(double value) {
    Tensor t;
    t.data[0] = value;
    return t;
}

Tensor Tensor::random_normal(Shape s, Rng& rng, double sigma) {
    Tensor t(std::move(s));
    for (auto& v : t.data) v = sigma * rng.normal();
    return t;
}

Tensor Tensor::random_uniform(Shape s, Rng& rng, double lo, double hi) {
    Tensor t(std::move(s));
    for (auto& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

std::vector<std::int64_t> strides_of(const Shape& shape) {
    std::vector<std::int64_t> st(shape.size());
    std::int64_t acc = 1;
    for (int i = static_cast<int>(shape.size()) - 1; i >= 0; --i) {
        st[static_cast<std::size_t>(i)] = acc;
        acc *= shape[static_cast<std::size_t>(i)];
    }
    return st;
}

static std::int64_t flat_index(const Shape& shape, std::span<const std::int64_t> idx) {
    if (idx.size() != shape.size()) {
        throw std::invalid_argument("index rank " + std::to_string(idx.size()) +
                                    " does not match tensor rank " + std::to_string(shape.size()));
    }
    std::int64_t flat = 0;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= shape[i]) {
            throw std::out_of_range("index " + std::to_string(idx[i]) + " out of range for axis " +
                                    std::to_string(i) + " of shape " + shape_str(shape));
        }
        flat = flat * shape[i] + idx[i];
    }
    return flat;
}

double& Tensor::at(std::span<const std::int64_t> idx) { return data[static_cast<std::size_t>(flat_index(shape, idx))]; }
double Tensor::at(std::span<const std::int64_t> idx) const { return data[static_cast<std::size_t>(flat_index(shape, idx))]; }
double& Tensor::at(std::initializer_list<std::int64_t> idx) { return at(std::span<const std::int64_t>(idx.begin(), idx.size())); }
double Tensor::at(std::initializer_list<std::int64_t> idx) const { return at(std::span<const std::int64_t>(idx.begin(), idx.size())); }

Tensor reshape(const Tensor& t, Shape new_shape) {
    if (numel(new_shape) != t.size()) {
        throw std::invalid_argument("reshape from " + shape_str(t.shape) + " to " + shape_str(new_shape) +
                                    " changes element count");
    }
    Tensor out;
    out.shape = std::move(new_shape);
    out.data = t.data;
    return out;
}

Tensor permute(const Tensor& t, const std::vector<int>& order) {
    const int r = t.rank();
    if (static_cast<int>(order.size()) != r) {
        throw std::invalid_argument("permutation rank " + std::to_string(order.size()) +
                                    " does not match tensor rank " + std::to_string(r));
    }
    std::vector<bool> seen(static_cast<std::size_t>(r), false);
    for (int a : order) {
        if (a < 0 || a >= r || seen[static_cast<std::size_t>(a)]) {
            throw std::invalid_argument("invalid permutation of " + std::to_string(r) + " axes");
        }
        seen[static_cast<std::size_t>(a)] = true;
    }
    Shape out_shape(static_cast<std::size_t>(r));
    for (int i = 0; i < r; ++i) out_shape[static_cast<std::size_t>(i)] = t.shape[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
    Tensor out(out_shape);
    if (r == 0) {
        out.data = t.data;
        return out;
    }

    const auto in_strides = strides_of(t.shape);
    // Stride of each output axis within the input layout.
    std::vector<std::int64_t> src_strides(static_cast<std::size_t>(r));
    for (int i = 0; i < r; ++i) src_strides[static_cast<std::size_t>(i)] = in_strides[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];

    std::vector<std::int64_t> idx(static_cast<std::size_t>(r), 0);
    std::int64_t src = 0;
    const std::int64_t n = out.size();
    for (std::int64_t flat = 0; flat < n; ++flat) {
        out.data[static_cast<std::size_t>(flat)] = t.data[static_cast<std::size_t>(src)];
        for (int ax = r - 1; ax >= 0; --ax) {
            auto a = static_cast<std::size_t>(ax);
            if (++idx[a] < out_shape[a]) {
                src += src_strides[a];
                break;
            }
            src -= src_strides[a] * (out_shape[a] - 1);
            idx[a] = 0;
        }
    }
    return out;
}

Tensor contract_pair(const Tensor& a, const Tensor& b,
                     const std::vector<std::pair<int, int>>& pairs) {
    const int ra = a.rank(), rb = b.rank();
    std::vector<bool> a_paired(static_cast<std::size_t>(ra), false), b_paired(static_cast<std::size_t>(rb), false);
    for (const auto& [la, lb] : pairs) {
        if (la < 0 || la >= ra) throw std::invalid_argument("unknown leg " + std::to_string(la) + " on lhs of rank " + std::to_string(ra));
        if (lb < 0 || lb >= rb) throw std::invalid_argument("unknown leg " + std::to_string(lb) + " on rhs of rank " + std::to_string(rb));
        if (a_paired[static_cast<std::size_t>(la)] || b_paired[static_cast<std::size_t>(lb)]) {
            throw std::invalid_argument("leg paired twice in contraction");
        }
        if (a.shape[static_cast<std::size_t>(la)] != b.shape[static_cast<std::size_t>(lb)]) {
            throw std::invalid_argument("contraction length mismatch on pair (" + std::to_string(la) + "," +
                                        std::to_string(lb) + "): " + std::to_string(a.shape[static_cast<std::size_t>(la)]) +
                                        " vs " + std::to_string(b.shape[static_cast<std::size_t>(lb)]));
        }
        a_paired[static_cast<std::size_t>(la)] = true;
        b_paired[static_cast<std::size_t>(lb)] = true;
    }

    // Permute a to [unpaired..., paired...] and b to [paired..., unpaired...],
    // matching pair order, then multiply as (M x K) * (K x N).
    std::vector<int> a_order, b_order;
    Shape out_shape;
    std::int64_t m = 1, k = 1, n = 1;
    for (int i = 0; i < ra; ++i) {
        if (!a_paired[static_cast<std::size_t>(i)]) {
            a_order.push_back(i);
            out_shape.push_back(a.shape[static_cast<std::size_t>(i)]);
            m *= a.shape[static_cast<std::size_t>(i)];
        }
    }
    for (const auto& [la, lb] : pairs) {
        a_order.push_back(la);
        b_order.push_back(lb);
        k *= a.shape[static_cast<std::size_t>(la)];
    }
    for (int i = 0; i < rb; ++i) {
        if (!b_paired[static_cast<std::size_t>(i)]) {
            b_order.push_back(i);
            out_shape.push_back(b.shape[static_cast<std::size_t>(i)]);
            n *= b.shape[static_cast<std::size_t>(i)];
        }
    }

    const Tensor ap = permute(a, a_order);
    const Tensor bp = permute(b, b_order);

    Tensor out(out_shape);
    const double* pa = ap.data.data();
    const double* pb = bp.data.data();
    double* pc = out.data.data();
    for (std::int64_t i = 0; i < m; ++i) {
        for (std::int64_t kk = 0; kk < k; ++kk) {
            const double av = pa[i * k + kk];
            const double* brow = pb + kk * n;
            double* crow = pc + i * n;
            for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    return out;
}

std::array<std::int64_t, 3> factorize_channels(std::int64_t n) {
    if (n < 1) throw std::invalid_argument("factorize_channels requires n >= 1");
    std::array<std::int64_t, 3> best{1, 1, n};
    double best_ratio = static_cast<double>(n);
    for (std::int64_t f1 = 1; f1 * f1 * f1 <= n; ++f1) {
        if (n % f1) continue;
        const std::int64_t rest = n / f1;
        for (std::int64_t f2 = f1; f2 * f2 <= rest; ++f2) {
            if (rest % f2) continue;
            const std::int64_t f3 = rest / f2;
            const double ratio = static_cast<double>(f3) / static_cast<double>(f1);
            if (ratio < best_ratio ||
                (ratio == best_ratio && std::array<std::int64_t, 3>{f1, f2, f3} < best)) {
                best = {f1, f2, f3};
                best_ratio = ratio;
            }
        }
    }
    return best;
}

static void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape != b.shape) {
        throw std::invalid_argument(std::string(what) + ": shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    }
}

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    Tensor out = a;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    Tensor out = a;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b.data[i];
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    Tensor out = a;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b.data[i];
    return out;
}

Tensor scale(const Tensor& a, double c) {
    Tensor out = a;
    for (auto& v : out.data) v *= c;
    return out;
}

double dot(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "dot");
    double s = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
    return s;
}

double sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data) s += v;
    return s;
}

double max_abs(const Tensor& a) {
    double m = 0.0;
    for (double v : a.data) m = std::max(m, std::abs(v));
    return m;
}

double max_rel_diff(const Tensor& a, const Tensor& b, double floor) {
    check_same_shape(a, b, "max_rel_diff");
    double worst = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double denom = std::max(std::abs(a.data[i]), std::abs(b.data[i])) + floor;
        worst = std::max(worst, std::abs(a.data[i] - b.data[i]) / denom);
    }
    return worst;
}

}  // namespace tenvoo
