#include "tenvoo/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "tenvoo/rng.hpp"
#include "tenvoo/threading.hpp"

namespace tenvoo {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void accumulate(Tensor& into, const Tensor& t) {
    if (into.shape != t.shape) {
        throw std::logic_error("gradient accumulation shape mismatch: " + shape_str(into.shape) +
                               " vs " + shape_str(t.shape));
    }
    for (std::size_t i = 0; i < into.data.size(); ++i) into.data[i] += t.data[i];
}

struct ContractInfo {
    std::vector<int> a_unpaired, b_unpaired;        // ascending positions
    std::vector<int> a_paired, b_paired;            // ascending positions
    std::vector<char> a_is_paired, b_is_paired;
};

ContractInfo contract_info(int ra, int rb, const std::vector<std::pair<int, int>>& pairs) {
    ContractInfo ci;
    ci.a_is_paired.assign(static_cast<std::size_t>(ra), 0);
    ci.b_is_paired.assign(static_cast<std::size_t>(rb), 0);
    for (const auto& pr : pairs) {
        ci.a_is_paired[static_cast<std::size_t>(pr.first)] = 1;
        ci.b_is_paired[static_cast<std::size_t>(pr.second)] = 1;
    }
    for (int i = 0; i < ra; ++i) (ci.a_is_paired[static_cast<std::size_t>(i)] ? ci.a_paired : ci.a_unpaired).push_back(i);
    for (int j = 0; j < rb; ++j) (ci.b_is_paired[static_cast<std::size_t>(j)] ? ci.b_paired : ci.b_unpaired).push_back(j);
    return ci;
}

int rank_in(const std::vector<int>& sorted, int x) {
    return static_cast<int>(std::lower_bound(sorted.begin(), sorted.end(), x) - sorted.begin());
}

}  // namespace

// ---------------------------------------------------------------------------
// ParamStore

Parameter& ParamStore::add(const std::string& name, Tensor value, bool trainable) {
    if (by_name_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    params_.push_back(Parameter{name, std::move(value), trainable});
    by_name_[name] = &params_.back();
    return params_.back();
}

Parameter& ParamStore::get(const std::string& name) {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw std::out_of_range("unknown parameter: " + name);
    return *it->second;
}

const Parameter& ParamStore::get(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw std::out_of_range("unknown parameter: " + name);
    return *it->second;
}

bool ParamStore::contains(const std::string& name) const { return by_name_.count(name) != 0; }

std::vector<Parameter*> ParamStore::all() {
    std::vector<Parameter*> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(&p);
    return out;
}

std::vector<const Parameter*> ParamStore::all() const {
    std::vector<const Parameter*> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(&p);
    return out;
}

std::int64_t ParamStore::count_trainable() const {
    std::int64_t n = 0;
    for (const auto& p : params_)
        if (p.trainable) n += p.value.size();
    return n;
}

std::int64_t ParamStore::count_total() const {
    std::int64_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
}

// ---------------------------------------------------------------------------
// Graph: construction

void Graph::check_id(int id, const char* what) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
        throw std::out_of_range(std::string(what) + ": no node with id " + std::to_string(id));
    }
}

int Graph::push(Node n) {
    n.id = static_cast<int>(nodes_.size());
    for (int in : n.inputs) {
        check_id(in, "graph op input");
        if (in >= n.id) throw std::logic_error("cycle detected: node input id not earlier on the tape");
        if (nodes_[static_cast<std::size_t>(in)].requires_grad) n.requires_grad = true;
    }
    if (n.op == Op::Leaf && n.param && n.param->trainable) n.requires_grad = true;
    nodes_.push_back(std::move(n));
    eval(nodes_.back());
    return nodes_.back().id;
}

int Graph::leaf(const Tensor& value) {
    Node n;
    n.op = Op::Leaf;
    n.value = value;
    return push(std::move(n));
}

int Graph::leaf(Parameter& p) {
    Node n;
    n.op = Op::Leaf;
    n.param = &p;
    return push(std::move(n));
}

int Graph::contract(int a, int b, const std::vector<std::pair<int, int>>& pairs) {
    Node n;
    n.op = Op::Contract;
    n.inputs = {a, b};
    n.pairs_attr = pairs;
    return push(std::move(n));
}

int Graph::reshape(int a, const Shape& shape) {
    Node n;
    n.op = Op::Reshape;
    n.inputs = {a};
    n.shape_attr = shape;
    return push(std::move(n));
}

int Graph::permute(int a, const std::vector<int>& order) {
    Node n;
    n.op = Op::Permute;
    n.inputs = {a};
    n.order_attr = order;
    return push(std::move(n));
}

int Graph::add(int a, int b) {
    Node n;
    n.op = Op::Add;
    n.inputs = {a, b};
    return push(std::move(n));
}

int Graph::sub(int a, int b) {
    Node n;
    n.op = Op::Sub;
    n.inputs = {a, b};
    return push(std::move(n));
}

int Graph::mul(int a, int b) {
    Node n;
    n.op = Op::Mul;
    n.inputs = {a, b};
    return push(std::move(n));
}

int Graph::scale(int a, double s) {
    Node n;
    n.op = Op::Scale;
    n.inputs = {a};
    n.scalar_attr = s;
    return push(std::move(n));
}

int Graph::sum_all(int a) {
    Node n;
    n.op = Op::SumAll;
    n.inputs = {a};
    return push(std::move(n));
}

int Graph::mean_all(int a) {
    Node n;
    n.op = Op::MeanAll;
    n.inputs = {a};
    return push(std::move(n));
}

int Graph::silu(int a) {
    Node n;
    n.op = Op::Silu;
    n.inputs = {a};
    return push(std::move(n));
}

int Graph::softmax_last(int a) {
    Node n;
    n.op = Op::SoftmaxLast;
    n.inputs = {a};
    return push(std::move(n));
}

int Graph::linear(int x, int w, int b) {
    Node n;
    n.op = Op::Linear;
    n.inputs = {x, w, b};
    return push(std::move(n));
}

int Graph::batched_matmul(int a, int b) {
    Node n;
    n.op = Op::BatchedMatmul;
    n.inputs = {a, b};
    return push(std::move(n));
}

int Graph::conv3d(int x, int w, int b, const Dims3& stride, const Dims3& pad) {
    Node n;
    n.op = Op::Conv3d;
    n.inputs = {x, w, b};
    n.stride_attr = stride;
    n.pad_attr = pad;
    return push(std::move(n));
}

int Graph::group_norm(int x, int gamma, int beta, int groups, double eps) {
    Node n;
    n.op = Op::GroupNorm;
    n.inputs = {x, gamma, beta};
    n.groups_attr = groups;
    n.scalar_attr = eps;
    return push(std::move(n));
}

int Graph::concat_channels(int a, int b) {
    Node n;
    n.op = Op::ConcatChannels;
    n.inputs = {a, b};
    return push(std::move(n));
}

int Graph::upsample2x(int a) {
    Node n;
    n.op = Op::Upsample2x;
    n.inputs = {a};
    return push(std::move(n));
}

int Graph::add_channel_bias(int x, int v) {
    Node n;
    n.op = Op::AddChannelBias;
    n.inputs = {x, v};
    return push(std::move(n));
}

int Graph::mse(int pred, int target) {
    const int d = sub(pred, target);
    return mean_all(mul(d, d));
}

const Tensor& Graph::value(int id) const {
    check_id(id, "value");
    return nodes_[static_cast<std::size_t>(id)].value;
}

const Node& Graph::node(int id) const {
    check_id(id, "node");
    return nodes_[static_cast<std::size_t>(id)];
}

bool Graph::has_grad(int id) const {
    check_id(id, "has_grad");
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    return n.requires_grad && n.grad.shape == n.value.shape;
}

const Tensor& Graph::grad(int id) const {
    check_id(id, "grad");
    if (!has_grad(id)) throw std::logic_error("node " + std::to_string(id) + " has no gradient (run backward first)");
    return nodes_[static_cast<std::size_t>(id)].grad;
}

void Graph::set_leaf(int id, const Tensor& v) {
    check_id(id, "set_leaf");
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.op != Op::Leaf) throw std::invalid_argument("set_leaf target is not a leaf");
    if (n.param) throw std::invalid_argument("set_leaf target is parameter-bound; mutate the parameter instead");
    if (v.shape != n.value.shape) {
        throw std::invalid_argument("set_leaf shape mismatch: " + shape_str(v.shape) + " vs " + shape_str(n.value.shape));
    }
    n.value = v;
}

void Graph::recompute() {
    for (auto& n : nodes_) eval(n);
}

// ---------------------------------------------------------------------------
// Forward evaluation

void Graph::eval(Node& n) {
    auto in = [&](int k) -> const Tensor& { return nodes_[static_cast<std::size_t>(n.inputs[static_cast<std::size_t>(k)])].value; };

    switch (n.op) {
        case Op::Leaf:
            if (n.param) n.value = n.param->value;
            return;

        case Op::Contract:
            n.value = contract_pair(in(0), in(1), n.pairs_attr);
            return;

        case Op::Reshape:
            n.value = tenvoo::reshape(in(0), n.shape_attr);
            return;

        case Op::Permute:
            n.value = tenvoo::permute(in(0), n.order_attr);
            return;

        case Op::Add:
            n.value = tenvoo::add(in(0), in(1));
            return;

        case Op::Sub:
            n.value = tenvoo::sub(in(0), in(1));
            return;

        case Op::Mul:
            n.value = tenvoo::mul(in(0), in(1));
            return;

        case Op::Scale:
            n.value = tenvoo::scale(in(0), n.scalar_attr);
            return;

        case Op::SumAll:
            n.value = Tensor::scalar(tenvoo::sum(in(0)));
            return;

        case Op::MeanAll:
            n.value = Tensor::scalar(tenvoo::sum(in(0)) / static_cast<double>(in(0).size()));
            return;

        case Op::Silu: {
            const Tensor& x = in(0);
            Tensor y(x.shape);
            for (std::size_t i = 0; i < x.data.size(); ++i) y.data[i] = x.data[i] * sigmoid(x.data[i]);
            n.value = std::move(y);
            return;
        }

        case Op::SoftmaxLast: {
            const Tensor& x = in(0);
            if (x.rank() < 1) throw std::invalid_argument("softmax_last needs rank >= 1");
            const std::int64_t last = x.shape.back();
            const std::int64_t rows = x.size() / last;
            Tensor y(x.shape);
            for (std::int64_t r = 0; r < rows; ++r) {
                const double* xr = x.data.data() + r * last;
                double* yr = y.data.data() + r * last;
                double mx = xr[0];
                for (std::int64_t i = 1; i < last; ++i) mx = std::max(mx, xr[i]);
                double s = 0.0;
                for (std::int64_t i = 0; i < last; ++i) {
                    yr[i] = std::exp(xr[i] - mx);
                    s += yr[i];
                }
                for (std::int64_t i = 0; i < last; ++i) yr[i] /= s;
            }
            n.value = std::move(y);
            return;
        }

        case Op::Linear: {
            const Tensor& x = in(0);
            const Tensor& w = in(1);
            const Tensor& b = in(2);
            if (x.rank() < 1) throw std::invalid_argument("linear input needs rank >= 1");
            if (w.rank() != 2) throw std::invalid_argument("linear weight must be rank 2 [out,in], got " + shape_str(w.shape));
            const std::int64_t din = x.shape.back(), dout = w.shape[0];
            if (w.shape[1] != din) {
                throw std::invalid_argument("linear dimension mismatch: input last axis " + std::to_string(din) +
                                            " vs weight " + shape_str(w.shape));
            }
            if (b.shape != Shape{dout}) {
                throw std::invalid_argument("linear bias shape " + shape_str(b.shape) + " must be [" + std::to_string(dout) + "]");
            }
            Shape ys = x.shape;
            ys.back() = dout;
            Tensor y(ys);
            const std::int64_t rows = x.size() / din;
            const double* px = x.data.data();
            const double* pw = w.data.data();
            const double* pb = b.data.data();
            double* py = y.data.data();
            parallel_for(rows, [&](std::int64_t r0, std::int64_t r1) {
                for (std::int64_t r = r0; r < r1; ++r) {
                    const double* xr = px + r * din;
                    double* yr = py + r * dout;
                    for (std::int64_t o = 0; o < dout; ++o) {
                        const double* wr = pw + o * din;
                        double acc = pb[o];
                        for (std::int64_t i = 0; i < din; ++i) acc += xr[i] * wr[i];
                        yr[o] = acc;
                    }
                }
            });
            n.value = std::move(y);
            return;
        }

        case Op::BatchedMatmul: {
            const Tensor& a = in(0);
            const Tensor& b = in(1);
            if (a.rank() != 3 || b.rank() != 3) {
                throw std::invalid_argument("batched_matmul needs rank-3 operands, got " + shape_str(a.shape) +
                                            " and " + shape_str(b.shape));
            }
            if (a.shape[0] != b.shape[0] || a.shape[2] != b.shape[1]) {
                throw std::invalid_argument("batched_matmul shape mismatch: " + shape_str(a.shape) + " x " + shape_str(b.shape));
            }
            const std::int64_t N = a.shape[0], M = a.shape[1], K = a.shape[2], P = b.shape[2];
            Tensor y({N, M, P});
            const double* pa = a.data.data();
            const double* pb = b.data.data();
            double* py = y.data.data();
            parallel_for(N * M, [&](std::int64_t t0, std::int64_t t1) {
                for (std::int64_t t = t0; t < t1; ++t) {
                    const std::int64_t nb = t / M, m = t % M;
                    const double* ar = pa + (nb * M + m) * K;
                    double* yr = py + (nb * M + m) * P;
                    for (std::int64_t p = 0; p < P; ++p) yr[p] = 0.0;
                    for (std::int64_t k = 0; k < K; ++k) {
                        const double av = ar[k];
                        const double* br = pb + (nb * K + k) * P;
                        for (std::int64_t p = 0; p < P; ++p) yr[p] += av * br[p];
                    }
                }
            });
            n.value = std::move(y);
            return;
        }

        case Op::Conv3d:
            n.value = conv3d_forward(in(0), in(1), in(2), n.stride_attr, n.pad_attr);
            return;

        case Op::GroupNorm: {
            const Tensor& x = in(0);
            const Tensor& gamma = in(1);
            const Tensor& beta = in(2);
            if (x.rank() < 2) throw std::invalid_argument("group_norm input needs rank >= 2 [n,c,...]");
            const std::int64_t N = x.shape[0], C = x.shape[1];
            const std::int64_t G = n.groups_attr;
            if (G < 1 || C % G != 0) {
                throw std::invalid_argument("group_norm: channels " + std::to_string(C) + " not divisible by groups " +
                                            std::to_string(G));
            }
            if (gamma.shape != Shape{C} || beta.shape != Shape{C}) {
                throw std::invalid_argument("group_norm gamma/beta must be [" + std::to_string(C) + "]");
            }
            const std::int64_t S = x.size() / (N * C);  // spatial elements per channel
            const std::int64_t cg = C / G;
            const std::int64_t m = cg * S;
            Tensor y(x.shape);
            const double eps = n.scalar_attr;
            for (std::int64_t nb = 0; nb < N; ++nb) {
                for (std::int64_t g = 0; g < G; ++g) {
                    const double* xg = x.data.data() + (nb * C + g * cg) * S;
                    double mu = 0.0;
                    for (std::int64_t i = 0; i < m; ++i) mu += xg[i];
                    mu /= static_cast<double>(m);
                    double var = 0.0;
                    for (std::int64_t i = 0; i < m; ++i) {
                        const double d = xg[i] - mu;
                        var += d * d;
                    }
                    var /= static_cast<double>(m);
                    const double inv = 1.0 / std::sqrt(var + eps);
                    double* yg = y.data.data() + (nb * C + g * cg) * S;
                    for (std::int64_t c = 0; c < cg; ++c) {
                        const double ga = gamma.data[static_cast<std::size_t>(g * cg + c)];
                        const double be = beta.data[static_cast<std::size_t>(g * cg + c)];
                        for (std::int64_t s = 0; s < S; ++s) {
                            yg[c * S + s] = ga * (xg[c * S + s] - mu) * inv + be;
                        }
                    }
                }
            }
            n.value = std::move(y);
            return;
        }

        case Op::ConcatChannels: {
            const Tensor& a = in(0);
            const Tensor& b = in(1);
            if (a.rank() != 5 || b.rank() != 5) throw std::invalid_argument("concat_channels needs rank-5 operands");
            for (int k : {0, 2, 3, 4}) {
                if (a.shape[static_cast<std::size_t>(k)] != b.shape[static_cast<std::size_t>(k)]) {
                    throw std::invalid_argument("concat_channels non-channel axes differ: " + shape_str(a.shape) +
                                                " vs " + shape_str(b.shape));
                }
            }
            const std::int64_t N = a.shape[0], C1 = a.shape[1], C2 = b.shape[1];
            const std::int64_t S = a.size() / (N * C1);
            Tensor y({N, C1 + C2, a.shape[2], a.shape[3], a.shape[4]});
            for (std::int64_t nb = 0; nb < N; ++nb) {
                std::copy_n(a.data.data() + nb * C1 * S, C1 * S, y.data.data() + nb * (C1 + C2) * S);
                std::copy_n(b.data.data() + nb * C2 * S, C2 * S, y.data.data() + nb * (C1 + C2) * S + C1 * S);
            }
            n.value = std::move(y);
            return;
        }

        case Op::Upsample2x: {
            const Tensor& x = in(0);
            if (x.rank() != 5) throw std::invalid_argument("upsample2x needs a rank-5 input");
            const std::int64_t N = x.shape[0], C = x.shape[1], D = x.shape[2], H = x.shape[3], W = x.shape[4];
            Tensor y({N, C, 2 * D, 2 * H, 2 * W});
            for (std::int64_t nc = 0; nc < N * C; ++nc) {
                const double* xv = x.data.data() + nc * D * H * W;
                double* yv = y.data.data() + nc * 8 * D * H * W;
                for (std::int64_t d = 0; d < D; ++d)
                    for (std::int64_t h = 0; h < H; ++h)
                        for (std::int64_t w = 0; w < W; ++w) {
                            const double v = xv[(d * H + h) * W + w];
                            for (std::int64_t dd = 0; dd < 2; ++dd)
                                for (std::int64_t hh = 0; hh < 2; ++hh) {
                                    double* row = yv + (((2 * d + dd) * 2 * H + 2 * h + hh) * 2 * W) + 2 * w;
                                    row[0] = v;
                                    row[1] = v;
                                }
                        }
            }
            n.value = std::move(y);
            return;
        }

        case Op::AddChannelBias: {
            const Tensor& x = in(0);
            const Tensor& v = in(1);
            if (x.rank() < 2) throw std::invalid_argument("add_channel_bias input needs rank >= 2 [n,c,...]");
            if (v.shape != Shape{x.shape[0], x.shape[1]}) {
                throw std::invalid_argument("add_channel_bias bias shape " + shape_str(v.shape) + " must be [" +
                                            std::to_string(x.shape[0]) + "," + std::to_string(x.shape[1]) + "]");
            }
            const std::int64_t NC = x.shape[0] * x.shape[1];
            const std::int64_t S = x.size() / NC;
            Tensor y(x.shape);
            for (std::int64_t nc = 0; nc < NC; ++nc) {
                const double bv = v.data[static_cast<std::size_t>(nc)];
                const double* xr = x.data.data() + nc * S;
                double* yr = y.data.data() + nc * S;
                for (std::int64_t s = 0; s < S; ++s) yr[s] = xr[s] + bv;
            }
            n.value = std::move(y);
            return;
        }
    }
    throw std::logic_error("unhandled op in eval");
}

// ---------------------------------------------------------------------------
// Backward sweep

std::map<std::string, Tensor> Graph::backward(int loss_id) {
    check_id(loss_id, "backward");
    Node& loss = nodes_[static_cast<std::size_t>(loss_id)];
    if (loss.value.size() != 1) {
        throw std::invalid_argument("backward loss must be scalar, got shape " + shape_str(loss.value.shape));
    }

    std::map<std::string, Tensor> out;
    if (!loss.requires_grad) return out;

    // Reachability from the loss through grad-requiring nodes only.
    std::vector<char> reached(nodes_.size(), 0);
    reached[static_cast<std::size_t>(loss_id)] = 1;
    for (int id = loss_id; id >= 0; --id) {
        if (!reached[static_cast<std::size_t>(id)]) continue;
        const Node& nd = nodes_[static_cast<std::size_t>(id)];
        if (!nd.requires_grad) continue;
        for (int in : nd.inputs) {
            if (in >= id) throw std::logic_error("cycle detected: node input id not earlier on the tape");
            if (nodes_[static_cast<std::size_t>(in)].requires_grad) reached[static_cast<std::size_t>(in)] = 1;
        }
    }

    for (auto& nd : nodes_) {
        if (nd.requires_grad && reached[static_cast<std::size_t>(nd.id)]) nd.grad = Tensor::zeros(nd.value.shape);
    }
    loss.grad = Tensor::full(loss.value.shape, 1.0);

    auto rg = [&](int k, const Node& nd) {
        const int id = nd.inputs[static_cast<std::size_t>(k)];
        return nodes_[static_cast<std::size_t>(id)].requires_grad;
    };
    auto gacc = [&](int k, const Node& nd) -> Tensor& { return nodes_[static_cast<std::size_t>(nd.inputs[static_cast<std::size_t>(k)])].grad; };
    auto val = [&](int k, const Node& nd) -> const Tensor& { return nodes_[static_cast<std::size_t>(nd.inputs[static_cast<std::size_t>(k)])].value; };

    for (int id = loss_id; id >= 0; --id) {
        if (!reached[static_cast<std::size_t>(id)]) continue;
        Node& nd = nodes_[static_cast<std::size_t>(id)];
        if (!nd.requires_grad) continue;
        const Tensor& G = nd.grad;

        switch (nd.op) {
            case Op::Leaf:
                break;

            case Op::Contract: {
                const Tensor& A = val(0, nd);
                const Tensor& B = val(1, nd);
                const int ra = A.rank(), rb = B.rank();
                const ContractInfo ci = contract_info(ra, rb, nd.pairs_attr);
                const int na_u = static_cast<int>(ci.a_unpaired.size());
                const int nb_u = static_cast<int>(ci.b_unpaired.size());
                const int np = static_cast<int>(nd.pairs_attr.size());
                if (rg(0, nd)) {
                    std::vector<std::pair<int, int>> gp;
                    gp.reserve(static_cast<std::size_t>(nb_u));
                    for (int j = 0; j < nb_u; ++j) gp.emplace_back(na_u + j, ci.b_unpaired[static_cast<std::size_t>(j)]);
                    Tensor raw = contract_pair(G, B, gp);
                    // raw legs: [a_unpaired..., b_paired...]; put them back in A's leg order.
                    std::vector<int> partner_b(static_cast<std::size_t>(ra), -1);
                    for (const auto& pr : nd.pairs_attr) partner_b[static_cast<std::size_t>(pr.first)] = pr.second;
                    std::vector<int> order(static_cast<std::size_t>(ra));
                    for (int p = 0; p < ra; ++p) {
                        order[static_cast<std::size_t>(p)] =
                            ci.a_is_paired[static_cast<std::size_t>(p)]
                                ? na_u + rank_in(ci.b_paired, partner_b[static_cast<std::size_t>(p)])
                                : rank_in(ci.a_unpaired, p);
                    }
                    accumulate(gacc(0, nd), tenvoo::permute(raw, order));
                }
                if (rg(1, nd)) {
                    std::vector<std::pair<int, int>> gp;
                    gp.reserve(static_cast<std::size_t>(na_u));
                    for (int i = 0; i < na_u; ++i) gp.emplace_back(ci.a_unpaired[static_cast<std::size_t>(i)], i);
                    Tensor raw = contract_pair(A, G, gp);
                    // raw legs: [a_paired..., b_unpaired...]; put them back in B's leg order.
                    std::vector<int> partner_a(static_cast<std::size_t>(rb), -1);
                    for (const auto& pr : nd.pairs_attr) partner_a[static_cast<std::size_t>(pr.second)] = pr.first;
                    std::vector<int> order(static_cast<std::size_t>(rb));
                    for (int q = 0; q < rb; ++q) {
                        order[static_cast<std::size_t>(q)] =
                            ci.b_is_paired[static_cast<std::size_t>(q)]
                                ? rank_in(ci.a_paired, partner_a[static_cast<std::size_t>(q)])
                                : np + rank_in(ci.b_unpaired, q);
                    }
                    accumulate(gacc(1, nd), tenvoo::permute(raw, order));
                }
                break;
            }

            case Op::Reshape:
                if (rg(0, nd)) accumulate(gacc(0, nd), tenvoo::reshape(G, val(0, nd).shape));
                break;

            case Op::Permute:
                if (rg(0, nd)) {
                    std::vector<int> inv(nd.order_attr.size());
                    for (std::size_t k = 0; k < nd.order_attr.size(); ++k) inv[static_cast<std::size_t>(nd.order_attr[k])] = static_cast<int>(k);
                    accumulate(gacc(0, nd), tenvoo::permute(G, inv));
                }
                break;

            case Op::Add:
                if (rg(0, nd)) accumulate(gacc(0, nd), G);
                if (rg(1, nd)) accumulate(gacc(1, nd), G);
                break;

            case Op::Sub:
                if (rg(0, nd)) accumulate(gacc(0, nd), G);
                if (rg(1, nd)) accumulate(gacc(1, nd), tenvoo::scale(G, -1.0));
                break;

            case Op::Mul:
                if (rg(0, nd)) accumulate(gacc(0, nd), tenvoo::mul(G, val(1, nd)));
                if (rg(1, nd)) accumulate(gacc(1, nd), tenvoo::mul(G, val(0, nd)));
                break;

            case Op::Scale:
                if (rg(0, nd)) accumulate(gacc(0, nd), tenvoo::scale(G, nd.scalar_attr));
                break;

            case Op::SumAll:
                if (rg(0, nd)) accumulate(gacc(0, nd), Tensor::full(val(0, nd).shape, G.data[0]));
                break;

            case Op::MeanAll:
                if (rg(0, nd)) {
                    const double g = G.data[0] / static_cast<double>(val(0, nd).size());
                    accumulate(gacc(0, nd), Tensor::full(val(0, nd).shape, g));
                }
                break;

            case Op::Silu:
                if (rg(0, nd)) {
                    const Tensor& x = val(0, nd);
                    Tensor gx(x.shape);
                    for (std::size_t i = 0; i < x.data.size(); ++i) {
                        const double s = sigmoid(x.data[i]);
                        gx.data[i] = G.data[i] * (s + x.data[i] * s * (1.0 - s));
                    }
                    accumulate(gacc(0, nd), gx);
                }
                break;

            case Op::SoftmaxLast:
                if (rg(0, nd)) {
                    const Tensor& y = nd.value;
                    const std::int64_t last = y.shape.back();
                    const std::int64_t rows = y.size() / last;
                    Tensor gx(y.shape);
                    for (std::int64_t r = 0; r < rows; ++r) {
                        const double* yr = y.data.data() + r * last;
                        const double* gr = G.data.data() + r * last;
                        double* gxr = gx.data.data() + r * last;
                        double dotv = 0.0;
                        for (std::int64_t i = 0; i < last; ++i) dotv += gr[i] * yr[i];
                        for (std::int64_t i = 0; i < last; ++i) gxr[i] = yr[i] * (gr[i] - dotv);
                    }
                    accumulate(gacc(0, nd), gx);
                }
                break;

            case Op::Linear: {
                const Tensor& x = val(0, nd);
                const Tensor& w = val(1, nd);
                const std::int64_t din = x.shape.back(), dout = w.shape[0];
                const std::int64_t rows = x.size() / din;
                const double* px = x.data.data();
                const double* pw = w.data.data();
                const double* pg = G.data.data();
                if (rg(0, nd)) {
                    Tensor gx = Tensor::zeros(x.shape);
                    double* pgx = gx.data.data();
                    parallel_for(rows, [&](std::int64_t r0, std::int64_t r1) {
                        for (std::int64_t r = r0; r < r1; ++r) {
                            const double* gr = pg + r * dout;
                            double* gxr = pgx + r * din;
                            for (std::int64_t o = 0; o < dout; ++o) {
                                const double gv = gr[o];
                                const double* wr = pw + o * din;
                                for (std::int64_t i = 0; i < din; ++i) gxr[i] += gv * wr[i];
                            }
                        }
                    });
                    accumulate(gacc(0, nd), gx);
                }
                if (rg(1, nd)) {
                    Tensor gw = Tensor::zeros(w.shape);
                    double* pgw = gw.data.data();
                    parallel_for(dout, [&](std::int64_t o0, std::int64_t o1) {
                        for (std::int64_t o = o0; o < o1; ++o) {
                            double* gwr = pgw + o * din;
                            for (std::int64_t r = 0; r < rows; ++r) {
                                const double gv = pg[r * dout + o];
                                const double* xr = px + r * din;
                                for (std::int64_t i = 0; i < din; ++i) gwr[i] += gv * xr[i];
                            }
                        }
                    });
                    accumulate(gacc(1, nd), gw);
                }
                if (rg(2, nd)) {
                    Tensor gb = Tensor::zeros({dout});
                    for (std::int64_t r = 0; r < rows; ++r)
                        for (std::int64_t o = 0; o < dout; ++o) gb.data[static_cast<std::size_t>(o)] += pg[r * dout + o];
                    accumulate(gacc(2, nd), gb);
                }
                break;
            }

            case Op::BatchedMatmul: {
                const Tensor& a = val(0, nd);
                const Tensor& b = val(1, nd);
                const std::int64_t N = a.shape[0], M = a.shape[1], K = a.shape[2], P = b.shape[2];
                const double* pa = a.data.data();
                const double* pb = b.data.data();
                const double* pg = G.data.data();
                if (rg(0, nd)) {
                    Tensor ga = Tensor::zeros(a.shape);
                    double* pga = ga.data.data();
                    parallel_for(N * M, [&](std::int64_t t0, std::int64_t t1) {
                        for (std::int64_t t = t0; t < t1; ++t) {
                            const std::int64_t nb = t / M, m = t % M;
                            const double* gr = pg + (nb * M + m) * P;
                            double* gar = pga + (nb * M + m) * K;
                            for (std::int64_t k = 0; k < K; ++k) {
                                const double* br = pb + (nb * K + k) * P;
                                double acc = 0.0;
                                for (std::int64_t p = 0; p < P; ++p) acc += gr[p] * br[p];
                                gar[k] = acc;
                            }
                        }
                    });
                    accumulate(gacc(0, nd), ga);
                }
                if (rg(1, nd)) {
                    Tensor gb = Tensor::zeros(b.shape);
                    double* pgb = gb.data.data();
                    parallel_for(N * K, [&](std::int64_t t0, std::int64_t t1) {
                        for (std::int64_t t = t0; t < t1; ++t) {
                            const std::int64_t nb = t / K, k = t % K;
                            double* gbr = pgb + (nb * K + k) * P;
                            for (std::int64_t m = 0; m < M; ++m) {
                                const double av = pa[(nb * M + m) * K + k];
                                const double* gr = pg + (nb * M + m) * P;
                                for (std::int64_t p = 0; p < P; ++p) gbr[p] += av * gr[p];
                            }
                        }
                    });
                    accumulate(gacc(1, nd), gb);
                }
                break;
            }

            case Op::Conv3d: {
                Tensor gx, gw, gb;
                conv3d_backward(val(0, nd), val(1, nd), nd.stride_attr, nd.pad_attr, G,
                                rg(0, nd) ? &gx : nullptr, rg(1, nd) ? &gw : nullptr, rg(2, nd) ? &gb : nullptr);
                if (rg(0, nd)) accumulate(gacc(0, nd), gx);
                if (rg(1, nd)) accumulate(gacc(1, nd), gw);
                if (rg(2, nd)) accumulate(gacc(2, nd), gb);
                break;
            }

            case Op::GroupNorm: {
                const Tensor& x = val(0, nd);
                const Tensor& gamma = val(1, nd);
                const std::int64_t N = x.shape[0], C = x.shape[1];
                const std::int64_t Gr = nd.groups_attr;
                const std::int64_t S = x.size() / (N * C);
                const std::int64_t cg = C / Gr;
                const std::int64_t m = cg * S;
                const double eps = nd.scalar_attr;
                Tensor gx = rg(0, nd) ? Tensor::zeros(x.shape) : Tensor();
                Tensor ggamma = rg(1, nd) ? Tensor::zeros({C}) : Tensor();
                Tensor gbeta = rg(2, nd) ? Tensor::zeros({C}) : Tensor();
                for (std::int64_t nb = 0; nb < N; ++nb) {
                    for (std::int64_t g = 0; g < Gr; ++g) {
                        const double* xg = x.data.data() + (nb * C + g * cg) * S;
                        const double* gg = G.data.data() + (nb * C + g * cg) * S;
                        double mu = 0.0;
                        for (std::int64_t i = 0; i < m; ++i) mu += xg[i];
                        mu /= static_cast<double>(m);
                        double var = 0.0;
                        for (std::int64_t i = 0; i < m; ++i) {
                            const double d = xg[i] - mu;
                            var += d * d;
                        }
                        var /= static_cast<double>(m);
                        const double inv = 1.0 / std::sqrt(var + eps);
                        // dxhat = G * gamma; S1 = sum dxhat, S2 = sum dxhat*xhat
                        double S1 = 0.0, S2 = 0.0;
                        for (std::int64_t c = 0; c < cg; ++c) {
                            const double ga = gamma.data[static_cast<std::size_t>(g * cg + c)];
                            for (std::int64_t s = 0; s < S; ++s) {
                                const double xhat = (xg[c * S + s] - mu) * inv;
                                const double dxh = gg[c * S + s] * ga;
                                S1 += dxh;
                                S2 += dxh * xhat;
                            }
                        }
                        for (std::int64_t c = 0; c < cg; ++c) {
                            const std::size_t ch = static_cast<std::size_t>(g * cg + c);
                            const double ga = gamma.data[ch];
                            for (std::int64_t s = 0; s < S; ++s) {
                                const double xhat = (xg[c * S + s] - mu) * inv;
                                const double gv = gg[c * S + s];
                                if (rg(0, nd)) {
                                    const double dxh = gv * ga;
                                    gx.data[static_cast<std::size_t>((nb * C + g * cg + c) * S + s)] =
                                        inv * (dxh - S1 / static_cast<double>(m) - xhat * S2 / static_cast<double>(m));
                                }
                                if (rg(1, nd)) ggamma.data[ch] += gv * xhat;
                                if (rg(2, nd)) gbeta.data[ch] += gv;
                            }
                        }
                    }
                }
                if (rg(0, nd)) accumulate(gacc(0, nd), gx);
                if (rg(1, nd)) accumulate(gacc(1, nd), ggamma);
                if (rg(2, nd)) accumulate(gacc(2, nd), gbeta);
                break;
            }

            case Op::ConcatChannels: {
                const Tensor& a = val(0, nd);
                const Tensor& b = val(1, nd);
                const std::int64_t N = a.shape[0], C1 = a.shape[1], C2 = b.shape[1];
                const std::int64_t S = a.size() / (N * C1);
                if (rg(0, nd)) {
                    Tensor ga(a.shape);
                    for (std::int64_t nb = 0; nb < N; ++nb)
                        std::copy_n(G.data.data() + nb * (C1 + C2) * S, C1 * S, ga.data.data() + nb * C1 * S);
                    accumulate(gacc(0, nd), ga);
                }
                if (rg(1, nd)) {
                    Tensor gb(b.shape);
                    for (std::int64_t nb = 0; nb < N; ++nb)
                        std::copy_n(G.data.data() + nb * (C1 + C2) * S + C1 * S, C2 * S, gb.data.data() + nb * C2 * S);
                    accumulate(gacc(1, nd), gb);
                }
                break;
            }

            case Op::Upsample2x:
                if (rg(0, nd)) {
                    const Tensor& x = val(0, nd);
                    const std::int64_t N = x.shape[0], C = x.shape[1], D = x.shape[2], H = x.shape[3], W = x.shape[4];
                    Tensor gx = Tensor::zeros(x.shape);
                    for (std::int64_t nc = 0; nc < N * C; ++nc) {
                        const double* gv = G.data.data() + nc * 8 * D * H * W;
                        double* gxv = gx.data.data() + nc * D * H * W;
                        for (std::int64_t d = 0; d < D; ++d)
                            for (std::int64_t h = 0; h < H; ++h)
                                for (std::int64_t w = 0; w < W; ++w) {
                                    double acc = 0.0;
                                    for (std::int64_t dd = 0; dd < 2; ++dd)
                                        for (std::int64_t hh = 0; hh < 2; ++hh) {
                                            const double* row = gv + (((2 * d + dd) * 2 * H + 2 * h + hh) * 2 * W) + 2 * w;
                                            acc += row[0] + row[1];
                                        }
                                    gxv[(d * H + h) * W + w] = acc;
                                }
                    }
                    accumulate(gacc(0, nd), gx);
                }
                break;

            case Op::AddChannelBias: {
                if (rg(0, nd)) accumulate(gacc(0, nd), G);
                if (rg(1, nd)) {
                    const Tensor& v = val(1, nd);
                    const std::int64_t NC = v.size();
                    const std::int64_t S = G.size() / NC;
                    Tensor gv = Tensor::zeros(v.shape);
                    for (std::int64_t nc = 0; nc < NC; ++nc) {
                        double acc = 0.0;
                        const double* gr = G.data.data() + nc * S;
                        for (std::int64_t s = 0; s < S; ++s) acc += gr[s];
                        gv.data[static_cast<std::size_t>(nc)] = acc;
                    }
                    accumulate(gacc(1, nd), gv);
                }
                break;
            }
        }
    }

    for (const auto& nd : nodes_) {
        if (nd.op == Op::Leaf && nd.param && nd.param->trainable && reached[static_cast<std::size_t>(nd.id)]) {
            auto it = out.find(nd.param->name);
            if (it == out.end()) {
                out.emplace(nd.param->name, nd.grad);
            } else {
                accumulate(it->second, nd.grad);
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Finite differences

FdCheckResult finite_diff_check(Graph& g, int loss_id, Parameter& p, double eps,
                                std::int64_t max_entries, std::uint64_t subsample_seed) {
    if (eps <= 0.0) throw std::invalid_argument("finite_diff_check eps must be > 0");
    auto grads = g.backward(loss_id);
    auto it = grads.find(p.name);
    if (it == grads.end()) {
        throw std::invalid_argument("parameter " + p.name + " receives no gradient from this loss");
    }
    const Tensor analytic = it->second;

    const std::int64_t n = p.value.size();
    std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    if (max_entries >= 0 && max_entries < n) {
        Rng rng(subsample_seed);
        for (std::int64_t i = 0; i < max_entries; ++i) {
            const std::int64_t j = i + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(n - i)));
            std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
        }
        idx.resize(static_cast<std::size_t>(max_entries));
    }

    FdCheckResult res;
    res.entries_checked = static_cast<std::int64_t>(idx.size());
    for (const std::int64_t e : idx) {
        const double theta = p.value.data[static_cast<std::size_t>(e)];
        p.value.data[static_cast<std::size_t>(e)] = theta + eps;
        g.recompute();
        const double lp = g.value(loss_id).data[0];
        p.value.data[static_cast<std::size_t>(e)] = theta - eps;
        g.recompute();
        const double lm = g.value(loss_id).data[0];
        p.value.data[static_cast<std::size_t>(e)] = theta;
        const double fd = (lp - lm) / (2.0 * eps);
        const double rel = std::abs(analytic.data[static_cast<std::size_t>(e)] - fd) / (std::abs(fd) + 1e-12);
        res.max_rel_err = std::max(res.max_rel_err, rel);
    }
    g.recompute();
    return res;
}

}  // namespace tenvoo
