#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "tenvoo/conv3d.hpp"
#include "tenvoo/tensor.hpp"

namespace tenvoo {

struct Parameter {
    std::string name;
    Tensor value;
    bool trainable = true;
};

// Owns parameters at stable addresses; names are unique.
class ParamStore {
public:
    Parameter& add(const std::string& name, Tensor value, bool trainable = true);
    Parameter& get(const std::string& name);
    const Parameter& get(const std::string& name) const;
    bool contains(const std::string& name) const;
    std::vector<Parameter*> all();                 // insertion order
    std::vector<const Parameter*> all() const;
    std::int64_t count_trainable() const;          // total trainable scalar entries
    std::int64_t count_total() const;

private:
    std::deque<Parameter> params_;
    std::map<std::string, Parameter*> by_name_;
};

enum class Op {
    Leaf,
    Contract,
    Reshape,
    Permute,
    Add,
    Sub,
    Mul,
    Scale,
    SumAll,
    MeanAll,
    Silu,
    SoftmaxLast,
    Linear,
    BatchedMatmul,
    Conv3d,
    GroupNorm,
    ConcatChannels,
    Upsample2x,
    AddChannelBias,
};

struct Node {
    int id = -1;
    Op op = Op::Leaf;
    std::vector<int> inputs;
    Tensor value;
    Tensor grad;                   // allocated during backward for grad-requiring nodes
    bool requires_grad = false;
    Parameter* param = nullptr;    // set on parameter-bound leaves

    Shape shape_attr;                            // Reshape target
    std::vector<int> order_attr;                 // Permute
    std::vector<std::pair<int, int>> pairs_attr; // Contract
    double scalar_attr = 0.0;                    // Scale factor / GroupNorm eps
    Dims3 stride_attr{1, 1, 1};                  // Conv3d
    Dims3 pad_attr{0, 0, 0};                     // Conv3d
    int groups_attr = 1;                         // GroupNorm
};

// Eager tape: every builder evaluates immediately and appends one node.
// Inputs must be existing node ids, so the tape is acyclic by construction.
class Graph {
public:
    int leaf(const Tensor& value);               // constant (no gradient)
    int leaf(Parameter& p);                      // tracked iff p.trainable

    int contract(int a, int b, const std::vector<std::pair<int, int>>& pairs);
    int reshape(int a, const Shape& shape);
    int permute(int a, const std::vector<int>& order);
    int add(int a, int b);
    int sub(int a, int b);
    int mul(int a, int b);
    int scale(int a, double s);
    int sum_all(int a);
    int mean_all(int a);
    int silu(int a);
    int softmax_last(int a);
    // y[..., o] = sum_i x[..., i] * w[o, i] + b[o]
    int linear(int x, int w, int b);
    // [n, m, k] x [n, k, p] -> [n, m, p]
    int batched_matmul(int a, int b);
    int conv3d(int x, int w, int b, const Dims3& stride, const Dims3& pad);
    int group_norm(int x, int gamma, int beta, int groups, double eps);
    int concat_channels(int a, int b);           // rank-5, axis 1
    int upsample2x(int a);                       // rank-5 nearest-neighbour x2
    int add_channel_bias(int x, int v);          // x[n,c,...] + v[n,c]

    int mse(int pred, int target);               // mean((pred - target)^2)

    const Tensor& value(int id) const;
    const Node& node(int id) const;
    bool has_grad(int id) const;
    const Tensor& grad(int id) const;
    std::size_t size() const { return nodes_.size(); }

    // Replaces a constant leaf's value (shape must match).
    void set_leaf(int id, const Tensor& v);
    // Re-runs the forward pass in tape order; parameter-bound leaves re-read
    // their parameter's current value.
    void recompute();

    // Reverse-mode sweep from a scalar loss. Returns d(loss)/d(p) for every
    // trainable parameter leaf reachable from it; frozen parameters and
    // constants never appear in the map.
    std::map<std::string, Tensor> backward(int loss_id);

private:
    int push(Node n);
    void eval(Node& n);
    void check_id(int id, const char* what) const;

    std::deque<Node> nodes_;
};

struct FdCheckResult {
    double max_rel_err = 0.0;
    std::int64_t entries_checked = 0;
};

// Central-difference check of d(loss)/d(p) for one parameter:
// max over entries of |analytic - fd| / (|fd| + 1e-12).
// max_entries < 0 checks every entry, otherwise a seeded subsample.
FdCheckResult finite_diff_check(Graph& g, int loss_id, Parameter& p, double eps,
                                std::int64_t max_entries = -1,
                                std::uint64_t subsample_seed = 1);

}  // namespace tenvoo
