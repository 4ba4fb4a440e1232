#pragma once

#include <array>
#include <cstdint>
#include <set>
#include <string>

#include "tenvoo/autodiff.hpp"
#include "tenvoo/network.hpp"

namespace tenvoo {

enum class AdapterKind { TenvooL, TenvooQ, Lora2D, Lora3D, QuantaLinear };

std::string adapter_kind_name(AdapterKind k);
AdapterKind adapter_kind_from_name(const std::string& name);

struct ConvKernelDims {
    std::int64_t c_out = 1, c_in = 1;
    std::int64_t k_d = 1, k_h = 1, k_w = 1;
    std::array<std::int64_t, 3> o{1, 1, 1};  // o1*o2*o3 == c_out
    std::array<std::int64_t, 3> i{1, 1, 1};  // i1*i2*i3 == c_in
};

// Factorizes both channel counts with the balanced-triple rule.
ConvKernelDims make_conv_dims(std::int64_t c_out, std::int64_t c_in,
                              std::int64_t k_d, std::int64_t k_h, std::int64_t k_w);

// A low-rank update factorization for one conv kernel or linear weight:
// a trainable tensor network plus a frozen snapshot of it, so the effective
// update starts at exactly zero and only the cores ever train.
struct AdapterState {
    AdapterKind kind = AdapterKind::TenvooL;
    std::int64_t rank = 0;
    TensorNetwork trainable_net;
    TensorNetwork frozen_net;

    ConvKernelDims dims;                        // conv kinds
    std::int64_t d_out = 0, d_in = 0;           // QuantaLinear
    std::array<std::int64_t, 3> m{1, 1, 1};     // QuantaLinear output factors
    std::array<std::int64_t, 3> n{1, 1, 1};     // QuantaLinear input factors

    double scaling = 1.0;
    bool degenerate_2d = false;                 // TenVOO-L with the k_h core removed
    std::set<std::string> constant_cores;       // wiring couplers: never trained or counted
    bool initialized = false;

    ContractionPlan plan;                       // shared by both nets (identical topology)
    Tensor frozen_materialized;                 // frozen contraction in kernel shape

    Shape kernel_shape() const;
};

AdapterState build_tenvoo_l(const ConvKernelDims& dims, std::int64_t r);
AdapterState build_tenvoo_q(const ConvKernelDims& dims, std::int64_t r);
AdapterState build_lora2d(std::int64_t c_out, std::int64_t c_in,
                          std::int64_t k_h, std::int64_t k_w, std::int64_t r);
AdapterState build_lora3d(const ConvKernelDims& dims, std::int64_t r);
AdapterState build_quanta_linear(std::int64_t d_out, std::int64_t d_in, std::int64_t r);

// Draws every trainable core from Normal(0, sigma^2) with sigma = r^(-L/2),
// L = that core's count of contracted (rank) legs, then snapshots the frozen
// copy. Core fill order is sorted core name; one stream per seed.
void init_adapter(AdapterState& st, std::uint64_t seed);

// Recomputes the cached plan and frozen contraction; called by init and after
// any structural or frozen-core mutation (e.g. checkpoint load).
void refresh_frozen_cache(AdapterState& st);

// Contraction of the trainable net alone, in kernel shape (no scaling, no
// frozen subtraction).
Tensor contract_trainable(const AdapterState& st);

// scaling * (contract(trainable) - contract(frozen)), in kernel shape.
Tensor materialize_delta(const AdapterState& st);

Tensor merge(const Tensor& base_kernel, const AdapterState& st);
Tensor unmerge(const Tensor& merged_kernel, const AdapterState& st);

// Number of trainable scalar entries across cores.
std::int64_t param_count(const AdapterState& st);

// Collapses a TenVOO-L adapter to a 2D kernel: the k_h core is removed and
// its three rank legs are re-joined through a constant Kronecker-delta
// coupler, so the network stays connected and the count drops by k_h * r^3.
AdapterState degenerate_to_2d(const AdapterState& st);

// Registers "<prefix>.<core>" parameters for every core (trainable flag per
// core; wiring couplers and "<prefix>.frozen.<core>" snapshots are frozen).
void register_adapter_params(ParamStore& params, const AdapterState& st, const std::string& prefix);

// Emits the delta computation onto a graph, binding trainable cores to their
// registered parameters; returns the node holding the kernel-shaped delta.
// Replays the cached contraction plan, so the result is bit-identical to
// materialize_delta at equal core values.
int adapter_delta_node(Graph& g, ParamStore& params, const AdapterState& st, const std::string& prefix);

// Copies current parameter values back into trainable_net (after training).
void sync_adapter_from_params(AdapterState& st, const ParamStore& params, const std::string& prefix);

// Topology descriptor (kind, rank, dims, factorizations, core shapes, edges)
// as a JSON string, embedded in checkpoints.
std::string adapter_topology_json(const AdapterState& st);

}  // namespace tenvoo
