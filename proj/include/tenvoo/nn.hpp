#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tenvoo/adapters.hpp"
#include "tenvoo/autodiff.hpp"

namespace tenvoo {

// Denoiser architecture knobs. Widths are encoder channel counts from the
// input resolution down to the bottleneck; every width must be divisible by
// the GroupNorm group count.
struct UNetConfig {
    std::vector<std::int64_t> widths{8, 16, 64};
    std::int64_t temb_dim{32};
    std::int64_t gn_groups{4};
    std::int64_t in_channels{1};
};

// Sinusoidal embedding of a timestep index: interleaved sin/cos pairs with
// geometric frequencies 10000^(-2j/dim). Requires 0 <= t < horizon.
Tensor time_embedding(std::int64_t t, std::int64_t dim, std::int64_t horizon);
// Stacks per-row embeddings into [n, dim].
Tensor time_embedding_batch(const std::vector<std::int64_t>& ts, std::int64_t dim,
                            std::int64_t horizon);

// One adapter bound to one weight parameter of the model.
struct AdapterBinding {
    std::string target;  // adapted weight parameter, e.g. "mid0.conv1.w"
    std::string prefix;  // adapter parameter prefix, e.g. "adapter.mid0.conv1"
    AdapterState state;
};

struct AttachReport {
    std::int64_t adapter_params{0};    // trainable core entries across all adapters
    std::int64_t trainable_params{0};  // all trainable entries after freezing policy
    std::int64_t base_params{0};       // base model entries (no adapters, no frozen copies)
    std::int64_t total_params{0};      // base + adapter cores
    double trainable_fraction{0.0};    // trainable / total
};

// Three-level encoder/decoder denoiser: per-level residual blocks with
// GroupNorm/SiLU and a timestep projection, strided-conv downsampling,
// nearest-neighbor upsampling + conv, skip concatenation, and one
// single-head self-attention block at the bottleneck. Input and output
// volume shapes are identical.
class UNetLite {
public:
    UNetLite(UNetConfig cfg, std::uint64_t seed);

    const UNetConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    // Builds the forward graph for x [n,in_channels,D,H,W] with one timestep
    // index per batch row (0 <= t < horizon). D,H,W must be divisible by 4.
    // Returns the output node id; output shape equals input shape. Non-const
    // because graph leaves bind parameters for recompute/backward.
    int forward(Graph& g, const Tensor& x, const std::vector<std::int64_t>& ts,
                std::int64_t horizon);
    // Convenience wrapper: builds a throwaway graph and returns the output.
    Tensor forward_eval(const Tensor& x, const std::vector<std::int64_t>& ts,
                        std::int64_t horizon);

    // Attaches conv adapters of `conv_kind` to every residual-block
    // convolution and QuantaLinear adapters to the attention query/value
    // projections and the time-embedding/time-projection linears. Non-joint
    // mode freezes every base parameter; joint mode freezes only the adapted
    // weight tensors. Adapter cores are registered in params() under
    // "adapter.<layer>". Throws if adapters are already attached.
    AttachReport attach_adapters(AdapterKind conv_kind, std::int64_t rank, bool joint_mode,
                                 std::uint64_t seed, double scaling = 1.0);

    bool has_adapters() const { return !bindings_.empty(); }
    const std::vector<AdapterBinding>& bindings() const { return bindings_; }
    std::vector<AdapterBinding>& bindings() { return bindings_; }

    // Copies adapter core values from params() back into each binding's nets.
    void sync_adapters();
    // Effective weight for one binding: base kernel plus materialized update.
    Tensor merged_weight(const AdapterBinding& b) const;
    // Folds every adapter update into its base weight and detaches the
    // bindings, so subsequent forwards run adapter-free.
    void merge_adapters();

    std::int64_t base_param_count() const;

    // Adapted weight parameter names, in attachment order.
    std::vector<std::string> conv_target_names() const;
    std::vector<std::string> linear_target_names() const;

private:
    struct ConvDecl {
        std::string name;
        std::int64_t c_out{0}, c_in{0}, k{0};
        Dims3 stride{1, 1, 1}, pad{0, 0, 0};
    };

    void declare_conv(Rng& rng, const std::string& name, std::int64_t c_out, std::int64_t c_in,
                      std::int64_t k, Dims3 stride, Dims3 pad);
    void declare_linear(Rng& rng, const std::string& name, std::int64_t d_out, std::int64_t d_in);
    void declare_gn(const std::string& name, std::int64_t c);

    // Weight node for a possibly-adapted parameter; for 2D conv adapters the
    // update is applied as a second convolution pass instead (see conv_node).
    int weight_node(Graph& g, const std::string& wname);
    int conv_node(Graph& g, int x, const std::string& layer);
    int linear_node(Graph& g, int x, const std::string& layer);
    int gn_node(Graph& g, int x, const std::string& layer);
    int resblock(Graph& g, int x, int temb_act, const std::string& name);
    int attention(Graph& g, int x);

    const AdapterBinding* binding_for(const std::string& target) const;

    UNetConfig cfg_;
    ParamStore params_;
    std::map<std::string, ConvDecl> convs_;
    std::map<std::string, std::pair<std::int64_t, std::int64_t>> linears_;  // name -> (d_out,d_in)
    std::map<std::string, std::int64_t> gns_;                               // name -> channels
    std::vector<std::string> rb_names_;
    std::vector<AdapterBinding> bindings_;
    std::map<std::string, std::size_t> binding_index_;
};

}  // namespace tenvoo
