#include "tenvoo/nn.hpp"

#include <cmath>
#include <set>
#include <stdexcept>
#include <utility>

#include "tenvoo/rng.hpp"

namespace tenvoo {

namespace {

bool starts_with(const std::string& s, const std::string& prefix) {
    return s.size() >= prefix.size() && s.compare(0, prefix.size(), prefix) == 0;
}

}  // namespace

Tensor time_embedding(std::int64_t t, std::int64_t dim, std::int64_t horizon) {
    if (dim < 2 || dim % 2 != 0) {
        throw std::invalid_argument("time_embedding: dim must be even and >= 2, got " +
                                    std::to_string(dim));
    }
    if (horizon < 1) {
        throw std::invalid_argument("time_embedding: horizon must be >= 1");
    }
    if (t < 0 || t >= horizon) {
        throw std::out_of_range("time_embedding: t=" + std::to_string(t) + " outside [0, " +
                                std::to_string(horizon) + ")");
    }
    Tensor e = Tensor::zeros({dim});
    const std::int64_t half = dim / 2;
    for (std::int64_t j = 0; j < half; ++j) {
        const double freq = std::pow(10000.0, -2.0 * static_cast<double>(j) /
                                                   static_cast<double>(dim));
        const double phase = static_cast<double>(t) * freq;
        e.data[static_cast<std::size_t>(2 * j)] = std::sin(phase);
        e.data[static_cast<std::size_t>(2 * j + 1)] = std::cos(phase);
    }
    return e;
}

Tensor time_embedding_batch(const std::vector<std::int64_t>& ts, std::int64_t dim,
                            std::int64_t horizon) {
    if (ts.empty()) throw std::invalid_argument("time_embedding_batch: empty timestep list");
    Tensor out = Tensor::zeros({static_cast<std::int64_t>(ts.size()), dim});
    for (std::size_t r = 0; r < ts.size(); ++r) {
        Tensor e = time_embedding(ts[r], dim, horizon);
        std::copy(e.data.begin(), e.data.end(),
                  out.data.begin() + static_cast<std::ptrdiff_t>(r * static_cast<std::size_t>(dim)));
    }
    return out;
}

UNetLite::UNetLite(UNetConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    if (cfg_.widths.size() != 3) {
        throw std::invalid_argument("UNetLite: exactly 3 level widths required, got " +
                                    std::to_string(cfg_.widths.size()));
    }
    for (std::int64_t w : cfg_.widths) {
        if (w < 1 || w % cfg_.gn_groups != 0) {
            throw std::invalid_argument("UNetLite: width " + std::to_string(w) +
                                        " not divisible by gn_groups=" +
                                        std::to_string(cfg_.gn_groups));
        }
    }
    if (cfg_.temb_dim < 2 || cfg_.temb_dim % 2 != 0) {
        throw std::invalid_argument("UNetLite: temb_dim must be even and >= 2");
    }
    if (cfg_.in_channels < 1) throw std::invalid_argument("UNetLite: in_channels must be >= 1");

    const std::int64_t w0 = cfg_.widths[0], w1 = cfg_.widths[1], w2 = cfg_.widths[2];
    Rng rng(seed);

    auto declare_rb = [&](const std::string& name, std::int64_t c_in, std::int64_t c_out) {
        declare_gn(name + ".gn1", c_in);
        declare_conv(rng, name + ".conv1", c_out, c_in, 3, {1, 1, 1}, {1, 1, 1});
        declare_linear(rng, name + ".tproj", c_out, cfg_.temb_dim);
        declare_gn(name + ".gn2", c_out);
        declare_conv(rng, name + ".conv2", c_out, c_out, 3, {1, 1, 1}, {1, 1, 1});
        if (c_in != c_out) declare_conv(rng, name + ".skip", c_out, c_in, 1, {1, 1, 1}, {0, 0, 0});
        rb_names_.push_back(name);
    };

    declare_conv(rng, "conv_in", w0, cfg_.in_channels, 3, {1, 1, 1}, {1, 1, 1});
    declare_rb("enc0", w0, w0);
    declare_conv(rng, "down0", w1, w0, 3, {2, 2, 2}, {1, 1, 1});
    declare_rb("enc1", w1, w1);
    declare_conv(rng, "down1", w2, w1, 3, {2, 2, 2}, {1, 1, 1});
    declare_rb("mid0", w2, w2);
    declare_gn("attn.gn", w2);
    declare_linear(rng, "attn.q", w2, w2);
    declare_linear(rng, "attn.k", w2, w2);
    declare_linear(rng, "attn.v", w2, w2);
    declare_linear(rng, "attn.out", w2, w2);
    declare_rb("mid1", w2, w2);
    declare_conv(rng, "up1", w1, w2, 3, {1, 1, 1}, {1, 1, 1});
    declare_rb("dec1", 2 * w1, w1);
    declare_conv(rng, "up0", w0, w1, 3, {1, 1, 1}, {1, 1, 1});
    declare_rb("dec0", 2 * w0, w0);
    declare_gn("out.gn", w0);
    declare_conv(rng, "conv_out", cfg_.in_channels, w0, 3, {1, 1, 1}, {1, 1, 1});
    declare_linear(rng, "temb.lin1", cfg_.temb_dim, cfg_.temb_dim);
    declare_linear(rng, "temb.lin2", cfg_.temb_dim, cfg_.temb_dim);
}

void UNetLite::declare_conv(Rng& rng, const std::string& name, std::int64_t c_out,
                            std::int64_t c_in, std::int64_t k, Dims3 stride, Dims3 pad) {
    const double sigma = std::sqrt(2.0 / static_cast<double>(c_in * k * k * k));
    params_.add(name + ".w", Tensor::random_normal({c_out, c_in, k, k, k}, rng, sigma));
    params_.add(name + ".b", Tensor::zeros({c_out}));
    convs_[name] = ConvDecl{name, c_out, c_in, k, stride, pad};
}

void UNetLite::declare_linear(Rng& rng, const std::string& name, std::int64_t d_out,
                              std::int64_t d_in) {
    const double sigma = std::sqrt(1.0 / static_cast<double>(d_in));
    params_.add(name + ".w", Tensor::random_normal({d_out, d_in}, rng, sigma));
    params_.add(name + ".b", Tensor::zeros({d_out}));
    linears_[name] = {d_out, d_in};
}

void UNetLite::declare_gn(const std::string& name, std::int64_t c) {
    params_.add(name + ".g", Tensor::full({c}, 1.0));
    params_.add(name + ".b", Tensor::zeros({c}));
    gns_[name] = c;
}

const AdapterBinding* UNetLite::binding_for(const std::string& target) const {
    auto it = binding_index_.find(target);
    return it == binding_index_.end() ? nullptr : &bindings_[it->second];
}

int UNetLite::weight_node(Graph& g, const std::string& wname) {
    int w = g.leaf(params_.get(wname));
    const AdapterBinding* b = binding_for(wname);
    if (b == nullptr || b->state.kind == AdapterKind::Lora2D) return w;
    return g.add(w, adapter_delta_node(g, params_, b->state, b->prefix));
}

int UNetLite::conv_node(Graph& g, int x, const std::string& layer) {
    const ConvDecl& d = convs_.at(layer);
    int y = g.conv3d(x, weight_node(g, layer + ".w"), g.leaf(params_.get(layer + ".b")),
                     d.stride, d.pad);
    const AdapterBinding* b = binding_for(layer + ".w");
    if (b != nullptr && b->state.kind == AdapterKind::Lora2D) {
        // Second pass: the planar update runs as a depth-1 kernel with zero
        // depth padding, which lines up with the base kernel's centre tap
        // (layers adapted this way are restricted to k_d == 2*pad_d + 1).
        int delta = adapter_delta_node(g, params_, b->state, b->prefix);
        int d5 = g.reshape(delta, {d.c_out, d.c_in, 1, d.k, d.k});
        int zb = g.leaf(Tensor::zeros({d.c_out}));
        y = g.add(y, g.conv3d(x, d5, zb, d.stride, {0, d.pad[1], d.pad[2]}));
    }
    return y;
}

int UNetLite::linear_node(Graph& g, int x, const std::string& layer) {
    return g.linear(x, weight_node(g, layer + ".w"), g.leaf(params_.get(layer + ".b")));
}

int UNetLite::gn_node(Graph& g, int x, const std::string& layer) {
    return g.group_norm(x, g.leaf(params_.get(layer + ".g")), g.leaf(params_.get(layer + ".b")),
                        static_cast<int>(cfg_.gn_groups), 1e-5);
}

int UNetLite::resblock(Graph& g, int x, int temb_act, const std::string& name) {
    const ConvDecl& c1 = convs_.at(name + ".conv1");
    int h = conv_node(g, g.silu(gn_node(g, x, name + ".gn1")), name + ".conv1");
    int tp = linear_node(g, temb_act, name + ".tproj");
    h = g.add_channel_bias(h, tp);
    h = conv_node(g, g.silu(gn_node(g, h, name + ".gn2")), name + ".conv2");
    int skip = (c1.c_in == c1.c_out) ? x : conv_node(g, x, name + ".skip");
    return g.add(h, skip);
}

int UNetLite::attention(Graph& g, int x) {
    const Shape& xs = g.value(x).shape;
    const std::int64_t n = xs[0], c = xs[1], s = xs[2] * xs[3] * xs[4];
    int h = gn_node(g, x, "attn.gn");
    int hp = g.permute(g.reshape(h, {n, c, s}), {0, 2, 1});  // [n,s,c]
    int q = linear_node(g, hp, "attn.q");
    int k = linear_node(g, hp, "attn.k");
    int v = linear_node(g, hp, "attn.v");
    int att = g.batched_matmul(q, g.permute(k, {0, 2, 1}));
    att = g.softmax_last(g.scale(att, 1.0 / std::sqrt(static_cast<double>(c))));
    int o = linear_node(g, g.batched_matmul(att, v), "attn.out");
    o = g.reshape(g.permute(o, {0, 2, 1}), xs);
    return g.add(x, o);
}

int UNetLite::forward(Graph& g, const Tensor& x, const std::vector<std::int64_t>& ts,
                      std::int64_t horizon) {
    if (x.rank() != 5) throw std::invalid_argument("UNetLite::forward: input must be rank-5");
    if (x.shape[1] != cfg_.in_channels) {
        throw std::invalid_argument("UNetLite::forward: expected " +
                                    std::to_string(cfg_.in_channels) + " channels, got " +
                                    std::to_string(x.shape[1]));
    }
    for (int a = 2; a < 5; ++a) {
        if (x.shape[a] % 4 != 0) {
            throw std::invalid_argument("UNetLite::forward: spatial extent " +
                                        std::to_string(x.shape[a]) +
                                        " not divisible by 4 (two 2x downsamplings)");
        }
    }
    if (static_cast<std::int64_t>(ts.size()) != x.shape[0]) {
        throw std::invalid_argument("UNetLite::forward: one timestep per batch row required");
    }

    int temb = g.leaf(time_embedding_batch(ts, cfg_.temb_dim, horizon));
    int te = linear_node(g, temb, "temb.lin1");
    te = linear_node(g, g.silu(te), "temb.lin2");
    int tact = g.silu(te);

    int h = conv_node(g, g.leaf(x), "conv_in");
    int e0 = resblock(g, h, tact, "enc0");
    h = conv_node(g, e0, "down0");
    int e1 = resblock(g, h, tact, "enc1");
    h = conv_node(g, e1, "down1");
    h = resblock(g, h, tact, "mid0");
    h = attention(g, h);
    h = resblock(g, h, tact, "mid1");
    h = conv_node(g, g.upsample2x(h), "up1");
    h = resblock(g, g.concat_channels(h, e1), tact, "dec1");
    h = conv_node(g, g.upsample2x(h), "up0");
    h = resblock(g, g.concat_channels(h, e0), tact, "dec0");
    h = g.silu(gn_node(g, h, "out.gn"));
    return conv_node(g, h, "conv_out");
}

Tensor UNetLite::forward_eval(const Tensor& x, const std::vector<std::int64_t>& ts,
                              std::int64_t horizon) {
    Graph g;
    return g.value(forward(g, x, ts, horizon));
}

std::vector<std::string> UNetLite::conv_target_names() const {
    std::vector<std::string> out;
    for (const std::string& rb : rb_names_) {
        out.push_back(rb + ".conv1.w");
        out.push_back(rb + ".conv2.w");
    }
    return out;
}

std::vector<std::string> UNetLite::linear_target_names() const {
    std::vector<std::string> out{"attn.q.w", "attn.v.w", "temb.lin1.w", "temb.lin2.w"};
    for (const std::string& rb : rb_names_) out.push_back(rb + ".tproj.w");
    return out;
}

AttachReport UNetLite::attach_adapters(AdapterKind conv_kind, std::int64_t rank, bool joint_mode,
                                       std::uint64_t seed, double scaling) {
    if (!bindings_.empty()) throw std::logic_error("attach_adapters: adapters already attached");
    if (rank < 1) throw std::invalid_argument("attach_adapters: rank must be >= 1");
    if (!(scaling > 0.0)) throw std::invalid_argument("attach_adapters: scaling must be > 0");
    if (conv_kind == AdapterKind::QuantaLinear) {
        throw std::invalid_argument(
            "attach_adapters: quanta_linear targets linear layers (and is always used there); "
            "choose tenvoo_l, tenvoo_q, lora2d, or lora3d for the convolutions");
    }

    std::uint64_t idx = 0;
    auto next_seed = [&]() { return seed + 1000003ull * idx++; };

    for (const std::string& target : conv_target_names()) {
        const std::string layer = target.substr(0, target.size() - 2);
        const ConvDecl& d = convs_.at(layer);
        AdapterState st;
        switch (conv_kind) {
            case AdapterKind::TenvooL:
                st = build_tenvoo_l(make_conv_dims(d.c_out, d.c_in, d.k, d.k, d.k), rank);
                break;
            case AdapterKind::TenvooQ:
                st = build_tenvoo_q(make_conv_dims(d.c_out, d.c_in, d.k, d.k, d.k), rank);
                break;
            case AdapterKind::Lora3D:
                st = build_lora3d(make_conv_dims(d.c_out, d.c_in, d.k, d.k, d.k), rank);
                break;
            case AdapterKind::Lora2D:
                if (d.k != 2 * d.pad[0] + 1) {
                    throw std::invalid_argument("attach_adapters: lora2d needs k_d == 2*pad_d+1 on " +
                                                layer);
                }
                st = build_lora2d(d.c_out, d.c_in, d.k, d.k, rank);
                break;
            default:
                throw std::invalid_argument("attach_adapters: unsupported conv adapter kind");
        }
        st.scaling = scaling;
        init_adapter(st, next_seed());
        AdapterBinding b{target, "adapter." + layer, std::move(st)};
        register_adapter_params(params_, b.state, b.prefix);
        binding_index_[b.target] = bindings_.size();
        bindings_.push_back(std::move(b));
    }

    for (const std::string& target : linear_target_names()) {
        const std::string layer = target.substr(0, target.size() - 2);
        const auto [d_out, d_in] = linears_.at(layer);
        AdapterState st = build_quanta_linear(d_out, d_in, rank);
        st.scaling = scaling;
        init_adapter(st, next_seed());
        AdapterBinding b{target, "adapter." + layer, std::move(st)};
        register_adapter_params(params_, b.state, b.prefix);
        binding_index_[b.target] = bindings_.size();
        bindings_.push_back(std::move(b));
    }

    std::set<std::string> adapted;
    for (const AdapterBinding& b : bindings_) adapted.insert(b.target);
    for (Parameter* p : params_.all()) {
        if (starts_with(p->name, "adapter.")) continue;
        p->trainable = joint_mode ? (adapted.count(p->name) == 0) : false;
    }

    AttachReport rep;
    for (const AdapterBinding& b : bindings_) rep.adapter_params += param_count(b.state);
    rep.base_params = base_param_count();
    rep.total_params = rep.base_params + rep.adapter_params;
    rep.trainable_params = params_.count_trainable();
    rep.trainable_fraction =
        static_cast<double>(rep.trainable_params) / static_cast<double>(rep.total_params);
    return rep;
}

void UNetLite::sync_adapters() {
    for (AdapterBinding& b : bindings_) sync_adapter_from_params(b.state, params_, b.prefix);
}

Tensor UNetLite::merged_weight(const AdapterBinding& b) const {
    const Parameter& wp = params_.get(b.target);
    if (b.state.kind != AdapterKind::Lora2D) return merge(wp.value, b.state);
    const std::string layer = b.target.substr(0, b.target.size() - 2);
    const ConvDecl& d = convs_.at(layer);
    Tensor delta = materialize_delta(b.state);  // [c_out,c_in,k_h,k_w]
    Tensor out = wp.value;
    const std::int64_t e = d.pad[0];  // depth slice the two-pass forward hits
    for (std::int64_t co = 0; co < d.c_out; ++co)
        for (std::int64_t ci = 0; ci < d.c_in; ++ci)
            for (std::int64_t h = 0; h < d.k; ++h)
                for (std::int64_t w = 0; w < d.k; ++w)
                    out.at({co, ci, e, h, w}) += delta.at({co, ci, h, w});
    return out;
}

void UNetLite::merge_adapters() {
    sync_adapters();
    for (const AdapterBinding& b : bindings_) params_.get(b.target).value = merged_weight(b);
    bindings_.clear();
    binding_index_.clear();
}

std::int64_t UNetLite::base_param_count() const {
    std::int64_t n = 0;
    for (const Parameter* p : params_.all()) {
        if (!starts_with(p->name, "adapter.")) n += p->value.size();
    }
    return n;
}

}  // namespace tenvoo
