#include "tenvoo/adapters.hpp"

#include <cmath>
#include <stdexcept>

#include <json.hpp>

namespace tenvoo {

namespace {

void check_rank(std::int64_t r) {
    if (r < 1) throw std::invalid_argument("invalid rank: must be >= 1, got " + std::to_string(r));
}

void check_dims(const ConvKernelDims& d) {
    if (d.c_out < 1 || d.c_in < 1 || d.k_d < 1 || d.k_h < 1 || d.k_w < 1) {
        throw std::invalid_argument("conv kernel dims must all be >= 1");
    }
    if (d.o[0] * d.o[1] * d.o[2] != d.c_out) {
        throw std::invalid_argument("factorization mismatch: o1*o2*o3 = " +
                                    std::to_string(d.o[0] * d.o[1] * d.o[2]) + " != c_out " + std::to_string(d.c_out));
    }
    if (d.i[0] * d.i[1] * d.i[2] != d.c_in) {
        throw std::invalid_argument("factorization mismatch: i1*i2*i3 = " +
                                    std::to_string(d.i[0] * d.i[1] * d.i[2]) + " != c_in " + std::to_string(d.c_in));
    }
}

struct NetBuilder {
    TensorNetwork& net;
    std::int64_t r;

    void core(const std::string& name, Shape shape) { net.cores.emplace(name, Tensor(std::move(shape))); }
    void edge(const std::string& ca, int la, const std::string& cb, int lb) {
        net.edges.push_back({{ca, la}, {cb, lb}});
    }
    void open(const std::string& c, int l) { net.open_legs.push_back({c, l}); }
};

void finish_build(AdapterState& st) {
    validate(st.trainable_net);
    st.frozen_net = st.trainable_net;
    st.plan = plan_contraction(st.trainable_net);
}

Tensor delta_coupler(std::int64_t r) {
    Tensor j({r, r, r});
    for (std::int64_t a = 0; a < r; ++a) j.at({a, a, a}) = 1.0;
    return j;
}

}  // namespace

std::string adapter_kind_name(AdapterKind k) {
    switch (k) {
        case AdapterKind::TenvooL: return "tenvoo_l";
        case AdapterKind::TenvooQ: return "tenvoo_q";
        case AdapterKind::Lora2D: return "lora2d";
        case AdapterKind::Lora3D: return "lora3d";
        case AdapterKind::QuantaLinear: return "quanta_linear";
    }
    throw std::logic_error("unhandled adapter kind");
}

AdapterKind adapter_kind_from_name(const std::string& name) {
    if (name == "tenvoo_l") return AdapterKind::TenvooL;
    if (name == "tenvoo_q") return AdapterKind::TenvooQ;
    if (name == "lora2d") return AdapterKind::Lora2D;
    if (name == "lora3d") return AdapterKind::Lora3D;
    if (name == "quanta_linear") return AdapterKind::QuantaLinear;
    throw std::invalid_argument("unknown adapter kind: " + name);
}

ConvKernelDims make_conv_dims(std::int64_t c_out, std::int64_t c_in,
                              std::int64_t k_d, std::int64_t k_h, std::int64_t k_w) {
    ConvKernelDims d;
    d.c_out = c_out;
    d.c_in = c_in;
    d.k_d = k_d;
    d.k_h = k_h;
    d.k_w = k_w;
    d.o = factorize_channels(c_out);
    d.i = factorize_channels(c_in);
    check_dims(d);
    return d;
}

Shape AdapterState::kernel_shape() const {
    switch (kind) {
        case AdapterKind::TenvooL:
            if (degenerate_2d) return {dims.c_out, dims.c_in, dims.k_d, dims.k_w};
            return {dims.c_out, dims.c_in, dims.k_d, dims.k_h, dims.k_w};
        case AdapterKind::TenvooQ:
        case AdapterKind::Lora3D:
            return {dims.c_out, dims.c_in, dims.k_d, dims.k_h, dims.k_w};
        case AdapterKind::Lora2D:
            return {dims.c_out, dims.c_in, dims.k_h, dims.k_w};
        case AdapterKind::QuantaLinear:
            return {d_out, d_in};
    }
    throw std::logic_error("unhandled adapter kind");
}

AdapterState build_tenvoo_l(const ConvKernelDims& dims, std::int64_t r) {
    check_rank(r);
    check_dims(dims);
    AdapterState st;
    st.kind = AdapterKind::TenvooL;
    st.rank = r;
    st.dims = dims;

    NetBuilder b{st.trainable_net, r};
    b.core("A1", {dims.i[0], dims.i[1], r, r});
    b.core("A2", {dims.i[2], r, r, r});
    b.core("B1", {dims.o[0], dims.o[1], r, r});
    b.core("B2", {dims.o[2], r, r, r});
    b.core("Kd", {dims.k_d, r, r, r});
    b.core("Kh", {dims.k_h, r, r, r});
    b.core("Kw", {dims.k_w, r, r, r});
    b.core("M", {r, r, r});
    b.core("D1", {r, r, r, r});
    b.core("D2", {r, r, r, r});

    // Input branch A1-A2, output branch B1-B2, one core per spatial axis,
    // a 3-leg mixer M joining the spatial cores and two 4-leg couplers D1/D2
    // joining each channel branch to its neighbouring spatial cores.
    b.edge("A1", 2, "A2", 1);
    b.edge("A1", 3, "D1", 0);
    b.edge("A2", 2, "D1", 1);
    b.edge("A2", 3, "Kd", 2);
    b.edge("B1", 2, "B2", 1);
    b.edge("B1", 3, "D2", 0);
    b.edge("B2", 2, "D2", 1);
    b.edge("B2", 3, "Kw", 2);
    b.edge("Kd", 1, "M", 0);
    b.edge("Kh", 1, "M", 1);
    b.edge("Kw", 1, "M", 2);
    b.edge("Kd", 3, "D1", 2);
    b.edge("Kh", 2, "D1", 3);
    b.edge("Kh", 3, "D2", 2);
    b.edge("Kw", 3, "D2", 3);

    b.open("B1", 0);  // o1
    b.open("B1", 1);  // o2
    b.open("B2", 0);  // o3
    b.open("A1", 0);  // i1
    b.open("A1", 1);  // i2
    b.open("A2", 0);  // i3
    b.open("Kd", 0);
    b.open("Kh", 0);
    b.open("Kw", 0);

    finish_build(st);
    return st;
}

AdapterState build_tenvoo_q(const ConvKernelDims& dims, std::int64_t r) {
    check_rank(r);
    check_dims(dims);
    AdapterState st;
    st.kind = AdapterKind::TenvooQ;
    st.rank = r;
    st.dims = dims;

    NetBuilder b{st.trainable_net, r};
    b.core("A1", {dims.i[0], dims.i[1], r, r});
    b.core("A2", {dims.i[2], r, r, r});
    b.core("B1", {dims.o[0], dims.o[1], r, r});
    b.core("B2", {dims.o[2], r, r, r});
    b.core("Kd", {dims.k_d, r, r, r});
    b.core("Kh", {dims.k_h, r, r});
    b.core("Kw", {dims.k_w, r, r, r});
    b.core("G1", {r, r, r, r});
    b.core("G2", {r, r, r, r});
    b.core("G3", {r, r, r, r});

    // Chain of 4-leg couplers G1-G2-G3 threading the input branch, the three
    // spatial cores and the output branch in sequence.
    b.edge("A1", 2, "A2", 1);
    b.edge("A1", 3, "G1", 0);
    b.edge("A2", 2, "G1", 1);
    b.edge("A2", 3, "Kd", 1);
    b.edge("G1", 2, "Kd", 2);
    b.edge("G1", 3, "G2", 0);
    b.edge("Kd", 3, "Kh", 1);
    b.edge("G2", 1, "Kh", 2);
    b.edge("G2", 2, "Kw", 1);
    b.edge("G2", 3, "G3", 0);
    b.edge("B1", 2, "B2", 1);
    b.edge("B1", 3, "G3", 1);
    b.edge("B2", 2, "G3", 2);
    b.edge("B2", 3, "Kw", 2);
    b.edge("G3", 3, "Kw", 3);

    b.open("B1", 0);
    b.open("B1", 1);
    b.open("B2", 0);
    b.open("A1", 0);
    b.open("A1", 1);
    b.open("A2", 0);
    b.open("Kd", 0);
    b.open("Kh", 0);
    b.open("Kw", 0);

    finish_build(st);
    return st;
}

AdapterState build_lora2d(std::int64_t c_out, std::int64_t c_in,
                          std::int64_t k_h, std::int64_t k_w, std::int64_t r) {
    check_rank(r);
    if (c_out < 1 || c_in < 1 || k_h < 1 || k_w < 1) {
        throw std::invalid_argument("lora2d dims must all be >= 1");
    }
    AdapterState st;
    st.kind = AdapterKind::Lora2D;
    st.rank = r;
    st.dims.c_out = c_out;
    st.dims.c_in = c_in;
    st.dims.k_h = k_h;
    st.dims.k_w = k_w;
    st.dims.o = {c_out, 1, 1};
    st.dims.i = {c_in, 1, 1};

    NetBuilder b{st.trainable_net, r};
    b.core("A", {r, c_in, k_h});
    b.core("B", {c_out, k_w, r});
    b.edge("A", 0, "B", 2);
    b.open("B", 0);  // c_out
    b.open("A", 1);  // c_in
    b.open("A", 2);  // k_h
    b.open("B", 1);  // k_w

    finish_build(st);
    return st;
}

AdapterState build_lora3d(const ConvKernelDims& dims, std::int64_t r) {
    check_rank(r);
    check_dims(dims);
    AdapterState st;
    st.kind = AdapterKind::Lora3D;
    st.rank = r;
    st.dims = dims;

    NetBuilder b{st.trainable_net, r};
    b.core("A", {r, dims.c_in, dims.k_d, dims.k_h, dims.k_w});
    b.core("B", {dims.c_out, r});
    b.edge("A", 0, "B", 1);
    b.open("B", 0);
    b.open("A", 1);
    b.open("A", 2);
    b.open("A", 3);
    b.open("A", 4);

    finish_build(st);
    return st;
}

AdapterState build_quanta_linear(std::int64_t d_out, std::int64_t d_in, std::int64_t r) {
    check_rank(r);
    if (d_out < 1 || d_in < 1) throw std::invalid_argument("linear dims must be >= 1");
    AdapterState st;
    st.kind = AdapterKind::QuantaLinear;
    st.rank = r;
    st.d_out = d_out;
    st.d_in = d_in;
    st.m = factorize_channels(d_out);
    st.n = factorize_channels(d_in);

    NetBuilder b{st.trainable_net, r};
    b.core("U1", {st.m[0], st.n[0], r});
    b.core("U2", {st.m[1], st.n[1], r, r});
    b.core("U3", {st.m[2], st.n[2], r});
    b.edge("U1", 2, "U2", 2);
    b.edge("U2", 3, "U3", 2);
    b.open("U1", 0);
    b.open("U2", 0);
    b.open("U3", 0);
    b.open("U1", 1);
    b.open("U2", 1);
    b.open("U3", 1);

    finish_build(st);
    return st;
}

void init_adapter(AdapterState& st, std::uint64_t seed) {
    std::map<std::string, int> rank_legs;
    for (const auto& e : st.trainable_net.edges) {
        ++rank_legs[e.a.core];
        ++rank_legs[e.b.core];
    }
    Rng rng(seed);
    for (auto& [name, core] : st.trainable_net.cores) {
        if (st.constant_cores.count(name)) continue;
        const double sigma = std::pow(static_cast<double>(st.rank), -0.5 * rank_legs[name]);
        for (double& v : core.data) v = sigma * rng.normal();
    }
    st.frozen_net = st.trainable_net;
    st.initialized = true;
    refresh_frozen_cache(st);
}

void refresh_frozen_cache(AdapterState& st) {
    st.plan = plan_contraction(st.trainable_net);
    st.frozen_materialized = reshape(
        execute_plan(st.plan, [&](const std::string& name) -> const Tensor& { return st.frozen_net.cores.at(name); }),
        st.kernel_shape());
}

Tensor contract_trainable(const AdapterState& st) {
    return reshape(
        execute_plan(st.plan, [&](const std::string& name) -> const Tensor& { return st.trainable_net.cores.at(name); }),
        st.kernel_shape());
}

Tensor materialize_delta(const AdapterState& st) {
    if (!st.initialized) throw std::logic_error("adapter not initialized");
    return scale(sub(contract_trainable(st), st.frozen_materialized), st.scaling);
}

Tensor merge(const Tensor& base_kernel, const AdapterState& st) {
    if (base_kernel.shape != st.kernel_shape()) {
        throw std::invalid_argument("merge: base kernel shape " + shape_str(base_kernel.shape) +
                                    " does not match adapter kernel shape " + shape_str(st.kernel_shape()));
    }
    return add(base_kernel, materialize_delta(st));
}

Tensor unmerge(const Tensor& merged_kernel, const AdapterState& st) {
    if (merged_kernel.shape != st.kernel_shape()) {
        throw std::invalid_argument("unmerge: kernel shape " + shape_str(merged_kernel.shape) +
                                    " does not match adapter kernel shape " + shape_str(st.kernel_shape()));
    }
    return sub(merged_kernel, materialize_delta(st));
}

std::int64_t param_count(const AdapterState& st) {
    std::int64_t n = 0;
    for (const auto& [name, core] : st.trainable_net.cores) {
        if (!st.constant_cores.count(name)) n += core.size();
    }
    return n;
}

AdapterState degenerate_to_2d(const AdapterState& st) {
    if (st.kind != AdapterKind::TenvooL || st.degenerate_2d) {
        throw std::invalid_argument("degenerate_to_2d requires a 3D TenVOO-L adapter");
    }
    AdapterState out = st;
    out.degenerate_2d = true;
    out.constant_cores.insert("J");

    const auto rewire = [&](TensorNetwork& net) {
        net.cores.erase("Kh");
        // Partners of Kh's three rank legs (legs 1..3), keyed by leg index.
        std::map<int, LegRef> partner;
        std::vector<Edge> kept;
        for (const auto& e : net.edges) {
            if (e.a.core == "Kh") partner[e.a.leg] = e.b;
            else if (e.b.core == "Kh") partner[e.b.leg] = e.a;
            else kept.push_back(e);
        }
        if (partner.size() != 3) throw std::logic_error("unexpected Kh connectivity");
        net.edges = std::move(kept);
        net.cores.emplace("J", delta_coupler(st.rank));
        int jl = 0;
        for (const auto& [leg, other] : partner) net.edges.push_back({{"J", jl++}, other});
        std::vector<LegRef> open;
        for (const auto& l : net.open_legs) {
            if (l.core != "Kh") open.push_back(l);
        }
        net.open_legs = std::move(open);
    };
    rewire(out.trainable_net);
    rewire(out.frozen_net);
    validate(out.trainable_net);
    refresh_frozen_cache(out);
    return out;
}

void register_adapter_params(ParamStore& params, const AdapterState& st, const std::string& prefix) {
    for (const auto& [name, core] : st.trainable_net.cores) {
        params.add(prefix + "." + name, core, !st.constant_cores.count(name));
    }
    for (const auto& [name, core] : st.frozen_net.cores) {
        params.add(prefix + ".frozen." + name, core, false);
    }
}

int adapter_delta_node(Graph& g, ParamStore& params, const AdapterState& st, const std::string& prefix) {
    if (!st.initialized) throw std::logic_error("adapter not initialized");
    std::vector<int> slots;
    slots.reserve(st.plan.core_order.size() + st.plan.steps.size());
    for (const auto& name : st.plan.core_order) slots.push_back(g.leaf(params.get(prefix + "." + name)));
    for (const auto& step : st.plan.steps) {
        slots.push_back(g.contract(slots[static_cast<std::size_t>(step.lhs)],
                                   slots[static_cast<std::size_t>(step.rhs)], step.pairs));
    }
    const int contracted = g.reshape(g.permute(slots.back(), st.plan.final_perm), st.kernel_shape());
    return g.scale(g.sub(contracted, g.leaf(st.frozen_materialized)), st.scaling);
}

void sync_adapter_from_params(AdapterState& st, const ParamStore& params, const std::string& prefix) {
    for (auto& [name, core] : st.trainable_net.cores) {
        core = params.get(prefix + "." + name).value;
    }
}

std::string adapter_topology_json(const AdapterState& st) {
    nlohmann::json j;
    j["kind"] = adapter_kind_name(st.kind);
    j["rank"] = st.rank;
    j["scaling"] = st.scaling;
    j["degenerate_2d"] = st.degenerate_2d;
    if (st.kind == AdapterKind::QuantaLinear) {
        j["d_out"] = st.d_out;
        j["d_in"] = st.d_in;
        j["m"] = st.m;
        j["n"] = st.n;
    } else {
        j["dims"] = {{"c_out", st.dims.c_out}, {"c_in", st.dims.c_in}, {"k_d", st.dims.k_d},
                     {"k_h", st.dims.k_h},     {"k_w", st.dims.k_w},   {"o", st.dims.o},
                     {"i", st.dims.i}};
    }
    nlohmann::json cores = nlohmann::json::object();
    for (const auto& [name, core] : st.trainable_net.cores) cores[name] = core.shape;
    j["cores"] = cores;
    nlohmann::json edges = nlohmann::json::array();
    for (const auto& e : st.trainable_net.edges) {
        edges.push_back({e.a.core, e.a.leg, e.b.core, e.b.leg});
    }
    j["edges"] = edges;
    nlohmann::json open = nlohmann::json::array();
    for (const auto& l : st.trainable_net.open_legs) open.push_back({l.core, l.leg});
    j["open_legs"] = open;
    j["constant_cores"] = st.constant_cores;
    j["param_count"] = param_count(st);
    return j.dump();
}

}  // namespace tenvoo
