#include "tenvoo/network.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

namespace tenvoo {

namespace {

std::string leg_str(const LegRef& l) { return l.core + ":" + std::to_string(l.leg); }

std::int64_t leg_length(const TensorNetwork& net, const LegRef& l) {
    const auto it = net.cores.find(l.core);
    if (it == net.cores.end()) throw std::invalid_argument("edge references unknown core '" + l.core + "'");
    const Tensor& t = it->second;
    if (l.leg < 0 || l.leg >= t.rank()) {
        throw std::invalid_argument("unknown leg " + leg_str(l) + " (core has rank " + std::to_string(t.rank()) + ")");
    }
    return t.shape[static_cast<std::size_t>(l.leg)];
}

}  // namespace

void validate(const TensorNetwork& net) {
    if (net.cores.empty()) throw std::invalid_argument("tensor network has no cores");

    std::map<LegRef, int> use_count;
    for (const auto& [name, core] : net.cores) {
        for (int l = 0; l < core.rank(); ++l) use_count[{name, l}] = 0;
    }
    for (const auto& e : net.edges) {
        if (e.a.core == e.b.core) {
            throw std::invalid_argument("self-loop edge on core '" + e.a.core + "' is not supported");
        }
        const auto la = leg_length(net, e.a);
        const auto lb = leg_length(net, e.b);
        if (la != lb) {
            throw std::invalid_argument("edge length mismatch " + leg_str(e.a) + "=" + std::to_string(la) +
                                        " vs " + leg_str(e.b) + "=" + std::to_string(lb));
        }
        ++use_count.at(e.a);
        ++use_count.at(e.b);
    }
    for (const auto& l : net.open_legs) {
        leg_length(net, l);
        ++use_count.at(l);
    }
    for (const auto& [leg, count] : use_count) {
        if (count == 0) throw std::invalid_argument("dangling leg " + leg_str(leg) + ": not in any edge or open_legs");
        if (count > 1) throw std::invalid_argument("leg " + leg_str(leg) + " used " + std::to_string(count) + " times");
    }

    // Connectivity over the edge graph.
    std::map<std::string, int> comp;
    int next = 0;
    for (const auto& [name, _] : net.cores) comp[name] = next++;
    bool changed = true;
    while (changed) {
        changed = false;
        for (const auto& e : net.edges) {
            int &ca = comp.at(e.a.core), &cb = comp.at(e.b.core);
            if (ca != cb) {
                const int lo = std::min(ca, cb);
                ca = cb = lo;
                changed = true;
            }
        }
    }
    for (const auto& [name, c] : comp) {
        if (c != comp.begin()->second) {
            throw std::invalid_argument("tensor network is disconnected (core '" + name + "' unreachable)");
        }
    }
}

ContractionPlan plan_contraction(const TensorNetwork& net) {
    validate(net);

    struct Slot {
        bool alive = true;
        std::vector<LegRef> legs;
        Shape dims;
    };
    std::vector<Slot> slots;
    ContractionPlan plan;
    for (const auto& [name, core] : net.cores) {
        plan.core_order.push_back(name);
        Slot s;
        for (int l = 0; l < core.rank(); ++l) {
            s.legs.push_back({name, l});
            s.dims.push_back(core.shape[static_cast<std::size_t>(l)]);
        }
        slots.push_back(std::move(s));
    }

    const auto slot_of = [&](const LegRef& leg) -> std::pair<int, int> {
        for (int i = 0; i < static_cast<int>(slots.size()); ++i) {
            if (!slots[static_cast<std::size_t>(i)].alive) continue;
            const auto& legs = slots[static_cast<std::size_t>(i)].legs;
            for (int p = 0; p < static_cast<int>(legs.size()); ++p) {
                if (legs[static_cast<std::size_t>(p)] == leg) return {i, p};
            }
        }
        throw std::logic_error("contraction lost track of leg " + leg_str(leg));
    };

    int alive = static_cast<int>(slots.size());
    std::vector<char> edge_done(net.edges.size(), 0);
    while (alive > 1) {
        // All live slot pairs joined by at least one unconsumed edge.
        std::map<std::pair<int, int>, std::vector<std::pair<int, int>>> candidates;
        std::map<std::pair<int, int>, std::vector<std::size_t>> candidate_edges;
        for (std::size_t ei = 0; ei < net.edges.size(); ++ei) {
            if (edge_done[ei]) continue;
            const auto& e = net.edges[ei];
            const auto [ia, pa] = slot_of(e.a);
            const auto [ib, pb] = slot_of(e.b);
            if (ia == ib) throw std::logic_error("edge " + leg_str(e.a) + "-" + leg_str(e.b) + " collapsed into one slot");
            const std::pair<int, int> key = ia < ib ? std::pair{ia, ib} : std::pair{ib, ia};
            candidates[key].push_back(ia < ib ? std::pair{pa, pb} : std::pair{pb, pa});
            candidate_edges[key].push_back(ei);
        }
        if (candidates.empty()) {
            throw std::invalid_argument("tensor network is disconnected: no contractible pair remains");
        }

        std::pair<int, int> best{-1, -1};
        std::int64_t best_size = std::numeric_limits<std::int64_t>::max();
        for (const auto& [pair_idx, pairs] : candidates) {
            const Slot& a = slots[static_cast<std::size_t>(pair_idx.first)];
            const Slot& b = slots[static_cast<std::size_t>(pair_idx.second)];
            std::int64_t size = 1;
            std::vector<bool> pa(a.legs.size(), false), pb(b.legs.size(), false);
            for (const auto& [x, y] : pairs) {
                pa[static_cast<std::size_t>(x)] = true;
                pb[static_cast<std::size_t>(y)] = true;
            }
            for (std::size_t i = 0; i < a.legs.size(); ++i)
                if (!pa[i]) size *= a.dims[i];
            for (std::size_t i = 0; i < b.legs.size(); ++i)
                if (!pb[i]) size *= b.dims[i];
            if (size < best_size || (size == best_size && pair_idx < best)) {
                best = pair_idx;
                best_size = size;
            }
        }

        const auto& pairs = candidates.at(best);
        Slot merged;
        {
            const Slot& a = slots[static_cast<std::size_t>(best.first)];
            const Slot& b = slots[static_cast<std::size_t>(best.second)];
            std::vector<bool> pa(a.legs.size(), false), pb(b.legs.size(), false);
            for (const auto& [x, y] : pairs) {
                pa[static_cast<std::size_t>(x)] = true;
                pb[static_cast<std::size_t>(y)] = true;
            }
            for (std::size_t i = 0; i < a.legs.size(); ++i) {
                if (!pa[i]) {
                    merged.legs.push_back(a.legs[i]);
                    merged.dims.push_back(a.dims[i]);
                }
            }
            for (std::size_t i = 0; i < b.legs.size(); ++i) {
                if (!pb[i]) {
                    merged.legs.push_back(b.legs[i]);
                    merged.dims.push_back(b.dims[i]);
                }
            }
        }
        plan.steps.push_back({best.first, best.second, pairs});
        for (const std::size_t ei : candidate_edges.at(best)) edge_done[ei] = 1;
        slots[static_cast<std::size_t>(best.first)].alive = false;
        slots[static_cast<std::size_t>(best.second)].alive = false;
        slots.push_back(std::move(merged));
        --alive;
    }

    const Slot* last = nullptr;
    for (const auto& s : slots) {
        if (s.alive) last = &s;
    }
    if (last->legs.size() != net.open_legs.size()) {
        throw std::logic_error("contraction result has " + std::to_string(last->legs.size()) +
                               " legs, expected " + std::to_string(net.open_legs.size()));
    }
    for (const auto& want : net.open_legs) {
        const auto it = std::find(last->legs.begin(), last->legs.end(), want);
        if (it == last->legs.end()) throw std::logic_error("open leg " + leg_str(want) + " missing from result");
        plan.final_perm.push_back(static_cast<int>(it - last->legs.begin()));
    }
    return plan;
}

Tensor execute_plan(const ContractionPlan& plan,
                    const std::function<const Tensor&(const std::string&)>& core_tensor) {
    std::vector<Tensor> slots;
    slots.reserve(plan.core_order.size() + plan.steps.size());
    for (const auto& name : plan.core_order) slots.push_back(core_tensor(name));
    for (const auto& step : plan.steps) {
        slots.push_back(contract_pair(slots[static_cast<std::size_t>(step.lhs)],
                                      slots[static_cast<std::size_t>(step.rhs)], step.pairs));
    }
    return permute(slots.back(), plan.final_perm);
}

Tensor contract_network(const TensorNetwork& net) {
    const ContractionPlan plan = plan_contraction(net);
    return execute_plan(plan, [&](const std::string& name) -> const Tensor& { return net.cores.at(name); });
}

}  // namespace tenvoo
