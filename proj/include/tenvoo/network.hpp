#pragma once

#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "tenvoo/tensor.hpp"

namespace tenvoo {

struct LegRef {
    std::string core;
    int leg = 0;
    auto operator<=>(const LegRef&) const = default;
};

struct Edge {
    LegRef a;
    LegRef b;
};

// A set of named cores joined by contracted index pairs. Every leg of every
// core appears in exactly one edge or exactly once in open_legs; open_legs
// fixes the axis order of the contracted result.
struct TensorNetwork {
    std::map<std::string, Tensor> cores;
    std::vector<Edge> edges;
    std::vector<LegRef> open_legs;
};

void validate(const TensorNetwork& net);

// One pairwise contraction: lhs/rhs index previously produced slots
// (initial slots are cores in name order; each step appends a slot).
struct PlanStep {
    int lhs = 0;
    int rhs = 0;
    std::vector<std::pair<int, int>> pairs;  // leg positions within each slot
};

struct ContractionPlan {
    std::vector<std::string> core_order;
    std::vector<PlanStep> steps;
    std::vector<int> final_perm;  // permutation into open_legs order
};

// Greedy pairwise order minimizing the intermediate tensor size.
ContractionPlan plan_contraction(const TensorNetwork& net);

// Runs a plan against per-core tensors supplied by `core_tensor`; exposed so
// callers can replay the same order against other value sources.
Tensor execute_plan(const ContractionPlan& plan,
                    const std::function<const Tensor&(const std::string&)>& core_tensor);

Tensor contract_network(const TensorNetwork& net);

}  // namespace tenvoo
