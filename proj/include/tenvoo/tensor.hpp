#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tenvoo/rng.hpp"

namespace tenvoo {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense N-dimensional array of doubles, row-major (last axis fastest).
// Rank 0 (shape == {}) is a scalar holding exactly one value.
struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() : data(1, 0.0) {}
    explicit Tensor(Shape s);
    Tensor(Shape s, std::vector<double> values);

    std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }

    static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
    static Tensor full(Shape s, double value);
    static Tensor scalar(double value);
    static Tensor random_normal(Shape s, Rng& rng, double sigma = 1.0);
    static Tensor random_uniform(Shape s, Rng& rng, double lo, double hi);

    double& at(std::span<const std::int64_t> idx);
    double at(std::span<const std::int64_t> idx) const;
    double& at(std::initializer_list<std::int64_t> idx);
    double at(std::initializer_list<std::int64_t> idx) const;
};

// Row-major strides of a shape.
std::vector<std::int64_t> strides_of(const Shape& shape);

// Reinterprets the flat data under a new shape; element count must match.
Tensor reshape(const Tensor& t, Shape new_shape);

// out[sigma(idx)] == in[idx]; `order` lists, for each output axis, which
// input axis it comes from.
Tensor permute(const Tensor& t, const std::vector<int>& order);

// Sum over paired index pairs of products. Output legs are the unpaired
// legs of `a` in order followed by the unpaired legs of `b`.
Tensor contract_pair(const Tensor& a, const Tensor& b,
                     const std::vector<std::pair<int, int>>& pairs);

// Balanced factorization n == f1*f2*f3 minimizing max/min, ties broken by
// the lexicographically smallest sorted triple.
std::array<std::int64_t, 3> factorize_channels(std::int64_t n);

// Elementwise helpers on matching shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
double dot(const Tensor& a, const Tensor& b);
double sum(const Tensor& a);
double max_abs(const Tensor& a);

// max_i |a_i - b_i| / (max(|a_i|, |b_i|) + floor)
double max_rel_diff(const Tensor& a, const Tensor& b, double floor = 1e-12);

}  // namespace tenvoo
