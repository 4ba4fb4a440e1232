#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "tenvoo/autodiff.hpp"

namespace tenvoo {

// p <- p - lr * g for every named gradient. Shapes must match; targets must
// be trainable.
void sgd_step(ParamStore& params, const std::map<std::string, Tensor>& grads, double lr);

// Euclidean norm over all gradient entries.
double grad_global_norm(const std::map<std::string, Tensor>& grads);

// Scales every gradient by max_norm/norm when the global norm exceeds
// max_norm; otherwise leaves them untouched.
void clip_grad_norm(std::map<std::string, Tensor>& grads, double max_norm);

struct AdamSlot {
    Tensor m, v;
};

class AdamOptimizer {
public:
    explicit AdamOptimizer(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    void step(ParamStore& params, const std::map<std::string, Tensor>& grads);

    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }
    double beta1() const { return beta1_; }
    double beta2() const { return beta2_; }
    double eps() const { return eps_; }

    // Step counter and moment slots, exposed for checkpointing.
    std::int64_t t() const { return t_; }
    void set_t(std::int64_t t) { t_ = t; }
    std::map<std::string, AdamSlot>& slots() { return slots_; }
    const std::map<std::string, AdamSlot>& slots() const { return slots_; }

private:
    double lr_, beta1_, beta2_, eps_;
    std::int64_t t_ = 0;
    std::map<std::string, AdamSlot> slots_;
};

}  // namespace tenvoo
