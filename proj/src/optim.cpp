#include "tenvoo/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace tenvoo {

namespace {

void check_target(const Parameter& p, const Tensor& g) {
    if (!p.trainable) throw std::invalid_argument("optimizer step on frozen parameter: " + p.name);
    if (p.value.shape != g.shape) {
        throw std::invalid_argument("gradient shape " + shape_str(g.shape) + " does not match parameter " + p.name +
                                    " shape " + shape_str(p.value.shape));
    }
}

}  // namespace

void sgd_step(ParamStore& params, const std::map<std::string, Tensor>& grads, double lr) {
    if (lr <= 0.0) throw std::invalid_argument("sgd_step lr must be > 0");
    for (const auto& [name, g] : grads) {
        Parameter& p = params.get(name);
        check_target(p, g);
        for (std::size_t i = 0; i < g.data.size(); ++i) p.value.data[i] -= lr * g.data[i];
    }
}

double grad_global_norm(const std::map<std::string, Tensor>& grads) {
    double sq = 0.0;
    for (const auto& [name, g] : grads) {
        (void)name;
        for (const double v : g.data) sq += v * v;
    }
    return std::sqrt(sq);
}

void clip_grad_norm(std::map<std::string, Tensor>& grads, double max_norm) {
    if (max_norm <= 0.0) throw std::invalid_argument("clip_grad_norm max_norm must be > 0");
    const double norm = grad_global_norm(grads);
    if (norm <= max_norm) return;
    const double s = max_norm / norm;
    for (auto& [name, g] : grads) {
        (void)name;
        for (double& v : g.data) v *= s;
    }
}

AdamOptimizer::AdamOptimizer(double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    if (lr <= 0.0) throw std::invalid_argument("adam lr must be > 0");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
        throw std::invalid_argument("adam betas must be in [0, 1)");
    }
}

void AdamOptimizer::step(ParamStore& params, const std::map<std::string, Tensor>& grads) {
    t_ += 1;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (const auto& [name, g] : grads) {
        Parameter& p = params.get(name);
        check_target(p, g);
        AdamSlot& slot = slots_[name];
        if (slot.m.shape != g.shape) {
            slot.m = Tensor::zeros(g.shape);
            slot.v = Tensor::zeros(g.shape);
        }
        for (std::size_t i = 0; i < g.data.size(); ++i) {
            const double gi = g.data[i];
            slot.m.data[i] = beta1_ * slot.m.data[i] + (1.0 - beta1_) * gi;
            slot.v.data[i] = beta2_ * slot.v.data[i] + (1.0 - beta2_) * gi * gi;
            const double mhat = slot.m.data[i] / bc1;
            const double vhat = slot.v.data[i] / bc2;
            p.value.data[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

}  // namespace tenvoo
