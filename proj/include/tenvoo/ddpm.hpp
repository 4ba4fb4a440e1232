#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "tenvoo/nn.hpp"
#include "tenvoo/optim.hpp"
#include "tenvoo/rng.hpp"
#include "tenvoo/tensor.hpp"

namespace tenvoo {

// Noising schedule over 1-indexed steps t in [1, T]; arrays are indexed t-1.
struct DiffusionSchedule {
    std::int64_t T = 0;
    std::vector<double> beta;       // in (0,1)
    std::vector<double> alpha;      // 1 - beta_t
    std::vector<double> alpha_bar;  // running product of alpha, strictly decreasing
    std::vector<double> sigma;      // sqrt(beta_t): reverse-step noise scale
};

// Linear beta ramp inclusive of both endpoints (T == 1 uses beta_start).
// Requires T >= 1 and 0 < beta_start <= beta_end < 1.
DiffusionSchedule make_schedule(std::int64_t T, double beta_start, double beta_end);

// Closed-form forward marginal: x_t = sqrt(abar_t)*x0 + sqrt(1-abar_t)*eps.
Tensor q_sample(const Tensor& x0, std::int64_t t, const Tensor& eps,
                const DiffusionSchedule& s);

// One reverse step: x_{t-1} = (x_t - beta_t/sqrt(1-abar_t)*eps_pred)/sqrt(alpha_t)
// + sigma_t*z. The noise term is always dropped at t == 1.
Tensor p_step(const Tensor& x_t, std::int64_t t, const Tensor& eps_pred,
              const DiffusionSchedule& s, const Tensor& z);

// Predicts the noise present in x_t at step t (t in [1, T]).
using NoisePredictor = std::function<Tensor(const Tensor& x_t, std::int64_t t)>;

// Ancestral sampling from x_T ~ N(0, I) down to x_0 on a [D,H,W] grid;
// deterministic given seed. Draw order: all of x_T first, then one z volume
// per step T..2. deterministic=true zeroes every per-step noise injection
// (used by closed-form oracles) and consumes no z draws.
Tensor sample(const NoisePredictor& predict, const DiffusionSchedule& s,
              const Shape& vol_shape, std::uint64_t seed, bool deterministic = false);
Tensor sample(UNetLite& model, const DiffusionSchedule& s, const Shape& vol_shape,
              std::uint64_t seed, bool deterministic = false);

struct TrainStepResult {
    double loss = 0.0;       // mean micro-batch loss
    double grad_norm = 0.0;  // global norm of the averaged gradients
    std::vector<double> micro_losses;
};

// One optimizer step with gradient accumulation: for each volume draws
// t ~ U[1,T] then eps ~ N(0,I), accumulates gradients of
// mean((eps_theta(x_t,t) - eps)^2), averages over the micro-batch, and
// applies one Adam update to the trainable parameters. Volumes are [D,H,W],
// already scaled to [-1, 1]; the micro-batch size is volumes.size().
TrainStepResult train_step(UNetLite& model, const std::vector<Tensor>& volumes,
                           const DiffusionSchedule& s, Rng& rng, AdamOptimizer& opt);

// Same accumulation with a plain SGD update instead of Adam.
TrainStepResult train_step_sgd(UNetLite& model, const std::vector<Tensor>& volumes,
                               const DiffusionSchedule& s, Rng& rng, double lr);

}  // namespace tenvoo
