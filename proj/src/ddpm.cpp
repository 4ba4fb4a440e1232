#include "tenvoo/ddpm.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace tenvoo {

namespace {

void check_t(std::int64_t t, const DiffusionSchedule& s, const char* what) {
    if (t < 1 || t > s.T) {
        throw std::out_of_range(std::string(what) + ": t=" + std::to_string(t) +
                                " outside [1, " + std::to_string(s.T) + "]");
    }
}

}  // namespace

DiffusionSchedule make_schedule(std::int64_t T, double beta_start, double beta_end) {
    if (T < 1) throw std::invalid_argument("make_schedule: T must be >= 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
        throw std::invalid_argument("make_schedule: need 0 < beta_start <= beta_end < 1, got [" +
                                    std::to_string(beta_start) + ", " + std::to_string(beta_end) +
                                    "]");
    }
    DiffusionSchedule s;
    s.T = T;
    s.beta.resize(static_cast<std::size_t>(T));
    s.alpha.resize(static_cast<std::size_t>(T));
    s.alpha_bar.resize(static_cast<std::size_t>(T));
    s.sigma.resize(static_cast<std::size_t>(T));
    double prod = 1.0;
    for (std::int64_t i = 0; i < T; ++i) {
        const double frac = (T == 1) ? 0.0
                                     : static_cast<double>(i) / static_cast<double>(T - 1);
        const double b = beta_start + (beta_end - beta_start) * frac;
        s.beta[static_cast<std::size_t>(i)] = b;
        s.alpha[static_cast<std::size_t>(i)] = 1.0 - b;
        prod *= 1.0 - b;
        s.alpha_bar[static_cast<std::size_t>(i)] = prod;
        s.sigma[static_cast<std::size_t>(i)] = std::sqrt(b);
    }
    return s;
}

Tensor q_sample(const Tensor& x0, std::int64_t t, const Tensor& eps,
                const DiffusionSchedule& s) {
    check_t(t, s, "q_sample");
    if (eps.shape != x0.shape) throw std::invalid_argument("q_sample: eps shape mismatch");
    const double abar = s.alpha_bar[static_cast<std::size_t>(t - 1)];
    const double ca = std::sqrt(abar), cb = std::sqrt(1.0 - abar);
    Tensor out = x0;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] = ca * x0.data[i] + cb * eps.data[i];
    }
    return out;
}

Tensor p_step(const Tensor& x_t, std::int64_t t, const Tensor& eps_pred,
              const DiffusionSchedule& s, const Tensor& z) {
    check_t(t, s, "p_step");
    if (eps_pred.shape != x_t.shape) throw std::invalid_argument("p_step: eps_pred shape mismatch");
    const std::size_t i0 = static_cast<std::size_t>(t - 1);
    const double coef = s.beta[i0] / std::sqrt(1.0 - s.alpha_bar[i0]);
    const double inv_sqrt_alpha = 1.0 / std::sqrt(s.alpha[i0]);
    const bool add_noise = t > 1;
    if (add_noise && z.shape != x_t.shape) {
        throw std::invalid_argument("p_step: z shape mismatch");
    }
    Tensor out = x_t;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        double v = inv_sqrt_alpha * (x_t.data[i] - coef * eps_pred.data[i]);
        if (add_noise) v += s.sigma[i0] * z.data[i];
        out.data[i] = v;
    }
    return out;
}

Tensor sample(const NoisePredictor& predict, const DiffusionSchedule& s,
              const Shape& vol_shape, std::uint64_t seed, bool deterministic) {
    if (vol_shape.size() != 3) throw std::invalid_argument("sample: vol_shape must be [D,H,W]");
    Rng rng(seed);
    const Shape xshape{1, 1, vol_shape[0], vol_shape[1], vol_shape[2]};
    Tensor x = Tensor::random_normal(xshape, rng);
    for (std::int64_t t = s.T; t >= 1; --t) {
        Tensor eps_pred = predict(x, t);
        Tensor z = (t > 1 && !deterministic) ? Tensor::random_normal(xshape, rng)
                                             : Tensor::zeros(xshape);
        x = p_step(x, t, eps_pred, s, z);
    }
    return reshape(x, vol_shape);
}

Tensor sample(UNetLite& model, const DiffusionSchedule& s, const Shape& vol_shape,
              std::uint64_t seed, bool deterministic) {
    NoisePredictor predict = [&](const Tensor& x_t, std::int64_t t) {
        return model.forward_eval(x_t, {t - 1}, s.T);
    };
    return sample(predict, s, vol_shape, seed, deterministic);
}

namespace {

// Gradient accumulation shared by both optimizer flavours: one (t, eps) draw
// per volume, gradients averaged over the micro-batch.
TrainStepResult accumulate_grads(UNetLite& model, const std::vector<Tensor>& volumes,
                                 const DiffusionSchedule& s, Rng& rng,
                                 std::map<std::string, Tensor>& acc) {
    if (volumes.empty()) throw std::invalid_argument("train_step: empty batch");
    TrainStepResult res;
    for (const Tensor& vol : volumes) {
        if (vol.rank() != 3) throw std::invalid_argument("train_step: volumes must be [D,H,W]");
        const std::int64_t t = 1 + static_cast<std::int64_t>(
                                       rng.below(static_cast<std::uint64_t>(s.T)));
        const Shape xshape{1, 1, vol.shape[0], vol.shape[1], vol.shape[2]};
        Tensor eps = Tensor::random_normal(xshape, rng);
        Tensor x_t = q_sample(reshape(vol, xshape), t, eps, s);
        Graph g;
        int y = model.forward(g, x_t, {t - 1}, s.T);
        int loss = g.mse(y, g.leaf(eps));
        res.micro_losses.push_back(g.value(loss).data[0]);
        for (auto& [name, grad] : g.backward(loss)) {
            auto it = acc.find(name);
            if (it == acc.end()) {
                acc.emplace(name, std::move(grad));
            } else {
                it->second = add(it->second, grad);
            }
        }
    }
    const double inv_n = 1.0 / static_cast<double>(volumes.size());
    for (auto& [name, grad] : acc) grad = scale(grad, inv_n);
    for (double l : res.micro_losses) res.loss += l;
    res.loss *= inv_n;
    res.grad_norm = grad_global_norm(acc);
    return res;
}

}  // namespace

TrainStepResult train_step(UNetLite& model, const std::vector<Tensor>& volumes,
                           const DiffusionSchedule& s, Rng& rng, AdamOptimizer& opt) {
    std::map<std::string, Tensor> acc;
    TrainStepResult res = accumulate_grads(model, volumes, s, rng, acc);
    opt.step(model.params(), acc);
    return res;
}

TrainStepResult train_step_sgd(UNetLite& model, const std::vector<Tensor>& volumes,
                               const DiffusionSchedule& s, Rng& rng, double lr) {
    std::map<std::string, Tensor> acc;
    TrainStepResult res = accumulate_grads(model, volumes, s, rng, acc);
    sgd_step(model.params(), acc, lr);
    return res;
}

}  // namespace tenvoo
