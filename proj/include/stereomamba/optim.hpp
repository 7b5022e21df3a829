// SPDX-License-Identifier: Apache-2.0
//
// AdamW with decoupled weight decay plus the one-cycle learning-rate policy.
// The per-tensor update is a free function so it can be probed against the
// closed-form first step; the AdamW class walks a ParamRegistry in
// registration order and keeps the moment buffers that checkpoints persist.

#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "stereomamba/tape.hpp"
#include "stereomamba/tensor.hpp"

namespace stereomamba {

inline constexpr double kAdamEps = 1e-8;

// One parameter tensor, one step. Decay is decoupled: it scales the pre-step
// weights and never touches the moment estimates. t counts from 1.
inline void adamw_step(Tensor& p, const Tensor& g, Tensor& m, Tensor& v, double lr, double beta1,
                       double beta2, double weight_decay, int64_t t) {
    if (!p.same_shape(g) || !p.same_shape(m) || !p.same_shape(v))
        throw std::invalid_argument("adamw_step: parameter/gradient/moment shape mismatch");
    if (t < 1) throw std::invalid_argument("adamw_step: step count starts at 1");
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (int64_t i = 0; i < p.size(); ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        p[i] -= lr * (mhat / (std::sqrt(vhat) + kAdamEps) + weight_decay * p[i]);
    }
}

class AdamW {
public:
    explicit AdamW(ParamRegistry& reg, double beta1 = 0.9, double beta2 = 0.999,
                   double weight_decay = 1e-4)
        : reg_(reg), beta1_(beta1), beta2_(beta2), weight_decay_(weight_decay) {
        for (Parameter* p : reg.all()) {
            m_.push_back(Tensor::zeros(p->value.shape()));
            v_.push_back(Tensor::zeros(p->value.shape()));
        }
    }

    // Pull gradients off a finished tape and update every registered
    // parameter. Parameters the tape never saw get zero gradients, which
    // still advances their moments (stock Adam bookkeeping).
    void step(Tape& tape, double lr) {
        ++t_;
        auto params = reg_.all();
        if (params.size() != m_.size())
            throw std::logic_error("adamw: registry grew after optimizer construction");
        for (size_t i = 0; i < params.size(); ++i) {
            const Tensor g = tape.grad_of(*params[i]);
            adamw_step(params[i]->value, g, m_[i], v_[i], lr, beta1_, beta2_, weight_decay_, t_);
        }
    }

    int64_t step_count() const { return t_; }
    void set_step_count(int64_t t) { t_ = t; }
    double beta1() const { return beta1_; }
    double beta2() const { return beta2_; }
    double weight_decay() const { return weight_decay_; }

    // Moment buffers in registry order, exposed for checkpointing.
    std::vector<Tensor>& first_moments() { return m_; }
    std::vector<Tensor>& second_moments() { return v_; }

private:
    ParamRegistry& reg_;
    double beta1_, beta2_, weight_decay_;
    int64_t t_ = 0;
    std::vector<Tensor> m_, v_;
};

// One-cycle policy: cosine warmup over the first 30% of steps from lr_max/25
// up to lr_max, then cosine anneal down to lr_max/1e4. Endpoints and the
// peak are exact; everything between is smooth.
inline double one_cycle_lr(int64_t step, int64_t total_steps, double lr_max) {
    if (total_steps < 1) throw std::invalid_argument("one_cycle_lr: need at least one step");
    if (step < 0 || step > total_steps)
        throw std::invalid_argument("one_cycle_lr: step outside [0, total_steps]");
    const double lo = lr_max / 25.0;
    const double floor_lr = lr_max / 1e4;
    const int64_t warm = std::max<int64_t>(1, std::llround(0.3 * static_cast<double>(total_steps)));
    if (step == warm) return lr_max;
    if (step < warm) {
        const double u = static_cast<double>(step) / static_cast<double>(warm);
        return lo + (lr_max - lo) * 0.5 * (1.0 - std::cos(M_PI * u));
    }
    const double u =
        static_cast<double>(step - warm) / static_cast<double>(std::max<int64_t>(1, total_steps - warm));
    return floor_lr + (lr_max - floor_lr) * 0.5 * (1.0 + std::cos(M_PI * u));
}

}  // namespace stereomamba
