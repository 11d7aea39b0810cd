#pragma once

#include "proclip/core.hpp"
#include "proclip/models.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

namespace proclip {

/// base_lr * (1 + cos(pi * step / total_steps)) / 2; steps past the end clamp to the final value.
[[nodiscard]] inline double cosine_lr(std::int64_t step, std::int64_t total_steps, double base_lr) {
    require(total_steps >= 1, "cosine_lr: total_steps must be at least 1");
    require(step >= 0, "cosine_lr: negative step");
    const std::int64_t s = std::min(step, total_steps);
    if (s == total_steps) return 0.0;
    const double progress = static_cast<double>(s) / static_cast<double>(total_steps);
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-6;
    double weight_decay = 0.05;
};

/// Per-parameter first/second moments and the shared step counter.
struct OptimizerState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::int64_t t = 0;
};

/// One AdamW update with bias-corrected moments and decoupled weight decay:
///   p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)
/// Weight decay is skipped for parameters whose view has decay == false.
/// A non-finite gradient aborts the step before anything is modified.
inline void adamw_step(std::span<const ParamView> params, std::span<const std::span<const double>> grads,
                       OptimizerState& state, double lr, const AdamWConfig& cfg) {
    require(params.size() == grads.size(), "adamw_step: parameter/gradient count mismatch");
    for (std::size_t k = 0; k < params.size(); ++k) {
        require(params[k].values.size() == grads[k].size(),
                "adamw_step: gradient shape mismatch for " + params[k].name);
        for (double g : grads[k])
            if (!std::isfinite(g))
                throw NumericalError("non-finite gradient for " + params[k].name, state.t);
    }
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.emplace_back(p.values.size(), 0.0);
            state.v.emplace_back(p.values.size(), 0.0);
        }
    }
    require(state.m.size() == params.size(), "adamw_step: optimizer state does not match parameters");
    for (std::size_t k = 0; k < params.size(); ++k)
        require(state.m[k].size() == params[k].values.size(),
                "adamw_step: optimizer state shape mismatch for " + params[k].name);

    state.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& m = state.m[k];
        auto& v = state.v[k];
        const auto p = params[k].values;
        const auto g = grads[k];
        const double wd = params[k].decay ? cfg.weight_decay : 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            p[i] -= lr * (m_hat / (std::sqrt(v_hat) + cfg.eps) + wd * p[i]);
        }
    }
}

}  // namespace proclip
