#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "glp/matrix.hpp"
#include "glp/rng.hpp"

namespace glp {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

/// Per-parameter moment accumulators, shape-matched lazily on first step.
struct AdamWState {
    AdamWConfig cfg;
    std::uint64_t step = 0;
    std::vector<Matrix> m;
    std::vector<Matrix> v;
};

/// Decoupled-weight-decay adaptive-moment update. `params` and `grads`
/// must line up index-for-index; the decay term is scaled by lr, so lr=0
/// leaves parameters fully unchanged.
inline void adamw_step(std::vector<Matrix*>& params, const std::vector<Matrix>& grads,
                       AdamWState& state, double lr) {
    GLP_REQUIRE(params.size() == grads.size(), "adamw_step: param/grad count mismatch");
    GLP_REQUIRE(lr >= 0.0, "adamw_step: negative learning rate");
    if (state.m.empty()) {
        for (const Matrix* p : params) {
            state.m.emplace_back(p->rows, p->cols);
            state.v.emplace_back(p->rows, p->cols);
        }
    }
    GLP_REQUIRE(state.m.size() == params.size(), "adamw_step: state size mismatch");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.cfg.beta2, static_cast<double>(state.step));
    for (std::size_t p = 0; p < params.size(); ++p) {
        Matrix& w = *params[p];
        const Matrix& g = grads[p];
        GLP_REQUIRE(w.same_shape(g) && w.same_shape(state.m[p]),
                    "adamw_step: shape mismatch");
        for (std::size_t i = 0; i < w.size(); ++i) {
            double& mi = state.m[p].data[i];
            double& vi = state.v[p].data[i];
            mi = state.cfg.beta1 * mi + (1.0 - state.cfg.beta1) * g.data[i];
            vi = state.cfg.beta2 * vi + (1.0 - state.cfg.beta2) * g.data[i] * g.data[i];
            const double mhat = mi / bc1;
            const double vhat = vi / bc2;
            w.data[i] -= lr * (mhat / (std::sqrt(vhat) + state.cfg.eps) +
                               state.cfg.weight_decay * w.data[i]);
        }
    }
}

/// Linear ramp 0 -> base_lr over the first warmup_ratio*total_steps steps,
/// then cosine decay to 0 at total_steps. Continuous at the boundary.
inline double cosine_warmup_lr(std::uint64_t step, std::uint64_t total_steps,
                               double base_lr, double warmup_ratio) {
    GLP_REQUIRE(total_steps > 0, "cosine_warmup_lr: total_steps must be positive");
    GLP_REQUIRE(warmup_ratio > 0.0 && warmup_ratio < 1.0,
                "cosine_warmup_lr: warmup_ratio must be in (0,1)");
    GLP_REQUIRE(step <= total_steps, "cosine_warmup_lr: step beyond total_steps");
    const double warmup = warmup_ratio * static_cast<double>(total_steps);
    const double s = static_cast<double>(step);
    if (s < warmup) return base_lr * s / warmup;
    const double progress = (s - warmup) / (static_cast<double>(total_steps) - warmup);
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

/// Max over probed coordinates of |analytic - central difference| /
/// max(|analytic|, 1e-8). `loss` re-evaluates the objective at the current
/// parameter values; `analytic` returns per-parameter gradients in the
/// same order as `params`. Non-smooth objectives (e.g. |x| at 0) are
/// unsupported: central differences straddle the kink.
inline double grad_check(const std::function<double()>& loss,
                         const std::function<std::vector<Matrix>()>& analytic,
                         std::vector<Matrix*>& params, double perturbation,
                         const std::vector<std::pair<std::size_t, std::size_t>>& probes) {
    GLP_REQUIRE(perturbation > 0.0, "grad_check: perturbation must be positive");
    const double base = loss();
    GLP_REQUIRE(std::isfinite(base), "non-finite objective");
    const std::vector<Matrix> grads = analytic();
    GLP_REQUIRE(grads.size() == params.size(), "grad_check: gradient count mismatch");
    double max_rel = 0.0;
    for (const auto& [pi, flat] : probes) {
        GLP_REQUIRE(pi < params.size() && flat < params[pi]->size(),
                    "grad_check: probe out of range");
        double& w = params[pi]->data[flat];
        const double saved = w;
        w = saved + perturbation;
        const double up = loss();
        w = saved - perturbation;
        const double down = loss();
        w = saved;
        GLP_REQUIRE(std::isfinite(up) && std::isfinite(down), "non-finite objective");
        const double fd = (up - down) / (2.0 * perturbation);
        const double a = grads[pi].data[flat];
        max_rel = std::max(max_rel, std::abs(a - fd) / std::max(std::abs(a), 1e-8));
    }
    return max_rel;
}

/// One logged point on a training loss curve.
struct LossPoint {
    std::uint64_t step = 0;  // 1-based optimizer step
    double flops = 0.0;      // cumulative 6*N*D
    double loss = 0.0;
};

inline void write_loss_curve(const std::string& path,
                             const std::vector<LossPoint>& curve) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "step,flops,loss\n";
    char buf[96];
    for (const LossPoint& p : curve) {
        std::snprintf(buf, sizeof buf, "%llu,%.17g,%.17g\n",
                      static_cast<unsigned long long>(p.step), p.flops, p.loss);
        out << buf;
    }
}

/// Seeded uniform draw of `count` (param, coordinate) probe sites.
inline std::vector<std::pair<std::size_t, std::size_t>> random_probes(
    const std::vector<Matrix*>& params, std::size_t count, Rng& rng) {
    std::size_t total = 0;
    for (const Matrix* p : params) total += p->size();
    GLP_REQUIRE(total > 0, "random_probes: no parameters");
    std::vector<std::pair<std::size_t, std::size_t>> probes;
    probes.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        std::size_t flat = rng.below(total);
        std::size_t pi = 0;
        while (flat >= params[pi]->size()) {
            flat -= params[pi]->size();
            ++pi;
        }
        probes.emplace_back(pi, flat);
    }
    return probes;
}

}  // namespace glp
