#pragma once

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <vector>

#include "glp/check.hpp"

namespace glp {

/// Objective: fill `grad` (same size as x) and return f(x).
using ObjectiveFn =
    std::function<double(const std::vector<double>&, std::vector<double>&)>;

struct LbfgsConfig {
    std::size_t max_iters = 1000;
    double gtol = 1e-9;       // euclidean gradient norm target
    std::size_t history = 10;
    double armijo_c = 1e-4;
    double min_step = 1e-20;
    std::size_t stall_patience = 2;  // accepted steps with no representable decrease
};

struct LbfgsResult {
    std::vector<double> x;
    double fx = 0.0;
    double grad_norm = 0.0;
    std::size_t iterations = 0;
    bool converged = false;  // false: iteration cap or stalled line search
};

namespace detail {
inline double vdot(const std::vector<double>& a, const std::vector<double>& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}
}  // namespace detail

/// Limited-memory BFGS with Armijo backtracking. Returns the best iterate
/// seen, flagged unconverged when the gradient target was not reached.
inline LbfgsResult lbfgs_minimize(const ObjectiveFn& f, std::vector<double> x0,
                                  const LbfgsConfig& cfg = {}) {
    GLP_REQUIRE(!x0.empty(), "lbfgs_minimize: empty parameter vector");
    const std::size_t n = x0.size();

    std::vector<double> x = std::move(x0), g(n), x_new(n), g_new(n), d(n);
    double fx = f(x, g);

    struct Pair {
        std::vector<double> s, y;
        double rho;
    };
    std::deque<Pair> mem;

    LbfgsResult best;
    best.x = x;
    best.fx = fx;
    best.grad_norm = std::sqrt(detail::vdot(g, g));

    auto note_best = [&](const std::vector<double>& xc, double fc, double gn) {
        if (fc < best.fx) {
            best.x = xc;
            best.fx = fc;
            best.grad_norm = gn;
        }
    };

    std::size_t iter = 0;
    std::size_t stalls = 0;
    for (; iter < cfg.max_iters; ++iter) {
        const double gnorm = std::sqrt(detail::vdot(g, g));
        note_best(x, fx, gnorm);
        if (gnorm <= cfg.gtol) {
            best.x = x;
            best.fx = fx;
            best.grad_norm = gnorm;
            best.iterations = iter;
            best.converged = true;
            return best;
        }

        // two-loop recursion
        for (std::size_t i = 0; i < n; ++i) d[i] = -g[i];
        std::vector<double> alpha(mem.size());
        for (std::size_t i = mem.size(); i-- > 0;) {
            alpha[i] = mem[i].rho * detail::vdot(mem[i].s, d);
            for (std::size_t j = 0; j < n; ++j) d[j] -= alpha[i] * mem[i].y[j];
        }
        if (!mem.empty()) {
            const Pair& last = mem.back();
            const double gamma =
                detail::vdot(last.s, last.y) / detail::vdot(last.y, last.y);
            for (double& v : d) v *= gamma;
        }
        for (std::size_t i = 0; i < mem.size(); ++i) {
            const double beta = mem[i].rho * detail::vdot(mem[i].y, d);
            for (std::size_t j = 0; j < n; ++j)
                d[j] += (alpha[i] - beta) * mem[i].s[j];
        }

        double dg = detail::vdot(d, g);
        if (dg >= 0.0) {  // not a descent direction; restart from steepest descent
            mem.clear();
            for (std::size_t i = 0; i < n; ++i) d[i] = -g[i];
            dg = -detail::vdot(g, g);
        }

        double step = 1.0;
        double fx_new = fx;
        bool accepted = false;
        while (step >= cfg.min_step) {
            for (std::size_t i = 0; i < n; ++i) x_new[i] = x[i] + step * d[i];
            fx_new = f(x_new, g_new);
            if (std::isfinite(fx_new) && fx_new <= fx + cfg.armijo_c * step * dg) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) {  // stalled; report the best point seen
            best.iterations = iter;
            best.converged = best.grad_norm <= cfg.gtol;
            return best;
        }
        // the line search can accept a bitwise-equal fx once improvements fall
        // below double precision; those iterations can never make progress
        if (fx_new < fx) {
            stalls = 0;
        } else if (++stalls >= cfg.stall_patience) {
            const double gn = std::sqrt(detail::vdot(g_new, g_new));
            note_best(x_new, fx_new, gn);
            best.iterations = iter + 1;
            best.converged = best.grad_norm <= cfg.gtol;
            return best;
        }

        Pair p;
        p.s.resize(n);
        p.y.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            p.s[i] = x_new[i] - x[i];
            p.y[i] = g_new[i] - g[i];
        }
        const double sy = detail::vdot(p.s, p.y);
        if (sy > 1e-12) {
            p.rho = 1.0 / sy;
            mem.push_back(std::move(p));
            if (mem.size() > cfg.history) mem.pop_front();
        }
        x.swap(x_new);
        g.swap(g_new);
        fx = fx_new;
    }

    const double gnorm = std::sqrt(detail::vdot(g, g));
    note_best(x, fx, gnorm);
    best.iterations = iter;
    best.converged = best.grad_norm <= cfg.gtol;
    return best;
}

}  // namespace glp
