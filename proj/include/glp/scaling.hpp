#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "glp/check.hpp"
#include "glp/optim.hpp"

namespace glp {

/// Training compute; 6*N*D overflows 64 bits at LLM scale (N~3e9, D~1e9).
using Flops = unsigned __int128;

inline Flops flops_estimate(std::uint64_t n_params, std::uint64_t tokens) {
    return Flops{6} * n_params * tokens;
}

inline double flops_to_double(Flops c) { return static_cast<double>(c); }

/// Exponential moving average whose impulse response halves every
/// `half_life` samples; seeded at the first value.
inline std::vector<double> ema_smooth(const std::vector<double>& xs,
                                      double half_life = 50.0) {
    GLP_REQUIRE(half_life > 0.0, "ema_smooth: half_life must be positive");
    const double decay = std::exp2(-1.0 / half_life);
    std::vector<double> out;
    out.reserve(xs.size());
    double s = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        s = i == 0 ? xs[i] : decay * s + (1.0 - decay) * xs[i];
        out.push_back(s);
    }
    return out;
}

struct CurvePoint {
    double flops = 0.0;
    double loss = 0.0;
};

struct RunSample {
    std::uint64_t tokens = 0;  // cumulative training rows
    double loss = 0.0;
};

/// One training run of a model with `n_params` parameters.
struct RunCurve {
    std::uint64_t n_params = 0;
    std::vector<RunSample> samples;

    void validate() const {
        GLP_REQUIRE(n_params >= 1, "RunCurve: n_params must be >= 1");
        GLP_REQUIRE(!samples.empty(), "RunCurve: no samples");
        for (std::size_t i = 0; i < samples.size(); ++i) {
            GLP_REQUIRE(std::isfinite(samples[i].loss), "RunCurve: non-finite loss");
            GLP_REQUIRE(i == 0 || samples[i].tokens > samples[i - 1].tokens,
                        "RunCurve: tokens must be strictly increasing");
        }
    }
};

inline std::vector<CurvePoint> curve_points(const RunCurve& run) {
    run.validate();
    std::vector<CurvePoint> pts;
    pts.reserve(run.samples.size());
    for (const RunSample& s : run.samples)
        pts.push_back({flops_to_double(flops_estimate(run.n_params, s.tokens)), s.loss});
    return pts;
}

inline std::vector<CurvePoint> points_from_log(const std::vector<LossPoint>& log) {
    std::vector<CurvePoint> pts;
    pts.reserve(log.size());
    for (const LossPoint& p : log) pts.push_back({p.flops, p.loss});
    return pts;
}

inline std::vector<CurvePoint> smoothed_points(const std::vector<CurvePoint>& pts,
                                               double half_life = 50.0) {
    std::vector<double> losses;
    losses.reserve(pts.size());
    for (const CurvePoint& p : pts) losses.push_back(p.loss);
    losses = ema_smooth(losses, half_life);
    std::vector<CurvePoint> out = pts;
    for (std::size_t i = 0; i < out.size(); ++i) out[i].loss = losses[i];
    return out;
}

/// Compute-efficient frontier: merge all curves, sort by compute, keep points
/// achieving a new strict loss minimum. Output is non-increasing in loss.
inline std::vector<CurvePoint> compute_frontier(
    const std::vector<std::vector<CurvePoint>>& curves) {
    GLP_REQUIRE(!curves.empty(), "compute_frontier: no curves");
    std::vector<CurvePoint> merged;
    for (const std::vector<CurvePoint>& curve : curves) {
        GLP_REQUIRE(!curve.empty(), "compute_frontier: empty curve");
        for (std::size_t i = 0; i < curve.size(); ++i) {
            GLP_REQUIRE(std::isfinite(curve[i].loss) && std::isfinite(curve[i].flops),
                        "compute_frontier: non-finite point");
            GLP_REQUIRE(curve[i].flops > 0.0, "compute_frontier: flops must be positive");
            GLP_REQUIRE(i == 0 || curve[i].flops > curve[i - 1].flops,
                        "compute_frontier: flops must be strictly increasing in a run");
        }
        merged.insert(merged.end(), curve.begin(), curve.end());
    }
    std::stable_sort(merged.begin(), merged.end(),
                     [](const CurvePoint& a, const CurvePoint& b) {
                         if (a.flops != b.flops) return a.flops < b.flops;
                         return a.loss < b.loss;
                     });
    std::vector<CurvePoint> frontier;
    double best = std::numeric_limits<double>::infinity();
    for (const CurvePoint& p : merged) {
        if (p.loss < best) {
            frontier.push_back(p);
            best = p.loss;
        }
    }
    for (std::size_t i = 1; i < frontier.size(); ++i)
        GLP_REQUIRE(frontier[i].loss < frontier[i - 1].loss,
                    "compute_frontier: envelope must decrease");
    return frontier;
}

/// L(C) = E + A * C^(-alpha).
struct PowerLawFit {
    double E = 0.0;
    double A = 0.0;
    double alpha = 0.0;
    double residual = 0.0;  // root mean squared loss-space error
    bool converged = false;
};

namespace detail {

/// Closed-form least squares over (E, A) at fixed alpha, with E clamped to
/// [0, min loss]; returns the RMSE.
inline double power_law_profile(const std::vector<CurvePoint>& pts, double alpha,
                                double& e_out, double& a_out) {
    const std::size_t n = pts.size();
    double sw = 0.0, sww = 0.0, sl = 0.0, swl = 0.0;
    double l_min = std::numeric_limits<double>::infinity();
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i) {
        w[i] = std::exp(-alpha * std::log(pts[i].flops));
        sw += w[i];
        sww += w[i] * w[i];
        sl += pts[i].loss;
        swl += w[i] * pts[i].loss;
        l_min = std::min(l_min, pts[i].loss);
    }
    const double nn = static_cast<double>(n);
    const double det = nn * sww - sw * sw;
    double e, a;
    if (std::abs(det) <= 1e-12 * nn * sww) {
        e = 0.0;  // weights collinear with the intercept; amplitude-only fit
        a = sww > 0.0 ? swl / sww : 0.0;
    } else {
        e = (sl * sww - sw * swl) / det;
        a = (nn * swl - sw * sl) / det;
    }
    if (e < 0.0 || e > l_min || a <= 0.0) {
        // re-solve the amplitude on the clamped boundary
        e = std::clamp(e, 0.0, l_min);
        double num = 0.0;
        for (std::size_t i = 0; i < n; ++i) num += w[i] * (pts[i].loss - e);
        a = sww > 0.0 ? num / sww : 0.0;
    }
    double sse = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double r = e + a * w[i] - pts[i].loss;
        sse += r * r;
    }
    e_out = e;
    a_out = a;
    return std::sqrt(sse / nn);
}

}  // namespace detail

/// Grid over the rate with a closed-form (E, A) profile per cell, then a
/// golden-section refinement of the rate around the best cell.
inline PowerLawFit fit_power_law(const std::vector<CurvePoint>& pts) {
    GLP_REQUIRE(pts.size() >= 4, "fit_power_law: need at least 4 points");
    for (const CurvePoint& p : pts) {
        GLP_REQUIRE(p.flops > 0.0, "fit_power_law: compute must be positive");
        GLP_REQUIRE(std::isfinite(p.loss), "fit_power_law: non-finite loss");
    }

    const double alpha_lo = 1e-4, alpha_hi = 3.0;
    const std::size_t grid_n = 160;
    double best_alpha = alpha_lo;
    double best_rmse = std::numeric_limits<double>::infinity();
    std::size_t best_idx = 0;
    std::vector<double> grid(grid_n);
    for (std::size_t i = 0; i < grid_n; ++i) {
        const double f = static_cast<double>(i) / static_cast<double>(grid_n - 1);
        grid[i] = alpha_lo * std::pow(alpha_hi / alpha_lo, f);
        double e, a;
        const double rmse = detail::power_law_profile(pts, grid[i], e, a);
        if (rmse < best_rmse) {
            best_rmse = rmse;
            best_alpha = grid[i];
            best_idx = i;
        }
    }

    double lo = grid[best_idx == 0 ? 0 : best_idx - 1];
    double hi = grid[std::min(best_idx + 1, grid_n - 1)];
    const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
    double x1 = hi - gr * (hi - lo), x2 = lo + gr * (hi - lo);
    double e, a;
    double f1 = detail::power_law_profile(pts, x1, e, a);
    double f2 = detail::power_law_profile(pts, x2, e, a);
    for (int it = 0; it < 200 && hi - lo > 1e-13 * std::max(1.0, hi); ++it) {
        if (f1 < f2) {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - gr * (hi - lo);
            f1 = detail::power_law_profile(pts, x1, e, a);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + gr * (hi - lo);
            f2 = detail::power_law_profile(pts, x2, e, a);
        }
    }
    const double alpha = 0.5 * (lo + hi);

    PowerLawFit fit;
    fit.alpha = alpha;
    fit.residual = detail::power_law_profile(pts, alpha, fit.E, fit.A);
    if (fit.residual >= best_rmse) {  // refinement failed to help; keep the grid cell
        fit.alpha = best_alpha;
        fit.residual = detail::power_law_profile(pts, best_alpha, fit.E, fit.A);
    }
    fit.converged = std::isfinite(fit.residual) && fit.A > 0.0 && fit.alpha > 0.0;
    return fit;
}

/// f(L) = b + m*L.
struct LinearLossMap {
    double intercept = 0.0;
    double slope = 0.0;
};

inline LinearLossMap fit_linear_map(const std::vector<double>& losses,
                                    const std::vector<double>& metrics) {
    GLP_REQUIRE(losses.size() == metrics.size(), "fit_linear_map: size mismatch");
    GLP_REQUIRE(losses.size() >= 2, "fit_linear_map: need at least 2 points");
    const double n = static_cast<double>(losses.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < losses.size(); ++i) {
        mx += losses[i];
        my += metrics[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < losses.size(); ++i) {
        sxx += (losses[i] - mx) * (losses[i] - mx);
        sxy += (losses[i] - mx) * (metrics[i] - my);
    }
    GLP_REQUIRE(sxx > 0.0, "fit_linear_map: losses are all identical");
    LinearLossMap map;
    map.slope = sxy / sxx;
    map.intercept = my - map.slope * mx;
    return map;
}

/// Compute needed by each frontier to first reach `loss`; log-compute is
/// interpolated linearly in loss between the bracketing points. Returns
/// C_a / C_b: how many times more compute the first frontier needs.
inline double matched_loss_flops_ratio(const std::vector<CurvePoint>& frontier_a,
                                       const std::vector<CurvePoint>& frontier_b,
                                       double loss) {
    auto log_c_at = [&](const std::vector<CurvePoint>& f) {
        GLP_REQUIRE(f.size() >= 2, "matched_loss_flops_ratio: need >= 2 points");
        for (std::size_t i = 1; i < f.size(); ++i)
            GLP_REQUIRE(f[i].loss < f[i - 1].loss && f[i].flops > f[i - 1].flops,
                        "matched_loss_flops_ratio: not a frontier");
        GLP_REQUIRE(loss <= f.front().loss && loss >= f.back().loss,
                    "matched_loss_flops_ratio: loss outside the frontier range");
        for (std::size_t i = 1; i < f.size(); ++i) {
            if (loss >= f[i].loss) {
                const double t = (f[i - 1].loss - loss) / (f[i - 1].loss - f[i].loss);
                return (1.0 - t) * std::log(f[i - 1].flops) + t * std::log(f[i].flops);
            }
        }
        return std::log(f.back().flops);
    };
    return std::exp(log_c_at(frontier_a) - log_c_at(frontier_b));
}

inline void write_loss_csv(const std::string& path,
                           const std::vector<LossPoint>& curve) {
    std::ofstream out(path);
    GLP_REQUIRE(out.good(), "write_loss_csv: cannot open " + path);
    out << "step,flops,loss\n";
    char buf[128];
    for (const LossPoint& p : curve) {
        std::snprintf(buf, sizeof(buf), "%llu,%.17g,%.17g\n",
                      static_cast<unsigned long long>(p.step), p.flops, p.loss);
        out << buf;
    }
    GLP_REQUIRE(out.good(), "write_loss_csv: write failed");
}

inline std::vector<LossPoint> read_loss_csv(const std::string& path) {
    std::ifstream in(path);
    GLP_REQUIRE(in.good(), "read_loss_csv: cannot open " + path);
    std::string line;
    GLP_REQUIRE(std::getline(in, line) && line == "step,flops,loss",
                "read_loss_csv: bad header in " + path);
    std::vector<LossPoint> curve;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        LossPoint p;
        unsigned long long step = 0;
        GLP_REQUIRE(std::sscanf(line.c_str(), "%llu,%lg,%lg", &step, &p.flops,
                                &p.loss) == 3,
                    "read_loss_csv: bad row: " + line);
        p.step = step;
        curve.push_back(p);
    }
    return curve;
}

inline void write_power_law_csv(const std::string& path, const PowerLawFit& fit) {
    std::ofstream out(path);
    GLP_REQUIRE(out.good(), "write_power_law_csv: cannot open " + path);
    char buf[160];
    std::snprintf(buf, sizeof(buf), "E,A,alpha,residual\n%.17g,%.17g,%.17g,%.17g\n",
                  fit.E, fit.A, fit.alpha, fit.residual);
    out << buf;
    GLP_REQUIRE(out.good(), "write_power_law_csv: write failed");
}

}  // namespace glp
