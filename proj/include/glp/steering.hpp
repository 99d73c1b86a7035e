#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "glp/check.hpp"
#include "glp/flow.hpp"
#include "glp/rng.hpp"
#include "glp/source_sim.hpp"

namespace glp {

enum class SteerMethod { Raw, Projected };

inline const char* steer_method_name(SteerMethod m) {
    return m == SteerMethod::Raw ? "raw" : "projected";
}

/// Grid evaluation protocol: steer generation toward the positive regime at
/// each relative coefficient, with the edit applied to the hook of every
/// generated position, and judge each continuation for concept and fluency.
struct SteerEvalConfig {
    std::vector<double> r_grid = {0.2, 0.4, 0.6, 0.8, 1.0,
                                  1.2, 1.4, 1.6, 1.8, 2.0};
    double t_start = 0.5;
    std::size_t num_steps = 20;
    std::size_t n_new = 20;
    std::uint64_t seed = 0;
};

struct SteerOutcome {
    SteerMethod method = SteerMethod::Raw;
    double r = 0.0;
    std::size_t prefix = 0;
    double concept_score = 0.0;  // posterior that the continuation is positive
    double fluency = 0.0;        // mean continuation NLL given full context
};

struct SteerSummary {
    SteerMethod method = SteerMethod::Raw;
    double r = 0.0;
    double mean_concept = 0.0;
    double mean_fluency = 0.0;
};

/// Judge one generated sequence: concept score on the continuation alone,
/// fluency as mean NLL of exactly the continuation tokens (the prefix only
/// supplies context).
inline SteerOutcome judge_continuation(const SourceLM& lm, const GrammarSpec& spec,
                                       const std::vector<int>& prefix,
                                       const std::vector<int>& full) {
    GLP_REQUIRE(full.size() > prefix.size(), "judge_continuation: nothing generated");
    GLP_REQUIRE(prefix.size() >= lm.config.context_k,
                "judge_continuation: prefix shorter than the context window");
    const std::vector<int> continuation(full.begin() +
                                            static_cast<std::ptrdiff_t>(prefix.size()),
                                        full.end());
    std::vector<int> scored(full.end() - static_cast<std::ptrdiff_t>(
                                              continuation.size() + lm.config.context_k),
                            full.end());
    SteerOutcome out;
    out.concept_score = bayes_concept_score(continuation, spec);
    out.fluency = fluency_nll(lm, scored);
    return out;
}

/// Run both steering methods over the coefficient grid. `diffmean` is the raw
/// hook-space contrast vector (unit-normalized here); `norm_bar` converts the
/// relative coefficients to absolute edit magnitudes.
inline std::vector<SteerOutcome> run_steer_eval(
    const SourceLM& lm, const GrammarSpec& spec, const DenoiserModel& glp,
    const Scaler& scaler, const Matrix& diffmean, double norm_bar,
    const std::vector<std::vector<int>>& prefixes, const SteerEvalConfig& cfg) {
    GLP_REQUIRE(diffmean.rows == 1, "run_steer_eval: direction must be one row");
    GLP_REQUIRE(!prefixes.empty(), "run_steer_eval: no prefixes");
    GLP_REQUIRE(!cfg.r_grid.empty(), "run_steer_eval: empty coefficient grid");
    GLP_REQUIRE(norm_bar > 0.0, "run_steer_eval: norm_bar must be positive");
    double norm = 0.0;
    for (double v : diffmean.data) norm += v * v;
    norm = std::sqrt(norm);
    GLP_REQUIRE(norm > 0.0, "run_steer_eval: zero steering direction");
    Matrix unit = diffmean;
    for (double& v : unit.data) v /= norm;

    std::vector<SteerOutcome> outcomes;
    const Rng root = Rng(cfg.seed).substream("steer-eval");
    for (SteerMethod method : {SteerMethod::Raw, SteerMethod::Projected}) {
        const Rng method_stream = root.substream(steer_method_name(method));
        for (std::size_t ri = 0; ri < cfg.r_grid.size(); ++ri) {
            const double alpha = cfg.r_grid[ri] * norm_bar;
            const Rng grid_stream = method_stream.substream(std::to_string(ri));
            for (std::size_t pi = 0; pi < prefixes.size(); ++pi) {
                Rng stream = grid_stream.substream(std::to_string(pi));
                SDEditParams params;
                params.t_start = cfg.t_start;
                params.num_steps = cfg.num_steps;
                HookTransform transform;
                if (method == SteerMethod::Raw) {
                    transform = [&](const Matrix& hook) {
                        Matrix edited = hook;
                        for (std::size_t j = 0; j < edited.cols; ++j)
                            edited.data[j] += alpha * unit.data[j];
                        return edited;
                    };
                } else {
                    transform = [&](const Matrix& hook) {
                        params.seed = stream.next_u64();
                        return sdedit_project(glp, hook, unit, alpha, params, scaler);
                    };
                }
                const std::vector<int> full =
                    generate(lm, prefixes[pi], cfg.n_new, stream, transform);
                SteerOutcome out = judge_continuation(lm, spec, prefixes[pi], full);
                out.method = method;
                out.r = cfg.r_grid[ri];
                out.prefix = pi;
                outcomes.push_back(out);
            }
        }
    }
    return outcomes;
}

/// Per-(method, coefficient) means, in the grid's evaluation order.
inline std::vector<SteerSummary> summarize_steer(const std::vector<SteerOutcome>& rows) {
    GLP_REQUIRE(!rows.empty(), "summarize_steer: no outcomes");
    std::vector<SteerSummary> out;
    for (const SteerOutcome& row : rows) {
        if (out.empty() || out.back().method != row.method || out.back().r != row.r) {
            SteerSummary s;
            s.method = row.method;
            s.r = row.r;
            out.push_back(s);
        }
    }
    for (SteerSummary& s : out) {
        double c = 0.0, f = 0.0;
        std::size_t n = 0;
        for (const SteerOutcome& row : rows)
            if (row.method == s.method && row.r == s.r) {
                c += row.concept_score;
                f += row.fluency;
                ++n;
            }
        s.mean_concept = c / static_cast<double>(n);
        s.mean_fluency = f / static_cast<double>(n);
    }
    return out;
}

struct BootstrapCi {
    double lo = 0.0;
    double hi = 0.0;
};

/// Percentile bootstrap CI for the mean (nearest-rank on resampled means).
inline BootstrapCi bootstrap_mean_ci(const std::vector<double>& values,
                                     std::size_t n_resamples, std::uint64_t seed,
                                     double coverage = 0.95) {
    GLP_REQUIRE(!values.empty(), "bootstrap_mean_ci: no values");
    GLP_REQUIRE(n_resamples >= 2, "bootstrap_mean_ci: need >= 2 resamples");
    GLP_REQUIRE(coverage > 0.0 && coverage < 1.0,
                "bootstrap_mean_ci: coverage must be in (0,1)");
    Rng rng = Rng(seed).substream("bootstrap");
    std::vector<double> means(n_resamples);
    for (std::size_t b = 0; b < n_resamples; ++b) {
        double acc = 0.0;
        for (std::size_t i = 0; i < values.size(); ++i)
            acc += values[rng.below(values.size())];
        means[b] = acc / static_cast<double>(values.size());
    }
    std::sort(means.begin(), means.end());
    const double tail = (1.0 - coverage) / 2.0;
    auto at = [&](double q) {
        const double pos = q * static_cast<double>(n_resamples - 1);
        return means[static_cast<std::size_t>(std::llround(pos))];
    };
    return {at(tail), at(1.0 - tail)};
}

inline void write_steer_csv(const std::string& path,
                            const std::vector<SteerOutcome>& rows) {
    std::ofstream out(path);
    GLP_REQUIRE(out.good(), "write_steer_csv: cannot open " + path);
    out << "method,r,prefix,concept,fluency\n";
    char buf[160];
    for (const SteerOutcome& row : rows) {
        std::snprintf(buf, sizeof(buf), "%s,%.17g,%zu,%.17g,%.17g\n",
                      steer_method_name(row.method), row.r, row.prefix,
                      row.concept_score, row.fluency);
        out << buf;
    }
    GLP_REQUIRE(out.good(), "write_steer_csv: write failed");
}

inline void write_steer_summary_csv(const std::string& path,
                                    const std::vector<SteerSummary>& rows) {
    std::ofstream out(path);
    GLP_REQUIRE(out.good(), "write_steer_summary_csv: cannot open " + path);
    out << "method,r,mean_concept,mean_fluency\n";
    char buf[160];
    for (const SteerSummary& row : rows) {
        std::snprintf(buf, sizeof(buf), "%s,%.17g,%.17g,%.17g\n",
                      steer_method_name(row.method), row.r, row.mean_concept,
                      row.mean_fluency);
        out << buf;
    }
    GLP_REQUIRE(out.good(), "write_steer_summary_csv: write failed");
}

}  // namespace glp
