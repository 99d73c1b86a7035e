#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "glp/activation_store.hpp"
#include "glp/config.hpp"
#include "glp/denoiser.hpp"
#include "glp/flow.hpp"
#include "glp/linalg.hpp"
#include "glp/metrics.hpp"
#include "glp/optim.hpp"
#include "glp/probing.hpp"
#include "glp/sae.hpp"
#include "glp/scaling.hpp"
#include "glp/source_sim.hpp"
#include "glp/steering.hpp"

namespace glp {

struct CriterionResult {
    int id = 0;
    std::string name;
    bool pass = false;
    std::string detail;
    double seconds = 0.0;
};

using CliRunner = std::function<int(const std::vector<std::string>&)>;

namespace repro {

/// Every size knob of the acceptance run. `desk` is the real suite; `smoke`
/// shrinks each stage to a plumbing check that finishes in a couple of
/// minutes (its ordering checks are underpowered and may legitimately fail).
struct Profile {
    std::string name;
    std::uint64_t seed = 2026;

    // Gaussian-oracle stages.
    std::size_t gauss_d = 16;
    std::size_t gauss_train_steps = 5000;
    std::size_t gauss_batch = 256;
    double gauss_lr = 3e-4;
    std::size_t gauss_n = 50000;
    std::size_t gauss_full_steps = 1000;
    std::size_t gauss_mse_rows = 4096;

    // Toy-LM pipeline stages.
    std::size_t corpus_docs = 3000;
    std::size_t doc_len = 64;
    std::size_t lm_steps = 2000;
    std::size_t lm_batch = 128;
    std::size_t glp_steps = 4000;
    std::size_t glp_batch = 256;
    std::size_t sae_steps = 2000;
    std::vector<std::size_t> ladder_blocks = {1, 2, 4, 8};
    std::size_t ladder_steps = 3000;

    // Evaluation stages.
    std::size_t pareto_prefixes = 100;
    std::size_t trend_prefixes = 48;
    std::size_t steer_new_tokens = 20;
    std::size_t bootstrap_resamples = 10000;
    std::size_t delta_docs = 2048;
    std::size_t probe_train = 256;
    std::size_t probe_val = 128;
    std::size_t probe_test = 128;
    std::size_t stress_trials = 100;
    std::size_t stress_rows = 100000;

    static Profile desk() {
        Profile p;
        p.name = "desk";
        return p;
    }

    static Profile smoke() {
        Profile p;
        p.name = "smoke";
        p.gauss_train_steps = 400;
        p.gauss_n = 4000;
        p.gauss_full_steps = 64;
        p.gauss_mse_rows = 512;
        p.corpus_docs = 300;
        p.lm_steps = 200;
        p.glp_steps = 200;
        p.sae_steps = 200;
        p.ladder_blocks = {1, 2};
        p.ladder_steps = 150;
        p.pareto_prefixes = 8;
        p.trend_prefixes = 6;
        p.steer_new_tokens = 12;
        p.bootstrap_resamples = 500;
        p.delta_docs = 32;
        p.probe_train = 48;
        p.probe_val = 16;
        p.probe_test = 16;
        p.stress_trials = 5;
        p.stress_rows = 4000;
        return p;
    }
};

struct Checker {
    bool pass = true;
    std::string detail;

    void note(const std::string& s) {
        if (!detail.empty()) detail += "; ";
        detail += s;
    }
    void check(bool ok, const std::string& s) {
        pass = pass && ok;
        note(s + (ok ? "" : " [FAIL]"));
    }
};

namespace detail {

inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.5g", v);
    return buf;
}

inline std::function<Matrix(std::size_t)> row_sampler(const Matrix& acts,
                                                      std::uint64_t seed) {
    auto rng = std::make_shared<Rng>(Rng(seed).substream("batches"));
    const Matrix* src = &acts;
    return [rng, src](std::size_t n) {
        Matrix batch(n, src->cols);
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t row = rng->below(src->rows);
            std::copy(src->row(row), src->row(row) + src->cols, batch.row(i));
        }
        return batch;
    };
}

/// A well-conditioned random covariance (AA^T/d + I/4) and a mean pulled
/// toward the origin, for the Gaussian-oracle stages.
inline void make_gaussian(std::size_t d, std::uint64_t seed, Matrix& mu, Matrix& sigma) {
    Rng rng(seed);
    const Matrix a = rng.normal_matrix(d, d);
    sigma = Matrix(d, d);
    gemm(sigma, a, false, a, true);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j <= i; ++j) {
            double v = 0.5 * (sigma(i, j) + sigma(j, i)) / static_cast<double>(d);
            if (i == j) v += 0.25;
            sigma(i, j) = sigma(j, i) = v;
        }
    mu = rng.normal_matrix(1, d);
    for (double& v : mu.data) v *= 0.5;
}

inline Matrix sample_gaussian(const Matrix& mu, const Matrix& sigma_half,
                              std::size_t n, Rng& rng) {
    const Matrix z = rng.normal_matrix(n, mu.cols);
    Matrix out(n, mu.cols);
    gemm(out, z, false, sigma_half, true);
    for (std::size_t i = 0; i < out.rows; ++i) {
        double* r = out.row(i);
        for (std::size_t j = 0; j < out.cols; ++j) r[j] += mu.data[j];
    }
    return out;
}

/// Closed-form optimal velocity field for flow matching toward N(mu, sigma):
/// with z_t = (1-t) z0 + t eps, u*(z_t, t) = E[eps - z0 | z_t] is linear in
/// z_t, and sigma_t = (1-t)^2 sigma + t^2 I shares sigma's eigenbasis.
struct GaussianVelocityOracle {
    Matrix mu;              // 1 x d
    Matrix vecs;            // eigenvectors of sigma, column j <-> values[j]
    std::vector<double> values;

    static GaussianVelocityOracle build(const Matrix& mu, const Matrix& sigma) {
        GaussianVelocityOracle o;
        o.mu = mu;
        EighResult eig = jacobi_eigh(sigma);
        o.vecs = std::move(eig.eigenvectors);
        o.values = std::move(eig.eigenvalues);
        return o;
    }

    Matrix field(const Matrix& z_t, double t) const {
        const std::size_t d = mu.cols;
        Matrix diff = z_t;
        for (std::size_t i = 0; i < diff.rows; ++i) {
            double* r = diff.row(i);
            for (std::size_t j = 0; j < d; ++j) r[j] -= (1.0 - t) * mu.data[j];
        }
        Matrix w(diff.rows, d);
        gemm(w, diff, false, vecs, false);
        for (std::size_t j = 0; j < d; ++j) {
            const double lam = values[j];
            const double var_t = (1.0 - t) * (1.0 - t) * lam + t * t;
            const double gain = (t - (1.0 - t) * lam) / var_t;
            for (std::size_t i = 0; i < w.rows; ++i) w(i, j) *= gain;
        }
        Matrix u(diff.rows, d);
        gemm(u, w, false, vecs, true);
        for (std::size_t i = 0; i < u.rows; ++i) {
            double* r = u.row(i);
            for (std::size_t j = 0; j < d; ++j) r[j] -= mu.data[j];
        }
        return u;
    }
};

/// O(n^2) pair-counting AUC: ties between classes count half a win.
inline double pair_counting_auc(const std::vector<double>& scores,
                                const std::vector<int>& labels) {
    double numer = 0.0;
    std::size_t n_pos = 0, n_neg = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 1) continue;
        ++n_pos;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] == 1) continue;
            if (scores[i] > scores[j]) numer += 1.0;
            else if (scores[i] == scores[j]) numer += 0.5;
        }
    }
    for (int l : labels) n_neg += (l == 0);
    return numer / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

inline std::map<std::string, std::vector<char>> slurp_tree(
    const std::filesystem::path& root) {
    std::map<std::string, std::vector<char>> files;
    for (const auto& entry : std::filesystem::recursive_directory_iterator(root)) {
        if (!entry.is_regular_file()) continue;
        std::ifstream in(entry.path(), std::ios::binary);
        GLP_REQUIRE(in.good(), "cannot read " + entry.path().string());
        std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
        files[std::filesystem::relative(entry.path(), root).generic_string()] =
            std::move(bytes);
    }
    return files;
}

struct CwdGuard {
    std::filesystem::path saved = std::filesystem::current_path();
    ~CwdGuard() {
        std::error_code ec;
        std::filesystem::current_path(saved, ec);
    }
};

}  // namespace detail

/// Shared artifacts, built lazily so each criterion can also run alone.
struct Context {
    Profile p;
    std::filesystem::path out;

    std::uint64_t seed_of(const std::string& stage) const {
        return Rng(p.seed).substream(stage).next_u64();
    }

    // Gaussian-oracle side.
    bool have_gauss = false;
    Matrix g_mu, g_sigma, g_sigma_half;
    Matrix g_train, g_val;
    Scaler g_scaler;
    DenoiserModel g_model;
    bool have_g_samples = false;
    Matrix g_samples_full;

    void ensure_gauss() {
        if (have_gauss) return;
        std::fprintf(stderr, "  [setup] gaussian generator + %zu-step flow training\n",
                     p.gauss_train_steps);
        detail::make_gaussian(p.gauss_d, seed_of("gaussian-moments"), g_mu, g_sigma);
        g_sigma_half = psd_sqrt(g_sigma);
        Rng draws(seed_of("gaussian-draws"));
        g_train = detail::sample_gaussian(g_mu, g_sigma_half, p.gauss_n, draws);
        g_val = detail::sample_gaussian(g_mu, g_sigma_half, p.gauss_n, draws);
        g_scaler = fit_scaler(g_train);
        g_model = init_denoiser(DenoiserConfig::defaults(p.gauss_d, 3),
                                seed_of("gaussian-init"));
        FlowTrainConfig fc;
        fc.total_steps = p.gauss_train_steps;
        fc.batch_size = p.gauss_batch;
        fc.base_lr = p.gauss_lr;
        fc.seed = seed_of("gaussian-train");
        fc.log_every = 50;
        train_flow_model(g_model, g_scaler, fc,
                         detail::row_sampler(g_train, seed_of("gaussian-batches")));
        have_gauss = true;
    }

    void ensure_gauss_samples() {
        ensure_gauss();
        if (have_g_samples) return;
        std::fprintf(stderr, "  [setup] %zu euler samples at %zu steps\n", p.gauss_n,
                     p.gauss_full_steps);
        g_samples_full = euler_sample(g_model, p.gauss_n, p.gauss_full_steps, g_scaler,
                                      seed_of("gaussian-sample"));
        have_g_samples = true;
    }

    // Toy-LM side.
    bool have_lm = false;
    GrammarSpec spec;
    std::vector<Document> corpus;
    SourceLM lm;
    double lm_val_nll = 0.0;

    void ensure_lm() {
        if (have_lm) return;
        std::fprintf(stderr, "  [setup] corpus (%zu docs) + %zu-step source LM\n",
                     p.corpus_docs, p.lm_steps);
        spec = default_grammar(32);
        corpus = generate_corpus(spec, p.corpus_docs, p.doc_len, seed_of("corpus"));
        SourceTrainConfig tc;
        tc.total_steps = p.lm_steps;
        tc.batch_size = p.lm_batch;
        tc.seed = seed_of("lm-train");
        tc.log_every = 20;
        SourceTrainResult r = train_source_lm(corpus, SourceLMConfig{}, tc);
        lm = std::move(r.model);
        lm_val_nll = r.val_nll;
        have_lm = true;
    }

    bool have_acts = false;
    Matrix acts, acts_pos, acts_neg;
    Scaler scaler;

    void ensure_acts() {
        ensure_lm();
        if (have_acts) return;
        std::fprintf(stderr, "  [setup] hook activation cache\n");
        acts = collect_hook_rows(lm, corpus);
        std::vector<Document> pos, neg;
        for (const Document& d : corpus) (d.label == 1 ? pos : neg).push_back(d);
        GLP_REQUIRE(!pos.empty() && !neg.empty(), "corpus lost a label class");
        acts_pos = collect_hook_rows(lm, pos);
        acts_neg = collect_hook_rows(lm, neg);
        scaler = fit_scaler(acts);
        have_acts = true;
    }

    bool have_glp = false;
    DenoiserModel glp;

    void ensure_glp() {
        ensure_acts();
        if (have_glp) return;
        std::fprintf(stderr, "  [setup] main flow model (%zu steps)\n", p.glp_steps);
        glp = init_denoiser(DenoiserConfig::defaults(lm.config.d_act, 3),
                            seed_of("glp-init"));
        FlowTrainConfig fc;
        fc.total_steps = p.glp_steps;
        fc.batch_size = p.glp_batch;
        fc.seed = seed_of("glp-train");
        fc.log_every = 10;
        train_flow_model(glp, scaler, fc, detail::row_sampler(acts, seed_of("glp-batches")));
        have_glp = true;
    }

    bool have_sae = false;
    SaeModel sae;

    void ensure_sae() {
        ensure_acts();
        if (have_sae) return;
        std::fprintf(stderr, "  [setup] top-k SAE baseline (%zu steps)\n", p.sae_steps);
        SaeConfig sc;
        sc.d_act = lm.config.d_act;
        sae = init_sae(sc, seed_of("sae-init"));
        SaeTrainConfig tc;
        tc.total_steps = p.sae_steps;
        tc.seed = seed_of("sae-train");
        tc.log_every = 10;
        train_sae(sae, scaler, tc, detail::row_sampler(acts, seed_of("sae-batches")));
        have_sae = true;
    }

    bool have_ladder = false;
    std::vector<DenoiserModel> ladder;
    std::vector<std::vector<LossPoint>> ladder_curves;

    void ensure_ladder() {
        ensure_acts();
        if (have_ladder) return;
        for (std::size_t blocks : p.ladder_blocks) {
            std::fprintf(stderr, "  [setup] ladder model, %zu block(s), %zu steps\n",
                         blocks, p.ladder_steps);
            DenoiserModel m =
                init_denoiser(DenoiserConfig::defaults(lm.config.d_act, blocks),
                              Rng(seed_of("ladder-init"))
                                  .substream(std::to_string(blocks))
                                  .next_u64());
            FlowTrainConfig fc;
            fc.total_steps = p.ladder_steps;
            fc.batch_size = p.glp_batch;
            fc.seed = seed_of("ladder-train");  // shared across sizes
            fc.log_every = 10;
            ladder_curves.push_back(train_flow_model(
                m, scaler, fc, detail::row_sampler(acts, seed_of("ladder-batches"))));
            ladder.push_back(std::move(m));
        }
        have_ladder = true;
    }

    bool have_suite = false;
    std::vector<ProbeTask> suite;

    void ensure_suite() {
        ensure_lm();
        if (have_suite) return;
        TaskSuiteConfig tc;
        tc.n_train = p.probe_train;
        tc.n_val = p.probe_val;
        tc.n_test = p.probe_test;
        tc.doc_len = p.doc_len;
        tc.context_k = lm.config.context_k;
        tc.seed = seed_of("task-suite");
        suite = make_task_suite(spec, tc);
        have_suite = true;
    }

    // Steering inputs shared by the Pareto and trend criteria.
    bool have_steer_inputs = false;
    Matrix steer_direction;
    double steer_norm_bar = 0.0;

    void ensure_steer_inputs() {
        ensure_acts();
        if (have_steer_inputs) return;
        steer_direction = diffmean_vector(acts_pos, acts_neg);
        steer_norm_bar = relative_coefficient(1.0, acts_neg).norm_bar;
        have_steer_inputs = true;
    }

    std::vector<std::vector<int>> steer_prefixes(std::size_t n) const {
        std::vector<std::vector<int>> prefixes;
        for (const Document& d : corpus) {
            if (d.label == 1 || prefixes.size() == n) continue;
            prefixes.emplace_back(d.tokens.begin(),
                                  d.tokens.begin() +
                                      static_cast<std::ptrdiff_t>(lm.config.context_k));
        }
        GLP_REQUIRE(prefixes.size() == n, "not enough negative documents for prefixes");
        return prefixes;
    }

    double mean_test_auc(const EncoderInfo& enc, std::size_t k, std::uint64_t seed) {
        ensure_suite();
        const Rng seeds = Rng(seed).substream("probe-tasks");
        double acc = 0.0;
        for (const ProbeTask& task : suite) {
            const std::uint64_t task_seed = seeds.substream(task.name).next_u64();
            acc += probe_task_pipeline(task, enc, k, ProbeMode::OneD, task_seed).test_auc;
        }
        return acc / static_cast<double>(suite.size());
    }
};

// ---------------------------------------------------------------------------
// Criterion 1: analytic gradients vs central finite differences.

inline void criterion_gradients(Context& ctx, Checker& ck) {
    DenoiserConfig cfg = DenoiserConfig::defaults(16, 2);
    DenoiserModel m = init_denoiser(cfg, ctx.seed_of("gradients-init"));
    Rng rng(ctx.seed_of("gradients-data"));
    const Matrix z = rng.normal_matrix(8, cfg.d_act);
    const Matrix target = rng.normal_matrix(8, cfg.d_act);
    std::vector<double> t;
    for (int i = 0; i < 8; ++i) t.push_back(rng.uniform());
    const Matrix feats = timestep_features_batch(cfg, t);

    auto loss = [&]() {
        Tape tape;
        DenoiserVars vars = denoiser_leaves(tape, m);
        Tape::Var out = denoise_forward_tape(tape, vars, tape.leaf(z), tape.leaf(feats));
        return tape.value(tape.mse(out, tape.leaf(target))).data[0];
    };
    auto analytic = [&]() {
        Tape tape;
        DenoiserVars vars = denoiser_leaves(tape, m);
        Tape::Var out = denoise_forward_tape(tape, vars, tape.leaf(z), tape.leaf(feats));
        Tape::Var l = tape.mse(out, tape.leaf(target));
        tape.backward(l);
        std::vector<Matrix> gs;
        for (Tape::Var v : vars.flat()) gs.push_back(tape.grad(v));
        return gs;
    };

    // One optimizer step first so no tensor sits at a gradient zero.
    {
        AdamWState state;
        Tape tape;
        DenoiserVars vars = denoiser_leaves(tape, m);
        Tape::Var out = denoise_forward_tape(tape, vars, tape.leaf(z), tape.leaf(feats));
        Tape::Var l = tape.mse(out, tape.leaf(target));
        tape.backward(l);
        std::vector<Matrix> grads;
        for (Tape::Var v : vars.flat()) grads.push_back(tape.grad(v));
        std::vector<Matrix*> params = m.params();
        adamw_step(params, grads, state, 1e-3);
    }

    std::vector<Matrix*> params = m.params();
    Rng probe_rng(ctx.seed_of("gradients-probes"));
    const auto probes = random_probes(params, 24, probe_rng);
    const double err = grad_check(loss, analytic, params, 1e-5, probes);
    ck.check(err <= 1e-4, "max relative gradient error " + detail::fmt(err) +
                              " over " + std::to_string(probes.size()) + " params");
}

// ---------------------------------------------------------------------------
// Criterion 2: trained flow vs the closed-form Gaussian velocity field.

inline void criterion_gaussian_oracle(Context& ctx, Checker& ck) {
    ctx.ensure_gauss();
    const std::size_t d = ctx.p.gauss_d;

    // Oracle field of the standardized generator (apply() is affine, so the
    // standardized moments are exact).
    Matrix mu_s(1, d);
    Matrix sigma_s(d, d);
    for (std::size_t j = 0; j < d; ++j)
        mu_s.data[j] =
            (ctx.g_mu.data[j] - ctx.g_scaler.mean.data[j]) / ctx.g_scaler.std.data[j];
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j)
            sigma_s(i, j) = ctx.g_sigma(i, j) /
                            (ctx.g_scaler.std.data[i] * ctx.g_scaler.std.data[j]);
    const auto oracle = detail::GaussianVelocityOracle::build(mu_s, sigma_s);
    const Matrix sigma_s_half = psd_sqrt(sigma_s);

    Rng rng(ctx.seed_of("oracle-mse"));
    double mse_acc = 0.0;
    for (int k = 1; k <= 9; ++k) {
        const double t = 0.1 * k;
        const Matrix z0 =
            detail::sample_gaussian(mu_s, sigma_s_half, ctx.p.gauss_mse_rows, rng);
        const Matrix eps = rng.normal_matrix(ctx.p.gauss_mse_rows, d);
        Matrix z_t(z0.rows, d);
        for (std::size_t i = 0; i < z_t.size(); ++i)
            z_t.data[i] = (1.0 - t) * z0.data[i] + t * eps.data[i];
        const Matrix pred =
            denoise_forward(ctx.g_model, z_t, std::vector<double>(z_t.rows, t));
        const Matrix want = oracle.field(z_t, t);
        double mse = 0.0;
        for (std::size_t i = 0; i < pred.size(); ++i) {
            const double e = pred.data[i] - want.data[i];
            mse += e * e;
        }
        mse_acc += mse / static_cast<double>(pred.size());
    }
    const double mse_per_dim = mse_acc / 9.0;
    ck.check(mse_per_dim <= 0.05,
             "velocity MSE per dim " + detail::fmt(mse_per_dim) + " (limit 0.05)");

    ctx.ensure_gauss_samples();
    const double fd_model = frechet_gaussian_analytic(
        summarize_gaussian(ctx.g_samples_full), GaussianSummary{ctx.g_mu, ctx.g_sigma});
    const double fd_floor = frechet_distance(ctx.g_train, ctx.g_val);
    ck.check(fd_model <= 1.5 * fd_floor,
             "FD to generator " + detail::fmt(fd_model) + " vs sampling floor " +
                 detail::fmt(fd_floor));
}

// ---------------------------------------------------------------------------
// Criterion 3: sample quality converges in the number of Euler steps.

inline void criterion_step_convergence(Context& ctx, Checker& ck) {
    ctx.ensure_gauss_samples();
    std::vector<std::size_t> step_grid = {1, 4, 20};
    std::vector<double> fds;
    for (std::size_t steps : step_grid) {
        const Matrix s = euler_sample(ctx.g_model, ctx.p.gauss_n, steps, ctx.g_scaler,
                                      ctx.seed_of("gaussian-sample"));
        fds.push_back(frechet_distance(s, ctx.g_val));
    }
    step_grid.push_back(ctx.p.gauss_full_steps);
    fds.push_back(frechet_distance(ctx.g_samples_full, ctx.g_val));

    std::string seen = "FD by steps:";
    for (std::size_t i = 0; i < fds.size(); ++i)
        seen += " " + std::to_string(step_grid[i]) + "->" + detail::fmt(fds[i]);
    ck.note(seen);
    for (std::size_t i = 0; i + 1 < fds.size(); ++i)
        ck.check(fds[i + 1] <= fds[i] * 1.05,
                 "non-increasing at " + std::to_string(step_grid[i + 1]) + " steps");
    ck.check(fds[2] <= 1.1 * fds.back(), "20 steps within 1.1x of full grid");
}

// ---------------------------------------------------------------------------
// Criterion 4: Frechet distance against the closed form.

inline void criterion_fd_correctness(Context& ctx, Checker& ck) {
    const std::size_t d = 16, n = ctx.p.gauss_n;
    Matrix mu1, sigma1, mu2, sigma2;
    detail::make_gaussian(d, ctx.seed_of("fd-gauss-a"), mu1, sigma1);
    detail::make_gaussian(d, ctx.seed_of("fd-gauss-b"), mu2, sigma2);
    for (double& v : mu2.data) v += 0.5;  // clear mean separation
    Rng rng(ctx.seed_of("fd-draws"));
    const Matrix x = detail::sample_gaussian(mu1, psd_sqrt(sigma1), n, rng);
    const Matrix y = detail::sample_gaussian(mu2, psd_sqrt(sigma2), n, rng);

    const double self = frechet_distance(x, x);
    ck.check(self <= 1e-8, "FD(X,X) = " + detail::fmt(self));

    const double fd_xy = frechet_distance(x, y);
    const double fd_yx = frechet_distance(y, x);
    const double analytic =
        frechet_gaussian_analytic(GaussianSummary{mu1, sigma1}, GaussianSummary{mu2, sigma2});
    const double rel = std::abs(fd_xy - analytic) / analytic;
    ck.check(rel <= 0.05, "empirical " + detail::fmt(fd_xy) + " vs analytic " +
                              detail::fmt(analytic) + ", rel err " + detail::fmt(rel));
    ck.check(std::abs(fd_xy - fd_yx) <= 1e-10,
             "symmetry gap " + detail::fmt(std::abs(fd_xy - fd_yx)));
}

// ---------------------------------------------------------------------------
// Criterion 5: the power-law fitter recovers planted parameters.

inline void criterion_power_law(Context& ctx, Checker& ck) {
    const double E = 0.52, A = 435.1, alpha = 0.169;
    auto curve_at = [&](std::size_t n_points, double noise, Rng* rng) {
        std::vector<CurvePoint> pts;
        for (std::size_t i = 0; i < n_points; ++i) {
            const double lc = std::log(1e14) + (std::log(1e19) - std::log(1e14)) *
                                                   static_cast<double>(i) /
                                                   static_cast<double>(n_points - 1);
            const double c = std::exp(lc);
            // Noise multiplies the reducible term: optimization noise scales
            // with how far training is from the loss floor.
            double decaying = A * std::pow(c, -alpha);
            if (rng) decaying *= 1.0 + noise * rng->normal();
            pts.push_back({c, E + decaying});
        }
        return pts;
    };

    const PowerLawFit clean = fit_power_law(curve_at(24, 0.0, nullptr));
    const double ce = std::abs(clean.E - E) / E;
    const double ca = std::abs(clean.A - A) / A;
    const double cal = std::abs(clean.alpha - alpha) / alpha;
    ck.check(clean.converged && ce <= 0.01 && ca <= 0.01 && cal <= 0.01,
             "noiseless rel err E " + detail::fmt(ce) + " A " + detail::fmt(ca) +
                 " alpha " + detail::fmt(cal));

    std::vector<double> err_e, err_a;
    for (int seedi = 0; seedi < 20; ++seedi) {
        Rng rng = Rng(ctx.seed_of("power-law-noise")).substream(std::to_string(seedi));
        const PowerLawFit fit = fit_power_law(curve_at(256, 0.05, &rng));
        if (!fit.converged) {
            err_e.push_back(1.0);
            err_a.push_back(1.0);
            continue;
        }
        err_e.push_back(std::abs(fit.E - E) / E);
        err_a.push_back(std::abs(fit.alpha - alpha) / alpha);
    }
    std::sort(err_e.begin(), err_e.end());
    std::sort(err_a.begin(), err_a.end());
    const double med_e = 0.5 * (err_e[9] + err_e[10]);
    const double med_a = 0.5 * (err_a[9] + err_a[10]);
    ck.check(med_e <= 0.05, "noisy median E err " + detail::fmt(med_e) + " (limit 0.05)");
    ck.check(med_a <= 0.10,
             "noisy median alpha err " + detail::fmt(med_a) + " (limit 0.10)");
}

// ---------------------------------------------------------------------------
// Criterion 6: the desk-scale run shows the paper's scaling trends.

inline void criterion_scaling_trends(Context& ctx, Checker& ck) {
    ctx.ensure_ladder();
    ctx.ensure_suite();
    ctx.ensure_steer_inputs();

    std::vector<std::vector<CurvePoint>> smoothed;
    for (const auto& curve : ctx.ladder_curves)
        smoothed.push_back(smoothed_points(points_from_log(curve)));
    const std::vector<CurvePoint> frontier = compute_frontier(smoothed);
    bool decreasing = frontier.size() >= 4;
    for (std::size_t i = 0; i + 1 < frontier.size(); ++i)
        decreasing = decreasing && frontier[i + 1].loss < frontier[i].loss;
    ck.check(decreasing, "frontier monotone with " + std::to_string(frontier.size()) +
                             " points");
    const PowerLawFit fit = fit_power_law(frontier);
    ck.check(fit.converged && fit.alpha > 0.0,
             "frontier exponent alpha " + detail::fmt(fit.alpha));

    std::string aucs = "probe AUC by size:";
    std::vector<double> probe_means;
    for (std::size_t i = 0; i < ctx.ladder.size(); ++i) {
        const EncoderInfo enc = encoder_glp_meta_neurons(
            ctx.lm, ctx.ladder[i], ctx.scaler, 0.5, ctx.seed_of("trend-meta-neurons"));
        // One candidate feature per block keeps the filter budget proportional
        // to model size.
        probe_means.push_back(
            ctx.mean_test_auc(enc, ctx.p.ladder_blocks[i], ctx.seed_of("trend-probes")));
        aucs += " " + detail::fmt(probe_means.back());
    }
    ck.note(aucs);
    for (std::size_t i = 0; i + 1 < probe_means.size(); ++i)
        ck.check(probe_means[i + 1] >= probe_means[i] - 0.02,
                 "probe trend step " + std::to_string(i));

    SteerEvalConfig se;
    se.r_grid = {1.0, 1.4, 1.8};
    se.n_new = ctx.p.steer_new_tokens;
    se.seed = ctx.seed_of("trend-steer");
    const auto prefixes = ctx.steer_prefixes(ctx.p.trend_prefixes);
    std::vector<double> steer_scores;
    std::string scores = "steer score by size:";
    for (const DenoiserModel& m : ctx.ladder) {
        const std::vector<SteerOutcome> outcomes =
            run_steer_eval(ctx.lm, ctx.spec, m, ctx.scaler, ctx.steer_direction,
                           ctx.steer_norm_bar, prefixes, se);
        double concept_acc = 0.0, fluency_acc = 0.0;
        std::size_t n = 0;
        for (const SteerOutcome& o : outcomes) {
            if (o.method != SteerMethod::Projected) continue;
            concept_acc += o.concept_score;
            fluency_acc += o.fluency;
            ++n;
        }
        // Quality scalar: mean concept steering strength minus mean fluency
        // cost, higher is better on both axes.
        steer_scores.push_back((concept_acc - fluency_acc) / static_cast<double>(n));
        scores += " " + detail::fmt(steer_scores.back());
    }
    ck.note(scores);
    for (std::size_t i = 0; i + 1 < steer_scores.size(); ++i)
        ck.check(steer_scores[i + 1] >= steer_scores[i] - 0.02,
                 "steering trend step " + std::to_string(i));
}

// ---------------------------------------------------------------------------
// Criterion 7: flow-projected steering beats raw steering on the Pareto front.

inline void criterion_steering_pareto(Context& ctx, Checker& ck) {
    ctx.ensure_glp();
    ctx.ensure_steer_inputs();
    SteerEvalConfig se;
    se.n_new = ctx.p.steer_new_tokens;
    se.seed = ctx.seed_of("pareto-steer");
    const auto prefixes = ctx.steer_prefixes(ctx.p.pareto_prefixes);
    const std::vector<SteerOutcome> outcomes =
        run_steer_eval(ctx.lm, ctx.spec, ctx.glp, ctx.scaler, ctx.steer_direction,
                       ctx.steer_norm_bar, prefixes, se);

    const Rng ci_seeds = Rng(ctx.seed_of("pareto-ci"));
    bool found = false;
    std::string best;
    for (std::size_t ri = 0; ri < se.r_grid.size(); ++ri) {
        const double r = se.r_grid[ri];
        if (r < 1.0) continue;
        std::vector<double> raw_flu, proj_flu;
        double raw_con = 0.0, proj_con = 0.0;
        for (const SteerOutcome& o : outcomes) {
            if (o.r != r) continue;
            if (o.method == SteerMethod::Raw) {
                raw_flu.push_back(o.fluency);
                raw_con += o.concept_score;
            } else {
                proj_flu.push_back(o.fluency);
                proj_con += o.concept_score;
            }
        }
        raw_con /= static_cast<double>(raw_flu.size());
        proj_con /= static_cast<double>(proj_flu.size());
        const Rng rs = ci_seeds.substream(std::to_string(ri));
        const BootstrapCi raw_ci = bootstrap_mean_ci(
            raw_flu, ctx.p.bootstrap_resamples, rs.substream("raw").next_u64());
        const BootstrapCi proj_ci = bootstrap_mean_ci(
            proj_flu, ctx.p.bootstrap_resamples, rs.substream("projected").next_u64());
        const bool separated = proj_ci.hi < raw_ci.lo && proj_con >= raw_con;
        if (separated && !found) {
            found = true;
            best = "r=" + detail::fmt(r) + ": projected fluency CI [" +
                   detail::fmt(proj_ci.lo) + "," + detail::fmt(proj_ci.hi) +
                   "] below raw [" + detail::fmt(raw_ci.lo) + "," +
                   detail::fmt(raw_ci.hi) + "], concept " + detail::fmt(proj_con) +
                   " >= " + detail::fmt(raw_con);
        }
    }
    ck.check(found, found ? best
                          : "no coefficient with CI-separated lower fluency at "
                            "equal-or-higher concept score");
}

// ---------------------------------------------------------------------------
// Criterion 8: language-model damage ordering of the reconstructors.

inline void criterion_delta_lm(Context& ctx, Checker& ck) {
    ctx.ensure_glp();
    ctx.ensure_sae();
    const std::vector<Document> held =
        generate_corpus(ctx.spec, ctx.p.delta_docs, ctx.p.doc_len,
                        ctx.seed_of("delta-held-out"));

    const double delta_id =
        delta_lm_loss(ctx.lm, held, [](const Matrix& x) { return x; });
    ck.check(delta_id == 0.0, "identity delta " + detail::fmt(delta_id) + " (exact 0)");

    auto seeds = std::make_shared<Rng>(Rng(ctx.seed_of("delta-glp")).substream("delta-lm"));
    const DenoiserModel* glp = &ctx.glp;
    const Scaler* scaler = &ctx.scaler;
    const double delta_glp = delta_lm_loss(ctx.lm, held, [&](const Matrix& x) {
        SDEditParams params;
        params.seed = seeds->next_u64();
        return noisy_reconstruct(*glp, x, params, *scaler);
    });
    const SaeModel* sae = &ctx.sae;
    const double delta_sae = delta_lm_loss(ctx.lm, held, [&](const Matrix& x) {
        return sae_reconstruct_raw(*sae, *scaler, x);
    });
    ck.check(delta_glp < delta_sae, "flow reconstruction delta " +
                                        detail::fmt(delta_glp) + " < SAE delta " +
                                        detail::fmt(delta_sae));
}

// ---------------------------------------------------------------------------
// Criterion 9: probing quality ordering and probe-machinery equivalences.

inline void criterion_probing(Context& ctx, Checker& ck) {
    ctx.ensure_glp();
    ctx.ensure_suite();

    const EncoderInfo raw = encoder_raw_hook(ctx.lm);
    const EncoderInfo meta = encoder_glp_meta_neurons(ctx.lm, ctx.glp, ctx.scaler, 0.1,
                                                      ctx.seed_of("probe-meta"));
    const double mean_raw = ctx.mean_test_auc(raw, 512, ctx.seed_of("probe-eval"));
    const double mean_meta = ctx.mean_test_auc(meta, 512, ctx.seed_of("probe-eval"));
    ck.check(mean_meta >= mean_raw, "mean 1-D AUC: meta-neurons " +
                                        detail::fmt(mean_meta) + " >= raw hook " +
                                        detail::fmt(mean_raw));

    // Filter-vs-exhaustive on the widest meta-neuron bank available.
    ctx.ensure_ladder();
    const DenoiserModel& big = ctx.ladder.back();
    const std::size_t n_features = big.config.n_blocks * big.config.expansion;
    const EncoderInfo wide = encoder_glp_meta_neurons(ctx.lm, big, ctx.scaler, 0.1,
                                                      ctx.seed_of("probe-meta"));
    const double filtered = ctx.mean_test_auc(wide, 512, ctx.seed_of("probe-eval"));
    const double exhaustive =
        ctx.mean_test_auc(wide, n_features, ctx.seed_of("probe-eval"));
    const double gap = std::abs(filtered - exhaustive);
    ck.check(gap <= 0.001, "filter(512 of " + std::to_string(n_features) +
                               ") vs exhaustive mean AUC gap " + detail::fmt(gap));

    Rng rng(ctx.seed_of("auc-oracle"));
    bool exact = true;
    for (int trial = 0; trial < 50 && exact; ++trial) {
        const std::size_t n = 2 + rng.below(199);
        std::vector<double> scores(n);
        std::vector<int> labels(n);
        for (std::size_t i = 0; i < n; ++i) {
            // Quantized scores force tie groups.
            scores[i] = std::floor(rng.uniform(-2.0, 2.0) * 4.0) / 4.0;
            labels[i] = static_cast<int>(rng.below(2));
        }
        labels[0] = 0;
        labels[n - 1] = 1;
        exact = roc_auc(scores, labels) == detail::pair_counting_auc(scores, labels);
    }
    ck.check(exact, "rank-based AUC equals pair-counting oracle exactly");
}

// ---------------------------------------------------------------------------
// Criterion 10: stream exactly-once, stable file bytes, CLI determinism.

inline void criterion_pipeline(Context& ctx, const CliRunner& run_cli, Checker& ck) {
    Rng geo(ctx.seed_of("stress-geometry"));
    bool exactly_once = true;
    for (std::size_t trial = 0; trial < ctx.p.stress_trials && exactly_once; ++trial) {
        const std::size_t d = 1 + geo.below(6);
        const std::size_t rows_per_doc = 2 + geo.below(14);
        const std::size_t n_docs = ctx.p.stress_rows / (rows_per_doc - 1) + 1;
        const std::size_t batch = 1 + geo.below(256);
        const std::size_t capacity = batch + geo.below(768);

        std::vector<double> expect;
        expect.reserve(n_docs * (rows_per_doc - 1) * d);
        auto counter = std::make_shared<std::size_t>(0);
        auto emitted = std::make_shared<std::size_t>(0);
        const auto fill = [d, rows_per_doc, n_docs, counter, emitted](Matrix& out) {
            if (*emitted == n_docs) return false;
            out = Matrix(rows_per_doc, d);
            for (std::size_t i = 0; i < out.size(); ++i)
                out.data[i] = static_cast<double>((*counter)++);
            ++*emitted;
            return true;
        };
        // The expected multiset: every row of every doc except row 0.
        for (std::size_t doc = 0; doc < n_docs; ++doc)
            for (std::size_t r = 1; r < rows_per_doc; ++r)
                for (std::size_t c = 0; c < d; ++c)
                    expect.push_back(
                        static_cast<double>(doc * rows_per_doc * d + r * d + c));

        ActivationStream stream(fill, d, capacity, batch, geo.next_u64());
        std::vector<double> got;
        got.reserve(expect.size());
        for (;;) {
            const Matrix b = stream.next_batch();
            if (b.rows == 0) break;
            got.insert(got.end(), b.data.begin(), b.data.begin() + b.size());
        }
        std::sort(got.begin(), got.end());
        std::sort(expect.begin(), expect.end());
        exactly_once = got == expect;
    }
    ck.check(exactly_once, std::to_string(ctx.p.stress_trials) + " stress trials of >= " +
                               std::to_string(ctx.p.stress_rows) + " rows exactly-once");

    // Golden bytes of the activation file format.
    const std::filesystem::path golden_dir = ctx.out / "golden";
    std::filesystem::create_directories(golden_dir);
    Matrix acts(2, 3);
    acts.data = {1.0, -2.5, 0.25, 3.5, -0.125, 10.0};
    const std::string golden_path = (golden_dir / "acts.glpa").string();
    write_activation_file(golden_path, acts, 7);
    std::vector<char> expect_bytes = {'G', 'L', 'P', 'A'};
    auto put_u32 = [&expect_bytes](std::uint32_t v) {
        for (int i = 0; i < 4; ++i)
            expect_bytes.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    };
    put_u32(1);
    put_u32(3);
    put_u32(7);
    put_u32(2);
    put_u32(0);
    for (double v : acts.data) {
        const float f = static_cast<float>(v);
        const char* c = reinterpret_cast<const char*>(&f);
        expect_bytes.insert(expect_bytes.end(), c, c + sizeof(float));
    }
    std::ifstream gin(golden_path, std::ios::binary);
    const std::vector<char> got_bytes((std::istreambuf_iterator<char>(gin)),
                                      std::istreambuf_iterator<char>());
    ck.check(got_bytes == expect_bytes, "activation file golden bytes");

    // Bit-reproducibility: the whole subcommand chain twice, in two separate
    // working directories, then a byte compare of everything written.
    const std::vector<std::vector<std::string>> chain = {
        {"gen-corpus", "--n_docs", "64", "--doc_len", "24", "--seed", "3", "--out",
         "runs/corpus"},
        {"train-source", "--corpus", "runs/corpus/corpus.txt", "--total_steps", "60",
         "--batch_size", "32", "--log_every", "5", "--seed", "4", "--out", "runs/lm"},
        {"cache", "--corpus", "runs/corpus/corpus.txt", "--source",
         "runs/lm/source.glpw", "--out", "runs/acts"},
        {"fit-scaler", "--acts", "runs/acts/acts.glpa", "--out", "runs/scaler"},
        {"train", "--acts", "runs/acts/acts.glpa", "--scaler",
         "runs/scaler/scaler.glps", "--width", "16", "--expansion", "32", "--n_blocks",
         "2", "--total_steps", "50", "--batch_size", "64", "--log_every", "2", "--seed",
         "5", "--out", "runs/glp"},
        {"train-sae", "--acts", "runs/acts/acts.glpa", "--scaler",
         "runs/scaler/scaler.glps", "--latent_dim", "64", "--active_k", "4",
         "--total_steps", "40", "--batch_size", "64", "--log_every", "5", "--seed", "6",
         "--out", "runs/sae"},
        {"sample", "--glp", "runs/glp/glp.glpw", "--scaler", "runs/scaler/scaler.glps",
         "--n", "64", "--num_steps", "5", "--seed", "7", "--out", "runs/samples"},
        {"fd", "--a", "runs/acts/acts.glpa", "--b", "runs/samples/samples.glpa",
         "--out", "runs/fd"},
        {"pca", "--acts", "runs/acts/acts.glpa", "--k", "4", "--out", "runs/pca"},
        {"delta-lm", "--corpus", "runs/corpus/corpus.txt", "--source",
         "runs/lm/source.glpw", "--reconstructor", "identity", "--out", "runs/delta"},
        {"steer", "--corpus", "runs/corpus/corpus.txt", "--source",
         "runs/lm/source.glpw", "--glp", "runs/glp/glp.glpw", "--scaler",
         "runs/scaler/scaler.glps", "--n_prefixes", "4", "--n_new", "6", "--num_steps",
         "5", "--r_grid", "0.5,1.0", "--seed", "8", "--out", "runs/steer"},
        {"probe", "--source", "runs/lm/source.glpw", "--encoder", "raw-hook",
         "--n_train", "48", "--n_val", "16", "--n_test", "16", "--doc_len", "24",
         "--seed", "9", "--out", "runs/probe"},
        {"scaling-fit", "--curves", "runs/lm/loss.csv", "--half_life", "5", "--out",
         "runs/scaling"},
    };

    const std::filesystem::path base = ctx.out / "bitrepro";
    bool chain_ok = true;
    for (const char* leg : {"a", "b"}) {
        const std::filesystem::path dir = base / leg;
        std::filesystem::remove_all(dir);
        std::filesystem::create_directories(dir);
        detail::CwdGuard guard;
        std::filesystem::current_path(dir);
        for (const auto& args : chain) {
            if (run_cli(args) != 0) {
                chain_ok = false;
                ck.note("subcommand `" + args[0] + "` failed in " + leg);
                break;
            }
        }
        if (!chain_ok) break;
    }
    ck.check(chain_ok, "subcommand chain ran twice");
    if (chain_ok) {
        const auto tree_a = detail::slurp_tree(base / "a");
        const auto tree_b = detail::slurp_tree(base / "b");
        std::size_t mismatches = tree_a.size() == tree_b.size() ? 0 : 1;
        for (const auto& [rel, bytes] : tree_a) {
            const auto it = tree_b.find(rel);
            if (it == tree_b.end() || it->second != bytes) {
                ++mismatches;
                ck.note("differs: " + rel);
            }
        }
        ck.check(mismatches == 0, std::to_string(tree_a.size()) +
                                      " output files bit-identical across reruns");
    }
}

}  // namespace repro

inline std::vector<CriterionResult> run_acceptance(const std::string& profile_name,
                                                   const std::string& out_dir,
                                                   const CliRunner& run_cli) {
    repro::Profile profile;
    if (profile_name == "desk") profile = repro::Profile::desk();
    else if (profile_name == "smoke") profile = repro::Profile::smoke();
    else throw UsageError("profile must be desk or smoke; got `" + profile_name + "`");
    std::filesystem::create_directories(out_dir);
    repro::Context ctx{profile, out_dir};

    struct Row {
        int id;
        const char* name;
        std::function<void(repro::Checker&)> fn;
    };
    const std::vector<Row> rows = {
        {1, "gradient-check", [&](repro::Checker& ck) { criterion_gradients(ctx, ck); }},
        {2, "gaussian-flow-oracle",
         [&](repro::Checker& ck) { criterion_gaussian_oracle(ctx, ck); }},
        {3, "sampling-step-convergence",
         [&](repro::Checker& ck) { criterion_step_convergence(ctx, ck); }},
        {4, "frechet-distance-correctness",
         [&](repro::Checker& ck) { criterion_fd_correctness(ctx, ck); }},
        {5, "power-law-recovery",
         [&](repro::Checker& ck) { criterion_power_law(ctx, ck); }},
        {6, "scaling-trends",
         [&](repro::Checker& ck) { criterion_scaling_trends(ctx, ck); }},
        {7, "steering-pareto",
         [&](repro::Checker& ck) { criterion_steering_pareto(ctx, ck); }},
        {8, "delta-lm-ordering", [&](repro::Checker& ck) { criterion_delta_lm(ctx, ck); }},
        {9, "probing-ordering", [&](repro::Checker& ck) { criterion_probing(ctx, ck); }},
        {10, "pipeline-integrity",
         [&](repro::Checker& ck) { criterion_pipeline(ctx, run_cli, ck); }},
    };

    std::vector<CriterionResult> results;
    for (const Row& row : rows) {
        std::fprintf(stderr, "[criterion %d] %s\n", row.id, row.name);
        const auto start = std::chrono::steady_clock::now();
        repro::Checker ck;
        try {
            row.fn(ck);
        } catch (const std::exception& e) {
            ck.pass = false;
            ck.note(std::string("exception: ") + e.what());
        }
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
                .count();
        std::fprintf(stderr, "[criterion %d] %s: %s (%.1fs)\n", row.id, row.name,
                     ck.pass ? "pass" : "FAIL", secs);
        results.push_back({row.id, row.name, ck.pass, ck.detail, secs});
    }
    return results;
}

inline void write_acceptance_summary(const std::string& path,
                                     const std::vector<CriterionResult>& results) {
    std::ofstream out(path, std::ios::trunc);
    GLP_REQUIRE(out.good(), "cannot write " + path);
    out << "id,name,pass,seconds,detail\n";
    for (const CriterionResult& r : results) {
        std::string clean = r.detail;
        for (char& c : clean)
            if (c == ',' || c == '\n') c = ';';
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.1f", r.seconds);
        out << r.id << ',' << r.name << ',' << (r.pass ? "pass" : "fail") << ',' << buf
            << ',' << clean << '\n';
    }
}

}  // namespace glp
