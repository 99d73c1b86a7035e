#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "glp/activation_store.hpp"
#include "glp/check.hpp"
#include "glp/checkpoint.hpp"
#include "glp/matrix.hpp"
#include "glp/optim.hpp"
#include "glp/rng.hpp"
#include "glp/tape.hpp"

namespace glp {

// ---------------------------------------------------------------------------
// Top-k sparse autoencoder over standardized activations; the baseline the
// generative model is compared against.

struct SaeConfig {
    std::size_t d_act = 32;
    std::size_t latent_dim = 256;  // 8 * d_act
    std::size_t active_k = 8;      // d_act / 4

    void validate() const {
        GLP_REQUIRE(d_act >= 1, "sae config: d_act must be >= 1");
        GLP_REQUIRE(latent_dim >= d_act, "sae config: latent_dim must be >= d_act");
        GLP_REQUIRE(active_k >= 1 && active_k <= latent_dim,
                    "sae config: active_k out of range");
    }
};

struct SaeModel {
    SaeConfig config;
    Matrix b_pre;  // 1 x d, subtracted before encoding and added back after
    Matrix w_enc;  // d x m
    Matrix w_dec;  // m x d; row j is latent j's direction, kept unit-norm

    std::vector<Matrix*> params() { return {&b_pre, &w_enc, &w_dec}; }
    std::vector<const Matrix*> params() const { return {&b_pre, &w_enc, &w_dec}; }
};

inline std::size_t sae_param_count(const SaeConfig& c) {
    return c.d_act + 2 * c.d_act * c.latent_dim;
}

/// Rescale every latent direction (row of w_dec) to unit norm.
inline void normalize_decoder(SaeModel& m) {
    for (std::size_t j = 0; j < m.w_dec.rows; ++j) {
        double* row = m.w_dec.row(j);
        double sq = 0.0;
        for (std::size_t c = 0; c < m.w_dec.cols; ++c) sq += row[c] * row[c];
        const double inv = 1.0 / std::max(std::sqrt(sq), 1e-12);
        for (std::size_t c = 0; c < m.w_dec.cols; ++c) row[c] *= inv;
    }
}

/// Largest deviation of a latent direction's norm from 1.
inline double max_decoder_norm_error(const SaeModel& m) {
    double worst = 0.0;
    for (std::size_t j = 0; j < m.w_dec.rows; ++j) {
        const double* row = m.w_dec.row(j);
        double sq = 0.0;
        for (std::size_t c = 0; c < m.w_dec.cols; ++c) sq += row[c] * row[c];
        worst = std::max(worst, std::abs(std::sqrt(sq) - 1.0));
    }
    return worst;
}

inline SaeModel init_sae(const SaeConfig& config, std::uint64_t seed) {
    config.validate();
    SaeModel m;
    m.config = config;
    Rng rng(seed);
    m.b_pre = Matrix(1, config.d_act);
    m.w_enc = rng.normal_matrix(config.d_act, config.latent_dim,
                                1.0 / std::sqrt(static_cast<double>(config.d_act)));
    m.w_dec = rng.normal_matrix(config.latent_dim, config.d_act);
    normalize_decoder(m);
    return m;
}

/// Keep the k largest entries of each row (ties to the lower index), zero the
/// rest. Same selection rule as the differentiable version on the tape.
inline Matrix topk_keep(const Matrix& z, std::size_t k) {
    GLP_REQUIRE(k >= 1 && k <= z.cols, "topk_keep: k out of range");
    Matrix out(z.rows, z.cols);
    std::vector<std::size_t> idx(z.cols);
    for (std::size_t i = 0; i < z.rows; ++i) {
        const double* zr = z.row(i);
        for (std::size_t j = 0; j < z.cols; ++j) idx[j] = j;
        std::partial_sort(idx.begin(), idx.begin() + k, idx.end(),
                          [&](std::size_t a, std::size_t b) {
                              if (zr[a] != zr[b]) return zr[a] > zr[b];
                              return a < b;
                          });
        for (std::size_t r = 0; r < k; ++r) out(i, idx[r]) = zr[idx[r]];
    }
    return out;
}

/// Sparse latent codes topk((x - b) W_enc): n x m with k active entries per
/// row. Inputs are in the model's (standardized) space.
inline Matrix sae_latents(const SaeModel& m, const Matrix& x) {
    GLP_REQUIRE(x.cols == m.config.d_act, "sae_latents: activation dim mismatch");
    Matrix centered = x;
    for (std::size_t i = 0; i < centered.rows; ++i) {
        double* r = centered.row(i);
        for (std::size_t j = 0; j < centered.cols; ++j) r[j] -= m.b_pre.data[j];
    }
    Matrix z_pre(x.rows, m.config.latent_dim);
    gemm(z_pre, centered, false, m.w_enc, false);
    return topk_keep(z_pre, m.config.active_k);
}

/// decode(topk(encode(x))): n x d in the model's space.
inline Matrix sae_reconstruct(const SaeModel& m, const Matrix& x) {
    const Matrix z = sae_latents(m, x);
    Matrix recon(x.rows, m.config.d_act);
    gemm(recon, z, false, m.w_dec, false);
    for (std::size_t i = 0; i < recon.rows; ++i) {
        double* r = recon.row(i);
        for (std::size_t j = 0; j < recon.cols; ++j) r[j] += m.b_pre.data[j];
    }
    return recon;
}

/// Raw-space convenience: standardize, reconstruct, undo the standardization.
inline Matrix sae_reconstruct_raw(const SaeModel& m, const Scaler& scaler,
                                  const Matrix& raw) {
    return scaler.invert(sae_reconstruct(m, scaler.apply(raw)));
}

// ---------------------------------------------------------------------------
// Training.

/// One optimizer step on a standardized batch; returns the loss before the
/// step. The decoder is renormalized afterwards, so its unit-norm invariant
/// holds at every step boundary.
inline double sae_train_step(SaeModel& model, AdamWState& opt_state,
                             const Matrix& batch_std, double lr) {
    GLP_REQUIRE(batch_std.cols == model.config.d_act,
                "sae_train_step: activation dim mismatch");
    Tape tape;
    Tape::Var b_pre = tape.leaf(model.b_pre, true);
    Tape::Var w_enc = tape.leaf(model.w_enc, true);
    Tape::Var w_dec = tape.leaf(model.w_dec, true);
    Tape::Var x = tape.leaf(batch_std);

    Tape::Var centered = tape.add_rowvec(x, tape.scale(b_pre, -1.0));
    Tape::Var z = tape.topk_rows(tape.matmul(centered, w_enc), model.config.active_k);
    Tape::Var recon = tape.add_rowvec(tape.matmul(z, w_dec), b_pre);
    Tape::Var loss_var = tape.mse(recon, x);

    const double loss = tape.value(loss_var).data[0];
    if (!std::isfinite(loss))
        throw std::runtime_error("sae_train_step: non-finite loss " +
                                 std::to_string(loss) + " at step " +
                                 std::to_string(opt_state.step + 1));
    tape.backward(loss_var);
    std::vector<Matrix> grads = {tape.grad(b_pre), tape.grad(w_enc), tape.grad(w_dec)};
    std::vector<Matrix*> params = model.params();
    adamw_step(params, grads, opt_state, lr);
    normalize_decoder(model);
    return loss;
}

struct SaeTrainConfig {
    std::uint64_t total_steps = 1000;
    std::size_t batch_size = 256;
    double base_lr = 1e-3;
    double warmup_ratio = 0.01;
    std::uint64_t seed = 0;
    std::size_t log_every = 10;
    std::uint64_t divergence_patience = 500;
};

/// Train on raw-space batches from `next_batch` using the same scaler as the
/// generative model. Aborts if the loss sits above its initial value for
/// divergence_patience consecutive steps.
inline std::vector<LossPoint> train_sae(
    SaeModel& model, const Scaler& scaler, const SaeTrainConfig& cfg,
    const std::function<Matrix(std::size_t)>& next_batch) {
    GLP_REQUIRE(cfg.total_steps >= 1, "train_sae: total_steps must be >= 1");
    AdamWState opt;
    const double n_params = static_cast<double>(sae_param_count(model.config));
    std::vector<LossPoint> curve;
    double rows_seen = 0.0;
    double initial_loss = 0.0;
    std::uint64_t above_initial = 0;
    for (std::uint64_t step = 0; step < cfg.total_steps; ++step) {
        const Matrix batch = next_batch(cfg.batch_size);
        GLP_REQUIRE(batch.rows > 0, "train_sae: empty batch");
        const double lr =
            cosine_warmup_lr(step, cfg.total_steps, cfg.base_lr, cfg.warmup_ratio);
        const double loss = sae_train_step(model, opt, scaler.apply(batch), lr);
        if (step == 0) initial_loss = loss;
        above_initial = loss > initial_loss ? above_initial + 1 : 0;
        if (above_initial >= cfg.divergence_patience)
            throw std::runtime_error(
                "train_sae: diverged (loss above its initial value " +
                std::to_string(initial_loss) + " for " +
                std::to_string(above_initial) + " steps)");
        rows_seen += static_cast<double>(batch.rows);
        if (step % cfg.log_every == 0 || step + 1 == cfg.total_steps)
            curve.push_back({step + 1, 6.0 * n_params * rows_seen, loss});
    }
    return curve;
}

// ---------------------------------------------------------------------------
// Checkpointing (shared container, its own model-kind tag).

inline void save_sae(const std::string& path, const SaeModel& m) {
    checkpoint::write(path, checkpoint::ModelKind::Sae,
                      {m.config.d_act, m.config.latent_dim, m.config.active_k},
                      m.params());
}

inline SaeModel load_sae(const std::string& path) {
    checkpoint::Loaded raw = checkpoint::read(path, checkpoint::ModelKind::Sae);
    GLP_REQUIRE(raw.config.size() == 3, "sae checkpoint: bad config length");
    SaeModel m;
    m.config.d_act = raw.config[0];
    m.config.latent_dim = raw.config[1];
    m.config.active_k = raw.config[2];
    m.config.validate();
    m.b_pre = Matrix(1, m.config.d_act);
    m.w_enc = Matrix(m.config.d_act, m.config.latent_dim);
    m.w_dec = Matrix(m.config.latent_dim, m.config.d_act);
    checkpoint::assign_tensors(m.params(), raw.tensors, "sae checkpoint");
    return m;
}

}  // namespace glp
