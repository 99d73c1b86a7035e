#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "glp/activation_store.hpp"
#include "glp/denoiser.hpp"
#include "glp/optim.hpp"

namespace glp {

/// One training batch of the interpolation objective: z_t = (1-t) z0 + t eps
/// row-wise, and the regression target is eps - z0. Both identities hold
/// exactly, not up to rounding order.
struct FlowBatch {
    Matrix z0;
    Matrix eps;
    std::vector<double> t;
    Matrix z_t;
    Matrix target_u;
};

inline FlowBatch make_flow_batch(Matrix z0_std, Rng& rng) {
    FlowBatch b;
    b.z0 = std::move(z0_std);
    b.t.resize(b.z0.rows);
    for (double& ti : b.t) ti = rng.uniform();
    b.eps = rng.normal_matrix(b.z0.rows, b.z0.cols);
    b.z_t = Matrix(b.z0.rows, b.z0.cols);
    b.target_u = Matrix(b.z0.rows, b.z0.cols);
    for (std::size_t i = 0; i < b.z0.rows; ++i) {
        const double ti = b.t[i];
        for (std::size_t j = 0; j < b.z0.cols; ++j) {
            b.z_t(i, j) = (1.0 - ti) * b.z0(i, j) + ti * b.eps(i, j);
            b.target_u(i, j) = b.eps(i, j) - b.z0(i, j);
        }
    }
    return b;
}

/// One optimizer step of flow matching: standardize the raw batch, draw
/// per-row t ~ U(0,1) and eps ~ N(0,I), regress the predicted velocity onto
/// eps - z0, and apply the update. Returns the loss before the step.
inline double flow_train_step(DenoiserModel& model, AdamWState& opt_state,
                              const Matrix& batch_raw, const Scaler& scaler, Rng& rng,
                              double lr,
                              const std::vector<std::size_t>* layers = nullptr) {
    GLP_REQUIRE(batch_raw.cols == model.config.d_act,
                "flow_train_step: activation dim mismatch");
    FlowBatch batch = make_flow_batch(scaler.apply(batch_raw), rng);

    Tape tape;
    DenoiserVars vars = denoiser_leaves(tape, model);
    Tape::Var feats =
        tape.leaf(timestep_features_batch(model.config, batch.t, layers));
    Tape::Var out = denoise_forward_tape(tape, vars, tape.leaf(batch.z_t), feats);
    Tape::Var loss_var = tape.mse(out, tape.leaf(batch.target_u));
    const double loss = tape.value(loss_var).data[0];
    if (!std::isfinite(loss))
        throw std::runtime_error("flow_train_step: non-finite loss " +
                                 std::to_string(loss) + " at step " +
                                 std::to_string(opt_state.step + 1));
    tape.backward(loss_var);
    std::vector<Matrix> grads;
    for (Tape::Var v : vars.flat()) grads.push_back(tape.grad(v));
    std::vector<Matrix*> params = model.params();
    adamw_step(params, grads, opt_state, lr);
    return loss;
}

/// z <- z + u(z, t_k) * (t_{k+1} - t_k) along the given timestep grid.
inline Matrix euler_integrate(
    const std::function<Matrix(const Matrix&, double)>& field, Matrix z,
    const std::vector<double>& grid) {
    for (std::size_t k = 0; k + 1 < grid.size(); ++k) {
        const Matrix u = field(z, grid[k]);
        GLP_REQUIRE(u.same_shape(z), "euler_integrate: field shape mismatch");
        const double dt = grid[k + 1] - grid[k];
        for (std::size_t i = 0; i < z.size(); ++i) z.data[i] += dt * u.data[i];
    }
    return z;
}

/// n evenly spaced values from a down to b inclusive.
inline std::vector<double> linspace(double a, double b, std::size_t n) {
    GLP_REQUIRE(n >= 1, "linspace: need at least one point");
    std::vector<double> v(n);
    if (n == 1) {
        v[0] = a;
        return v;
    }
    const double step = (b - a) / static_cast<double>(n - 1);
    for (std::size_t i = 0; i < n; ++i) v[i] = a + step * static_cast<double>(i);
    v[n - 1] = b;  // exact endpoint
    return v;
}

inline Matrix velocity_field(const DenoiserModel& model, const Matrix& z, double t,
                             std::optional<std::size_t> layer = {}) {
    return denoise_forward_scalar_t(model, z, t, layer);
}

/// Draw n samples: start at pure noise (t=1), take num_steps Euler steps to
/// t=0 on the uniform grid, then map back to raw activation space. Processed
/// in row chunks; rows are independent, so chunking cannot change values.
inline Matrix euler_sample(const DenoiserModel& model, std::size_t n,
                           std::size_t num_steps, const Scaler& scaler,
                           std::uint64_t seed, std::optional<std::size_t> layer = {},
                           std::size_t chunk_rows = 8192) {
    GLP_REQUIRE(num_steps >= 1, "euler_sample: num_steps must be >= 1");
    GLP_REQUIRE(n >= 1, "euler_sample: n must be >= 1");
    const std::size_t d = model.config.d_act;
    Rng rng = Rng(seed).substream("euler-sample-init");
    Matrix init = rng.normal_matrix(n, d);
    const std::vector<double> grid = linspace(1.0, 0.0, num_steps + 1);

    Matrix out(n, d);
    for (std::size_t start = 0; start < n; start += chunk_rows) {
        const std::size_t rows = std::min(chunk_rows, n - start);
        Matrix z(rows, d);
        std::copy(init.row(start), init.row(start) + rows * d, z.row(0));
        z = euler_integrate(
            [&](const Matrix& zz, double t) { return velocity_field(model, zz, t, layer); },
            std::move(z), grid);
        std::copy(z.row(0), z.row(0) + rows * d, out.row(start));
    }
    return scaler.invert(out);
}

struct SDEditParams {
    double t_start = 0.5;
    std::size_t num_steps = 20;  // grid points from t_start down to 0
    std::uint64_t seed = 0;
    bool share_noise_across_rows = false;
};

/// Steer-then-project: add alpha*w to every row, standardize, mix with fresh
/// noise at t_start, Euler-integrate the velocity field down to t=0 over
/// num_steps grid points, and de-standardize.
inline Matrix sdedit_project(const DenoiserModel& model, const Matrix& acts_raw,
                             const Matrix& steer_vec, double alpha,
                             const SDEditParams& params, const Scaler& scaler,
                             std::optional<std::size_t> layer = {}) {
    GLP_REQUIRE(params.t_start >= 0.0 && params.t_start <= 1.0,
                "sdedit_project: t_start outside [0,1]");
    GLP_REQUIRE(params.num_steps >= 1, "sdedit_project: num_steps must be >= 1");
    GLP_REQUIRE(steer_vec.rows == 1 && steer_vec.cols == acts_raw.cols,
                "sdedit_project: steer vector dimension mismatch");
    GLP_REQUIRE(std::isfinite(alpha), "sdedit_project: alpha must be finite");

    Matrix edited = acts_raw;
    for (std::size_t i = 0; i < edited.rows; ++i) {
        double* r = edited.row(i);
        for (std::size_t j = 0; j < edited.cols; ++j) r[j] += alpha * steer_vec.data[j];
    }
    Matrix z = scaler.apply(edited);

    Rng rng = Rng(params.seed).substream("sdedit-noise");
    const double ts = params.t_start;
    if (params.share_noise_across_rows) {
        Matrix noise = rng.normal_matrix(1, z.cols);
        for (std::size_t i = 0; i < z.rows; ++i) {
            double* r = z.row(i);
            for (std::size_t j = 0; j < z.cols; ++j)
                r[j] = (1.0 - ts) * r[j] + ts * noise.data[j];
        }
    } else {
        Matrix noise = rng.normal_matrix(z.rows, z.cols);
        for (std::size_t i = 0; i < z.size(); ++i)
            z.data[i] = (1.0 - ts) * z.data[i] + ts * noise.data[i];
    }

    const std::vector<double> grid = linspace(ts, 0.0, params.num_steps);
    z = euler_integrate(
        [&](const Matrix& zz, double t) { return velocity_field(model, zz, t, layer); },
        std::move(z), grid);
    return scaler.invert(z);
}

/// Reconstruction pass: project real activations through the noise
/// bottleneck with no steering vector.
inline Matrix noisy_reconstruct(const DenoiserModel& model, const Matrix& acts_raw,
                                const SDEditParams& params, const Scaler& scaler,
                                std::optional<std::size_t> layer = {}) {
    Matrix zero(1, acts_raw.cols);
    return sdedit_project(model, acts_raw, zero, 0.0, params, scaler, layer);
}

// ---------------------------------------------------------------------------
// Training orchestration with a loss curve.

struct FlowTrainConfig {
    std::uint64_t total_steps = 1000;
    std::size_t batch_size = 256;
    double base_lr = 5e-5;
    double warmup_ratio = 0.01;
    std::uint64_t seed = 0;
    std::size_t log_every = 10;
};

/// Train on batches pulled from `next_batch` (raw space). Returns the logged
/// loss curve; flops accounting is 6*N*(rows seen).
inline std::vector<LossPoint> train_flow_model(
    DenoiserModel& model, const Scaler& scaler, const FlowTrainConfig& cfg,
    const std::function<Matrix(std::size_t)>& next_batch,
    const std::vector<std::size_t>* layers = nullptr) {
    GLP_REQUIRE(cfg.total_steps >= 1, "train_flow_model: total_steps must be >= 1");
    AdamWState opt;
    Rng rng = Rng(cfg.seed).substream("flow-train");
    const double n_params = static_cast<double>(param_count(model.config));
    std::vector<LossPoint> curve;
    double rows_seen = 0.0;
    for (std::uint64_t step = 0; step < cfg.total_steps; ++step) {
        const Matrix batch = next_batch(cfg.batch_size);
        GLP_REQUIRE(batch.rows > 0, "train_flow_model: empty batch");
        const double lr =
            cosine_warmup_lr(step, cfg.total_steps, cfg.base_lr, cfg.warmup_ratio);
        const double loss = flow_train_step(model, opt, batch, scaler, rng, lr, layers);
        rows_seen += static_cast<double>(batch.rows);
        if (step % cfg.log_every == 0 || step + 1 == cfg.total_steps)
            curve.push_back({step + 1, 6.0 * n_params * rows_seen, loss});
    }
    return curve;
}

}  // namespace glp
