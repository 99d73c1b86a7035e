#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "glp/checkpoint.hpp"
#include "glp/matrix.hpp"
#include "glp/rng.hpp"
#include "glp/tape.hpp"

namespace glp {

struct DenoiserConfig {
    std::size_t d_act = 32;
    std::size_t width = 64;       // 2x d_act by default
    std::size_t expansion = 128;  // 2x width by default
    std::size_t n_blocks = 3;
    bool multi_layer = false;
    std::size_t n_source_layers = 1;   // used iff multi_layer
    std::size_t cond_features = 64;    // sinusoidal feature dim (even)
    std::size_t cond_dim = 64;         // embedding MLP output dim, = width

    static DenoiserConfig defaults(std::size_t d_act, std::size_t n_blocks) {
        DenoiserConfig c;
        c.d_act = d_act;
        c.width = 2 * d_act;
        c.expansion = 2 * c.width;
        c.n_blocks = n_blocks;
        c.cond_dim = c.width;
        return c;
    }

    void validate() const {
        GLP_REQUIRE(d_act >= 1 && width >= 1 && expansion >= 1 && n_blocks >= 1,
                    "DenoiserConfig: all dims must be >= 1");
        GLP_REQUIRE(cond_features >= 2 && cond_features % 2 == 0,
                    "DenoiserConfig: cond_features must be even");
        GLP_REQUIRE(!multi_layer || n_source_layers >= 1,
                    "DenoiserConfig: n_source_layers must be >= 1");
    }
};

/// One SwiGLU residual block. The gate pre-activation is multiplicatively
/// modulated by (1 + cond_proj(embedding)); cond weights start at zero so
/// the untrained block ignores the timestep.
struct DenoiserBlock {
    Matrix norm_gain;  // 1 x width
    Matrix w_gate;     // width x expansion
    Matrix w_up;       // width x expansion
    Matrix w_cond;     // cond_dim x expansion
    Matrix w_down;     // expansion x width
};

struct DenoiserModel {
    DenoiserConfig config;
    Matrix in_proj;        // d_act x width
    Matrix time_w1;        // cond_features x cond_dim
    Matrix time_w2;        // cond_dim x cond_dim
    std::vector<DenoiserBlock> blocks;
    Matrix out_norm_gain;  // 1 x width
    Matrix out_proj;       // width x d_act

    /// Parameter tensors in checkpoint declaration order.
    std::vector<Matrix*> params() {
        std::vector<Matrix*> p{&in_proj, &time_w1, &time_w2};
        for (DenoiserBlock& b : blocks) {
            p.push_back(&b.norm_gain);
            p.push_back(&b.w_gate);
            p.push_back(&b.w_up);
            p.push_back(&b.w_cond);
            p.push_back(&b.w_down);
        }
        p.push_back(&out_norm_gain);
        p.push_back(&out_proj);
        return p;
    }

    std::vector<const Matrix*> params() const {
        auto* self = const_cast<DenoiserModel*>(this);
        std::vector<Matrix*> mut = self->params();
        return {mut.begin(), mut.end()};
    }
};

/// Exact trainable-scalar count for a config; must agree with the tensors
/// the model actually allocates (tested) and feeds C=6ND flops accounting.
inline std::uint64_t param_count(const DenoiserConfig& c) {
    const std::uint64_t d = c.d_act, w = c.width, e = c.expansion;
    const std::uint64_t cd = c.cond_dim, f = c.cond_features, B = c.n_blocks;
    std::uint64_t n = d * w;            // in_proj
    n += f * cd + cd * cd;              // timestep MLP
    n += B * (w + 2 * w * e + cd * e + e * w);
    n += w + w * d;                     // out norm + out_proj
    return n;
}

/// Sinusoidal features of t at cond_features/2 geometrically spaced
/// frequencies over [1, 1e4]. With multi_layer, the layer position gets the
/// same treatment and the two are averaged, keeping entries in [-1, 1].
inline Matrix timestep_features(const DenoiserConfig& c, double t,
                                std::optional<std::size_t> layer = {}) {
    GLP_REQUIRE(t >= 0.0 && t <= 1.0, "timestep out of range");
    const std::size_t half = c.cond_features / 2;
    Matrix feats(1, c.cond_features);
    auto fill = [&](double x, double scale) {
        for (std::size_t i = 0; i < half; ++i) {
            const double freq =
                std::exp(std::log(1e4) * static_cast<double>(i) /
                         static_cast<double>(half > 1 ? half - 1 : 1));
            feats(0, 2 * i) += scale * std::sin(freq * x);
            feats(0, 2 * i + 1) += scale * std::cos(freq * x);
        }
    };
    if (c.multi_layer) {
        GLP_REQUIRE(layer.has_value(), "multi_layer model requires a layer index");
        GLP_REQUIRE(*layer < c.n_source_layers, "layer index out of range");
        const double pos = c.n_source_layers > 1
                               ? static_cast<double>(*layer) /
                                     static_cast<double>(c.n_source_layers - 1)
                               : 0.0;
        fill(t, 0.5);
        fill(pos, 0.5);
    } else {
        fill(t, 1.0);
    }
    return feats;
}

/// Largest |d feature / d t|: the top frequency (layer term is constant in t).
inline double timestep_feature_lipschitz(const DenoiserConfig& c) {
    return c.multi_layer ? 0.5 * 1e4 : 1e4;
}

inline Matrix timestep_features_batch(const DenoiserConfig& c,
                                      const std::vector<double>& t,
                                      const std::vector<std::size_t>* layers = nullptr) {
    GLP_REQUIRE(!t.empty(), "timestep_features_batch: empty t");
    Matrix feats(t.size(), c.cond_features);
    for (std::size_t i = 0; i < t.size(); ++i) {
        std::optional<std::size_t> layer;
        if (layers) layer = (*layers)[i];
        Matrix row = timestep_features(c, t[i], layer);
        std::copy(row.data.begin(), row.data.end(), feats.row(i));
    }
    return feats;
}

inline DenoiserModel init_denoiser(const DenoiserConfig& config, std::uint64_t seed) {
    config.validate();
    DenoiserModel m;
    m.config = config;
    Rng rng(seed);
    auto scaled_normal = [&](std::size_t r, std::size_t c) {
        return rng.normal_matrix(r, c, 1.0 / std::sqrt(static_cast<double>(r)));
    };
    m.in_proj = scaled_normal(config.d_act, config.width);
    m.time_w1 = scaled_normal(config.cond_features, config.cond_dim);
    m.time_w2 = scaled_normal(config.cond_dim, config.cond_dim);
    for (std::size_t b = 0; b < config.n_blocks; ++b) {
        DenoiserBlock blk;
        blk.norm_gain = Matrix(1, config.width, 1.0);
        blk.w_gate = scaled_normal(config.width, config.expansion);
        blk.w_up = scaled_normal(config.width, config.expansion);
        blk.w_cond = Matrix(config.cond_dim, config.expansion);  // zero: identity modulation
        blk.w_down = scaled_normal(config.expansion, config.width);
        m.blocks.push_back(std::move(blk));
    }
    m.out_norm_gain = Matrix(1, config.width, 1.0);
    // Down-scaled output head (1/width, not 1/sqrt(width)) so the untrained
    // net predicts near-zero velocity and the initial loss sits at the
    // variance of the target, while every parameter still receives gradient.
    m.out_proj = rng.normal_matrix(config.width, config.d_act,
                                   1.0 / static_cast<double>(config.width));
    return m;
}

/// Embedding MLP applied to precomputed sinusoidal features.
inline Matrix cond_embedding(const DenoiserModel& m, const Matrix& feats) {
    Matrix h(feats.rows, m.time_w1.cols);
    gemm(h, feats, false, m.time_w1, false);
    h = silu_forward(h);
    Matrix emb(h.rows, m.time_w2.cols);
    gemm(emb, h, false, m.time_w2, false);
    return emb;
}

inline Matrix timestep_embed(const DenoiserModel& m, double t,
                             std::optional<std::size_t> layer = {}) {
    return cond_embedding(m, timestep_features(m.config, t, layer));
}

/// Velocity prediction u_hat(z_t, t) with per-row timesteps. When `taps` is
/// given, each block's gated inner product h (n x expansion) is appended —
/// the meta-neuron values.
inline Matrix denoise_forward(const DenoiserModel& m, const Matrix& z_t,
                              const std::vector<double>& t,
                              const std::vector<std::size_t>* layers = nullptr,
                              std::vector<Matrix>* taps = nullptr) {
    GLP_REQUIRE(z_t.cols == m.config.d_act, "denoise_forward: activation dim mismatch");
    GLP_REQUIRE(z_t.rows == t.size(), "denoise_forward: t count mismatch");
    GLP_REQUIRE(all_finite(z_t), "denoise_forward: non-finite input");
    const Matrix feats = timestep_features_batch(m.config, t, layers);
    const Matrix emb = cond_embedding(m, feats);

    Matrix x(z_t.rows, m.config.width);
    gemm(x, z_t, false, m.in_proj, false);
    for (const DenoiserBlock& blk : m.blocks) {
        const Matrix xn = rmsnorm_forward(x, blk.norm_gain);
        Matrix gate(x.rows, m.config.expansion);
        gemm(gate, xn, false, blk.w_gate, false);
        Matrix s(x.rows, m.config.expansion);
        gemm(s, emb, false, blk.w_cond, false);
        for (std::size_t i = 0; i < gate.size(); ++i)
            gate.data[i] *= 1.0 + s.data[i];
        Matrix up(x.rows, m.config.expansion);
        gemm(up, xn, false, blk.w_up, false);
        Matrix h = silu_forward(gate);
        for (std::size_t i = 0; i < h.size(); ++i) h.data[i] *= up.data[i];
        Matrix delta(x.rows, m.config.width);
        gemm(delta, h, false, blk.w_down, false);
        for (std::size_t i = 0; i < x.size(); ++i) x.data[i] += delta.data[i];
        if (taps) taps->push_back(h);
    }
    const Matrix xo = rmsnorm_forward(x, m.out_norm_gain);
    Matrix out(z_t.rows, m.config.d_act);
    gemm(out, xo, false, m.out_proj, false);
    return out;
}

/// Fast path for samplers: one shared timestep for the whole batch, so the
/// conditioning embedding is computed once and broadcast. Matches the
/// per-row path bitwise when every row shares t.
inline Matrix denoise_forward_scalar_t(const DenoiserModel& m, const Matrix& z_t,
                                       double t, std::optional<std::size_t> layer = {},
                                       std::vector<Matrix>* taps = nullptr) {
    GLP_REQUIRE(z_t.cols == m.config.d_act, "denoise_forward: activation dim mismatch");
    const Matrix emb = timestep_embed(m, t, layer);  // 1 x cond_dim
    Matrix x(z_t.rows, m.config.width);
    gemm(x, z_t, false, m.in_proj, false);
    for (const DenoiserBlock& blk : m.blocks) {
        const Matrix xn = rmsnorm_forward(x, blk.norm_gain);
        Matrix gate(x.rows, m.config.expansion);
        gemm(gate, xn, false, blk.w_gate, false);
        Matrix s(1, m.config.expansion);
        gemm(s, emb, false, blk.w_cond, false);
        for (std::size_t i = 0; i < gate.rows; ++i) {
            double* gr = gate.row(i);
            for (std::size_t j = 0; j < gate.cols; ++j) gr[j] *= 1.0 + s.data[j];
        }
        Matrix up(x.rows, m.config.expansion);
        gemm(up, xn, false, blk.w_up, false);
        Matrix h = silu_forward(gate);
        for (std::size_t i = 0; i < h.size(); ++i) h.data[i] *= up.data[i];
        Matrix delta(x.rows, m.config.width);
        gemm(delta, h, false, blk.w_down, false);
        for (std::size_t i = 0; i < x.size(); ++i) x.data[i] += delta.data[i];
        if (taps) taps->push_back(h);
    }
    const Matrix xo = rmsnorm_forward(x, m.out_norm_gain);
    Matrix out(z_t.rows, m.config.d_act);
    gemm(out, xo, false, m.out_proj, false);
    return out;
}

inline void save_denoiser(const std::string& path, const DenoiserModel& m) {
    const DenoiserConfig& c = m.config;
    std::vector<std::uint64_t> cfg{c.d_act,      c.width,         c.expansion,
                                   c.n_blocks,   c.multi_layer ? 1ull : 0ull,
                                   c.n_source_layers, c.cond_features, c.cond_dim};
    checkpoint::write(path, checkpoint::ModelKind::Denoiser, cfg, m.params());
}

inline DenoiserModel load_denoiser(const std::string& path) {
    checkpoint::Loaded loaded = checkpoint::read(path, checkpoint::ModelKind::Denoiser);
    if (loaded.config.size() != 8)
        throw FileFormatError(FileFormatError::Kind::BadValue,
                              "denoiser checkpoint: bad config length");
    DenoiserConfig c;
    c.d_act = loaded.config[0];
    c.width = loaded.config[1];
    c.expansion = loaded.config[2];
    c.n_blocks = loaded.config[3];
    c.multi_layer = loaded.config[4] != 0;
    c.n_source_layers = loaded.config[5];
    c.cond_features = loaded.config[6];
    c.cond_dim = loaded.config[7];
    c.validate();
    DenoiserModel m = init_denoiser(c, 0);
    checkpoint::assign_tensors(m.params(), loaded.tensors, "denoiser checkpoint");
    return m;
}

/// Tape handles for every parameter tensor, in params() order.
struct DenoiserVars {
    Tape::Var in_proj, time_w1, time_w2;
    struct BlockVars {
        Tape::Var norm_gain, w_gate, w_up, w_cond, w_down;
    };
    std::vector<BlockVars> blocks;
    Tape::Var out_norm_gain, out_proj;

    std::vector<Tape::Var> flat() const {
        std::vector<Tape::Var> v{in_proj, time_w1, time_w2};
        for (const BlockVars& b : blocks) {
            v.push_back(b.norm_gain);
            v.push_back(b.w_gate);
            v.push_back(b.w_up);
            v.push_back(b.w_cond);
            v.push_back(b.w_down);
        }
        v.push_back(out_norm_gain);
        v.push_back(out_proj);
        return v;
    }
};

inline DenoiserVars denoiser_leaves(Tape& tape, const DenoiserModel& m) {
    DenoiserVars v;
    v.in_proj = tape.leaf(m.in_proj, true);
    v.time_w1 = tape.leaf(m.time_w1, true);
    v.time_w2 = tape.leaf(m.time_w2, true);
    for (const DenoiserBlock& b : m.blocks) {
        DenoiserVars::BlockVars bv;
        bv.norm_gain = tape.leaf(b.norm_gain, true);
        bv.w_gate = tape.leaf(b.w_gate, true);
        bv.w_up = tape.leaf(b.w_up, true);
        bv.w_cond = tape.leaf(b.w_cond, true);
        bv.w_down = tape.leaf(b.w_down, true);
        v.blocks.push_back(bv);
    }
    v.out_norm_gain = tape.leaf(m.out_norm_gain, true);
    v.out_proj = tape.leaf(m.out_proj, true);
    return v;
}

/// Training-path forward on the tape; mirrors denoise_forward op-for-op.
inline Tape::Var denoise_forward_tape(Tape& tape, const DenoiserVars& v,
                                      Tape::Var z_t, Tape::Var feats) {
    Tape::Var h1 = tape.silu(tape.matmul(feats, v.time_w1));
    Tape::Var emb = tape.matmul(h1, v.time_w2);
    Tape::Var x = tape.matmul(z_t, v.in_proj);
    for (const DenoiserVars::BlockVars& b : v.blocks) {
        Tape::Var xn = tape.rmsnorm(x, b.norm_gain);
        Tape::Var gate = tape.matmul(xn, b.w_gate);
        Tape::Var s = tape.matmul(emb, b.w_cond);
        Tape::Var mod = tape.hadamard(gate, tape.add_scalar(s, 1.0));
        Tape::Var h = tape.hadamard(tape.silu(mod), tape.matmul(xn, b.w_up));
        x = tape.add(x, tape.matmul(h, b.w_down));
    }
    Tape::Var xo = tape.rmsnorm(x, v.out_norm_gain);
    return tape.matmul(xo, v.out_proj);
}

}  // namespace glp
