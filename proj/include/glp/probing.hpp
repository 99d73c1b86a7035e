#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "glp/activation_store.hpp"
#include "glp/check.hpp"
#include "glp/denoiser.hpp"
#include "glp/lbfgs.hpp"
#include "glp/matrix.hpp"
#include "glp/metrics.hpp"
#include "glp/rng.hpp"
#include "glp/sae.hpp"
#include "glp/source_sim.hpp"

namespace glp {

// ---------------------------------------------------------------------------
// Binary classification tasks over token sequences.

struct ProbeExample {
    std::vector<int> tokens;
    int label = 0;  // 0 or 1
};

struct ProbeTask {
    std::string name;
    std::vector<ProbeExample> train, val, test;

    void validate() const {
        const std::vector<const std::vector<ProbeExample>*> splits = {&train, &val, &test};
        const char* names[] = {"train", "val", "test"};
        std::set<std::vector<int>> seen;
        for (std::size_t s = 0; s < splits.size(); ++s) {
            GLP_REQUIRE(!splits[s]->empty(),
                        std::string("probe task ") + name + ": empty " + names[s] + " split");
            std::size_t pos = 0;
            for (const ProbeExample& e : *splits[s]) {
                GLP_REQUIRE(e.label == 0 || e.label == 1,
                            std::string("probe task ") + name + ": label must be 0 or 1");
                GLP_REQUIRE(e.tokens.size() >= 2,
                            std::string("probe task ") + name + ": sequence too short");
                GLP_REQUIRE(seen.insert(e.tokens).second,
                            std::string("probe task ") + name + ": duplicate sequence across splits");
                pos += static_cast<std::size_t>(e.label);
            }
            GLP_REQUIRE(pos > 0 && pos < splits[s]->size(),
                        std::string("probe task ") + name + ": " + names[s] +
                            " split needs both classes");
        }
    }
};

// ---------------------------------------------------------------------------
// Feature matrices with per-column provenance.

struct FeatureColumn {
    std::size_t block = 0;
    std::size_t unit = 0;
};

struct FeatureMatrix {
    Matrix values;  // n x F
    std::vector<FeatureColumn> provenance;
};

inline std::size_t meta_neuron_count(const DenoiserConfig& c) {
    return c.n_blocks * c.expansion;
}

/// Meta-neuron features: standardize, mix with seeded noise at timestep t
/// (z_t = (1-t) z0 + t eps), run the denoiser once, and concatenate every
/// block's gated inner activations. At t=0 the noise has zero weight, so the
/// features are a deterministic function of the activations alone.
inline FeatureMatrix extract_meta_neurons(const DenoiserModel& model,
                                          const Matrix& acts_raw, double t,
                                          const Scaler& scaler, std::uint64_t seed,
                                          std::optional<std::size_t> layer = {}) {
    GLP_REQUIRE(t >= 0.0 && t <= 1.0, "extract_meta_neurons: t must be in [0,1]");
    const Matrix z0 = scaler.apply(acts_raw);
    Rng rng = Rng(seed).substream("meta-neurons");
    const Matrix eps = rng.normal_matrix(z0.rows, z0.cols);
    Matrix z_t(z0.rows, z0.cols);
    for (std::size_t i = 0; i < z_t.size(); ++i)
        z_t.data[i] = (1.0 - t) * z0.data[i] + t * eps.data[i];

    std::vector<Matrix> taps;
    denoise_forward_scalar_t(model, z_t, t, layer, &taps);

    FeatureMatrix f;
    const std::size_t expansion = model.config.expansion;
    f.values = Matrix(z0.rows, meta_neuron_count(model.config));
    f.provenance.reserve(f.values.cols);
    for (std::size_t b = 0; b < taps.size(); ++b) {
        for (std::size_t i = 0; i < z0.rows; ++i) {
            const double* src = taps[b].row(i);
            double* dst = f.values.row(i) + b * expansion;
            std::copy(src, src + expansion, dst);
        }
        for (std::size_t u = 0; u < expansion; ++u) f.provenance.push_back({b, u});
    }
    return f;
}

// ---------------------------------------------------------------------------
// Candidate filter: normalized mean difference.

/// Rank columns by |mean(f|y=1) - mean(f|y=0)| / pooled std (floored) and
/// return the k best, ties broken toward the lower index.
inline std::vector<std::size_t> mean_diff_filter(const Matrix& features,
                                                 const std::vector<int>& labels,
                                                 std::size_t k) {
    GLP_REQUIRE(features.rows == labels.size(), "mean_diff_filter: label count mismatch");
    const std::size_t F = features.cols;
    GLP_REQUIRE(k >= 1 && k <= F, "mean_diff_filter: k out of range");
    std::size_t n1 = 0;
    for (int l : labels) n1 += static_cast<std::size_t>(l == 1);
    const std::size_t n0 = features.rows - n1;
    GLP_REQUIRE(n1 >= 2 && n0 >= 2, "mean_diff_filter: need >= 2 examples per class");

    std::vector<double> score(F);
    std::vector<double> m1(F), m0(F), s1(F), s0(F);
    for (std::size_t i = 0; i < features.rows; ++i) {
        const double* r = features.row(i);
        double* m = labels[i] == 1 ? m1.data() : m0.data();
        for (std::size_t j = 0; j < F; ++j) m[j] += r[j];
    }
    for (std::size_t j = 0; j < F; ++j) {
        m1[j] /= static_cast<double>(n1);
        m0[j] /= static_cast<double>(n0);
    }
    for (std::size_t i = 0; i < features.rows; ++i) {
        const double* r = features.row(i);
        double* s = labels[i] == 1 ? s1.data() : s0.data();
        const double* m = labels[i] == 1 ? m1.data() : m0.data();
        for (std::size_t j = 0; j < F; ++j) {
            const double d = r[j] - m[j];
            s[j] += d * d;
        }
    }
    for (std::size_t j = 0; j < F; ++j) {
        const double pooled_var =
            (s1[j] + s0[j]) / static_cast<double>(n1 + n0 - 2);
        score[j] = std::abs(m1[j] - m0[j]) / std::max(std::sqrt(pooled_var), 1e-12);
    }

    std::vector<std::size_t> idx(F);
    for (std::size_t j = 0; j < F; ++j) idx[j] = j;
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return score[a] > score[b];
    });
    idx.resize(k);
    return idx;
}

// ---------------------------------------------------------------------------
// L2-regularized logistic regression via quasi-Newton optimization.

inline const std::vector<double> kProbeL2Grid = {1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0};

struct LogisticFit {
    std::vector<double> w;
    double intercept = 0.0;
    bool converged = true;
};

namespace detail {
inline double softplus(double u) {
    return u > 0.0 ? u + std::log1p(std::exp(-u)) : std::log1p(std::exp(u));
}
inline double sigmoid_stable(double z) {
    return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}
}  // namespace detail

/// Minimize mean log-loss + 0.5*l2*|w|^2 (intercept unpenalized) from a zero
/// start: max 1000 iterations, gradient-norm tolerance 1e-9. When the
/// optimizer stalls first, the best iterate is kept and flagged.
inline LogisticFit fit_logistic(const Matrix& x, const std::vector<int>& y, double l2) {
    GLP_REQUIRE(x.rows == y.size(), "fit_logistic: label count mismatch");
    GLP_REQUIRE(x.rows >= 1 && x.cols >= 1, "fit_logistic: empty design");
    const std::size_t n = x.rows, F = x.cols;
    const double inv_n = 1.0 / static_cast<double>(n);

    ObjectiveFn obj = [&](const std::vector<double>& theta, std::vector<double>& grad) {
        std::fill(grad.begin(), grad.end(), 0.0);
        double loss = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double* r = x.row(i);
            double z = theta[F];
            for (std::size_t j = 0; j < F; ++j) z += theta[j] * r[j];
            const double s = y[i] == 1 ? 1.0 : -1.0;
            loss += detail::softplus(-s * z);
            const double dz = (detail::sigmoid_stable(z) - static_cast<double>(y[i])) * inv_n;
            for (std::size_t j = 0; j < F; ++j) grad[j] += dz * r[j];
            grad[F] += dz;
        }
        loss *= inv_n;
        for (std::size_t j = 0; j < F; ++j) {
            loss += 0.5 * l2 * theta[j] * theta[j];
            grad[j] += l2 * theta[j];
        }
        return loss;
    };

    LbfgsResult res = lbfgs_minimize(obj, std::vector<double>(F + 1, 0.0));
    LogisticFit fit;
    fit.w.assign(res.x.begin(), res.x.begin() + static_cast<std::ptrdiff_t>(F));
    fit.intercept = res.x[F];
    fit.converged = res.converged;
    return fit;
}

/// Linear decision scores w.x + b; monotone in the fitted probability, so AUC
/// is identical but free of sigmoid saturation ties.
inline std::vector<double> logistic_scores(const LogisticFit& fit, const Matrix& x) {
    GLP_REQUIRE(x.cols == fit.w.size(), "logistic_scores: dimension mismatch");
    std::vector<double> z(x.rows, fit.intercept);
    for (std::size_t i = 0; i < x.rows; ++i) {
        const double* r = x.row(i);
        for (std::size_t j = 0; j < x.cols; ++j) z[i] += fit.w[j] * r[j];
    }
    return z;
}

// ---------------------------------------------------------------------------
// Stratified cross-validation.

/// Deal each class round-robin into n_folds after a seeded shuffle, so every
/// fold keeps both classes (given enough examples per class).
inline std::vector<std::vector<std::size_t>> stratified_folds(
    const std::vector<int>& labels, std::size_t n_folds, std::uint64_t seed) {
    GLP_REQUIRE(n_folds >= 2, "stratified_folds: need at least 2 folds");
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < labels.size(); ++i)
        (labels[i] == 1 ? pos : neg).push_back(i);
    GLP_REQUIRE(pos.size() >= n_folds && neg.size() >= n_folds,
                "stratified_folds: need n_folds examples per class");
    Rng rng = Rng(seed).substream("cv-folds");
    rng.shuffle(pos);
    rng.shuffle(neg);
    std::vector<std::vector<std::size_t>> folds(n_folds);
    for (std::size_t i = 0; i < pos.size(); ++i) folds[i % n_folds].push_back(pos[i]);
    for (std::size_t i = 0; i < neg.size(); ++i) folds[i % n_folds].push_back(neg[i]);
    return folds;
}

namespace detail {

inline Matrix take_rows(const Matrix& x, const std::vector<std::size_t>& rows) {
    Matrix out(rows.size(), x.cols);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const double* src = x.row(rows[i]);
        std::copy(src, src + x.cols, out.row(i));
    }
    return out;
}

inline std::vector<int> take_labels(const std::vector<int>& y,
                                    const std::vector<std::size_t>& rows) {
    std::vector<int> out(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) out[i] = y[rows[i]];
    return out;
}

}  // namespace detail

/// Mean held-fold AUC of logistic fits at one regularization strength.
inline double cv_mean_auc(const Matrix& x, const std::vector<int>& y, double l2,
                          const std::vector<std::vector<std::size_t>>& folds) {
    double acc = 0.0;
    for (std::size_t f = 0; f < folds.size(); ++f) {
        std::vector<std::size_t> train_rows;
        for (std::size_t g = 0; g < folds.size(); ++g)
            if (g != f) train_rows.insert(train_rows.end(), folds[g].begin(), folds[g].end());
        const LogisticFit fit =
            fit_logistic(detail::take_rows(x, train_rows), detail::take_labels(y, train_rows), l2);
        const Matrix held = detail::take_rows(x, folds[f]);
        acc += roc_auc(logistic_scores(fit, held), detail::take_labels(y, folds[f]));
    }
    return acc / static_cast<double>(folds.size());
}

struct SelectedL2 {
    double l2 = 0.0;
    double cv_auc = 0.0;
};

/// 5-fold stratified CV over the fixed grid; ties go to the smaller strength.
inline SelectedL2 select_l2(const Matrix& x, const std::vector<int>& y,
                            std::uint64_t fold_seed) {
    const auto folds = stratified_folds(y, 5, fold_seed);
    SelectedL2 best;
    best.cv_auc = -1.0;
    for (double l2 : kProbeL2Grid) {
        const double auc = cv_mean_auc(x, y, l2, folds);
        if (auc > best.cv_auc) {
            best.l2 = l2;
            best.cv_auc = auc;
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// 1-D probes.

struct OneDProbe {
    std::size_t feature = 0;  // column index in the feature matrix
    double slope = 0.0;
    double intercept = 0.0;
    double l2 = 0.0;
    double val_auc = 0.0;
    double test_auc = 0.0;
    bool converged = true;
};

inline Matrix column_matrix(const std::vector<double>& col) {
    Matrix x(col.size(), 1);
    x.data = col;
    return x;
}

/// Tune L2 by stratified 5-fold CV on the train split, refit on all of it,
/// and score the validation split. The test AUC stays unset here; only the
/// pipeline's final scorer fills it.
inline OneDProbe fit_1d_probe(const std::vector<double>& x_train,
                              const std::vector<int>& y_train,
                              const std::vector<double>& x_val,
                              const std::vector<int>& y_val, std::uint64_t fold_seed) {
    std::size_t n1 = 0;
    for (int l : y_train) n1 += static_cast<std::size_t>(l == 1);
    GLP_REQUIRE(n1 >= 10 && y_train.size() - n1 >= 10,
                "fit_1d_probe: need >= 10 train examples per class");

    const Matrix xt = column_matrix(x_train);
    const SelectedL2 sel = select_l2(xt, y_train, fold_seed);
    const LogisticFit fit = fit_logistic(xt, y_train, sel.l2);

    OneDProbe probe;
    probe.slope = fit.w[0];
    probe.intercept = fit.intercept;
    probe.l2 = sel.l2;
    probe.converged = fit.converged;
    std::vector<double> val_scores(x_val.size());
    for (std::size_t i = 0; i < x_val.size(); ++i)
        val_scores[i] = probe.slope * x_val[i] + probe.intercept;
    probe.val_auc = roc_auc(val_scores, y_val);
    return probe;
}

// ---------------------------------------------------------------------------
// Task pipeline.

enum class ProbeMode { OneD, Dense };

inline const char* probe_mode_name(ProbeMode m) {
    return m == ProbeMode::OneD ? "1d" : "dense";
}

struct ProbeResult {
    std::string task;
    std::string encoder;
    ProbeMode mode = ProbeMode::OneD;
    double t = 0.0;
    std::size_t k = 0;  // filter width actually used; 0 in dense mode
    double chosen_l2 = 0.0;
    double val_auc = 0.0;
    double test_auc = 0.0;
    FeatureColumn feature;  // provenance of the selected 1-D feature
    bool converged = true;
};

/// Encoded splits: one feature row per example, labels alongside.
struct SplitFeatures {
    Matrix train, val, test;
    std::vector<int> y_train, y_val, y_test;
    std::vector<FeatureColumn> provenance;
};

inline std::vector<double> matrix_column(const Matrix& x, std::size_t j) {
    std::vector<double> col(x.rows);
    for (std::size_t i = 0; i < x.rows; ++i) col[i] = x(i, j);
    return col;
}

/// Two-stage protocol: filter candidates on train, fit a 1-D probe per
/// candidate, select by validation AUC (ties to the earlier candidate), then
/// score the selected probe once on the test split — the only step that
/// reads test data.
inline ProbeResult probe_features_1d(const SplitFeatures& f, std::size_t k,
                                     std::uint64_t seed) {
    const std::size_t F = f.train.cols;
    const std::size_t k_used = std::min(k, F);
    const std::vector<std::size_t> candidates =
        mean_diff_filter(f.train, f.y_train, k_used);

    OneDProbe best;
    best.val_auc = -1.0;
    for (std::size_t c : candidates) {
        OneDProbe probe =
            fit_1d_probe(matrix_column(f.train, c), f.y_train,
                         matrix_column(f.val, c), f.y_val, seed);
        probe.feature = c;
        if (probe.val_auc > best.val_auc) best = probe;
    }

    ProbeResult res;
    res.mode = ProbeMode::OneD;
    res.k = k_used;
    res.chosen_l2 = best.l2;
    res.val_auc = best.val_auc;
    res.converged = best.converged;
    res.feature = f.provenance.empty() ? FeatureColumn{0, best.feature}
                                       : f.provenance[best.feature];

    const std::vector<double> x_test = matrix_column(f.test, best.feature);
    std::vector<double> test_scores(x_test.size());
    for (std::size_t i = 0; i < x_test.size(); ++i)
        test_scores[i] = best.slope * x_test[i] + best.intercept;
    res.test_auc = roc_auc(test_scores, f.y_test);
    return res;
}

/// Dense mode: one multivariate probe on all features, same CV protocol.
inline ProbeResult probe_features_dense(const SplitFeatures& f, std::uint64_t seed) {
    std::size_t n1 = 0;
    for (int l : f.y_train) n1 += static_cast<std::size_t>(l == 1);
    GLP_REQUIRE(n1 >= 10 && f.y_train.size() - n1 >= 10,
                "probe_features_dense: need >= 10 train examples per class");

    const SelectedL2 sel = select_l2(f.train, f.y_train, seed);
    const LogisticFit fit = fit_logistic(f.train, f.y_train, sel.l2);

    ProbeResult res;
    res.mode = ProbeMode::Dense;
    res.k = 0;
    res.chosen_l2 = sel.l2;
    res.converged = fit.converged;
    res.val_auc = roc_auc(logistic_scores(fit, f.val), f.y_val);
    res.test_auc = roc_auc(logistic_scores(fit, f.test), f.y_test);
    return res;
}

// ---------------------------------------------------------------------------
// Sequence encoders: every probe reads the model state at the last
// prediction position of the sequence.

using SequenceEncoder = std::function<FeatureMatrix(const std::vector<ProbeExample>&)>;

struct EncoderInfo {
    std::string name;
    double t = 0.0;  // meta-neuron timestep; 0 for encoders without one
    SequenceEncoder encode;
};

/// Hook activations at each sequence's final prediction position, stacked.
inline Matrix last_hook_rows(const SourceLM& lm, const std::vector<ProbeExample>& xs) {
    GLP_REQUIRE(!xs.empty(), "last_hook_rows: no examples");
    Matrix acts(xs.size(), lm.config.d_act);
    for (std::size_t i = 0; i < xs.size(); ++i) {
        GLP_REQUIRE(xs[i].tokens.size() >= 2, "last_hook_rows: sequence too short");
        const SourceForwardResult fr = source_forward(lm, xs[i].tokens);
        const double* last = fr.hook.row(fr.hook.rows - 1);
        std::copy(last, last + lm.config.d_act, acts.row(i));
    }
    return acts;
}

inline std::vector<FeatureColumn> flat_provenance(std::size_t n) {
    std::vector<FeatureColumn> p(n);
    for (std::size_t j = 0; j < n; ++j) p[j] = {0, j};
    return p;
}

inline EncoderInfo encoder_raw_hook(const SourceLM& lm) {
    EncoderInfo e;
    e.name = "raw-hook";
    e.encode = [&lm](const std::vector<ProbeExample>& xs) {
        FeatureMatrix f;
        f.values = last_hook_rows(lm, xs);
        f.provenance = flat_provenance(f.values.cols);
        return f;
    };
    return e;
}

inline EncoderInfo encoder_raw_source_mlp(const SourceLM& lm) {
    EncoderInfo e;
    e.name = "raw-source-mlp";
    e.encode = [&lm](const std::vector<ProbeExample>& xs) {
        FeatureMatrix f;
        f.values = residual_from_hook(lm, last_hook_rows(lm, xs));
        f.provenance = flat_provenance(f.values.cols);
        return f;
    };
    return e;
}

inline EncoderInfo encoder_sae_latents(const SourceLM& lm, const SaeModel& sae,
                                       const Scaler& scaler) {
    EncoderInfo e;
    e.name = "sae-latents";
    e.encode = [&lm, &sae, &scaler](const std::vector<ProbeExample>& xs) {
        FeatureMatrix f;
        f.values = sae_latents(sae, scaler.apply(last_hook_rows(lm, xs)));
        f.provenance = flat_provenance(f.values.cols);
        return f;
    };
    return e;
}

inline EncoderInfo encoder_glp_meta_neurons(const SourceLM& lm, const DenoiserModel& model,
                                            const Scaler& scaler, double t,
                                            std::uint64_t seed,
                                            std::optional<std::size_t> layer = {}) {
    EncoderInfo e;
    e.name = "glp-meta-neurons";
    e.t = t;
    e.encode = [&lm, &model, &scaler, t, seed, layer](const std::vector<ProbeExample>& xs) {
        return extract_meta_neurons(model, last_hook_rows(lm, xs), t, scaler, seed, layer);
    };
    return e;
}

/// Full pipeline: encode all three splits, run the requested mode, and stamp
/// the bookkeeping columns.
inline ProbeResult probe_task_pipeline(const ProbeTask& task, const EncoderInfo& enc,
                                       std::size_t k, ProbeMode mode,
                                       std::uint64_t seed) {
    task.validate();
    auto labels_of = [](const std::vector<ProbeExample>& xs) {
        std::vector<int> y(xs.size());
        for (std::size_t i = 0; i < xs.size(); ++i) y[i] = xs[i].label;
        return y;
    };
    FeatureMatrix train = enc.encode(task.train);
    FeatureMatrix val = enc.encode(task.val);
    FeatureMatrix test = enc.encode(task.test);
    GLP_REQUIRE(train.values.cols == val.values.cols &&
                    train.values.cols == test.values.cols,
                "probe_task_pipeline: encoder feature width differs across splits");

    SplitFeatures f;
    f.train = std::move(train.values);
    f.val = std::move(val.values);
    f.test = std::move(test.values);
    f.y_train = labels_of(task.train);
    f.y_val = labels_of(task.val);
    f.y_test = labels_of(task.test);
    f.provenance = std::move(train.provenance);

    ProbeResult res = mode == ProbeMode::OneD ? probe_features_1d(f, k, seed)
                                              : probe_features_dense(f, seed);
    res.task = task.name;
    res.encoder = enc.name;
    res.t = enc.t;
    return res;
}

// ---------------------------------------------------------------------------
// Max-activating example mining.

/// Per-document position-level features: tokens -> P x F.
using DocumentEncoder = std::function<Matrix(const std::vector<int>&)>;

struct ActivationSite {
    std::size_t doc = 0;
    std::size_t position = 0;
    double value = 0.0;
};

/// Exhaustive scan for the top_n sites with the largest feature value;
/// ties break lexicographically by (doc, position).
inline std::vector<ActivationSite> max_activating_examples(
    const std::vector<Document>& corpus, const DocumentEncoder& enc,
    std::size_t column, std::size_t top_n) {
    std::vector<ActivationSite> sites;
    for (std::size_t d = 0; d < corpus.size(); ++d) {
        const Matrix feats = enc(corpus[d].tokens);
        GLP_REQUIRE(column < feats.cols, "max_activating_examples: column out of range");
        for (std::size_t p = 0; p < feats.rows; ++p)
            sites.push_back({d, p, feats(p, column)});
    }
    std::sort(sites.begin(), sites.end(), [](const ActivationSite& a, const ActivationSite& b) {
        if (a.value != b.value) return a.value > b.value;
        if (a.doc != b.doc) return a.doc < b.doc;
        return a.position < b.position;
    });
    if (sites.size() > top_n) sites.resize(top_n);
    return sites;
}

// ---------------------------------------------------------------------------
// Synthetic task suite: concept labels with known ground truth.

struct TaskSuiteConfig {
    std::size_t n_train = 256;
    std::size_t n_val = 128;
    std::size_t n_test = 128;
    std::size_t doc_len = 64;
    std::size_t context_k = 8;  // window of the source model under probe
    std::uint64_t seed = 0;
};

namespace detail {

// The final prediction position's context window covers positions
// [L-1-k, L-2]: the window that produced the last hook row.
inline std::size_t window_begin(const TaskSuiteConfig& cfg) {
    return cfg.doc_len - 1 - cfg.context_k;
}
inline std::size_t window_end(const TaskSuiteConfig& cfg) { return cfg.doc_len - 2; }

inline void scrub_token(std::vector<int>& tokens, int v, std::size_t from,
                        std::size_t to, const GrammarSpec& spec) {
    for (std::size_t p = from; p <= to; ++p)
        if (tokens[p] == v) tokens[p] = (v + 1) % static_cast<int>(spec.vocab_size);
}

}  // namespace detail

/// Twelve binary tasks over grammar documents. Labels cover the Markov
/// regime, planted token and bigram motifs inside the final context window,
/// the final context token's half, motif position parity, recency of a
/// regime switch, a motif planted strictly outside the window (undecodable
/// from the final state), and a random-label control.
inline std::vector<ProbeTask> make_task_suite(const GrammarSpec& spec,
                                              const TaskSuiteConfig& cfg) {
    spec.validate();
    GLP_REQUIRE(cfg.doc_len >= 2 * cfg.context_k + 8,
                "make_task_suite: doc_len too short for the window tasks");
    GLP_REQUIRE(cfg.n_train >= 40 && cfg.n_val >= 8 && cfg.n_test >= 8,
                "make_task_suite: splits too small");
    const std::size_t wb = detail::window_begin(cfg);
    const std::size_t we = detail::window_end(cfg);
    const int half = static_cast<int>(spec.vocab_size / 2);

    // label-conditional example builders; rng is the task+split stream
    using Builder = std::function<std::vector<int>(int label, Rng& rng)>;

    auto pos_doc = [&](Rng& rng) { return sample_regime_doc(spec, true, cfg.doc_len, rng); };

    auto motif_task = [&](int v) {
        return Builder([&, v](int label, Rng& rng) {
            std::vector<int> t = pos_doc(rng);
            detail::scrub_token(t, v, wb, we, spec);
            if (label == 1) t[we - rng.below(cfg.context_k)] = v;
            return t;
        });
    };
    auto bigram_task = [&](int v, int w) {
        return Builder([&, v, w](int label, Rng& rng) {
            std::vector<int> t = pos_doc(rng);
            detail::scrub_token(t, v, wb, we, spec);
            if (label == 1) {
                const std::size_t start = wb + rng.below(cfg.context_k - 1);
                t[start] = v;
                t[start + 1] = w;
            }
            return t;
        });
    };

    std::vector<std::pair<std::string, Builder>> specs;
    specs.emplace_back("regime", Builder([&](int label, Rng& rng) {
        return sample_regime_doc(spec, label == 1, cfg.doc_len, rng);
    }));
    specs.emplace_back("motif-token-2", motif_task(2));
    specs.emplace_back("motif-token-7", motif_task(7));
    specs.emplace_back("motif-token-11", motif_task(11));
    specs.emplace_back("motif-token-19", motif_task(19));
    specs.emplace_back("motif-bigram-13-4", bigram_task(13, 4));
    specs.emplace_back("motif-bigram-21-9", bigram_task(21, 9));
    specs.emplace_back("last-token-half", Builder([&](int label, Rng& rng) {
        std::vector<int> t = pos_doc(rng);
        t[we] = label == 1 ? half + static_cast<int>(rng.below(half))
                           : static_cast<int>(rng.below(half));
        return t;
    }));
    specs.emplace_back("motif-position-parity", Builder([&](int label, Rng& rng) {
        std::vector<int> t = pos_doc(rng);
        detail::scrub_token(t, 23, wb, we, spec);
        const std::size_t parity = label == 1 ? 1 : 0;
        const std::size_t offset = 2 * rng.below(cfg.context_k / 2) + parity;
        t[we - offset] = 23;
        return t;
    }));
    specs.emplace_back("recent-regime", Builder([&](int label, Rng& rng) {
        const std::size_t split_at = cfg.doc_len / 2;
        std::vector<int> head =
            sample_regime_doc(spec, label != 1, split_at, rng);
        std::vector<int> tail =
            sample_regime_doc(spec, label == 1, cfg.doc_len - split_at, rng);
        head.insert(head.end(), tail.begin(), tail.end());
        return head;
    }));
    specs.emplace_back("motif-outside-window", Builder([&](int label, Rng& rng) {
        std::vector<int> t = pos_doc(rng);
        const int v = 29;
        detail::scrub_token(t, v, wb, we, spec);
        if (label == 1) {
            t[1 + rng.below(wb - 1)] = v;
        } else {
            detail::scrub_token(t, v, 0, cfg.doc_len - 1, spec);
        }
        return t;
    }));
    specs.emplace_back("random-control", Builder([&](int, Rng& rng) {
        return pos_doc(rng);
    }));

    std::vector<ProbeTask> tasks;
    Rng suite_rng(cfg.seed);
    for (auto& [name, build] : specs) {
        ProbeTask task;
        task.name = name;
        Rng task_rng = suite_rng.substream(name);
        auto fill = [&](std::vector<ProbeExample>& split, const char* split_name,
                        std::size_t n) {
            Rng rng = task_rng.substream(split_name);
            split.reserve(n);
            for (std::size_t i = 0; i < n; ++i) {
                ProbeExample e;
                e.label = static_cast<int>(i % 2);
                e.tokens = build(e.label, rng);
                split.push_back(std::move(e));
            }
        };
        fill(task.train, "train", cfg.n_train);
        fill(task.val, "val", cfg.n_val);
        fill(task.test, "test", cfg.n_test);
        task.validate();
        tasks.push_back(std::move(task));
    }
    return tasks;
}

// ---------------------------------------------------------------------------
// Report rows.

inline void write_probe_csv(const std::string& path,
                            const std::vector<ProbeResult>& rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "task,encoder,mode,t,k,chosen_l2,val_auc,test_auc,feature_block,feature_unit\n";
    char buf[256];
    for (const ProbeResult& r : rows) {
        std::snprintf(buf, sizeof buf, "%s,%s,%s,%.17g,%zu,%.17g,%.17g,%.17g,%zu,%zu",
                      r.task.c_str(), r.encoder.c_str(), probe_mode_name(r.mode), r.t,
                      r.k, r.chosen_l2, r.val_auc, r.test_auc, r.feature.block,
                      r.feature.unit);
        out << buf << '\n';
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace glp
