#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "glp/checkpoint.hpp"
#include "glp/matrix.hpp"
#include "glp/optim.hpp"
#include "glp/rng.hpp"
#include "glp/tape.hpp"

namespace glp {

// ---------------------------------------------------------------------------
// Two-regime first-order Markov token grammar. Documents are drawn from one
// of two transition matrices; the label is the regime.

struct GrammarSpec {
    std::size_t vocab_size = 32;
    Matrix p_pos;     // vocab x vocab, row-stochastic
    Matrix p_neg;     // vocab x vocab, row-stochastic
    Matrix init_pos;  // 1 x vocab
    Matrix init_neg;  // 1 x vocab
    double pos_prior = 0.5;

    void validate() const {
        GLP_REQUIRE(vocab_size >= 2, "GrammarSpec: vocab too small");
        GLP_REQUIRE(pos_prior > 0.0 && pos_prior < 1.0,
                    "GrammarSpec: prior must be in (0,1)");
        for (const Matrix* p : {&p_pos, &p_neg}) {
            GLP_REQUIRE(p->rows == vocab_size && p->cols == vocab_size,
                        "GrammarSpec: transition shape mismatch");
            for (std::size_t i = 0; i < vocab_size; ++i) {
                double row_sum = 0.0;
                for (std::size_t j = 0; j < vocab_size; ++j) {
                    GLP_REQUIRE((*p)(i, j) >= 0.0, "GrammarSpec: negative probability");
                    row_sum += (*p)(i, j);
                }
                GLP_REQUIRE(std::abs(row_sum - 1.0) <= 1e-12,
                            "GrammarSpec: row not stochastic");
            }
        }
        for (const Matrix* p : {&init_pos, &init_neg}) {
            GLP_REQUIRE(p->rows == 1 && p->cols == vocab_size,
                        "GrammarSpec: initial distribution shape mismatch");
            double s = 0.0;
            for (double v : p->data) {
                GLP_REQUIRE(v >= 0.0, "GrammarSpec: negative probability");
                s += v;
            }
            GLP_REQUIRE(std::abs(s - 1.0) <= 1e-12,
                        "GrammarSpec: initial distribution not normalized");
        }
    }
};

/// Default grammar: each regime concentrates 0.92 of its mass on one half of
/// the vocabulary (0.62 spread over the group, 0.30 on a within-group
/// successor token) over a 0.08 uniform floor, so no transition has zero
/// probability and the row-wise total-variation distance between regimes is
/// about 0.9. Both regimes share a uniform initial distribution: evidence
/// about the label comes from transitions only.
inline GrammarSpec default_grammar(std::size_t vocab = 32) {
    GLP_REQUIRE(vocab >= 4 && vocab % 2 == 0,
                "default_grammar: vocab must be even and >= 4");
    GrammarSpec g;
    g.vocab_size = vocab;
    const std::size_t half = vocab / 2;
    auto build = [&](std::size_t group_base) {
        Matrix p(vocab, vocab, 0.08 / static_cast<double>(vocab));
        for (std::size_t s = 0; s < vocab; ++s) {
            for (std::size_t j = 0; j < half; ++j)
                p(s, group_base + j) += 0.62 / static_cast<double>(half);
            p(s, group_base + (3 * s + 5) % half) += 0.30;
            double row_sum = 0.0;
            for (std::size_t j = 0; j < vocab; ++j) row_sum += p(s, j);
            for (std::size_t j = 0; j < vocab; ++j) p(s, j) /= row_sum;
        }
        return p;
    };
    g.p_pos = build(0);
    g.p_neg = build(half);
    g.init_pos = Matrix(1, vocab, 1.0 / static_cast<double>(vocab));
    g.init_neg = g.init_pos;
    g.validate();
    return g;
}

struct Document {
    int label = 1;  // +1 or -1
    std::vector<int> tokens;
};

/// One token walk through a single regime's chain, drawn with the caller's
/// rng (the spec is assumed validated).
inline std::vector<int> sample_regime_doc(const GrammarSpec& spec, bool positive,
                                          std::size_t doc_len, Rng& rng) {
    GLP_REQUIRE(doc_len >= 1, "sample_regime_doc: doc_len must be >= 1");
    auto draw = [&](const double* dist) {
        double u = rng.uniform();
        for (std::size_t j = 0; j + 1 < spec.vocab_size; ++j) {
            u -= dist[j];
            if (u < 0.0) return static_cast<int>(j);
        }
        return static_cast<int>(spec.vocab_size - 1);
    };
    const Matrix& p = positive ? spec.p_pos : spec.p_neg;
    const Matrix& init = positive ? spec.init_pos : spec.init_neg;
    std::vector<int> tokens(doc_len);
    tokens[0] = draw(init.data.data());
    for (std::size_t pos = 1; pos < doc_len; ++pos)
        tokens[pos] = draw(p.row(tokens[pos - 1]));
    return tokens;
}

inline std::vector<Document> generate_corpus(const GrammarSpec& spec, std::size_t n_docs,
                                             std::size_t doc_len, std::uint64_t seed) {
    spec.validate();
    GLP_REQUIRE(doc_len >= 2, "generate_corpus: doc_len must be >= 2");
    Rng rng = Rng(seed).substream("corpus");
    std::vector<Document> docs;
    docs.reserve(n_docs);
    for (std::size_t i = 0; i < n_docs; ++i) {
        Document doc;
        doc.label = rng.uniform() < spec.pos_prior ? 1 : -1;
        doc.tokens = sample_regime_doc(spec, doc.label > 0, doc_len, rng);
        docs.push_back(std::move(doc));
    }
    return docs;
}

/// One document per line: `label<TAB>id id id ...` with label + or -.
inline void write_corpus(const std::string& path, const std::vector<Document>& docs) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    for (const Document& d : docs) {
        out << (d.label > 0 ? '+' : '-') << '\t';
        for (std::size_t i = 0; i < d.tokens.size(); ++i) {
            if (i) out << ' ';
            out << d.tokens[i];
        }
        out << '\n';
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

inline std::vector<Document> read_corpus(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open for reading: " + path);
    std::vector<Document> docs;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        GLP_REQUIRE(line.size() >= 2 && (line[0] == '+' || line[0] == '-') &&
                        line[1] == '\t',
                    "corpus line " + std::to_string(line_no) + ": bad label prefix");
        Document d;
        d.label = line[0] == '+' ? 1 : -1;
        std::istringstream ss(line.substr(2));
        int tok;
        while (ss >> tok) d.tokens.push_back(tok);
        GLP_REQUIRE(ss.eof(), "corpus line " + std::to_string(line_no) + ": bad token");
        GLP_REQUIRE(!d.tokens.empty(),
                    "corpus line " + std::to_string(line_no) + ": no tokens");
        docs.push_back(std::move(d));
    }
    return docs;
}

/// Entropy rate of one chain: sum_s mu_s * H(P[s,:]) with mu the stationary
/// distribution found by power iteration.
inline double chain_entropy_rate(const Matrix& p) {
    GLP_REQUIRE(p.rows == p.cols && p.rows >= 1, "chain_entropy_rate: square matrix");
    const std::size_t v = p.rows;
    Matrix mu(1, v, 1.0 / static_cast<double>(v));
    for (int iter = 0; iter < 100000; ++iter) {
        Matrix next(1, v);
        gemm(next, mu, false, p, false);
        const double delta = max_abs_diff(next, mu);
        mu = std::move(next);
        if (delta < 1e-15) break;
    }
    double h = 0.0;
    for (std::size_t s = 0; s < v; ++s)
        for (std::size_t j = 0; j < v; ++j) {
            const double pr = p(s, j);
            if (pr > 0.0) h -= mu.data[s] * pr * std::log(pr);
        }
    return h;
}

/// Prior-weighted entropy rate of the two-regime mixture: the NLL floor for
/// a predictor that has identified the regime.
inline double entropy_rate(const GrammarSpec& spec) {
    return spec.pos_prior * chain_entropy_rate(spec.p_pos) +
           (1.0 - spec.pos_prior) * chain_entropy_rate(spec.p_neg);
}

// ---------------------------------------------------------------------------
// Fixed-context MLP language model with a designated hook layer.

struct SourceLMConfig {
    std::size_t vocab_size = 32;
    std::size_t context_k = 8;
    std::size_t embed_dim = 16;
    std::size_t d_act = 32;      // hook dimension, shared with the flow model
    std::size_t inner_dim = 64;  // SwiGLU inner width

    void validate() const {
        GLP_REQUIRE(vocab_size >= 2 && context_k >= 1 && embed_dim >= 1 &&
                        d_act >= 1 && inner_dim >= 1,
                    "SourceLMConfig: all dims must be >= 1");
    }
};

/// Token window -> embedding concat -> projection (THE hook activation) ->
/// residual SwiGLU block -> output head. The embedding table carries one
/// extra learned row: the padding symbol filling short left contexts.
struct SourceLM {
    SourceLMConfig config;
    Matrix embed;   // (vocab+1) x e; last row is the pad symbol
    Matrix proj;    // (k*e) x d_act
    Matrix w_gate;  // d_act x inner
    Matrix w_up;    // d_act x inner
    Matrix w_down;  // inner x d_act
    Matrix head;    // d_act x vocab

    int pad_id() const { return static_cast<int>(config.vocab_size); }

    std::vector<Matrix*> params() {
        return {&embed, &proj, &w_gate, &w_up, &w_down, &head};
    }
    std::vector<const Matrix*> params() const {
        auto mut = const_cast<SourceLM*>(this)->params();
        return {mut.begin(), mut.end()};
    }
};

inline std::uint64_t source_lm_param_count(const SourceLMConfig& c) {
    return (c.vocab_size + 1) * c.embed_dim + c.context_k * c.embed_dim * c.d_act +
           2 * c.d_act * c.inner_dim + c.inner_dim * c.d_act + c.d_act * c.vocab_size;
}

inline SourceLM init_source_lm(const SourceLMConfig& config, std::uint64_t seed) {
    config.validate();
    SourceLM m;
    m.config = config;
    Rng rng(seed);
    auto scaled = [&](std::size_t r, std::size_t c) {
        return rng.normal_matrix(r, c, 1.0 / std::sqrt(static_cast<double>(r)));
    };
    m.embed = rng.normal_matrix(config.vocab_size + 1, config.embed_dim, 1.0);
    m.proj = scaled(config.context_k * config.embed_dim, config.d_act);
    m.w_gate = scaled(config.d_act, config.inner_dim);
    m.w_up = scaled(config.d_act, config.inner_dim);
    m.w_down = scaled(config.inner_dim, config.d_act);
    // Down-scaled head: near-uniform logits at init, so NLL starts at about
    // ln(vocab) instead of inheriting the block's output variance.
    m.head = rng.normal_matrix(config.d_act, config.vocab_size,
                               1.0 / static_cast<double>(config.d_act));
    return m;
}

inline void save_source_lm(const std::string& path, const SourceLM& m) {
    const SourceLMConfig& c = m.config;
    checkpoint::write(path, checkpoint::ModelKind::SourceLm,
                      {c.vocab_size, c.context_k, c.embed_dim, c.d_act, c.inner_dim},
                      m.params());
}

inline SourceLM load_source_lm(const std::string& path) {
    checkpoint::Loaded loaded = checkpoint::read(path, checkpoint::ModelKind::SourceLm);
    if (loaded.config.size() != 5)
        throw FileFormatError(FileFormatError::Kind::BadValue,
                              "source-lm checkpoint: bad config length");
    SourceLMConfig c;
    c.vocab_size = loaded.config[0];
    c.context_k = loaded.config[1];
    c.embed_dim = loaded.config[2];
    c.d_act = loaded.config[3];
    c.inner_dim = loaded.config[4];
    c.validate();
    SourceLM m = init_source_lm(c, 0);
    checkpoint::assign_tensors(m.params(), loaded.tensors, "source-lm checkpoint");
    return m;
}

/// Left-padded window of the context_k tokens ending at position `pos`.
inline std::vector<int> context_window(const SourceLM& m, const std::vector<int>& tokens,
                                       std::size_t pos) {
    GLP_REQUIRE(pos < tokens.size(), "context_window: position out of range");
    const std::size_t k = m.config.context_k;
    std::vector<int> w(k, m.pad_id());
    for (std::size_t j = 0; j < k; ++j) {
        const auto src = static_cast<std::ptrdiff_t>(pos) -
                         static_cast<std::ptrdiff_t>(k - 1 - j);
        if (src >= 0) w[j] = tokens[static_cast<std::size_t>(src)];
    }
    return w;
}

/// Windows for the L-1 prediction positions: row p predicts tokens[p+1]
/// from the window ending at position p.
inline std::vector<std::vector<int>> prediction_windows(const SourceLM& m,
                                                        const std::vector<int>& tokens) {
    GLP_REQUIRE(tokens.size() >= 2, "prediction_windows: need at least 2 tokens");
    std::vector<std::vector<int>> windows;
    windows.reserve(tokens.size() - 1);
    for (std::size_t p = 0; p + 1 < tokens.size(); ++p)
        windows.push_back(context_window(m, tokens, p));
    return windows;
}

inline Matrix gather_windows(const SourceLM& m,
                             const std::vector<std::vector<int>>& windows) {
    const std::size_t k = m.config.context_k, e = m.config.embed_dim;
    Matrix x(windows.size(), k * e);
    for (std::size_t i = 0; i < windows.size(); ++i) {
        GLP_REQUIRE(windows[i].size() == k, "gather_windows: ragged window");
        for (std::size_t j = 0; j < k; ++j) {
            const int tok = windows[i][j];
            GLP_REQUIRE(tok >= 0 && tok <= m.pad_id(),
                        "gather_windows: token id out of range");
            std::copy(m.embed.row(tok), m.embed.row(tok) + e, x.row(i) + j * e);
        }
    }
    return x;
}

/// Hook activations for a batch of windows: the k*e -> d_act projection.
inline Matrix hook_from_windows(const SourceLM& m,
                                const std::vector<std::vector<int>>& windows) {
    const Matrix x = gather_windows(m, windows);
    Matrix hook(x.rows, m.config.d_act);
    gemm(hook, x, false, m.proj, false);
    return hook;
}

/// Residual SwiGLU block applied to (possibly replaced) hooks: the model's
/// post-block activations, one row per prediction position.
inline Matrix residual_from_hook(const SourceLM& m, const Matrix& hook) {
    GLP_REQUIRE(hook.cols == m.config.d_act, "residual_from_hook: dim mismatch");
    Matrix gate(hook.rows, m.config.inner_dim);
    gemm(gate, hook, false, m.w_gate, false);
    Matrix up(hook.rows, m.config.inner_dim);
    gemm(up, hook, false, m.w_up, false);
    Matrix h = silu_forward(gate);
    for (std::size_t i = 0; i < h.size(); ++i) h.data[i] *= up.data[i];
    Matrix y(hook.rows, m.config.d_act);
    gemm(y, h, false, m.w_down, false);
    for (std::size_t i = 0; i < y.size(); ++i) y.data[i] += hook.data[i];
    return y;
}

inline Matrix logits_from_hook(const SourceLM& m, const Matrix& hook) {
    const Matrix y = residual_from_hook(m, hook);
    Matrix logits(hook.rows, m.config.vocab_size);
    gemm(logits, y, false, m.head, false);
    return logits;
}

inline std::vector<double> nll_from_logits(const Matrix& logits,
                                           const std::vector<int>& targets) {
    GLP_REQUIRE(logits.rows == targets.size(), "nll_from_logits: target count mismatch");
    std::vector<double> nll(targets.size());
    for (std::size_t i = 0; i < logits.rows; ++i) {
        const double* r = logits.row(i);
        GLP_REQUIRE(targets[i] >= 0 && static_cast<std::size_t>(targets[i]) < logits.cols,
                    "nll_from_logits: target out of range");
        double mx = r[0];
        for (std::size_t j = 1; j < logits.cols; ++j) mx = std::max(mx, r[j]);
        double lse = 0.0;
        for (std::size_t j = 0; j < logits.cols; ++j) lse += std::exp(r[j] - mx);
        nll[i] = mx + std::log(lse) - r[targets[i]];
    }
    return nll;
}

struct SourceForwardResult {
    std::vector<double> nll;  // nll[p] = NLL of predicting tokens[p+1]
    Matrix hook;              // (L-1) x d_act, row p from the window ending at p
};

/// Forward over one document. When `inject` is given (rows aligned to the
/// L-1 prediction positions) it replaces the hook activations before the
/// block, and the NLL is computed under the modified forward.
inline SourceForwardResult source_forward(const SourceLM& m,
                                          const std::vector<int>& tokens,
                                          const Matrix* inject = nullptr) {
    for (int t : tokens)
        GLP_REQUIRE(t >= 0 && t < static_cast<int>(m.config.vocab_size),
                    "source_forward: token id out of range");
    SourceForwardResult res;
    res.hook = hook_from_windows(m, prediction_windows(m, tokens));
    const Matrix* hook = &res.hook;
    if (inject) {
        GLP_REQUIRE(inject->rows == res.hook.rows && inject->cols == res.hook.cols,
                    "source_forward: injected rows misaligned with positions");
        hook = inject;
    }
    const Matrix logits = logits_from_hook(m, *hook);
    const std::vector<int> targets(tokens.begin() + 1, tokens.end());
    res.nll = nll_from_logits(logits, targets);
    return res;
}

/// Mean NLL over the positions whose context window holds only real tokens
/// (the predictions of tokens[k..L-1]).
inline double fluency_nll(const SourceLM& m, const std::vector<int>& tokens) {
    GLP_REQUIRE(tokens.size() > m.config.context_k,
                "fluency_nll: sequence no longer than the context window");
    const SourceForwardResult res = source_forward(m, tokens);
    double acc = 0.0;
    std::size_t n = 0;
    for (std::size_t p = m.config.context_k - 1; p < res.nll.size(); ++p) {
        acc += res.nll[p];
        ++n;
    }
    return acc / static_cast<double>(n);
}

/// Hook activations of every document stacked in document order, with each
/// document's first position dropped (its window is all padding).
inline Matrix collect_hook_rows(const SourceLM& m, const std::vector<Document>& docs) {
    GLP_REQUIRE(!docs.empty(), "collect_hook_rows: empty corpus");
    std::size_t total = 0;
    for (const Document& doc : docs) {
        GLP_REQUIRE(doc.tokens.size() >= 3, "collect_hook_rows: document too short");
        total += doc.tokens.size() - 2;
    }
    Matrix out(total, m.config.d_act);
    std::size_t at = 0;
    for (const Document& doc : docs) {
        const SourceForwardResult fwd = source_forward(m, doc.tokens);
        const std::size_t rows = fwd.hook.rows - 1;
        std::copy(fwd.hook.row(1), fwd.hook.row(1) + rows * fwd.hook.cols, out.row(at));
        at += rows;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Analytic judges and steering vectors.

/// w = mean(acts_pos) - mean(acts_neg), a 1 x d steering direction.
inline Matrix diffmean_vector(const Matrix& acts_pos, const Matrix& acts_neg) {
    GLP_REQUIRE(acts_pos.rows >= 1 && acts_neg.rows >= 1,
                "diffmean_vector: both sets must be nonempty");
    GLP_REQUIRE(acts_pos.cols == acts_neg.cols, "diffmean_vector: dim mismatch");
    Matrix w(1, acts_pos.cols);
    for (std::size_t j = 0; j < acts_pos.cols; ++j) {
        double mp = 0.0, mn = 0.0;
        for (std::size_t i = 0; i < acts_pos.rows; ++i) mp += acts_pos(i, j);
        for (std::size_t i = 0; i < acts_neg.rows; ++i) mn += acts_neg(i, j);
        w.data[j] = mp / static_cast<double>(acts_pos.rows) -
                    mn / static_cast<double>(acts_neg.rows);
    }
    return w;
}

/// Exact posterior P(label = + | tokens) under the grammar: log-likelihood
/// ratio of the two chains plus the label prior, in log space throughout.
/// Zero-probability transitions become -inf log-likelihoods, so a sequence
/// impossible under one chain scores 0 or 1; impossible under both, the
/// likelihoods carry no information and the prior is returned.
inline double bayes_concept_score(const std::vector<int>& tokens,
                                  const GrammarSpec& spec) {
    GLP_REQUIRE(!tokens.empty(), "bayes_concept_score: empty sequence");
    for (int t : tokens)
        GLP_REQUIRE(t >= 0 && t < static_cast<int>(spec.vocab_size),
                    "bayes_concept_score: token id out of range");
    auto loglik = [&](const Matrix& init, const Matrix& p) {
        double ll = std::log(init.data[tokens[0]]);
        for (std::size_t i = 1; i < tokens.size(); ++i)
            ll += std::log(p(tokens[i - 1], tokens[i]));
        return ll;
    };
    const double a = std::log(spec.pos_prior) + loglik(spec.init_pos, spec.p_pos);
    const double b = std::log(1.0 - spec.pos_prior) + loglik(spec.init_neg, spec.p_neg);
    if (std::isinf(a) && std::isinf(b)) return spec.pos_prior;
    return 1.0 / (1.0 + std::exp(b - a));
}

struct SteeringCoefficient {
    double r = 0.0;         // relative coefficient
    double norm_bar = 0.0;  // mean activation row norm on validation data
    double alpha = 0.0;     // absolute coefficient r * norm_bar
};

inline SteeringCoefficient relative_coefficient(double r, const Matrix& validation_acts) {
    GLP_REQUIRE(validation_acts.rows >= 1, "relative_coefficient: empty validation set");
    double acc = 0.0;
    for (std::size_t i = 0; i < validation_acts.rows; ++i) {
        double s = 0.0;
        const double* row = validation_acts.row(i);
        for (std::size_t j = 0; j < validation_acts.cols; ++j) s += row[j] * row[j];
        acc += std::sqrt(s);
    }
    SteeringCoefficient c;
    c.r = r;
    c.norm_bar = acc / static_cast<double>(validation_acts.rows);
    c.alpha = r * c.norm_bar;
    return c;
}

// ---------------------------------------------------------------------------
// Generation with an optional hook-level intervention.

/// Maps the 1 x d_act hook activation of the position being generated to a
/// replacement (e.g. add alpha*w, or project it through the flow model).
using HookTransform = std::function<Matrix(const Matrix&)>;

/// Ancestral sampling at temperature 1 (argmax when greedy). The transform,
/// when given, is applied to the hook at every generated position. Returns
/// prefix + n_new tokens.
inline std::vector<int> generate(const SourceLM& m, const std::vector<int>& prefix,
                                 std::size_t n_new, Rng& rng,
                                 const HookTransform& transform = nullptr,
                                 bool greedy = false) {
    GLP_REQUIRE(!prefix.empty(), "generate: prefix must be nonempty");
    for (int t : prefix)
        GLP_REQUIRE(t >= 0 && t < static_cast<int>(m.config.vocab_size),
                    "generate: token id out of range");
    std::vector<int> tokens = prefix;
    tokens.reserve(prefix.size() + n_new);
    for (std::size_t step = 0; step < n_new; ++step) {
        Matrix hook =
            hook_from_windows(m, {context_window(m, tokens, tokens.size() - 1)});
        if (transform) {
            Matrix replaced = transform(hook);
            GLP_REQUIRE(replaced.same_shape(hook), "generate: transform changed shape");
            hook = std::move(replaced);
        }
        const Matrix logits = logits_from_hook(m, hook);
        const double* r = logits.row(0);
        int next = 0;
        if (greedy) {
            for (std::size_t j = 1; j < logits.cols; ++j)
                if (r[j] > r[next]) next = static_cast<int>(j);
        } else {
            double mx = r[0];
            for (std::size_t j = 1; j < logits.cols; ++j) mx = std::max(mx, r[j]);
            double lse = 0.0;
            for (std::size_t j = 0; j < logits.cols; ++j) lse += std::exp(r[j] - mx);
            double u = rng.uniform() * lse;
            next = static_cast<int>(logits.cols) - 1;
            for (std::size_t j = 0; j < logits.cols; ++j) {
                u -= std::exp(r[j] - mx);
                if (u < 0.0) {
                    next = static_cast<int>(j);
                    break;
                }
            }
        }
        tokens.push_back(next);
    }
    return tokens;
}

// ---------------------------------------------------------------------------
// Training.

struct SourceTrainConfig {
    std::uint64_t total_steps = 2000;
    std::size_t batch_size = 128;
    double base_lr = 3e-3;
    double warmup_ratio = 0.01;
    double val_fraction = 0.1;
    std::uint64_t seed = 0;
    std::size_t log_every = 10;
    std::uint64_t divergence_patience = 500;
};

struct SourceTrainResult {
    SourceLM model;
    std::vector<LossPoint> curve;
    double val_nll = 0.0;  // mean NLL on held-out docs, full-context positions
};

/// Mean NLL over the full-context positions of the given documents.
inline double corpus_nll(const SourceLM& m, const std::vector<const Document*>& docs) {
    double acc = 0.0;
    std::size_t n = 0;
    for (const Document* d : docs) {
        const SourceForwardResult res = source_forward(m, d->tokens);
        for (std::size_t p = m.config.context_k - 1; p < res.nll.size(); ++p) {
            acc += res.nll[p];
            ++n;
        }
    }
    GLP_REQUIRE(n > 0, "corpus_nll: no full-context positions");
    return acc / static_cast<double>(n);
}

inline double corpus_nll(const SourceLM& m, const std::vector<Document>& docs) {
    std::vector<const Document*> ptrs;
    ptrs.reserve(docs.size());
    for (const Document& d : docs) ptrs.push_back(&d);
    return corpus_nll(m, ptrs);
}

/// Cross-entropy training on windows sampled uniformly over (doc, position)
/// pairs. Aborts if the loss stays above its initial value for
/// divergence_patience consecutive steps.
inline SourceTrainResult train_source_lm(const std::vector<Document>& corpus,
                                         const SourceLMConfig& lm_config,
                                         const SourceTrainConfig& cfg) {
    GLP_REQUIRE(!corpus.empty(), "train_source_lm: empty corpus");
    for (const Document& d : corpus)
        GLP_REQUIRE(d.tokens.size() >= 2, "train_source_lm: document too short");
    GLP_REQUIRE(cfg.total_steps >= 1 && cfg.batch_size >= 1,
                "train_source_lm: bad schedule");
    GLP_REQUIRE(cfg.val_fraction >= 0.0 && cfg.val_fraction < 1.0,
                "train_source_lm: val_fraction outside [0,1)");

    Rng rng = Rng(cfg.seed).substream("source-train");
    std::vector<std::size_t> order(corpus.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    const auto n_val = static_cast<std::size_t>(cfg.val_fraction *
                                                static_cast<double>(corpus.size()));
    std::vector<const Document*> train_docs, val_docs;
    for (std::size_t i = 0; i < order.size(); ++i)
        (i < n_val ? val_docs : train_docs).push_back(&corpus[order[i]]);
    GLP_REQUIRE(!train_docs.empty(), "train_source_lm: no training documents");

    SourceTrainResult out;
    out.model = init_source_lm(lm_config, rng.substream("init").seed());
    SourceLM& m = out.model;
    AdamWState opt;
    const double n_params = static_cast<double>(source_lm_param_count(lm_config));

    double initial_loss = 0.0;
    std::uint64_t above_initial = 0;
    double rows_seen = 0.0;
    std::vector<std::vector<int>> windows(cfg.batch_size);
    std::vector<int> targets(cfg.batch_size);
    for (std::uint64_t step = 0; step < cfg.total_steps; ++step) {
        for (std::size_t b = 0; b < cfg.batch_size; ++b) {
            const Document& d = *train_docs[rng.below(train_docs.size())];
            const std::size_t pos = rng.below(d.tokens.size() - 1);
            windows[b] = context_window(m, d.tokens, pos);
            targets[b] = d.tokens[pos + 1];
        }

        Tape tape;
        std::vector<Tape::Var> leaves;
        for (Matrix* p : m.params()) leaves.push_back(tape.leaf(*p, true));
        Tape::Var x = tape.embed_windows(leaves[0], windows);
        Tape::Var hook = tape.matmul(x, leaves[1]);
        Tape::Var h = tape.hadamard(tape.silu(tape.matmul(hook, leaves[2])),
                                    tape.matmul(hook, leaves[3]));
        Tape::Var y = tape.add(hook, tape.matmul(h, leaves[4]));
        Tape::Var loss_var = tape.mean_nll(tape.matmul(y, leaves[5]), targets);
        const double loss = tape.value(loss_var).data[0];
        if (!std::isfinite(loss))
            throw std::runtime_error("train_source_lm: non-finite loss at step " +
                                     std::to_string(step + 1));
        if (step == 0) initial_loss = loss;
        above_initial = loss > initial_loss ? above_initial + 1 : 0;
        if (above_initial >= cfg.divergence_patience)
            throw std::runtime_error(
                "train_source_lm: diverged (loss above its initial value " +
                std::to_string(initial_loss) + " for " +
                std::to_string(above_initial) + " consecutive steps)");

        tape.backward(loss_var);
        std::vector<Matrix> grads;
        for (Tape::Var v : leaves) grads.push_back(tape.grad(v));
        std::vector<Matrix*> params = m.params();
        adamw_step(params, grads, opt,
                   cosine_warmup_lr(step, cfg.total_steps, cfg.base_lr,
                                    cfg.warmup_ratio));
        rows_seen += static_cast<double>(cfg.batch_size);
        if (step % cfg.log_every == 0 || step + 1 == cfg.total_steps)
            out.curve.push_back({step + 1, 6.0 * n_params * rows_seen, loss});
    }

    out.val_nll = corpus_nll(m, val_docs.empty() ? train_docs : val_docs);
    return out;
}

}  // namespace glp
