#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>

#include "glp/source_sim.hpp"
#include "oracles.hpp"

using glp::Document;
using glp::GrammarSpec;
using glp::Matrix;
using glp::Rng;
using glp::SourceLM;
using glp::SourceLMConfig;

namespace {

/// Uniform 2-state chains used for hand-checkable Bayes arithmetic.
GrammarSpec tiny_grammar() {
    GrammarSpec g;
    g.vocab_size = 2;
    g.p_pos = Matrix(2, 2);
    g.p_pos(0, 0) = 0.9;
    g.p_pos(0, 1) = 0.1;
    g.p_pos(1, 0) = 0.2;
    g.p_pos(1, 1) = 0.8;
    g.p_neg = Matrix(2, 2, 0.5);
    g.init_pos = Matrix(1, 2);
    g.init_pos.data = {0.6, 0.4};
    g.init_neg = Matrix(1, 2, 0.5);
    g.pos_prior = 0.3;
    return g;
}

/// One shared training run reused by every test that needs a fitted model.
struct Trained {
    GrammarSpec grammar;
    std::vector<Document> corpus;
    glp::SourceTrainResult result;
};

const Trained& trained() {
    static const Trained t = [] {
        Trained f;
        f.grammar = glp::default_grammar();
        f.corpus = glp::generate_corpus(f.grammar, 2000, 64, 41);
        SourceLMConfig lm_config;
        glp::SourceTrainConfig cfg;
        cfg.total_steps = 2000;
        cfg.batch_size = 128;
        cfg.log_every = 1;
        cfg.seed = 7;
        f.result = glp::train_source_lm(f.corpus, lm_config, cfg);
        return f;
    }();
    return t;
}

}  // namespace

TEST_CASE("default grammar is valid and well separated") {
    const GrammarSpec g = glp::default_grammar();
    REQUIRE_NOTHROW(g.validate());
    double min_tv = 1.0;
    for (std::size_t s = 0; s < g.vocab_size; ++s) {
        double tv = 0.0;
        for (std::size_t j = 0; j < g.vocab_size; ++j)
            tv += std::abs(g.p_pos(s, j) - g.p_neg(s, j));
        min_tv = std::min(min_tv, 0.5 * tv);
    }
    REQUIRE(min_tv >= 0.5);
    REQUIRE(g.init_pos.data == g.init_neg.data);

    GrammarSpec bad = g;
    bad.p_pos(0, 0) += 1e-6;
    REQUIRE_THROWS_WITH(bad.validate(), Catch::Matchers::ContainsSubstring("stochastic"));
}

TEST_CASE("corpus generation is seed-deterministic") {
    const GrammarSpec g = glp::default_grammar();
    const auto a = glp::generate_corpus(g, 20, 16, 5);
    const auto b = glp::generate_corpus(g, 20, 16, 5);
    const auto c = glp::generate_corpus(g, 20, 16, 6);
    REQUIRE(a.size() == 20);
    bool all_equal = true;
    for (std::size_t i = 0; i < a.size(); ++i)
        all_equal = all_equal && a[i].label == b[i].label && a[i].tokens == b[i].tokens;
    REQUIRE(all_equal);
    bool any_diff = false;
    for (std::size_t i = 0; i < a.size(); ++i)
        any_diff = any_diff || a[i].tokens != c[i].tokens;
    REQUIRE(any_diff);

    REQUIRE_THROWS_WITH(glp::generate_corpus(g, 3, 1, 0),
                        Catch::Matchers::ContainsSubstring("doc_len"));
}

TEST_CASE("million-token corpus matches its chain's bigram table") {
    const GrammarSpec g = glp::default_grammar();
    const auto docs = glp::generate_corpus(g, 8000, 256, 11);
    std::vector<std::vector<std::uint64_t>> counts(
        g.vocab_size, std::vector<std::uint64_t>(g.vocab_size, 0));
    std::vector<std::uint64_t> row_totals(g.vocab_size, 0);
    std::uint64_t pos_tokens = 0;
    for (const Document& d : docs) {
        if (d.label != 1) continue;
        pos_tokens += d.tokens.size();
        for (std::size_t i = 1; i < d.tokens.size(); ++i) {
            ++counts[d.tokens[i - 1]][d.tokens[i]];
            ++row_totals[d.tokens[i - 1]];
        }
    }
    REQUIRE(pos_tokens > 900000);

    // Per-cell binomial z-scores; a fraction of cells beyond 3 sigma is
    // expected at 1024 cells, none should be extreme.
    std::size_t within3 = 0, cells = 0;
    double max_z = 0.0;
    for (std::size_t s = 0; s < g.vocab_size; ++s)
        for (std::size_t j = 0; j < g.vocab_size; ++j) {
            const double n = static_cast<double>(row_totals[s]);
            const double p = g.p_pos(s, j);
            const double sd = std::sqrt(n * p * (1.0 - p));
            const double z = std::abs(static_cast<double>(counts[s][j]) - n * p) / sd;
            ++cells;
            if (z <= 3.0) ++within3;
            max_z = std::max(max_z, z);
        }
    REQUIRE(static_cast<double>(within3) / static_cast<double>(cells) >= 0.98);
    REQUIRE(max_z <= 5.0);
}

TEST_CASE("identity-like chain produces constant documents") {
    GrammarSpec g;
    g.vocab_size = 4;
    g.p_pos = Matrix(4, 4);
    g.p_neg = Matrix(4, 4);
    for (std::size_t i = 0; i < 4; ++i) {
        g.p_pos(i, i) = 1.0;
        g.p_neg(i, i) = 1.0;
    }
    g.init_pos = Matrix(1, 4, 0.25);
    g.init_neg = Matrix(1, 4, 0.25);
    const auto docs = glp::generate_corpus(g, 10, 12, 3);
    for (const Document& d : docs)
        for (int t : d.tokens) REQUIRE(t == d.tokens[0]);
}

TEST_CASE("corpus file roundtrip preserves labels and tokens") {
    const GrammarSpec g = glp::default_grammar();
    const auto docs = glp::generate_corpus(g, 25, 9, 17);
    const std::string path = "corpus_roundtrip.txt";
    glp::write_corpus(path, docs);
    const auto back = glp::read_corpus(path);
    REQUIRE(back.size() == docs.size());
    for (std::size_t i = 0; i < docs.size(); ++i) {
        REQUIRE(back[i].label == docs[i].label);
        REQUIRE(back[i].tokens == docs[i].tokens);
    }

    std::ofstream bad("corpus_bad.txt", std::ios::trunc);
    bad << "x\t1 2 3\n";
    bad.close();
    REQUIRE_THROWS_WITH(glp::read_corpus("corpus_bad.txt"),
                        Catch::Matchers::ContainsSubstring("bad label"));
    std::ofstream bad2("corpus_bad2.txt", std::ios::trunc);
    bad2 << "+\t1 2 oops\n";
    bad2.close();
    REQUIRE_THROWS_WITH(glp::read_corpus("corpus_bad2.txt"),
                        Catch::Matchers::ContainsSubstring("bad token"));
    std::remove("corpus_roundtrip.txt");
    std::remove("corpus_bad.txt");
    std::remove("corpus_bad2.txt");
}

TEST_CASE("entropy rate matches hand computation on a 2-state chain") {
    Matrix p(2, 2);
    p(0, 0) = 0.9;
    p(0, 1) = 0.1;
    p(1, 0) = 0.2;
    p(1, 1) = 0.8;
    // Stationary distribution solves mu = mu P: mu = (2/3, 1/3).
    const double h0 = -(0.9 * std::log(0.9) + 0.1 * std::log(0.1));
    const double h1 = -(0.2 * std::log(0.2) + 0.8 * std::log(0.8));
    const double expected = (2.0 / 3.0) * h0 + (1.0 / 3.0) * h1;
    REQUIRE(glp::chain_entropy_rate(p) == Catch::Approx(expected).epsilon(1e-10));
}

TEST_CASE("entropy rate agrees with a simulated long walk") {
    const GrammarSpec g = glp::default_grammar();
    const double analytic = glp::chain_entropy_rate(g.p_pos);
    Rng rng(99);
    const double simulated = oracle::mc_entropy_rate(g.p_pos, 2000000, rng);
    REQUIRE(simulated == Catch::Approx(analytic).margin(0.01));

    const double mixed = glp::entropy_rate(g);
    const double half = 0.5 * glp::chain_entropy_rate(g.p_pos) +
                        0.5 * glp::chain_entropy_rate(g.p_neg);
    REQUIRE(mixed == Catch::Approx(half).margin(1e-12));
}

TEST_CASE("untrained model scores near the uniform floor") {
    SourceLMConfig c;
    const SourceLM m = glp::init_source_lm(c, 12);
    const GrammarSpec g = glp::default_grammar();
    const auto docs = glp::generate_corpus(g, 30, 64, 8);
    const double nll = glp::corpus_nll(m, docs);
    REQUIRE(nll == Catch::Approx(std::log(32.0)).margin(0.15));
}

TEST_CASE("source lm initialization is deterministic and shaped") {
    SourceLMConfig c;
    const SourceLM a = glp::init_source_lm(c, 4);
    const SourceLM b = glp::init_source_lm(c, 4);
    REQUIRE(a.embed.rows == c.vocab_size + 1);
    REQUIRE(a.proj.rows == c.context_k * c.embed_dim);
    REQUIRE(a.proj.cols == c.d_act);
    REQUIRE(a.head.cols == c.vocab_size);
    for (std::size_t i = 0; i < a.params().size(); ++i)
        REQUIRE(a.params()[i]->data == b.params()[i]->data);

    std::uint64_t total = 0;
    for (const Matrix* p : a.params()) total += p->size();
    REQUIRE(total == glp::source_lm_param_count(c));
}

TEST_CASE("hook shape covers every prediction position") {
    SourceLMConfig c;
    const SourceLM m = glp::init_source_lm(c, 21);
    const std::vector<int> tokens{3, 1, 4, 1, 5, 9, 2, 6, 5, 3, 5, 8};
    const auto res = glp::source_forward(m, tokens);
    REQUIRE(res.hook.rows == tokens.size() - 1);
    REQUIRE(res.hook.cols == c.d_act);
    REQUIRE(res.nll.size() == tokens.size() - 1);
    for (double v : res.nll) REQUIRE(v >= 0.0);
}

TEST_CASE("injecting the model's own hook is a bitwise no-op") {
    SourceLMConfig c;
    const SourceLM m = glp::init_source_lm(c, 33);
    const std::vector<int> tokens{0, 7, 19, 2, 2, 30, 11, 4, 4, 28};
    const auto plain = glp::source_forward(m, tokens);
    const auto injected = glp::source_forward(m, tokens, &plain.hook);
    REQUIRE(plain.nll == injected.nll);
    REQUIRE(plain.hook.data == injected.hook.data);
}

TEST_CASE("misaligned injection rows are rejected") {
    SourceLMConfig c;
    const SourceLM m = glp::init_source_lm(c, 33);
    const std::vector<int> tokens{0, 7, 19, 2, 2};
    const Matrix wrong(tokens.size(), c.d_act);  // one row too many
    REQUIRE_THROWS_WITH(glp::source_forward(m, tokens, &wrong),
                        Catch::Matchers::ContainsSubstring("misaligned"));
    const Matrix wrong_d(tokens.size() - 1, c.d_act + 1);
    REQUIRE_THROWS_WITH(glp::source_forward(m, tokens, &wrong_d),
                        Catch::Matchers::ContainsSubstring("misaligned"));
}

TEST_CASE("training fits the corpus to its entropy floor") {
    const auto& t = trained();
    const double floor = glp::entropy_rate(t.grammar);

    // First logged loss is the untrained uniform floor.
    REQUIRE(t.result.curve.front().step == 1);
    REQUIRE(t.result.curve.front().loss == Catch::Approx(std::log(32.0)).margin(0.2));

    // Final validation NLL within 10% of the analytic entropy rate, and not
    // meaningfully below it.
    CAPTURE(t.result.val_nll, floor);
    REQUIRE(t.result.val_nll <= 1.1 * floor);
    REQUIRE(t.result.val_nll >= 0.97 * floor);
}

TEST_CASE("window-50 smoothed training curve is monotone") {
    const auto& t = trained();
    const auto& curve = t.result.curve;
    REQUIRE(curve.size() == 2000);
    const std::size_t w = 50;
    std::vector<double> smooth;
    for (std::size_t i = 0; i + w <= curve.size(); ++i) {
        double acc = 0.0;
        for (std::size_t j = i; j < i + w; ++j) acc += curve[j].loss;
        smooth.push_back(acc / static_cast<double>(w));
    }
    double worst_rise = 0.0;
    for (std::size_t i = 0; i + 1 < smooth.size(); ++i)
        worst_rise = std::max(worst_rise, smooth[i + 1] - smooth[i]);
    CAPTURE(worst_rise);
    REQUIRE(worst_rise <= 0.01);
    REQUIRE(smooth.back() < smooth.front() - 0.5);

    // Cumulative flops accounting: 6 * params * rows.
    const double n = static_cast<double>(glp::source_lm_param_count(SourceLMConfig{}));
    REQUIRE(curve[0].flops == Catch::Approx(6.0 * n * 128.0));
    REQUIRE(curve[9].flops == Catch::Approx(6.0 * n * 128.0 * 10.0));
}

TEST_CASE("zero injection is worse than the real hook on a trained model") {
    const auto& t = trained();
    const SourceLM& m = t.result.model;
    double real_acc = 0.0, zero_acc = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < 40; ++i) {
        const auto& tokens = t.corpus[i].tokens;
        const auto plain = glp::source_forward(m, tokens);
        const Matrix zeros(plain.hook.rows, plain.hook.cols);
        const auto zeroed = glp::source_forward(m, tokens, &zeros);
        for (std::size_t p = 0; p < plain.nll.size(); ++p) {
            real_acc += plain.nll[p];
            zero_acc += zeroed.nll[p];
            ++n;
        }
    }
    CAPTURE(real_acc / n, zero_acc / n);
    REQUIRE(zero_acc / static_cast<double>(n) > real_acc / static_cast<double>(n));
}

TEST_CASE("divergent training aborts with a diagnostic") {
    const GrammarSpec g = glp::default_grammar();
    const auto corpus = glp::generate_corpus(g, 50, 32, 2);
    SourceLMConfig lm_config;
    glp::SourceTrainConfig cfg;
    cfg.total_steps = 600;
    cfg.batch_size = 32;
    cfg.base_lr = 1.0;
    cfg.seed = 3;
    cfg.divergence_patience = 100;
    REQUIRE_THROWS_WITH(glp::train_source_lm(corpus, lm_config, cfg),
                        Catch::Matchers::ContainsSubstring("diverged") ||
                            Catch::Matchers::ContainsSubstring("non-finite"));
}

TEST_CASE("fluency separates model text from uniform noise") {
    const auto& t = trained();
    const SourceLM& m = t.result.model;
    Rng rng(55);

    double greedy_acc = 0.0, random_acc = 0.0, typical_acc = 0.0;
    const auto fresh = glp::generate_corpus(t.grammar, 50, 64, 123);
    for (std::size_t i = 0; i < 50; ++i) {
        const std::vector<int> prefix(fresh[i].tokens.begin(), fresh[i].tokens.begin() + 4);
        const auto greedy = glp::generate(m, prefix, 28, rng, nullptr, true);
        greedy_acc += glp::fluency_nll(m, greedy);
        std::vector<int> noise(32);
        for (int& v : noise) v = static_cast<int>(rng.below(32));
        random_acc += glp::fluency_nll(m, noise);
        typical_acc += glp::fluency_nll(m, fresh[i].tokens);
    }
    CAPTURE(greedy_acc / 50, random_acc / 50, typical_acc / 50);
    REQUIRE(greedy_acc < random_acc);

    // Corpus-typical text sits within 10% of the entropy-rate floor.
    const double floor = glp::entropy_rate(t.grammar);
    REQUIRE(typical_acc / 50.0 <= 1.1 * floor);
    REQUIRE(typical_acc / 50.0 >= 0.9 * floor);

    REQUIRE_THROWS_WITH(glp::fluency_nll(m, std::vector<int>(8, 1)),
                        Catch::Matchers::ContainsSubstring("context window"));
}

TEST_CASE("diffmean vector arithmetic") {
    Matrix u(1, 3);
    u.data = {1.0, -2.0, 0.5};
    Matrix v(1, 3);
    v.data = {0.25, 4.0, -1.0};

    const Matrix same = glp::diffmean_vector(u, u);
    for (double x : same.data) REQUIRE(x == 0.0);

    const Matrix w = glp::diffmean_vector(u, v);
    for (std::size_t j = 0; j < 3; ++j) REQUIRE(w.data[j] == u.data[j] - v.data[j]);

    const Matrix neg = glp::diffmean_vector(v, u);
    for (std::size_t j = 0; j < 3; ++j) REQUIRE(neg.data[j] == -w.data[j]);

    Matrix two(2, 3);
    for (std::size_t j = 0; j < 3; ++j) {
        two(0, j) = u.data[j];
        two(1, j) = v.data[j];
    }
    const Matrix mean_diff = glp::diffmean_vector(two, v);
    for (std::size_t j = 0; j < 3; ++j)
        REQUIRE(mean_diff.data[j] ==
                Catch::Approx(0.5 * (u.data[j] + v.data[j]) - v.data[j]).margin(1e-15));
}

TEST_CASE("bayes score matches hand posterior on a 3-token sequence") {
    const GrammarSpec g = tiny_grammar();
    const std::vector<int> tokens{0, 1, 0};
    // Likelihoods by direct product: P+ = 0.6*0.1*0.2, P- = 0.5*0.5*0.5.
    const double lp = 0.6 * 0.1 * 0.2;
    const double ln = 0.5 * 0.5 * 0.5;
    const double hand = 0.3 * lp / (0.3 * lp + 0.7 * ln);
    REQUIRE(glp::bayes_concept_score(tokens, g) == Catch::Approx(hand).margin(1e-12));
}

TEST_CASE("bayes score saturates on impossible sequences") {
    GrammarSpec g = tiny_grammar();
    g.p_neg(0, 1) = 0.0;  // the 0 -> 1 transition cannot happen under P-
    g.p_neg(0, 0) = 1.0;
    const double one = glp::bayes_concept_score({0, 1}, g);
    REQUIRE(one == 1.0);

    GrammarSpec h = tiny_grammar();
    h.p_pos(0, 1) = 0.0;
    h.p_pos(0, 0) = 1.0;
    REQUIRE(glp::bayes_concept_score({0, 1}, h) == 0.0);

    // Impossible under both chains: likelihood carries no information.
    GrammarSpec both = tiny_grammar();
    both.p_pos(0, 1) = 0.0;
    both.p_pos(0, 0) = 1.0;
    both.p_neg(0, 1) = 0.0;
    both.p_neg(0, 0) = 1.0;
    REQUIRE(glp::bayes_concept_score({0, 1}, both) == both.pos_prior);
}

TEST_CASE("identical chains return the prior") {
    GrammarSpec g = tiny_grammar();
    g.p_neg = g.p_pos;
    g.init_neg = g.init_pos;
    REQUIRE(glp::bayes_concept_score({0, 1, 1, 0}, g) ==
            Catch::Approx(g.pos_prior).margin(1e-12));
}

TEST_CASE("bayes score identifies the generating regime") {
    const GrammarSpec g = glp::default_grammar();
    const auto docs = glp::generate_corpus(g, 2500, 32, 77);
    double pos_acc = 0.0, neg_acc = 0.0;
    std::size_t n_pos = 0, n_neg = 0;
    for (const Document& d : docs) {
        const double s = glp::bayes_concept_score(d.tokens, g);
        if (d.label == 1) {
            pos_acc += s;
            ++n_pos;
        } else {
            neg_acc += s;
            ++n_neg;
        }
    }
    REQUIRE(n_pos >= 1000);
    CAPTURE(pos_acc / n_pos, neg_acc / n_neg);
    REQUIRE(pos_acc / static_cast<double>(n_pos) > 0.9);
    REQUIRE(neg_acc / static_cast<double>(n_neg) < 0.1);
}

TEST_CASE("relative coefficient scales the mean row norm") {
    const glp::SteeringCoefficient zero = glp::relative_coefficient(0.0, Matrix(3, 4, 1.0));
    REQUIRE(zero.alpha == 0.0);

    Matrix unit(5, 2);
    for (std::size_t i = 0; i < 5; ++i) unit(i, 0) = 1.0;  // all rows unit norm
    const auto c1 = glp::relative_coefficient(3.5, unit);
    REQUIRE(c1.norm_bar == 1.0);
    REQUIRE(c1.alpha == 3.5);

    Matrix two(2, 2);
    two(0, 0) = 3.0;
    two(0, 1) = 4.0;  // norm 5
    two(1, 0) = 6.0;
    two(1, 1) = 8.0;  // norm 10
    const auto c2 = glp::relative_coefficient(2.0, two);
    REQUIRE(c2.norm_bar == Catch::Approx(7.5).margin(1e-15));
    REQUIRE(c2.alpha / c2.r == c2.norm_bar);  // exact for dyadic r

    REQUIRE_THROWS_WITH(glp::relative_coefficient(1.0, Matrix(0, 4)),
                        Catch::Matchers::ContainsSubstring("empty"));
}

TEST_CASE("generation is rng-deterministic and in-vocabulary") {
    const auto& t = trained();
    const SourceLM& m = t.result.model;
    Rng r1(10), r2(10), r3(11);
    const std::vector<int> prefix{1, 2, 3};
    const auto a = glp::generate(m, prefix, 24, r1);
    const auto b = glp::generate(m, prefix, 24, r2);
    const auto c = glp::generate(m, prefix, 24, r3);
    REQUIRE(a == b);
    REQUIRE(a != c);
    REQUIRE(a.size() == prefix.size() + 24);
    for (int tok : a) {
        REQUIRE(tok >= 0);
        REQUIRE(tok < 32);
    }
    REQUIRE(std::vector<int>(a.begin(), a.begin() + 3) == prefix);
}

TEST_CASE("small additive steering raises the concept score") {
    const auto& t = trained();
    const SourceLM& m = t.result.model;

    // Contrast sets: hook activations of + and - documents.
    const std::size_t d_act = m.config.d_act;
    std::vector<double> pos_data, neg_data;
    std::size_t n_pos = 0, n_neg = 0;
    for (std::size_t i = 0; i < 400; ++i) {
        const auto res = glp::source_forward(m, t.corpus[i].tokens);
        auto& dst = t.corpus[i].label == 1 ? pos_data : neg_data;
        auto& cnt = t.corpus[i].label == 1 ? n_pos : n_neg;
        for (std::size_t r = 1; r < res.hook.rows; ++r) {
            dst.insert(dst.end(), res.hook.row(r), res.hook.row(r) + d_act);
            ++cnt;
        }
    }
    Matrix pos_acts(n_pos, d_act);
    pos_acts.data = pos_data;
    Matrix neg_acts(n_neg, d_act);
    neg_acts.data = neg_data;

    // Unit-normalized steering direction; alpha = r * mean activation norm
    // is the edit magnitude, with r at the first grid point (0.2).
    Matrix w = glp::diffmean_vector(pos_acts, neg_acts);
    const double wn = glp::frobenius_norm(w);
    REQUIRE(wn > 0.0);
    for (double& v : w.data) v /= wn;
    const double alpha = glp::relative_coefficient(0.2, neg_acts).alpha;

    const auto steer = [&](const Matrix& hook) {
        Matrix out = hook;
        for (std::size_t j = 0; j < out.cols; ++j) out.data[j] += alpha * w.data[j];
        return out;
    };

    // Continuations from negative-regime prefixes, steered toward +.
    double base_score = 0.0, steered_score = 0.0;
    std::size_t n_prefix = 0;
    Rng rng(500);
    for (const Document& doc : t.corpus) {
        if (doc.label != -1 || n_prefix >= 100) continue;
        const std::vector<int> prefix(doc.tokens.begin(), doc.tokens.begin() + 8);
        Rng ra = rng.substream("a" + std::to_string(n_prefix));
        Rng rb = rng.substream("b" + std::to_string(n_prefix));
        const auto plain = glp::generate(m, prefix, 20, ra);
        const auto steered = glp::generate(m, prefix, 20, rb, steer);
        const std::vector<int> plain_cont(plain.begin() + 8, plain.end());
        const std::vector<int> steered_cont(steered.begin() + 8, steered.end());
        base_score += glp::bayes_concept_score(plain_cont, t.grammar);
        steered_score += glp::bayes_concept_score(steered_cont, t.grammar);
        ++n_prefix;
    }
    REQUIRE(n_prefix == 100);
    CAPTURE(base_score / 100.0, steered_score / 100.0);
    REQUIRE(steered_score > base_score);
}

TEST_CASE("source lm checkpoint roundtrip") {
    const auto& t = trained();
    const SourceLM& m = t.result.model;
    const std::string path = "source_lm_roundtrip.bin";
    glp::save_source_lm(path, m);
    const SourceLM back = glp::load_source_lm(path);
    REQUIRE(back.config.vocab_size == m.config.vocab_size);
    REQUIRE(back.config.context_k == m.config.context_k);
    const auto pa = m.params();
    const auto pb = back.params();
    for (std::size_t i = 0; i < pa.size(); ++i) REQUIRE(pa[i]->data == pb[i]->data);

    // NLLs agree bitwise after reload.
    const auto before = glp::source_forward(m, t.corpus[0].tokens);
    const auto after = glp::source_forward(back, t.corpus[0].tokens);
    REQUIRE(before.nll == after.nll);
    std::remove(path.c_str());
}
