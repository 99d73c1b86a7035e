#pragma once

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "glp/activation_store.hpp"
#include "glp/config.hpp"
#include "glp/denoiser.hpp"
#include "glp/flow.hpp"
#include "glp/metrics.hpp"
#include "glp/probing.hpp"
#include "glp/repro.hpp"
#include "glp/sae.hpp"
#include "glp/scaling.hpp"
#include "glp/source_sim.hpp"
#include "glp/steering.hpp"

namespace glp {

inline int cli_main(int argc, const char* const* argv);

namespace cli {

inline std::vector<std::string> split_list(const std::string& csv) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(csv);
    while (std::getline(in, item, ',')) {
        item = glp::detail::trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

inline std::vector<double> parse_double_list(const std::string& csv,
                                             const std::string& key) {
    std::vector<double> out;
    for (const std::string& item : split_list(csv)) {
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != item.size())
            throw UsageError("config key `" + key + "`: bad number `" + item + "`");
        out.push_back(v);
    }
    if (out.empty()) throw UsageError("config key `" + key + "`: empty list");
    return out;
}

/// Seeded with-replacement row sampler over an in-memory activation matrix.
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

struct Subcommand {
    std::string name;
    std::string description;
    ConfigMap defaults;
    std::function<int(const RunConfig&)> run;  // returns process exit code
};

inline void echo_config(const RunConfig& cfg) {
    const std::string out = cfg.path("out");
    std::filesystem::create_directories(out);
    write_resolved_config(out, cfg);
}

inline int run_gen_corpus(const RunConfig& cfg) {
    echo_config(cfg);
    GrammarSpec spec = default_grammar(cfg.u64("vocab"));
    std::vector<Document> docs =
        generate_corpus(spec, cfg.u64("n_docs"), cfg.u64("doc_len"), cfg.u64("seed"));
    write_corpus(cfg.path("out") + "/corpus.txt", docs);
    std::printf("wrote %zu documents\n", docs.size());
    return 0;
}

inline int run_train_source(const RunConfig& cfg) {
    echo_config(cfg);
    std::vector<Document> docs = read_corpus(cfg.path("corpus"));
    SourceTrainConfig train;
    train.total_steps = cfg.u64("total_steps");
    train.batch_size = cfg.u64("batch_size");
    train.base_lr = cfg.dbl("base_lr");
    train.warmup_ratio = cfg.dbl("warmup_ratio");
    train.val_fraction = cfg.dbl("val_fraction");
    train.seed = cfg.u64("seed");
    train.log_every = cfg.u64("log_every");
    SourceTrainResult result = train_source_lm(docs, SourceLMConfig{}, train);
    save_source_lm(cfg.path("out") + "/source.glpw", result.model);
    write_loss_csv(cfg.path("out") + "/loss.csv", result.curve);
    std::printf("val_nll %.17g\n", result.val_nll);
    return 0;
}

inline int run_cache(const RunConfig& cfg) {
    echo_config(cfg);
    SourceLM lm = load_source_lm(cfg.path("source"));
    std::vector<Document> docs = read_corpus(cfg.path("corpus"));
    Matrix acts = collect_hook_rows(lm, docs);
    write_activation_file(cfg.path("out") + "/acts.glpa", acts,
                          static_cast<std::uint32_t>(cfg.u64("layer_id")));
    std::printf("cached %zu rows of dimension %zu\n", acts.rows, acts.cols);
    return 0;
}

inline int run_fit_scaler(const RunConfig& cfg) {
    echo_config(cfg);
    ActivationFileData data = read_activation_file(cfg.path("acts"));
    Scaler scaler = fit_scaler(data.acts);
    save_scaler(cfg.path("out") + "/scaler.glps", scaler);
    std::printf("fit scaler on %llu rows\n",
                static_cast<unsigned long long>(scaler.fit_count));
    return 0;
}

inline int run_train_glp(const RunConfig& cfg) {
    echo_config(cfg);
    ActivationFileData data = read_activation_file(cfg.path("acts"));
    Scaler scaler = load_scaler(cfg.path("scaler"));
    DenoiserConfig dc;
    dc.d_act = data.acts.cols;
    dc.width = cfg.u64("width");
    dc.expansion = cfg.u64("expansion");
    dc.n_blocks = cfg.u64("n_blocks");
    dc.multi_layer = cfg.boolean("multi_layer");
    DenoiserModel model = init_denoiser(dc, cfg.u64("seed"));
    FlowTrainConfig train;
    train.total_steps = cfg.u64("total_steps");
    train.batch_size = cfg.u64("batch_size");
    train.base_lr = cfg.dbl("base_lr");
    train.warmup_ratio = cfg.dbl("warmup_ratio");
    train.seed = cfg.u64("seed");
    train.log_every = cfg.u64("log_every");
    std::vector<LossPoint> curve =
        train_flow_model(model, scaler, train, row_sampler(data.acts, train.seed));
    save_denoiser(cfg.path("out") + "/glp.glpw", model);
    write_loss_csv(cfg.path("out") + "/loss.csv", curve);
    std::printf("final loss %.17g\n", curve.back().loss);
    return 0;
}

inline int run_train_sae(const RunConfig& cfg) {
    echo_config(cfg);
    ActivationFileData data = read_activation_file(cfg.path("acts"));
    Scaler scaler = load_scaler(cfg.path("scaler"));
    SaeConfig sc;
    sc.d_act = data.acts.cols;
    sc.latent_dim = cfg.u64("latent_dim");
    sc.active_k = cfg.u64("active_k");
    SaeModel model = init_sae(sc, cfg.u64("seed"));
    SaeTrainConfig train;
    train.total_steps = cfg.u64("total_steps");
    train.batch_size = cfg.u64("batch_size");
    train.base_lr = cfg.dbl("base_lr");
    train.warmup_ratio = cfg.dbl("warmup_ratio");
    train.seed = cfg.u64("seed");
    train.log_every = cfg.u64("log_every");
    std::vector<LossPoint> curve =
        train_sae(model, scaler, train, row_sampler(data.acts, train.seed));
    save_sae(cfg.path("out") + "/sae.glpw", model);
    write_loss_csv(cfg.path("out") + "/loss.csv", curve);
    std::printf("final loss %.17g\n", curve.back().loss);
    return 0;
}

inline int run_sample(const RunConfig& cfg) {
    echo_config(cfg);
    DenoiserModel model = load_denoiser(cfg.path("glp"));
    Scaler scaler = load_scaler(cfg.path("scaler"));
    Matrix samples = euler_sample(model, cfg.u64("n"), cfg.u64("num_steps"), scaler,
                                  cfg.u64("seed"));
    write_activation_file(cfg.path("out") + "/samples.glpa", samples,
                          static_cast<std::uint32_t>(cfg.u64("layer_id")));
    std::printf("sampled %zu rows\n", samples.rows);
    return 0;
}

inline int run_fd(const RunConfig& cfg) {
    echo_config(cfg);
    Matrix a = read_activation_file(cfg.path("a")).acts;
    Matrix b = read_activation_file(cfg.path("b")).acts;
    const double fd = frechet_distance(a, b);
    std::printf("%.9f\n", fd);
    write_metrics_csv(cfg.path("out") + "/metrics.csv", {{"fd", cfg.hash(), fd}});
    return 0;
}

inline int run_pca(const RunConfig& cfg) {
    echo_config(cfg);
    ActivationFileData data = read_activation_file(cfg.path("acts"));
    PcaModel pca = pca_top_k(data.acts, cfg.u64("k"));
    std::vector<MetricRow> rows;
    for (std::size_t i = 0; i < pca.variances.size(); ++i)
        rows.push_back({"pca_var_" + std::to_string(i), cfg.hash(), pca.variances[i]});
    write_metrics_csv(cfg.path("out") + "/metrics.csv", rows);
    write_activation_file(cfg.path("out") + "/components.glpa", pca.components,
                          data.layer_id);
    std::printf("top variance %.17g\n", pca.variances.front());
    return 0;
}

inline int run_delta_lm(const RunConfig& cfg) {
    echo_config(cfg);
    SourceLM lm = load_source_lm(cfg.path("source"));
    std::vector<Document> docs = read_corpus(cfg.path("corpus"));
    const std::string kind = cfg.str("reconstructor");
    HookReconstructor reconstruct;
    std::shared_ptr<DenoiserModel> glp;
    std::shared_ptr<SaeModel> sae;
    std::shared_ptr<Scaler> scaler;
    if (kind != "identity") scaler = std::make_shared<Scaler>(load_scaler(cfg.path("scaler")));
    if (kind == "identity") {
        reconstruct = [](const Matrix& x) { return x; };
    } else if (kind == "glp") {
        glp = std::make_shared<DenoiserModel>(load_denoiser(cfg.path("glp")));
        auto seeds = std::make_shared<Rng>(Rng(cfg.u64("seed")).substream("delta-lm"));
        const double t_start = cfg.dbl("t_start");
        const std::size_t num_steps = cfg.u64("num_steps");
        reconstruct = [glp, scaler, seeds, t_start, num_steps](const Matrix& x) {
            SDEditParams params;
            params.t_start = t_start;
            params.num_steps = num_steps;
            params.seed = seeds->next_u64();
            return noisy_reconstruct(*glp, x, params, *scaler);
        };
    } else if (kind == "sae") {
        sae = std::make_shared<SaeModel>(load_sae(cfg.path("sae")));
        reconstruct = [sae, scaler](const Matrix& x) {
            return sae_reconstruct_raw(*sae, *scaler, x);
        };
    } else {
        throw UsageError("reconstructor must be identity, glp, or sae; got `" + kind +
                         "`");
    }
    const double delta = delta_lm_loss(lm, docs, reconstruct);
    std::printf("%.17g\n", delta);
    write_metrics_csv(cfg.path("out") + "/metrics.csv",
                      {{"delta_lm_loss", cfg.hash(), delta}});
    return 0;
}

inline int run_steer(const RunConfig& cfg) {
    echo_config(cfg);
    SourceLM lm = load_source_lm(cfg.path("source"));
    DenoiserModel glp = load_denoiser(cfg.path("glp"));
    Scaler scaler = load_scaler(cfg.path("scaler"));
    GrammarSpec spec = default_grammar(lm.config.vocab_size);
    std::vector<Document> docs = read_corpus(cfg.path("corpus"));

    std::vector<Document> pos, neg;
    for (const Document& d : docs) (d.label == 1 ? pos : neg).push_back(d);
    GLP_REQUIRE(!pos.empty() && !neg.empty(), "steer: need both corpus labels");
    Matrix acts_pos = collect_hook_rows(lm, pos);
    Matrix acts_neg = collect_hook_rows(lm, neg);
    Matrix direction = diffmean_vector(acts_pos, acts_neg);
    const SteeringCoefficient coeff = relative_coefficient(1.0, acts_neg);

    const std::size_t n_prefixes = cfg.u64("n_prefixes");
    GLP_REQUIRE(neg.size() >= n_prefixes, "steer: not enough negative documents");
    std::vector<std::vector<int>> prefixes;
    for (std::size_t i = 0; i < n_prefixes; ++i)
        prefixes.emplace_back(neg[i].tokens.begin(),
                              neg[i].tokens.begin() +
                                  static_cast<std::ptrdiff_t>(lm.config.context_k));

    SteerEvalConfig eval;
    eval.r_grid = parse_double_list(cfg.str("r_grid"), "r_grid");
    eval.t_start = cfg.dbl("t_start");
    eval.num_steps = cfg.u64("num_steps");
    eval.n_new = cfg.u64("n_new");
    eval.seed = cfg.u64("seed");
    std::vector<SteerOutcome> outcomes =
        run_steer_eval(lm, spec, glp, scaler, direction, coeff.norm_bar, prefixes, eval);
    write_steer_csv(cfg.path("out") + "/steer.csv", outcomes);
    std::vector<SteerSummary> summary = summarize_steer(outcomes);
    write_steer_summary_csv(cfg.path("out") + "/steer_summary.csv", summary);
    for (const SteerSummary& s : summary)
        std::printf("%s r=%.2f concept %.4f fluency %.4f\n", steer_method_name(s.method),
                    s.r, s.mean_concept, s.mean_fluency);
    return 0;
}

inline int run_probe(const RunConfig& cfg) {
    echo_config(cfg);
    SourceLM lm = load_source_lm(cfg.path("source"));
    GrammarSpec spec = default_grammar(lm.config.vocab_size);
    TaskSuiteConfig suite;
    suite.n_train = cfg.u64("n_train");
    suite.n_val = cfg.u64("n_val");
    suite.n_test = cfg.u64("n_test");
    suite.doc_len = cfg.u64("doc_len");
    suite.context_k = lm.config.context_k;
    suite.seed = cfg.u64("seed");
    std::vector<ProbeTask> tasks = make_task_suite(spec, suite);

    const std::string name = cfg.str("encoder");
    std::shared_ptr<DenoiserModel> glp;
    std::shared_ptr<SaeModel> sae;
    std::shared_ptr<Scaler> scaler;
    EncoderInfo encoder;
    if (name == "raw-hook") {
        encoder = encoder_raw_hook(lm);
    } else if (name == "raw-source-mlp") {
        encoder = encoder_raw_source_mlp(lm);
    } else if (name == "sae-latents") {
        scaler = std::make_shared<Scaler>(load_scaler(cfg.path("scaler")));
        sae = std::make_shared<SaeModel>(load_sae(cfg.path("sae")));
        encoder = encoder_sae_latents(lm, *sae, *scaler);
    } else if (name == "glp-meta-neurons") {
        scaler = std::make_shared<Scaler>(load_scaler(cfg.path("scaler")));
        glp = std::make_shared<DenoiserModel>(load_denoiser(cfg.path("glp")));
        encoder = encoder_glp_meta_neurons(lm, *glp, *scaler, cfg.dbl("t"),
                                           cfg.u64("seed"));
    } else {
        throw UsageError(
            "encoder must be raw-hook, raw-source-mlp, sae-latents, or "
            "glp-meta-neurons; got `" +
            name + "`");
    }

    const std::string mode_name = cfg.str("mode");
    ProbeMode mode;
    if (mode_name == "1d") mode = ProbeMode::OneD;
    else if (mode_name == "dense") mode = ProbeMode::Dense;
    else throw UsageError("mode must be 1d or dense; got `" + mode_name + "`");

    const Rng seeds = Rng(cfg.u64("seed")).substream("probe-tasks");
    std::vector<ProbeResult> results;
    for (const ProbeTask& task : tasks) {
        const std::uint64_t task_seed = seeds.substream(task.name).next_u64();
        results.push_back(probe_task_pipeline(task, encoder, cfg.u64("k"), mode, task_seed));
        std::printf("%-24s val %.4f test %.4f\n", results.back().task.c_str(),
                    results.back().val_auc, results.back().test_auc);
    }
    write_probe_csv(cfg.path("out") + "/probe.csv", results);
    return 0;
}

inline int run_scaling_fit(const RunConfig& cfg) {
    echo_config(cfg);
    std::vector<std::vector<CurvePoint>> curves;
    for (const std::string& path : split_list(cfg.path("curves")))
        curves.push_back(
            smoothed_points(points_from_log(read_loss_csv(path)), cfg.dbl("half_life")));
    std::vector<CurvePoint> frontier = compute_frontier(curves);
    PowerLawFit fit = fit_power_law(frontier);
    write_power_law_csv(cfg.path("out") + "/power_law.csv", fit);
    std::ofstream fout(cfg.path("out") + "/frontier.csv");
    GLP_REQUIRE(fout.good(), "cannot write frontier.csv");
    fout << "flops,loss\n";
    char buf[96];
    for (const CurvePoint& p : frontier) {
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g\n", p.flops, p.loss);
        fout << buf;
    }
    std::printf("E %.17g A %.17g alpha %.17g residual %.17g\n", fit.E, fit.A, fit.alpha,
                fit.residual);
    return 0;
}

inline int run_repro(const RunConfig& cfg) {
    echo_config(cfg);
    CliRunner runner = [](const std::vector<std::string>& args) {
        std::vector<const char*> argv;
        argv.push_back("glp");
        for (const std::string& a : args) argv.push_back(a.c_str());
        return cli_main(static_cast<int>(argv.size()), argv.data());
    };
    std::vector<CriterionResult> results =
        run_acceptance(cfg.str("profile"), cfg.path("out"), runner);
    write_acceptance_summary(cfg.path("out") + "/acceptance.csv", results);
    bool all_pass = true;
    for (const CriterionResult& r : results) {
        std::printf("[%s] %2d %-38s %7.1fs  %s\n", r.pass ? "PASS" : "FAIL", r.id,
                    r.name.c_str(), r.seconds, r.detail.c_str());
        all_pass = all_pass && r.pass;
    }
    return all_pass ? 0 : 2;
}

inline std::vector<Subcommand> subcommands() {
    return {
        {"gen-corpus",
         "Sample a labeled two-regime token corpus",
         {{"n_docs", "1000"}, {"doc_len", "64"}, {"vocab", "32"}, {"seed", "0"},
          {"out", "runs/gen-corpus"}},
         run_gen_corpus},
        {"train-source",
         "Train the source language model on a corpus",
         {{"corpus", ""}, {"total_steps", "2000"}, {"batch_size", "128"},
          {"base_lr", "3e-3"}, {"warmup_ratio", "0.01"}, {"val_fraction", "0.1"},
          {"log_every", "10"}, {"seed", "0"}, {"out", "runs/train-source"}},
         run_train_source},
        {"cache",
         "Run the source model over a corpus and store hook activations",
         {{"corpus", ""}, {"source", ""}, {"layer_id", "0"}, {"out", "runs/cache"}},
         run_cache},
        {"fit-scaler",
         "Fit the per-dimension standardizer to cached activations",
         {{"acts", ""}, {"out", "runs/fit-scaler"}},
         run_fit_scaler},
        {"train",
         "Train the generative flow model on cached activations",
         {{"acts", ""}, {"scaler", ""}, {"width", "64"}, {"expansion", "128"},
          {"n_blocks", "3"}, {"multi_layer", "false"}, {"total_steps", "2000"},
          {"batch_size", "256"}, {"base_lr", "5e-5"}, {"warmup_ratio", "0.01"},
          {"log_every", "10"}, {"seed", "0"}, {"out", "runs/train"}},
         run_train_glp},
        {"train-sae",
         "Train the top-k sparse autoencoder baseline",
         {{"acts", ""}, {"scaler", ""}, {"latent_dim", "256"}, {"active_k", "8"},
          {"total_steps", "2000"}, {"batch_size", "256"}, {"base_lr", "1e-3"},
          {"warmup_ratio", "0.01"}, {"log_every", "10"}, {"seed", "0"},
          {"out", "runs/train-sae"}},
         run_train_sae},
        {"sample",
         "Draw unconditional samples from a trained flow model",
         {{"glp", ""}, {"scaler", ""}, {"n", "1000"}, {"num_steps", "20"},
          {"layer_id", "0"}, {"seed", "0"}, {"out", "runs/sample"}},
         run_sample},
        {"fd",
         "Frechet distance between two activation files",
         {{"a", ""}, {"b", ""}, {"out", "runs/fd"}},
         run_fd},
        {"pca",
         "Top-k principal components of an activation file",
         {{"acts", ""}, {"k", "8"}, {"out", "runs/pca"}},
         run_pca},
        {"delta-lm",
         "Source-model loss increase under hook reconstruction",
         {{"corpus", ""}, {"source", ""}, {"scaler", ""}, {"glp", ""}, {"sae", ""},
          {"reconstructor", "identity"}, {"t_start", "0.5"}, {"num_steps", "20"},
          {"seed", "0"}, {"out", "runs/delta-lm"}},
         run_delta_lm},
        {"steer",
         "Steering grid evaluation: raw edits vs flow-projected edits",
         {{"corpus", ""}, {"source", ""}, {"glp", ""}, {"scaler", ""},
          {"n_prefixes", "100"}, {"n_new", "20"}, {"t_start", "0.5"},
          {"num_steps", "20"},
          {"r_grid", "0.2,0.4,0.6,0.8,1.0,1.2,1.4,1.6,1.8,2.0"}, {"seed", "0"},
          {"out", "runs/steer"}},
         run_steer},
        {"probe",
         "Train linear probes on sequence features over the synthetic task suite",
         {{"source", ""}, {"scaler", ""}, {"glp", ""}, {"sae", ""},
          {"encoder", "raw-hook"}, {"mode", "1d"}, {"t", "0.1"}, {"k", "512"},
          {"n_train", "256"}, {"n_val", "128"}, {"n_test", "128"},
          {"doc_len", "64"}, {"seed", "0"}, {"out", "runs/probe"}},
         run_probe},
        {"scaling-fit",
         "Smooth loss curves, extract the compute frontier, fit the power law",
         {{"curves", ""}, {"half_life", "50"}, {"out", "runs/scaling-fit"}},
         run_scaling_fit},
        {"repro",
         "Run the full acceptance pipeline and write a summary table",
         {{"profile", "desk"}, {"out", "runs/repro"}},
         run_repro},
    };
}

}  // namespace cli

inline int cli_main(int argc, const char* const* argv) {
    CLI::App app{"Generative flow meta-model over source-model activations"};
    app.require_subcommand(1);

    std::vector<cli::Subcommand> defs = cli::subcommands();
    std::vector<std::unique_ptr<ConfigMap>> flag_maps;
    std::vector<std::unique_ptr<std::string>> config_paths;
    int exit_code = 0;

    for (cli::Subcommand& def : defs) {
        CLI::App* sub = app.add_subcommand(def.name, def.description);
        flag_maps.push_back(std::make_unique<ConfigMap>());
        config_paths.push_back(std::make_unique<std::string>());
        ConfigMap* flags = flag_maps.back().get();
        std::string* config_path = config_paths.back().get();
        sub->add_option("--config", *config_path, "settings file (`key = value` lines)");
        for (const auto& [key, defval] : def.defaults) {
            sub->add_option_function<std::string>(
                "--" + key,
                [flags, k = key](const std::string& v) { (*flags)[k] = v; },
                defval.empty() ? "required" : "default: " + defval);
        }
        cli::Subcommand* run_def = &def;
        sub->callback([run_def, flags, config_path, &exit_code]() {
            const ConfigMap file =
                config_path->empty() ? ConfigMap{} : read_config_file(*config_path);
            RunConfig cfg = resolve_config(run_def->defaults, file, *flags);
            exit_code = run_def->run(cfg);
        });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const UsageError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return exit_code;
}

}  // namespace glp
