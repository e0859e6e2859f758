#ifndef CXR_CLI_HPP
#define CXR_CLI_HPP

// Subcommand driver behind tools/cxr. Kept in a header so tests can run a
// whole pipeline in-process.

#include <chrono>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cxr/common.hpp"
#include "cxr/data.hpp"
#include "cxr/eval.hpp"
#include "cxr/explain.hpp"
#include "cxr/io.hpp"
#include "cxr/models.hpp"
#include "cxr/training.hpp"
#include "json.hpp"

namespace cxr::cli {

namespace fs = std::filesystem;

struct Globals {
    std::string config_path;
    std::uint64_t seed = 0;
    std::string out = "cxr-out";
};

struct SynthArgs {
    SynthConfig cfg;
};

struct PrepareArgs {
    std::string input;
    int max_rating = 5;
};

struct TrainArgs {
    std::string data;
    std::string model;
    ScorerConfig scorer;
    TrainConfig train;
    std::string distance = "elastic_net";
};

struct EvaluateArgs {
    std::string data;
    std::string checkpoint;
    std::string model;  // optional expectation checked against the checkpoint
    std::string name;
    bool random = false;
    EvalSettings settings;
};

struct ExplainArgs {
    std::string data;
    std::vector<std::string> runs;
    std::size_t k = 5;
    std::string truth = "reviews";
};

struct ReportArgs {
    std::vector<std::string> inputs;
};

namespace detail {

inline std::string key_to_flag(std::string key) {
    for (auto& c : key)
        if (c == '_') c = '-';
    return "--" + key;
}

inline std::vector<std::string> json_to_results(const nlohmann::json& v) {
    if (v.is_string()) return {v.get<std::string>()};
    if (v.is_boolean()) return {v.get<bool>() ? "true" : "false"};
    if (v.is_number()) return {v.dump()};
    if (v.is_array()) {
        std::vector<std::string> out;
        for (const auto& e : v) {
            auto part = json_to_results(e);
            out.insert(out.end(), part.begin(), part.end());
        }
        return out;
    }
    throw ConfigError("config values must be strings, numbers, booleans or arrays");
}

/// Feeds an option a value from the config file unless the command line
/// already set it.
inline void apply_value(CLI::Option* opt, const nlohmann::json& v) {
    if (opt->count() > 0) return;
    for (const auto& s : json_to_results(v)) opt->add_result(s);
    opt->run_callback();
}

/// Top-level keys apply to whichever subcommand has a matching option;
/// an object keyed by a subcommand name applies to that subcommand only.
inline void merge_config(CLI::App& app, CLI::App& active, const nlohmann::json& cfg) {
    if (!cfg.is_object()) throw ConfigError("config file must hold a JSON object");
    for (const auto& [key, value] : cfg.items()) {
        if (value.is_object()) {
            if (app.get_subcommand_no_throw(key) == nullptr) throw ConfigError("unknown config section: " + key);
            if (key == active.get_name()) {
                for (const auto& [k2, v2] : value.items()) {
                    auto* opt = active.get_option_no_throw(key_to_flag(k2));
                    if (!opt) throw ConfigError("unknown option in config section " + key + ": " + k2);
                    apply_value(opt, v2);
                }
            }
            continue;
        }
        const auto flag = key_to_flag(key);
        if (auto* opt = app.get_option_no_throw(flag)) {
            if (key != "config") apply_value(opt, value);
            continue;
        }
        if (auto* opt = active.get_option_no_throw(flag)) {
            apply_value(opt, value);
            continue;
        }
        bool known = false;
        for (const auto* sub : app.get_subcommands({})) known = known || sub->get_option_no_throw(flag) != nullptr;
        if (!known) throw ConfigError("unknown config key: " + key);
    }
}

inline void ensure_dir(const fs::path& p) {
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec || !fs::is_directory(p)) throw Error("cannot create output directory " + p.string());
}

inline std::string render(const std::function<void(std::ostream&)>& fn) {
    std::ostringstream ss;
    fn(ss);
    return ss.str();
}

inline nlohmann::json base_echo(const std::string& command, const Globals& g) {
    return {{"command", command}, {"seed", g.seed}, {"format_version", kFormatVersion}};
}

inline nlohmann::json synth_json(const SynthConfig& c) {
    return {{"users", c.users},   {"items", c.items},           {"features", c.features},
            {"density", c.density}, {"planted", c.planted},     {"noise", c.noise},
            {"max_rating", c.max_rating}, {"liked_fraction", c.liked_fraction}};
}

struct LoadedRun {
    fs::path dir;
    Model model;
    nlohmann::json header;
};

inline LoadedRun load_run(const fs::path& dir) {
    std::istringstream in(read_file(dir / "model.ckpt"));
    auto lm = load_model(in);
    return {dir, std::move(lm.model), std::move(lm.header)};
}

inline void check_model_fits(const Model& m, const Dataset& d) {
    if (m.num_users() != d.num_users() || m.num_items() != d.num_items() || m.num_features() != d.num_features())
        throw ValidationError("checkpoint was trained on a dataset of a different shape");
}

}  // namespace detail

// ===========================================================================
// Commands

inline void cmd_synth(const Globals& g, const SynthArgs& a, std::ostream& log) {
    a.cfg.validate();
    auto echo = detail::base_echo("synth", g);
    echo["synth"] = detail::synth_json(a.cfg);
    auto corpus = synth_generate(a.cfg, g.seed);
    auto d = build_dataset(corpus.records, a.cfg.max_rating, g.seed);
    detail::ensure_dir(g.out);
    write_prepared(g.out, d, echo, corpus.planted);
    log << "synth: " << d.records.size() << " records, " << d.num_users() << " users, " << d.num_items()
        << " items, " << d.num_features() << " features -> " << g.out << '\n';
}

inline void cmd_prepare(const Globals& g, const PrepareArgs& a, std::ostream& log) {
    if (a.max_rating < 2) throw ConfigError("max rating T must be >= 2");
    auto echo = detail::base_echo("prepare", g);
    echo["input"] = a.input;
    echo["max_rating"] = a.max_rating;
    auto d = build_dataset(parse_interactions(a.input, a.max_rating), a.max_rating, g.seed);
    detail::ensure_dir(g.out);
    write_prepared(g.out, d, echo);
    log << "prepare: " << d.records.size() << " records, " << d.split.train.size() << " train / "
        << d.split.test.size() << " test positives -> " << g.out << '\n';
}

inline void cmd_train(const Globals& g, TrainArgs a, std::ostream& log) {
    a.scorer.kind = parse_model_kind(a.model);
    a.scorer.validate();
    a.train.distance = parse_distance_kind(a.distance);
    a.train.seed = g.seed;
    a.train.validate();
    auto prepared = load_prepared(a.data);
    const auto& d = prepared.dataset;

    auto echo = detail::base_echo("train", g);
    echo["data"] = a.data;
    echo["scorer"] = to_json(a.scorer);
    echo["train"] = to_json(a.train);

    Model m(a.scorer, d.num_users(), d.num_items(), d.num_features(), g.seed);
    const auto t0 = std::chrono::steady_clock::now();
    auto result = train_model(m, d, a.train);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    for (const auto& e : result.log) log << to_json(e, true).dump() << '\n';

    detail::ensure_dir(g.out);
    const fs::path out = g.out;
    write_file(out / "model.ckpt", detail::render([&](std::ostream& o) { save_model(o, m, echo); }));
    write_file(out / "run_log.jsonl", detail::render([&](std::ostream& o) { write_run_log(o, result.log, echo); }));
    const auto dump = out / "perturbations.tsv";
    if (uses_feature_mapping(m.kind())) {
        write_file(dump, detail::render([&](std::ostream& o) { write_perturbations(o, d, result.perturbations, echo); }));
    } else {
        std::error_code ec;
        fs::remove(dump, ec);  // stale dump from an earlier run in the same directory
    }
    log << "train: " << to_string(m.kind()) << " finished in " << format_double(secs) << " s, digest "
        << hex64(m.params().digest()) << " -> " << g.out << '\n';
}

inline EvalReport cmd_evaluate(const Globals& g, EvaluateArgs a, std::ostream& log) {
    if (a.settings.pool_size < 2) throw ConfigError("pool size must be at least 2");
    if (a.settings.k == 0) throw ConfigError("k must be positive");
    if (a.random == !a.checkpoint.empty()) throw ConfigError("evaluate needs exactly one of --checkpoint or --random");
    a.settings.seed = g.seed;
    auto prepared = load_prepared(a.data);
    const auto& d = prepared.dataset;

    auto echo = detail::base_echo("evaluate", g);
    echo["data"] = a.data;
    echo["pool_size"] = a.settings.pool_size;
    echo["k"] = a.settings.k;

    EvalReport rep;
    std::string name = a.name;
    if (a.random) {
        echo["scorer"] = "random";
        rep = evaluate_ranking(d, random_scorer(derive_seed(g.seed, {0x4a2d})), a.settings);
        if (name.empty()) name = "random";
    } else {
        fs::path ckpt = a.checkpoint;
        if (fs::is_directory(ckpt)) ckpt /= "model.ckpt";  // a train output directory
        std::istringstream in(read_file(ckpt));
        auto lm = load_model(in);
        if (!a.model.empty() && parse_model_kind(a.model) != lm.model.kind())
            throw ConfigError("checkpoint holds a " + to_string(lm.model.kind()) + " model, not " + a.model);
        detail::check_model_fits(lm.model, d);
        echo["checkpoint"] = a.checkpoint;
        echo["checkpoint_digest"] = hex64(lm.model.params().digest());
        rep = evaluate_ranking(d, model_scorer(lm.model, d), a.settings);
        if (name.empty()) name = to_string(lm.model.kind());
    }
    echo["name"] = name;

    detail::ensure_dir(g.out);
    const fs::path out = g.out;
    nlohmann::json j = {{"format_version", kFormatVersion}, {"name", name}, {"report", to_json(rep)}, {"config", echo}};
    write_file(out / "eval.json", j.dump(2) + "\n");
    write_file(out / "eval.csv", detail::render([&](std::ostream& o) { write_eval_csv(o, {{name, rep}}, echo); }));
    log << "evaluate: " << name << " NDCG@" << rep.k << " " << format_double(rep.ndcg) << " over "
        << rep.users_evaluated << " users (pool " << rep.min_pool << ".." << rep.max_pool << ")\n";
    return rep;
}

inline void cmd_explain(const Globals& g, const ExplainArgs& a, std::ostream& log) {
    if (a.k == 0) throw ConfigError("k must be positive");
    if (a.truth != "reviews" && a.truth != "planted") throw ConfigError("--truth must be reviews or planted");
    if (a.runs.empty()) throw ConfigError("explain needs at least one --run directory");
    auto prepared = load_prepared(a.data);
    const auto& d = prepared.dataset;
    const std::size_t P = d.num_features();

    auto echo = detail::base_echo("explain", g);
    echo["data"] = a.data;
    echo["runs"] = a.runs;
    echo["k"] = a.k;
    echo["truth"] = a.truth;

    std::map<std::size_t, std::vector<std::size_t>> truth;
    for (std::size_t u = 0; u < d.num_users(); ++u) {
        std::vector<std::size_t> g_u;
        if (a.truth == "planted") {
            if (prepared.manifest.planted.empty()) throw ConfigError("--truth planted needs a synthetic dataset");
            auto it = prepared.manifest.planted.find(d.user_ids[u]);
            if (it != prepared.manifest.planted.end())
                for (const auto& w : it->second)
                    if (auto k = d.vocab.find(w)) g_u.push_back(*k);
            std::sort(g_u.begin(), g_u.end());
        } else {
            g_u = ground_truth_features(d, u);
        }
        truth[u] = std::move(g_u);
    }

    std::map<ExplanationSource, std::vector<ExplanationVector>> vectors;
    for (const auto& [u, g_u] : truth)
        if (!g_u.empty()) vectors[ExplanationSource::GT].push_back(explanation_ground_truth(u, g_u, P));

    nlohmann::json digests = nlohmann::json::array();
    for (const auto& run : a.runs) {
        auto r = detail::load_run(run);
        detail::check_model_fits(r.model, d);
        const auto src = source_for(r.model.kind());
        if (vectors.count(src)) throw ConfigError("two runs provide " + to_string(src) + " explanations");
        digests.push_back(hex64(r.model.params().digest()));
        auto& out = vectors[src];
        if (src == ExplanationSource::NAR) {
            for (std::size_t u = 0; u < d.num_users(); ++u) out.push_back(explanation_nar(r.model, d, u));
        } else {
            const auto dump = fs::path(run) / "perturbations.tsv";
            if (!fs::exists(dump))
                throw Error(to_string(src) + " explanations need the perturbation dump written by `cxr train` (missing " +
                            dump.string() + ")");
            std::istringstream in(read_file(dump));
            const auto records = read_perturbations(in, d);
            const auto kind = src == ExplanationSource::CAR ? PerturbationKind::Adversarial
                                                            : PerturbationKind::Counterfactual;
            for (std::size_t u = 0; u < d.num_users(); ++u) out.push_back(explanation_perturb(u, records, kind, P));
        }
        std::erase_if(out, [](const ExplanationVector& v) { return v.empty_input; });
    }
    echo["checkpoint_digests"] = digests;

    std::vector<ExplanationVector> all;
    std::map<ExplanationSource, std::map<std::size_t, std::vector<double>>> by_source;
    std::vector<std::pair<std::string, ExplanationReport>> rows;
    nlohmann::json report_json = nlohmann::json::object();
    for (const auto& [src, vs] : vectors) {
        std::map<std::size_t, std::vector<double>> phi;
        for (const auto& v : vs) {
            all.push_back(v);
            phi[v.user] = v.values;
        }
        by_source[src] = phi;
        if (src == ExplanationSource::GT) continue;
        auto rep = explanation_report(phi, truth, a.k);
        rows.emplace_back(to_string(src), rep);
        report_json[to_string(src)] = to_json(rep);
    }
    std::stable_sort(all.begin(), all.end(), [](const auto& x, const auto& y) { return x.user < y.user; });

    detail::ensure_dir(g.out);
    const fs::path out = g.out;
    write_file(out / "explanations.tsv", detail::render([&](std::ostream& o) { write_explanations(o, d, all, echo); }));
    write_file(out / "top_words.tsv", detail::render([&](std::ostream& o) { write_top_words(o, d, all, a.k, echo); }));
    write_file(out / "explanation_report.csv",
               detail::render([&](std::ostream& o) { write_explanation_report_csv(o, rows, echo); }));
    nlohmann::json rj = {{"format_version", kFormatVersion}, {"reports", report_json}, {"config", echo}};
    write_file(out / "explanation_report.json", rj.dump(2) + "\n");
    auto cm = pearson_matrix(by_source);
    write_file(out / "correlation.csv", detail::render([&](std::ostream& o) { write_correlation_csv(o, cm, echo); }));
    write_file(out / "correlation_counts.csv",
               detail::render([&](std::ostream& o) { write_correlation_counts(o, cm, echo); }));
    for (const auto& [name, rep] : rows)
        log << "explain: " << name << " P@" << a.k << " " << format_double(rep.precision) << " F1 "
            << format_double(rep.f1) << " NDCG " << format_double(rep.ndcg) << " (" << rep.users_evaluated
            << " users)\n";
}

inline void cmd_report(const Globals& g, const ReportArgs& a, std::ostream& log) {
    if (a.inputs.empty()) throw ConfigError("report needs at least one --input eval.json");
    auto echo = detail::base_echo("report", g);
    echo["inputs"] = a.inputs;
    std::vector<std::pair<std::string, EvalReport>> rows;
    for (const auto& path : a.inputs) {
        auto j = nlohmann::json::parse(read_file(path));
        rows.emplace_back(j.at("name").get<std::string>(), eval_report_from_json(j.at("report")));
    }
    detail::ensure_dir(g.out);
    const auto csv = detail::render([&](std::ostream& o) { write_eval_csv(o, rows, echo); });
    write_file(fs::path(g.out) / "report.csv", csv);
    log << csv;
}

// ===========================================================================
// Entry point

inline int run(int argc, const char* const* argv, std::ostream& log = std::cerr) {
    CLI::App app{"Contextualized explainable recommendation: data, training, evaluation, explanations", "cxr"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--config", g.config_path, "JSON config file; command-line flags take precedence")
        ->check(CLI::ExistingFile);
    auto* seed_opt = app.add_option("--seed", g.seed, "global seed (required except for report)");
    app.add_option("--out", g.out, "output directory")->capture_default_str();

    SynthArgs sa;
    auto* synth = app.add_subcommand("synth", "generate a planted-preference dataset");
    synth->add_option("--users", sa.cfg.users)->capture_default_str();
    synth->add_option("--items", sa.cfg.items)->capture_default_str();
    synth->add_option("--features", sa.cfg.features)->capture_default_str();
    synth->add_option("--density", sa.cfg.density)->capture_default_str();
    synth->add_option("--planted", sa.cfg.planted, "preferred words per user")->capture_default_str();
    synth->add_option("--noise", sa.cfg.noise)->capture_default_str();
    synth->add_option("--max-rating", sa.cfg.max_rating)->capture_default_str();
    synth->add_option("--liked-fraction", sa.cfg.liked_fraction)->capture_default_str();

    PrepareArgs pa;
    auto* prepare = app.add_subcommand("prepare", "ingest an interaction file and fix the train/test split");
    prepare->add_option("--input", pa.input, "interaction file")->required()->check(CLI::ExistingFile);
    prepare->add_option("--max-rating", pa.max_rating, "rating scale T")->capture_default_str();

    TrainArgs ta;
    auto* train = app.add_subcommand("train", "train one model on a prepared dataset");
    train->add_option("--data", ta.data, "prepared dataset directory")->required();
    train->add_option("--model", ta.model, "nar, car, cnr or baseline")->required();
    train->add_option("--id-dim", ta.scorer.id_dim)->capture_default_str();
    train->add_option("--feature-dim", ta.scorer.feature_dim)->capture_default_str();
    train->add_option("--hidden", ta.scorer.hidden, "MLP hidden sizes")->delimiter(',')->capture_default_str();
    train->add_option("--activation", ta.scorer.activation)->capture_default_str();
    train->add_option("--epochs", ta.train.epochs)->capture_default_str();
    train->add_option("--lr", ta.train.lr)->capture_default_str();
    train->add_option("--batch-size", ta.train.batch_size)->capture_default_str();
    train->add_option("--negatives", ta.train.negatives)->capture_default_str();
    train->add_option("--epsilon", ta.train.epsilon, "adversarial L2 radius")->capture_default_str();
    train->add_option("--lambda", ta.train.lambda, "adversarial loss weight")->capture_default_str();
    train->add_option("--xi", ta.train.xi, "counterfactual distance weight")->capture_default_str();
    train->add_option("--outer", ta.train.outer, "counterfactual alternations")->capture_default_str();
    train->add_option("--distance", ta.distance, "elastic_net or l2")->capture_default_str();
    train->add_option("--cf-steps", ta.train.cf_steps)->capture_default_str();
    train->add_option("--cf-lr", ta.train.cf_lr)->capture_default_str();
    train->add_option("--cf-tol", ta.train.cf_tol)->capture_default_str();
    train->add_option("--cf-triples-per-user", ta.train.cf_triples_per_user)->capture_default_str();
    train->add_option("--cf-theta-epochs", ta.train.cf_theta_epochs)->capture_default_str();

    EvaluateArgs ea;
    auto* evaluate = app.add_subcommand("evaluate", "sampled top-k ranking evaluation");
    evaluate->add_option("--data", ea.data, "prepared dataset directory")->required();
    evaluate->add_option("--checkpoint", ea.checkpoint, "model.ckpt from train, or its directory");
    evaluate->add_option("--model", ea.model, "expected model kind of the checkpoint");
    evaluate->add_option("--name", ea.name, "row label in the report");
    evaluate->add_flag("--random", ea.random, "score with a seeded random scorer instead of a model");
    evaluate->add_option("--pool-size", ea.settings.pool_size)->capture_default_str();
    evaluate->add_option("--k", ea.settings.k)->capture_default_str();

    ExplainArgs xa;
    auto* explain = app.add_subcommand("explain", "explanation vectors, metrics and correlations");
    explain->add_option("--data", xa.data, "prepared dataset directory")->required();
    explain->add_option("--run", xa.runs, "train output directory (repeatable)")->required();
    explain->add_option("--k", xa.k, "top-k cutoff")->capture_default_str();
    explain->add_option("--truth", xa.truth, "reviews or planted")->capture_default_str();

    ReportArgs ra;
    auto* report = app.add_subcommand("report", "collect eval.json files into one table");
    report->add_option("--input", ra.inputs, "eval.json (repeatable)")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        std::ostringstream out, err;
        const int code = app.exit(e, out, err);
        log << out.str() << err.str();
        return code;
    }

    try {
        CLI::App* active = app.get_subcommands().front();
        if (!g.config_path.empty()) {
            nlohmann::json cfg;
            try {
                cfg = nlohmann::json::parse(read_file(g.config_path));
            } catch (const nlohmann::json::exception& e) {
                throw ConfigError("config file is not valid JSON: " + std::string(e.what()));
            }
            try {
                detail::merge_config(app, *active, cfg);
            } catch (const CLI::Error& e) {
                throw ConfigError("config value rejected: " + std::string(e.what()));
            }
        }
        if (active != report && seed_opt->count() == 0)
            throw ConfigError("--seed is required (no unseeded runs)");
        if (active == synth) cmd_synth(g, sa, log);
        else if (active == prepare) cmd_prepare(g, pa, log);
        else if (active == train) cmd_train(g, ta, log);
        else if (active == evaluate) cmd_evaluate(g, ea, log);
        else if (active == explain) cmd_explain(g, xa, log);
        else cmd_report(g, ra, log);
    } catch (const ConfigError& e) {
        log << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        log << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

inline int run(const std::vector<std::string>& args, std::ostream& log = std::cerr) {
    std::vector<const char*> argv{"cxr"};
    for (const auto& a : args) argv.push_back(a.c_str());
    return run(static_cast<int>(argv.size()), argv.data(), log);
}

}  // namespace cxr::cli

#endif  // CXR_CLI_HPP
