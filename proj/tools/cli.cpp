#include "cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "nedcal/calibration_metrics.hpp"
#include "nedcal/embedding_store.hpp"
#include "nedcal/errors.hpp"
#include "nedcal/kde_oracle.hpp"
#include "nedcal/metric_index.hpp"
#include "nedcal/perturbation_harness.hpp"
#include "nedcal/scorers.hpp"
#include "nedcal/temperature_tuner.hpp"
#include "nedcal/text_format.hpp"

namespace nedcal::cli {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

// Everything that determines a run's outputs. Thread count and output
// directory are deliberately absent: they never change the results.
struct Options {
    std::string command;
    std::string input;
    std::string support;
    std::string query;
    std::string truth;
    std::string spec;
    std::string format;  // empty: guess from each file's extension
    std::string to = "binary";
    std::string rule = "ned";
    std::vector<std::size_t> k{10};
    std::optional<double> temperature;
    std::size_t bins = kDefaultBins;
    std::string metric = "sqeuclidean";
    std::optional<std::uint64_t> seed;
    std::string mode = "loo";
    double fraction = 0.2;
    std::size_t grid = 32;
    std::size_t refine = 24;
    std::optional<double> t_min;
    std::optional<double> t_max;
    std::string sweep = "k";
    std::vector<std::string> rules{"ned", "knn", "wknn-a", "wknn-b", "1nn"};
    std::string perturb = "gaussian";
    std::vector<int> severities{1, 2, 3, 4, 5};
    bool fixed_t = false;
    bool scores = false;
    std::optional<std::size_t> n_support;
    std::optional<std::size_t> n_query;
    std::size_t pairs = 2000;
};

template <typename T>
json opt_json(const std::optional<T>& v) {
    return v ? json(*v) : json(nullptr);
}

template <typename T>
std::optional<T> opt_from(const json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<T>();
}

json to_json(const Options& o) {
    json j;
    j["command"] = o.command;
    j["input"] = o.input;
    j["support"] = o.support;
    j["query"] = o.query;
    j["truth"] = o.truth;
    j["spec"] = o.spec;
    j["format"] = o.format;
    j["to"] = o.to;
    j["rule"] = o.rule;
    j["k"] = o.k;
    j["temperature"] = opt_json(o.temperature);
    j["bins"] = o.bins;
    j["metric"] = o.metric;
    j["seed"] = opt_json(o.seed);
    j["mode"] = o.mode;
    j["fraction"] = o.fraction;
    j["grid"] = o.grid;
    j["refine"] = o.refine;
    j["t_min"] = opt_json(o.t_min);
    j["t_max"] = opt_json(o.t_max);
    j["sweep"] = o.sweep;
    j["rules"] = o.rules;
    j["perturb"] = o.perturb;
    j["severities"] = o.severities;
    j["fixed_t"] = o.fixed_t;
    j["scores"] = o.scores;
    j["n_support"] = opt_json(o.n_support);
    j["n_query"] = opt_json(o.n_query);
    j["pairs"] = o.pairs;
    return j;
}

Options from_json(const json& j) {
    Options o;
    o.command = j.at("command").get<std::string>();
    o.input = j.at("input").get<std::string>();
    o.support = j.at("support").get<std::string>();
    o.query = j.at("query").get<std::string>();
    o.truth = j.at("truth").get<std::string>();
    o.spec = j.at("spec").get<std::string>();
    o.format = j.at("format").get<std::string>();
    o.to = j.at("to").get<std::string>();
    o.rule = j.at("rule").get<std::string>();
    o.k = j.at("k").get<std::vector<std::size_t>>();
    o.temperature = opt_from<double>(j, "temperature");
    o.bins = j.at("bins").get<std::size_t>();
    o.metric = j.at("metric").get<std::string>();
    o.seed = opt_from<std::uint64_t>(j, "seed");
    o.mode = j.at("mode").get<std::string>();
    o.fraction = j.at("fraction").get<double>();
    o.grid = j.at("grid").get<std::size_t>();
    o.refine = j.at("refine").get<std::size_t>();
    o.t_min = opt_from<double>(j, "t_min");
    o.t_max = opt_from<double>(j, "t_max");
    o.sweep = j.at("sweep").get<std::string>();
    o.rules = j.at("rules").get<std::vector<std::string>>();
    o.perturb = j.at("perturb").get<std::string>();
    o.severities = j.at("severities").get<std::vector<int>>();
    o.fixed_t = j.at("fixed_t").get<bool>();
    o.scores = j.at("scores").get<bool>();
    o.n_support = opt_from<std::size_t>(j, "n_support");
    o.n_query = opt_from<std::size_t>(j, "n_query");
    o.pairs = j.at("pairs").get<std::size_t>();
    return o;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed for " + path.string());
}

std::string absolute_or_empty(const std::string& p) {
    return p.empty() ? p : fs::absolute(p).lexically_normal().string();
}

void require_file(const std::string& p, const char* what) {
    if (p.empty()) throw ValidationError(std::string("missing --") + what);
    if (!fs::exists(p)) throw ValidationError(std::string(what) + " file not found: " + p);
}

FileFormat input_format(const Options& o, const std::string& path) {
    if (!o.format.empty()) return parse_file_format(o.format);
    if (auto f = format_from_extension(path)) return *f;
    throw ValidationError("cannot tell the format of " + path + "; pass --format");
}

std::string extension(FileFormat f) {
    switch (f) {
        case FileFormat::binary: return ".bin";
        case FileFormat::jsonl: return ".jsonl";
        case FileFormat::csv: return ".csv";
    }
    return ".bin";
}

MetricKind metric_of(const Options& o) {
    const auto m = parse_metric(o.metric);
    if (m == MetricKind::cosine)
        std::cerr << "note: the calibration argument behind NED assumes squared-euclidean distance; "
                     "cosine scores are not covered by it\n";
    return m;
}

TuneConfig tune_config(const Options& o, std::size_t k, std::size_t threads) {
    TuneConfig cfg;
    cfg.mode = parse_tune_mode(o.mode);
    cfg.k = k;
    cfg.t_min = o.t_min;
    cfg.t_max = o.t_max;
    cfg.grid_points = o.grid;
    cfg.refine_iters = o.refine;
    cfg.holdout_fraction = o.fraction;
    cfg.seed = o.seed.value_or(0);
    cfg.threads = threads;
    return cfg;
}

SupportSet load_support(const Options& o) {
    require_file(o.support, "support");
    return load_records(o.support, input_format(o, o.support));
}

// Queries in the support's label space. With --truth, labels come from the
// truth file, matched by id.
SupportSet load_queries(const Options& o, const SupportSet& support) {
    require_file(o.query, "query");
    LoadOptions lo;
    lo.fixed_labels = support.label_space();
    lo.role = SetRole::query;
    auto queries = load_records(o.query, input_format(o, o.query), lo);
    if (o.truth.empty()) return queries;
    require_file(o.truth, "truth");
    const auto truth = load_records(o.truth, input_format(o, o.truth), lo);
    std::map<std::string, ClassIndex> by_id;
    for (std::size_t i = 0; i < truth.size(); ++i) by_id[truth.id(i)] = truth.label(i);
    std::vector<EmbeddingRecord> records;
    for (std::size_t i = 0; i < queries.size(); ++i) {
        auto r = queries.record(i);
        const auto it = by_id.find(r.id);
        if (it == by_id.end()) throw ValidationError("query '" + r.id + "' has no entry in the truth file");
        r.label = it->second;
        records.push_back(std::move(r));
    }
    return SupportSet::create(std::move(records), support.label_space(), SetRole::query, support.dim());
}

void warn_small_classes(const SupportSet& support, std::size_t k) {
    const auto small = support.classes_smaller_than(k);
    if (small.empty()) return;
    std::cerr << "warning: " << small.size() << " class(es) have fewer than k = " << k << " records:";
    for (auto c : small) std::cerr << ' ' << support.label_space().name(c);
    std::cerr << '\n';
}

json tune_json(const TuneResult& r, const TuneConfig& cfg) {
    json j;
    j["t_star"] = r.t_star;
    j["nll_at_t_star"] = r.nll_at_t_star;
    j["t_min"] = r.t_min;
    j["t_max"] = r.t_max;
    j["interior"] = r.interior;
    j["log_tolerance"] = r.log_tolerance;
    j["k"] = cfg.k;
    j["mode"] = std::string(to_string(cfg.mode));
    j["grid_points"] = cfg.grid_points;
    j["refine_iters"] = cfg.refine_iters;
    return j;
}

json bins_json(std::span<const ReliabilityBin> bins) {
    json arr = json::array();
    for (const auto& b : bins)
        arr.push_back({{"lo", b.lo}, {"hi", b.hi}, {"count", b.count}, {"mean_conf", b.mean_conf},
                       {"accuracy", b.accuracy}});
    return arr;
}

std::size_t single_k(const Options& o) {
    if (o.k.size() != 1) throw ValidationError("this command takes a single --k");
    return o.k.front();
}

// ---- commands ---------------------------------------------------------------

void cmd_ingest(const Options& o, const fs::path& out, std::size_t) {
    require_file(o.input, "input");
    const auto set = load_records(o.input, input_format(o, o.input));
    const auto metric = metric_of(o);
    const auto to = parse_file_format(o.to);
    write_records(set, out / ("records" + extension(to)), to);

    std::ostringstream s;
    s << "N " << set.size() << "\nm " << set.dim() << "\nM " << set.num_classes() << "\n";
    for (std::size_t c = 0; c < set.num_classes(); ++c)
        s << "class " << set.label_space().name(c) << ' ' << set.class_counts()[c] << '\n';
    const auto sep = separation_diagnostic(set, metric, o.pairs, o.seed.value_or(0));
    s << "intra_mean " << format_double(sep.intra_mean) << " (" << sep.intra_pairs << " pairs)\n";
    s << "inter_mean " << format_double(sep.inter_mean) << " (" << sep.inter_pairs << " pairs)\n";
    if (sep.intra_pairs > 0 && sep.inter_pairs > 0 && sep.inter_mean > 0.0)
        s << "intra_inter_ratio " << format_double(sep.ratio()) << '\n';
    write_text(out / "summary.txt", s.str());
    std::cout << s.str();
}

void cmd_tune(const Options& o, const fs::path& out, std::size_t threads) {
    const auto support = load_support(o);
    const auto metric = metric_of(o);
    const auto cfg = tune_config(o, single_k(o), threads);
    const auto result = tune_temperature(support, cfg, metric);
    write_text(out / "tune.json", tune_json(result, cfg).dump(2) + "\n");
    write_nll_curve_csv(result, out / "nll_curve.csv");
    std::cout << "t_star " << format_double(result.t_star) << "\nnll " << format_double(result.nll_at_t_star)
              << (result.interior ? "" : "\nwarning: optimum at the edge of the bracket") << '\n';
}

void cmd_evaluate(const Options& o, const fs::path& out, std::size_t threads) {
    const auto support = load_support(o);
    const auto queries = load_queries(o, support);
    const auto metric = metric_of(o);
    ScorerConfig cfg{parse_rule(o.rule), single_k(o), 1.0, metric};
    if (cfg.k > support.size())
        throw ValidationError("k = " + std::to_string(cfg.k) + " exceeds the support size " +
                              std::to_string(support.size()));
    warn_small_classes(support, cfg.effective_k());

    json tuned = nullptr;
    if (cfg.rule == ScoreRule::ned) {
        if (o.temperature) {
            cfg.temperature = *o.temperature;
        } else {
            TemperaturePolicy policy;
            policy.tune = tune_config(o, cfg.k, threads);
            std::size_t cap = support.size() - 1;
            if (policy.tune.mode == TuneMode::holdout)
                cap = split_holdout(support, policy.tune.holdout_fraction, policy.tune.seed).first.size();
            auto tcfg = policy.tune;
            tcfg.k = std::max<std::size_t>(1, std::min(cfg.k, cap));
            const auto r = tune_temperature(support, tcfg, metric);
            cfg.temperature = r.t_star;
            tuned = tune_json(r, tcfg);
        }
    }
    cfg.validate();
    const auto run = evaluate_run(support, queries, cfg, o.bins, threads);

    std::ostringstream p;
    p << "id,label,predicted,confidence";
    if (o.scores)
        for (const auto& name : support.label_space().names()) p << ",score_" << name;
    p << '\n';
    const auto& names = support.label_space();
    for (std::size_t i = 0; i < queries.size(); ++i) {
        const auto& pr = run.predictions[i];
        p << queries.id(i) << ',' << names.name(queries.label(i)) << ',' << names.name(pr.label) << ','
          << format_double(pr.confidence);
        if (o.scores)
            for (double v : pr.class_scores) p << ',' << format_double(v);
        p << '\n';
    }
    write_text(out / "predictions.csv", p.str());

    json report;
    report["rule"] = std::string(to_string(cfg.rule));
    report["k"] = cfg.k;
    report["metric"] = std::string(to_string(metric));
    report["temperature"] = cfg.rule == ScoreRule::ned ? json(cfg.temperature) : json(nullptr);
    report["calibrated"] = cfg.rule != ScoreRule::one_nn;
    report["n"] = run.report.n;
    report["accuracy"] = run.report.accuracy;
    report["ece"] = run.report.ece;
    report["num_bins"] = o.bins;
    report["bins"] = bins_json(run.report.bins);
    report["tuning"] = tuned;
    write_text(out / "report.json", report.dump(2) + "\n");
    write_reliability_csv(run.report.bins, out / "reliability.csv");
    write_text(out / "reliability.svg",
               reliability_svg(run.report.bins, std::string(to_string(cfg.rule)) + " k=" + std::to_string(cfg.k)));

    std::cout << "accuracy " << format_double(run.report.accuracy) << "\nece " << format_double(run.report.ece)
              << '\n';
    if (cfg.rule == ScoreRule::one_nn) std::cout << "note: 1nn confidence is always 1, so its ECE is 1 - accuracy\n";
}

void cmd_sweep(const Options& o, const fs::path& out, std::size_t threads) {
    const auto support = load_support(o);
    const auto queries = load_queries(o, support);
    const auto metric = metric_of(o);
    std::vector<ScoreRule> rules;
    for (const auto& r : o.rules) rules.push_back(parse_rule(r));
    if (o.k.empty()) throw ValidationError("--k needs at least one value");

    TemperaturePolicy policy;
    policy.fixed = o.temperature;
    policy.tune_once = o.fixed_t;
    policy.tune = tune_config(o, o.k.front(), threads);
    warn_small_classes(support, *std::max_element(o.k.begin(), o.k.end()));

    SweepReport report;
    if (o.sweep == "k") {
        report = sweep_k(support, queries, rules, o.k, metric, policy, o.bins, threads);
    } else if (o.sweep == "severity") {
        report = sweep_severity(support, queries, rules, single_k(o), parse_perturb_kind(o.perturb), o.severities,
                                metric, policy, o.seed.value_or(0), o.bins, threads);
    } else {
        throw ValidationError("--sweep must be k or severity");
    }
    report.dataset = fs::path(o.query).filename().string();
    report.seed = o.seed.value_or(0);
    write_sweep_csv(report, out / "sweep.csv");
    std::cout << format_sweep_table(report);
}

void cmd_synth(const Options& o, const fs::path& out, std::size_t) {
    require_file(o.spec, "spec");
    auto spec = load_mixture_spec(o.spec);
    if (o.seed) spec.seed = *o.seed;
    if (o.n_support) spec.n_support = *o.n_support;
    if (o.n_query) spec.n_query = *o.n_query;
    const auto sets = sample_benchmark(spec);
    const auto to = parse_file_format(o.to);
    write_records(sets.support, out / ("support" + extension(to)), to);
    write_records(sets.queries, out / ("query" + extension(to)), to);

    std::ostringstream p;
    p << "id";
    for (const auto& name : spec.class_names()) p << ",p_" << name;
    p << '\n';
    for (std::size_t i = 0; i < sets.queries.size(); ++i) {
        p << sets.queries.id(i);
        for (double v : true_posterior(spec, sets.queries.vector(i))) p << ',' << format_double(v);
        p << '\n';
    }
    write_text(out / "posterior.csv", p.str());
    std::cout << "support " << sets.support.size() << "\nquery " << sets.queries.size() << "\nclasses "
              << spec.num_classes() << "\ndim " << spec.dim() << '\n';
}

void execute(const Options& o, const fs::path& out, std::size_t threads) {
    fs::create_directories(out);
    if (o.command == "ingest")
        cmd_ingest(o, out, threads);
    else if (o.command == "tune")
        cmd_tune(o, out, threads);
    else if (o.command == "evaluate")
        cmd_evaluate(o, out, threads);
    else if (o.command == "sweep")
        cmd_sweep(o, out, threads);
    else if (o.command == "synth")
        cmd_synth(o, out, threads);
    else
        throw ValidationError("unknown command '" + o.command + "'");
    write_text(out / "manifest.json", to_json(o).dump(2) + "\n");
}

Options read_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return from_json(json::parse(in));
    } catch (const json::exception& e) {
        throw ValidationError("malformed manifest " + path.string() + ": " + e.what());
    }
}

}  // namespace

int run(const std::vector<std::string>& args) {
    CLI::App app{"Nearest-neighbour classification with calibrated NED confidences"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all");

    Options o;
    std::string out = ".";
    std::size_t threads = 0;
    std::string manifest;
    std::optional<std::uint64_t> seed;

    auto common = [&](CLI::App* c) {
        c->add_option("--out", out, "Output directory")->capture_default_str();
        c->add_option("--threads", threads, "Worker threads (0 = all cores)")->capture_default_str();
        c->add_option("--format", o.format, "Input format: binary, jsonl or csv (default: by extension)");
        c->add_option("--seed", seed, "Root seed for every random stream");
        c->add_option("--metric", o.metric, "sqeuclidean or cosine")->capture_default_str();
    };
    auto tuning = [&](CLI::App* c) {
        c->add_option("--mode", o.mode, "Tuning mode: loo or holdout")->capture_default_str();
        c->add_option("--fraction", o.fraction, "Holdout fraction")->capture_default_str();
        c->add_option("--grid", o.grid, "Grid points")->capture_default_str();
        c->add_option("--refine", o.refine, "Golden-section iterations")->capture_default_str();
        c->add_option("--t-min", o.t_min, "Lower end of the temperature bracket");
        c->add_option("--t-max", o.t_max, "Upper end of the temperature bracket");
    };
    auto scoring = [&](CLI::App* c) {
        c->add_option("--support", o.support, "Support set file")->required();
        c->add_option("--query", o.query, "Query set file")->required();
        c->add_option("--truth", o.truth, "Labels for the queries, matched by id (default: the query file's)");
        c->add_option("--temperature", o.temperature, "NED temperature; skips tuning");
        c->add_option("--bins", o.bins, "Reliability bins")->capture_default_str();
    };

    auto* ingest = app.add_subcommand("ingest", "Convert an embedding file and summarise it");
    common(ingest);
    ingest->add_option("input", o.input, "Embedding file")->required();
    ingest->add_option("--to", o.to, "Output format")->capture_default_str();
    ingest->add_option("--pairs", o.pairs, "Pairs sampled for the separation diagnostic")->capture_default_str();

    auto* tune = app.add_subcommand("tune", "Tune the NED temperature on a support set");
    common(tune);
    tuning(tune);
    tune->add_option("--support", o.support, "Support set file")->required();
    tune->add_option("--k", o.k, "Neighbourhood size")->delimiter(',');

    auto* evaluate = app.add_subcommand("evaluate", "Score queries and report calibration");
    common(evaluate);
    tuning(evaluate);
    scoring(evaluate);
    evaluate->add_option("--rule", o.rule, "ned, knn, wknn-a, wknn-b or 1nn")->capture_default_str();
    evaluate->add_option("--k", o.k, "Neighbourhood size")->delimiter(',');
    evaluate->add_flag("--scores", o.scores, "Add per-class scores to predictions.csv");

    auto* sweep = app.add_subcommand("sweep", "Accuracy and ECE across k or perturbation severity");
    common(sweep);
    tuning(sweep);
    scoring(sweep);
    sweep->add_option("--sweep", o.sweep, "k or severity")->capture_default_str();
    sweep->add_option("--k", o.k, "Comma-separated k values (one value for a severity sweep)")->delimiter(',');
    sweep->add_option("--rules", o.rules, "Comma-separated rules")->delimiter(',');
    sweep->add_option("--perturb", o.perturb, "gaussian, uniform or dropout")->capture_default_str();
    sweep->add_option("--severities", o.severities, "Comma-separated severities in 1..5")->delimiter(',');
    sweep->add_flag("--fixed-T", o.fixed_t, "Tune T once at the first k and reuse it");

    auto* synth = app.add_subcommand("synth", "Sample support and query sets from a mixture spec");
    common(synth);
    synth->add_option("spec", o.spec, "Mixture spec JSON")->required();
    synth->add_option("--to", o.to, "Output format")->capture_default_str();
    synth->add_option("--n-support", o.n_support, "Support size (default: from the spec)");
    synth->add_option("--n-query", o.n_query, "Query size (default: from the spec)");

    auto* replay = app.add_subcommand("replay", "Re-run a command from its manifest.json");
    replay->add_option("manifest", manifest, "manifest.json of an earlier run")->required();
    replay->add_option("--out", out, "Output directory (default: the manifest's directory)");
    replay->add_option("--threads", threads, "Worker threads (0 = all cores)");

    std::vector<std::string> rev(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
    try {
        app.parse(rev);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kValidation;
    }

    try {
        if (replay->parsed()) {
            const auto opts = read_manifest(manifest);
            fs::path dir = replay->count("--out") ? fs::path(out) : fs::path(manifest).parent_path();
            if (dir.empty()) dir = ".";
            execute(opts, dir, threads);
            return kOk;
        }
        o.command = app.get_subcommands().front()->get_name();
        o.seed = seed;
        o.input = absolute_or_empty(o.input);
        o.support = absolute_or_empty(o.support);
        o.query = absolute_or_empty(o.query);
        o.truth = absolute_or_empty(o.truth);
        o.spec = absolute_or_empty(o.spec);
        execute(o, out, threads);
        return kOk;
    } catch (const LabelSpaceMismatch& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kLabelMismatch;
    } catch (const TuningPreconditionError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kTuning;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kValidation;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kValidation;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << '\n';
        return kInternal;
    }
}

}  // namespace nedcal::cli
