#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "nedcal/calibration_metrics.hpp"
#include "nedcal/errors.hpp"
#include "nedcal/kde_oracle.hpp"
#include "nedcal/perturbation_harness.hpp"

namespace py = pybind11;
using namespace nedcal;

namespace {

using Matrix = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<std::vector<double>> rows_of(const Matrix& m) {
    if (m.ndim() != 2) throw ValidationError("expected a 2-D array of shape (n, dim)");
    const auto r = m.unchecked<2>();
    std::vector<std::vector<double>> out(static_cast<std::size_t>(r.shape(0)));
    for (py::ssize_t i = 0; i < r.shape(0); ++i) out[i].assign(r.data(i, 0), r.data(i, 0) + r.shape(1));
    return out;
}

Matrix matrix_of(const std::vector<std::vector<double>>& rows, std::size_t cols) {
    Matrix out({rows.size(), cols});
    auto w = out.mutable_unchecked<2>();
    for (std::size_t i = 0; i < rows.size(); ++i) std::copy(rows[i].begin(), rows[i].end(), w.mutable_data(i, 0));
    return out;
}

SupportSet make_set(const Matrix& vectors, const std::vector<std::string>& labels,
                    std::optional<std::vector<std::string>> ids, std::optional<std::vector<std::string>> classes,
                    const std::string& role) {
    const auto rows = rows_of(vectors);
    if (labels.size() != rows.size()) throw ValidationError("labels must have one entry per row");
    if (ids && ids->size() != rows.size()) throw ValidationError("ids must have one entry per row");
    const auto space = LabelSpace::from_names(classes ? *classes : labels);
    std::vector<EmbeddingRecord> records(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto c = space.find(labels[i]);
        if (!c) throw LabelSpaceMismatch("label '" + labels[i] + "' is not among the given classes");
        records[i] = {ids ? (*ids)[i] : "r" + std::to_string(i), rows[i], *c};
    }
    const auto r = role == "query" ? SetRole::query : role == "support" ? SetRole::support
                                                                       : throw ValidationError("role must be 'support' or 'query'");
    return SupportSet::create(std::move(records), space, r, static_cast<std::size_t>(vectors.shape(1)));
}

FileFormat format_for(const std::filesystem::path& path, const std::optional<std::string>& format) {
    if (format) return parse_file_format(*format);
    if (const auto f = format_from_extension(path)) return *f;
    throw ValidationError("cannot infer the file format of " + path.string() + "; pass format=");
}

py::dict predictions_dict(const std::vector<Prediction>& preds, std::size_t num_classes) {
    py::array_t<std::int64_t> labels(preds.size());
    py::array_t<double> confidence(preds.size());
    py::array_t<double> scores({preds.size(), num_classes});
    auto l = labels.mutable_unchecked<1>();
    auto c = confidence.mutable_unchecked<1>();
    auto s = scores.mutable_unchecked<2>();
    for (std::size_t i = 0; i < preds.size(); ++i) {
        l(i) = preds[i].label;
        c(i) = preds[i].confidence;
        for (std::size_t j = 0; j < num_classes; ++j) s(i, j) = preds[i].class_scores[j];
    }
    py::dict d;
    d["labels"] = labels;
    d["confidence"] = confidence;
    d["scores"] = scores;
    d["calibrated"] = preds.empty() || preds[0].calibrated;
    return d;
}

std::vector<ScoreRule> rules_of(const std::vector<std::string>& names) {
    std::vector<ScoreRule> out;
    for (const auto& n : names) out.push_back(parse_rule(n));
    return out;
}

TemperaturePolicy policy_of(std::optional<double> temperature, bool tune_once) {
    TemperaturePolicy p;
    p.fixed = temperature;
    p.tune_once = tune_once;
    return p;
}

py::list rows_list(const SweepReport& report) {
    py::list out;
    for (const auto& r : report.rows) {
        py::dict d;
        d["rule"] = std::string(to_string(r.rule));
        d["k"] = r.k;
        d["severity"] = r.severity;
        d["accuracy"] = r.accuracy;
        d["ece"] = r.ece ? py::object(py::float_(*r.ece)) : py::none();
        d["t_used"] = r.t_used ? py::object(py::float_(*r.t_used)) : py::none();
        d["seed"] = r.seed;
        out.append(d);
    }
    return out;
}

std::vector<EvalOutcome> outcomes(const py::array_t<double>& confidence, const py::array_t<std::int64_t>& predicted,
                                  const py::array_t<std::int64_t>& actual) {
    if (confidence.ndim() != 1 || predicted.ndim() != 1 || actual.ndim() != 1 || confidence.size() != predicted.size() ||
        confidence.size() != actual.size())
        throw ValidationError("confidence, predicted and actual must be 1-D arrays of equal length");
    const auto c = confidence.unchecked<1>();
    const auto p = predicted.unchecked<1>();
    const auto a = actual.unchecked<1>();
    std::vector<EvalOutcome> out(static_cast<std::size_t>(c.shape(0)));
    for (py::ssize_t i = 0; i < c.shape(0); ++i)
        out[i] = {c(i), static_cast<ClassIndex>(p(i)), static_cast<ClassIndex>(a(i))};
    return out;
}

py::list bins_list(const std::vector<ReliabilityBin>& bins) {
    py::list out;
    for (const auto& b : bins) {
        py::dict d;
        d["lo"] = b.lo;
        d["hi"] = b.hi;
        d["count"] = b.count;
        d["mean_conf"] = b.mean_conf;
        d["accuracy"] = b.accuracy;
        out.append(d);
    }
    return out;
}

}  // namespace

PYBIND11_MODULE(_nedcal, m) {
    m.doc() = "Calibrated nearest-neighbour classification scores";

    auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ValidationError>(m, "ValidationError", base.ptr());
    py::register_exception<TuningPreconditionError>(m, "TuningPreconditionError", base.ptr());
    py::register_exception<LabelSpaceMismatch>(m, "LabelSpaceMismatch", base.ptr());
    py::register_exception<IoError>(m, "IoError", base.ptr());

    py::class_<SupportSet>(m, "EmbeddingSet")
        .def(py::init(&make_set), py::arg("vectors"), py::arg("labels"), py::arg("ids") = py::none(),
             py::arg("classes") = py::none(), py::arg("role") = "support")
        .def("__len__", &SupportSet::size)
        .def_property_readonly("dim", &SupportSet::dim)
        .def_property_readonly("classes", [](const SupportSet& s) { return s.label_space().names(); })
        .def_property_readonly("ids", &SupportSet::ids)
        .def_property_readonly("role", [](const SupportSet& s) { return s.role() == SetRole::query ? "query" : "support"; })
        .def_property_readonly("labels",
                               [](const SupportSet& s) {
                                   py::array_t<std::int64_t> out(s.size());
                                   auto w = out.mutable_unchecked<1>();
                                   for (std::size_t i = 0; i < s.size(); ++i) w(i) = s.label(i);
                                   return out;
                               })
        .def_property_readonly("vectors",
                               [](const SupportSet& s) {
                                   Matrix out({s.size(), s.dim()});
                                   std::copy(s.data().begin(), s.data().end(), out.mutable_data());
                                   return out;
                               })
        .def("save", [](const SupportSet& s, const std::filesystem::path& path,
                        std::optional<std::string> format) { write_records(s, path, format_for(path, format)); },
             py::arg("path"), py::arg("format") = py::none());

    m.def(
        "load",
        [](const std::filesystem::path& path, std::optional<std::string> format, const SupportSet* like,
           const std::string& role) {
            LoadOptions options;
            options.role = role == "query" ? SetRole::query : SetRole::support;
            if (like) options.fixed_labels = like->label_space();
            return load_records(path, format_for(path, format), options);
        },
        py::arg("path"), py::arg("format") = py::none(), py::arg("like") = nullptr, py::arg("role") = "support",
        "Load embeddings. `like` fixes the label space to another set's.");

    m.def(
        "predict",
        [](const SupportSet& support, const Matrix& queries, const std::string& rule, std::size_t k, double temperature,
           const std::string& metric, const std::string& backend, std::size_t threads) {
            const auto rows = rows_of(queries);
            const auto kind = parse_metric(metric);
            const auto index = build_index(support, kind, backend == "kd_tree" ? IndexBackend::kd_tree : IndexBackend::exhaustive);
            std::vector<Prediction> preds;
            {
                py::gil_scoped_release release;
                preds = predict_batch(*index, rows, {parse_rule(rule), k, temperature, kind}, support, threads);
            }
            return predictions_dict(preds, support.num_classes());
        },
        py::arg("support"), py::arg("queries"), py::arg("rule") = "ned", py::arg("k") = 10,
        py::arg("temperature") = 1.0, py::arg("metric") = "sqeuclidean", py::arg("backend") = "exhaustive",
        py::arg("threads") = 0);

    m.def(
        "tune",
        [](const SupportSet& support, std::size_t k, const std::string& mode, const std::string& metric,
           std::optional<double> t_min, std::optional<double> t_max, double holdout_fraction, std::uint64_t seed,
           std::size_t threads) {
            TuneConfig config;
            config.mode = parse_tune_mode(mode);
            config.k = k;
            config.t_min = t_min;
            config.t_max = t_max;
            config.holdout_fraction = holdout_fraction;
            config.seed = seed;
            config.threads = threads;
            TuneResult r;
            {
                py::gil_scoped_release release;
                r = tune_temperature(support, config, parse_metric(metric));
            }
            py::array_t<double> grid_t(r.nll_curve.size()), grid_nll(r.nll_curve.size());
            for (std::size_t i = 0; i < r.nll_curve.size(); ++i) {
                grid_t.mutable_at(i) = r.nll_curve[i].temperature;
                grid_nll.mutable_at(i) = r.nll_curve[i].nll;
            }
            py::dict d;
            d["t_star"] = r.t_star;
            d["nll"] = r.nll_at_t_star;
            d["t_min"] = r.t_min;
            d["t_max"] = r.t_max;
            d["log_tolerance"] = r.log_tolerance;
            d["interior"] = r.interior;
            d["grid_t"] = grid_t;
            d["grid_nll"] = grid_nll;
            return d;
        },
        py::arg("support"), py::arg("k") = 10, py::arg("mode") = "loo", py::arg("metric") = "sqeuclidean",
        py::arg("t_min") = py::none(), py::arg("t_max") = py::none(), py::arg("holdout_fraction") = 0.2,
        py::arg("seed") = 0, py::arg("threads") = 0);

    m.def(
        "loo_nll",
        [](const SupportSet& support, std::size_t k, double temperature, const std::string& metric) {
            return loo_nll(support, k, temperature, parse_metric(metric));
        },
        py::arg("support"), py::arg("k"), py::arg("temperature"), py::arg("metric") = "sqeuclidean");

    m.def(
        "evaluate",
        [](const SupportSet& support, const SupportSet& queries, const std::string& rule, std::size_t k,
           double temperature, const std::string& metric, std::size_t num_bins, std::size_t threads) {
            EvalRun run;
            {
                py::gil_scoped_release release;
                run = evaluate_run(support, queries, {parse_rule(rule), k, temperature, parse_metric(metric)}, num_bins,
                                   threads);
            }
            auto d = predictions_dict(run.predictions, support.num_classes());
            d["accuracy"] = run.report.accuracy;
            d["ece"] = run.report.ece;
            d["bins"] = bins_list(run.report.bins);
            return d;
        },
        py::arg("support"), py::arg("queries"), py::arg("rule") = "ned", py::arg("k") = 10,
        py::arg("temperature") = 1.0, py::arg("metric") = "sqeuclidean", py::arg("num_bins") = kDefaultBins,
        py::arg("threads") = 0);

    m.def(
        "ece",
        [](const py::array_t<double>& confidence, const py::array_t<std::int64_t>& predicted,
           const py::array_t<std::int64_t>& actual, std::size_t num_bins) {
            return ece(outcomes(confidence, predicted, actual), num_bins);
        },
        py::arg("confidence"), py::arg("predicted"), py::arg("actual"), py::arg("num_bins") = kDefaultBins);

    m.def(
        "reliability_bins",
        [](const py::array_t<double>& confidence, const py::array_t<std::int64_t>& predicted,
           const py::array_t<std::int64_t>& actual, std::size_t num_bins) {
            return bins_list(reliability_bins(outcomes(confidence, predicted, actual), num_bins));
        },
        py::arg("confidence"), py::arg("predicted"), py::arg("actual"), py::arg("num_bins") = kDefaultBins);

    m.def(
        "kde_posterior",
        [](const SupportSet& support, const Matrix& queries, double alpha) {
            const auto rows = rows_of(queries);
            std::vector<std::vector<double>> out;
            for (const auto& z : rows) out.push_back(kde_posterior(support, z, KernelSpec::shared(alpha)));
            return matrix_of(out, support.num_classes());
        },
        py::arg("support"), py::arg("queries"), py::arg("alpha"),
        "Isotropic Gaussian kernel posterior with variance `alpha` over the whole support set.");

    py::class_<MixtureSpec>(m, "MixtureSpec")
        .def_static("from_json", &parse_mixture_spec, py::arg("text"))
        .def_static("load", &load_mixture_spec, py::arg("path"))
        .def("to_json", &mixture_spec_to_json)
        .def_readonly("seed", &MixtureSpec::seed)
        .def_readonly("name", &MixtureSpec::name)
        .def_readonly("n_support", &MixtureSpec::n_support)
        .def_readonly("n_query", &MixtureSpec::n_query)
        .def_property_readonly("num_classes", &MixtureSpec::num_classes);

    m.def(
        "sample_benchmark",
        [](const MixtureSpec& spec) {
            auto sets = sample_benchmark(spec);
            return py::make_tuple(std::move(sets.support), std::move(sets.queries));
        },
        py::arg("spec"), "Support and query sets of the spec's sizes.");

    m.def(
        "true_posterior",
        [](const MixtureSpec& spec, const Matrix& queries) {
            const auto rows = rows_of(queries);
            std::vector<std::vector<double>> out;
            for (const auto& z : rows) out.push_back(true_posterior(spec, z));
            return matrix_of(out, spec.num_classes());
        },
        py::arg("spec"), py::arg("queries"));

    m.def(
        "perturb",
        [](const SupportSet& queries, const std::string& kind, int severity, std::uint64_t seed) {
            PerturbSpec spec;
            spec.kind = parse_perturb_kind(kind);
            spec.severity = severity;
            spec.seed = seed;
            return with_vectors(queries, perturb(queries, spec));
        },
        py::arg("queries"), py::arg("kind") = "gaussian", py::arg("severity") = 1, py::arg("seed") = 0);

    m.def(
        "sweep_k",
        [](const SupportSet& support, const SupportSet& queries, const std::vector<std::string>& rules,
           const std::vector<std::size_t>& k_values, std::optional<double> temperature, bool tune_once,
           const std::string& metric, std::size_t num_bins, std::size_t threads) {
            const auto r = rules_of(rules);
            SweepReport report;
            {
                py::gil_scoped_release release;
                report = sweep_k(support, queries, r, k_values, parse_metric(metric), policy_of(temperature, tune_once),
                                 num_bins, threads);
            }
            return rows_list(report);
        },
        py::arg("support"), py::arg("queries"), py::arg("rules"), py::arg("k_values"),
        py::arg("temperature") = py::none(), py::arg("tune_once") = false, py::arg("metric") = "sqeuclidean",
        py::arg("num_bins") = kDefaultBins, py::arg("threads") = 0);

    m.def(
        "sweep_severity",
        [](const SupportSet& support, const SupportSet& queries, const std::vector<std::string>& rules, std::size_t k,
           const std::string& kind, const std::vector<int>& severities, std::optional<double> temperature,
           std::uint64_t seed, const std::string& metric, std::size_t num_bins, std::size_t threads) {
            const auto r = rules_of(rules);
            SweepReport report;
            {
                py::gil_scoped_release release;
                report = sweep_severity(support, queries, r, k, parse_perturb_kind(kind), severities,
                                        parse_metric(metric), policy_of(temperature, false), seed, num_bins, threads);
            }
            return rows_list(report);
        },
        py::arg("support"), py::arg("queries"), py::arg("rules"), py::arg("k"), py::arg("kind") = "gaussian",
        py::arg("severities") = std::vector<int>{1, 2, 3, 4, 5}, py::arg("temperature") = py::none(),
        py::arg("seed") = 0, py::arg("metric") = "sqeuclidean", py::arg("num_bins") = kDefaultBins,
        py::arg("threads") = 0);
}
