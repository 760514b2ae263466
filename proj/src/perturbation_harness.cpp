#include "nedcal/perturbation_harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "nedcal/errors.hpp"
#include "nedcal/parallel.hpp"
#include "nedcal/random.hpp"
#include "nedcal/text_format.hpp"

namespace nedcal {

std::string_view to_string(PerturbKind k) {
    switch (k) {
        case PerturbKind::gaussian_noise: return "gaussian";
        case PerturbKind::uniform_noise: return "uniform";
        case PerturbKind::coordinate_dropout: return "dropout";
    }
    return "?";
}

PerturbKind parse_perturb_kind(std::string_view s) {
    if (s == "gaussian" || s == "gaussian-noise") return PerturbKind::gaussian_noise;
    if (s == "uniform" || s == "uniform-noise") return PerturbKind::uniform_noise;
    if (s == "dropout" || s == "coordinate-dropout") return PerturbKind::coordinate_dropout;
    throw ValidationError("unknown perturbation '" + std::string(s) + "'");
}

void PerturbSpec::validate() const {
    if (severity < 1 || severity > 5) throw ValidationError("severity must be in 1..5");
}

double mean_nearest_neighbor_distance(const SupportSet& points, std::size_t threads) {
    if (points.size() < 2) throw ValidationError("need at least two points for a nearest-neighbour distance");
    const auto index = build_index(points, MetricKind::squared_euclidean);
    std::vector<double> nn(points.size());
    parallel_for(points.size(), threads,
                 [&](std::size_t i) { nn[i] = std::sqrt(index->query(points.vector(i), 1, i).front().distance); });
    double sum = 0.0;
    for (double d : nn) sum += d;
    return sum / static_cast<double>(points.size());
}

std::vector<std::vector<double>> perturb_with_scale(const SupportSet& queries, PerturbKind kind, double scale,
                                                    std::uint64_t seed) {
    if (!(scale >= 0.0) || !std::isfinite(scale)) throw ValidationError("perturbation scale must be non-negative");
    const std::size_t m = queries.dim();
    std::vector<std::vector<double>> out(queries.size());
    for (std::size_t q = 0; q < queries.size(); ++q) {
        auto v = queries.vector(q);
        out[q].assign(v.begin(), v.end());
        if (scale == 0.0) continue;
        Rng rng(seed, to_string(kind), q);
        switch (kind) {
            case PerturbKind::gaussian_noise:
                for (double& x : out[q]) x += scale * rng.normal();
                break;
            case PerturbKind::uniform_noise: {
                const double half = std::sqrt(3.0) * scale;
                for (double& x : out[q]) x += rng.uniform(-half, half);
                break;
            }
            case PerturbKind::coordinate_dropout: {
                const auto drop = std::min<std::size_t>(
                    m, static_cast<std::size_t>(std::llround(std::min(scale, 1.0) * static_cast<double>(m))));
                std::vector<std::size_t> coords(m);
                for (std::size_t d = 0; d < m; ++d) coords[d] = d;
                // Partial Fisher-Yates: the first `drop` slots are a uniform sample.
                for (std::size_t d = 0; d < drop; ++d) {
                    const auto j = d + rng.below(m - d);
                    std::swap(coords[d], coords[j]);
                    out[q][coords[d]] = 0.0;
                }
                break;
            }
        }
    }
    return out;
}

std::vector<std::vector<double>> perturb(const SupportSet& queries, const PerturbSpec& spec,
                                         double reference_distance) {
    spec.validate();
    const double scale =
        spec.kind == PerturbKind::coordinate_dropout ? spec.factor() : spec.factor() * reference_distance;
    return perturb_with_scale(queries, spec.kind, scale, derive_seed(spec.seed, "severity", spec.severity));
}

std::vector<std::vector<double>> perturb(const SupportSet& queries, const PerturbSpec& spec) {
    return perturb(queries, spec, mean_nearest_neighbor_distance(queries));
}

SupportSet with_vectors(const SupportSet& queries, const std::vector<std::vector<double>>& vectors) {
    if (vectors.size() != queries.size()) throw ValidationError("vector count does not match the query set");
    std::vector<EmbeddingRecord> records;
    records.reserve(queries.size());
    for (std::size_t i = 0; i < queries.size(); ++i) records.push_back({queries.id(i), vectors[i], queries.label(i)});
    return SupportSet::create(std::move(records), queries.label_space(), queries.role(), queries.dim());
}

std::vector<EvalOutcome> outcomes_of(std::span<const Prediction> predictions, const SupportSet& truth) {
    if (predictions.size() != truth.size()) throw ValidationError("prediction and truth counts differ");
    std::vector<EvalOutcome> out(predictions.size());
    for (std::size_t i = 0; i < predictions.size(); ++i)
        out[i] = {predictions[i].confidence, predictions[i].label, truth.label(i)};
    return out;
}

namespace {

void check_compatible(const SupportSet& support, const SupportSet& queries) {
    if (!(support.label_space() == queries.label_space()))
        throw LabelSpaceMismatch("query labels do not use the support label space");
    if (!queries.empty() && queries.dim() != support.dim())
        throw ValidationError("query dimension " + std::to_string(queries.dim()) + " does not match support dimension " +
                              std::to_string(support.dim()));
}

// Mean ECE over rows that have one; nullopt if none do.
std::optional<double> mean_ece(std::span<const SweepRow> rows) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& r : rows)
        if (r.ece) {
            sum += *r.ece;
            ++n;
        }
    if (n == 0) return std::nullopt;
    return sum / static_cast<double>(n);
}

SweepRow score_rows(const std::vector<NeighborList>& lists, std::size_t k, const SupportSet& support,
                    const SupportSet& queries, const ScorerConfig& config, std::size_t num_bins,
                    std::size_t threads) {
    std::vector<Prediction> preds(lists.size());
    parallel_for(lists.size(), threads, [&](std::size_t q) {
        const auto take = std::min(config.effective_k(), lists[q].size());
        const NeighborList prefix(lists[q].begin(), lists[q].begin() + static_cast<std::ptrdiff_t>(take));
        preds[q] = score_neighbors(prefix, support, config);
    });
    const auto outcomes = outcomes_of(preds, queries);
    SweepRow row;
    row.rule = config.rule;
    row.k = k;
    row.accuracy = accuracy(outcomes);
    if (config.rule != ScoreRule::one_nn) row.ece = ece(outcomes, num_bins);
    if (config.rule == ScoreRule::ned) row.t_used = config.temperature;
    return row;
}

}  // namespace

EvalRun evaluate_run(const SupportSet& support, const SupportSet& queries, const ScorerConfig& config,
                     std::size_t num_bins, std::size_t threads) {
    check_compatible(support, queries);
    const auto index = build_index(support, config.metric);
    EvalRun run;
    run.predictions = predict_batch(*index, queries, config, support, threads);
    run.report = calibration_report(outcomes_of(run.predictions, queries), num_bins);
    return run;
}

double resolve_temperature(const SupportSet& support, std::size_t k, MetricKind metric,
                           const TemperaturePolicy& policy) {
    if (policy.fixed) return *policy.fixed;
    TuneConfig cfg = policy.tune;
    std::size_t cap = support.size() > 0 ? support.size() - 1 : 0;
    if (cfg.mode == TuneMode::holdout) cap = split_holdout(support, cfg.holdout_fraction, cfg.seed).first.size();
    cfg.k = std::max<std::size_t>(1, std::min(k, cap));
    return tune_temperature(support, cfg, metric).t_star;
}

SweepReport sweep_k(const SupportSet& support, const SupportSet& queries, std::span<const ScoreRule> rules,
                    std::span<const std::size_t> k_values, MetricKind metric, const TemperaturePolicy& temperature,
                    std::size_t num_bins, std::size_t threads) {
    check_compatible(support, queries);
    if (k_values.empty() || rules.empty()) throw ValidationError("sweep needs at least one k and one rule");
    for (auto k : k_values)
        if (k == 0 || k > support.size())
            throw ValidationError("k = " + std::to_string(k) + " is outside 1.." + std::to_string(support.size()));

    const auto index = build_index(support, metric);
    const std::size_t k_max = *std::max_element(k_values.begin(), k_values.end());
    std::vector<NeighborList> lists(queries.size());
    parallel_for(queries.size(), threads, [&](std::size_t q) { lists[q] = index->query(queries.vector(q), k_max); });

    const bool has_ned = std::find(rules.begin(), rules.end(), ScoreRule::ned) != rules.end();
    std::optional<double> shared_t;
    if (has_ned && (temperature.fixed || temperature.tune_once))
        shared_t = resolve_temperature(support, k_values.front(), metric, temperature);

    SweepReport report;
    report.metric = metric;
    report.seed = temperature.tune.seed;
    for (auto rule : rules) {
        for (auto k : k_values) {
            ScorerConfig cfg{rule, k, 1.0, metric};
            if (rule == ScoreRule::ned)
                cfg.temperature = shared_t ? *shared_t : resolve_temperature(support, k, metric, temperature);
            auto row = score_rows(lists, k, support, queries, cfg, num_bins, threads);
            row.seed = report.seed;
            report.rows.push_back(row);
        }
    }
    return report;
}

SweepReport sweep_severity(const SupportSet& support, const SupportSet& queries, std::span<const ScoreRule> rules,
                           std::size_t k, PerturbKind kind, std::span<const int> severities, MetricKind metric,
                           const TemperaturePolicy& temperature, std::uint64_t seed, std::size_t num_bins,
                           std::size_t threads) {
    check_compatible(support, queries);
    if (severities.empty() || rules.empty()) throw ValidationError("sweep needs at least one severity and one rule");
    if (k == 0 || k > support.size()) throw ValidationError("k is outside 1.." + std::to_string(support.size()));
    for (int s : severities) PerturbSpec{kind, s, seed}.validate();

    const auto index = build_index(support, metric);
    const double reference = mean_nearest_neighbor_distance(queries, threads);
    const bool has_ned = std::find(rules.begin(), rules.end(), ScoreRule::ned) != rules.end();
    const double t = has_ned ? resolve_temperature(support, k, metric, temperature) : 1.0;

    SweepReport report;
    report.metric = metric;
    report.seed = seed;
    report.perturbation = std::string(to_string(kind));
    std::vector<std::vector<SweepRow>> by_rule(rules.size());
    for (int severity : severities) {
        const auto noisy = with_vectors(queries, perturb(queries, PerturbSpec{kind, severity, seed}, reference));
        std::vector<NeighborList> lists(noisy.size());
        parallel_for(noisy.size(), threads, [&](std::size_t q) { lists[q] = index->query(noisy.vector(q), k); });
        for (std::size_t r = 0; r < rules.size(); ++r) {
            ScorerConfig cfg{rules[r], k, t, metric};
            auto row = score_rows(lists, k, support, noisy, cfg, num_bins, threads);
            row.severity = severity;
            row.seed = seed;
            by_rule[r].push_back(row);
        }
    }
    for (auto& rows : by_rule) report.rows.insert(report.rows.end(), rows.begin(), rows.end());
    return report;
}

std::vector<RuleAverage> average_by_rule(const SweepReport& report) {
    std::vector<RuleAverage> out;
    for (const auto& row : report.rows) {
        if (std::none_of(out.begin(), out.end(), [&](const RuleAverage& a) { return a.rule == row.rule; }))
            out.push_back(RuleAverage{row.rule, 0, 0.0, std::nullopt});
    }
    for (auto& avg : out) {
        std::vector<SweepRow> rows;
        for (const auto& row : report.rows)
            if (row.rule == avg.rule) rows.push_back(row);
        double acc = 0.0;
        for (const auto& r : rows) acc += r.accuracy;
        avg.rows = rows.size();
        avg.accuracy = acc / static_cast<double>(rows.size());
        avg.ece = mean_ece(rows);
    }
    return out;
}

std::string sweep_csv(const SweepReport& report) {
    std::ostringstream out;
    out << "rule,k,severity,accuracy,ece,t_used,seed\n";
    for (const auto& r : report.rows) {
        out << to_string(r.rule) << ',' << r.k << ',' << r.severity << ',' << format_double(r.accuracy) << ','
            << (r.ece ? format_double(*r.ece) : "") << ',' << (r.t_used ? format_double(*r.t_used) : "") << ','
            << r.seed << '\n';
    }
    return out.str();
}

void write_sweep_csv(const SweepReport& report, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << sweep_csv(report);
    if (!out) throw IoError("write failed for " + path.string());
}

std::string format_sweep_table(const SweepReport& report) {
    std::ostringstream out;
    out << std::left << std::setw(8) << "rule" << std::right << std::setw(6) << "k" << std::setw(10) << "severity"
        << std::setw(10) << "accuracy" << std::setw(9) << "ECE" << std::setw(12) << "T" << '\n';
    auto pct = [](double v) {
        std::ostringstream s;
        s << std::fixed << std::setprecision(2) << 100.0 * v;
        return s.str();
    };
    for (const auto& r : report.rows) {
        std::ostringstream t;
        if (r.t_used) t << std::setprecision(4) << *r.t_used;
        out << std::left << std::setw(8) << to_string(r.rule) << std::right << std::setw(6) << r.k << std::setw(10)
            << r.severity << std::setw(10) << pct(r.accuracy) << std::setw(9) << (r.ece ? pct(*r.ece) : "-")
            << std::setw(12) << (r.t_used ? t.str() : "-") << '\n';
    }
    return out.str();
}

}  // namespace nedcal
