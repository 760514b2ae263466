#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nedcal/calibration_metrics.hpp"
#include "nedcal/embedding_store.hpp"
#include "nedcal/metric_index.hpp"
#include "nedcal/scorers.hpp"
#include "nedcal/temperature_tuner.hpp"

namespace nedcal {

// ---- perturbations ----------------------------------------------------------

enum class PerturbKind { gaussian_noise, uniform_noise, coordinate_dropout };

std::string_view to_string(PerturbKind k);
// Accepts "gaussian", "uniform", "dropout" (and the long forms).
PerturbKind parse_perturb_kind(std::string_view s);

// Severity s maps to a scale factor; noise kinds multiply it by the reference
// distance, dropout uses it directly as the fraction of zeroed coordinates.
inline constexpr std::array<double, 5> kSeverityFactors = {0.05, 0.1, 0.2, 0.4, 0.8};

struct PerturbSpec {
    PerturbKind kind = PerturbKind::gaussian_noise;
    int severity = 1;  // 1..5
    std::uint64_t seed = 0;

    void validate() const;
    double factor() const { return kSeverityFactors.at(static_cast<std::size_t>(severity - 1)); }
};

// Mean Euclidean distance from each vector to its nearest other vector.
double mean_nearest_neighbor_distance(const SupportSet& points, std::size_t threads = 0);

// Perturbs every row with a random stream keyed by (seed, row position), so
// the output does not depend on evaluation order. Gaussian noise has standard
// deviation `scale` per coordinate; uniform noise is U(-sqrt3 scale, sqrt3
// scale), matching that deviation; dropout zeroes round(scale * m)
// coordinates chosen at random (scale is a fraction there). Scale 0 is the
// identity. Inputs are never modified.
std::vector<std::vector<double>> perturb_with_scale(const SupportSet& queries, PerturbKind kind, double scale,
                                                    std::uint64_t seed);

// Severity-graded perturbation relative to `reference_distance` (normally the
// mean nearest-neighbour distance of the clean queries).
std::vector<std::vector<double>> perturb(const SupportSet& queries, const PerturbSpec& spec, double reference_distance);
std::vector<std::vector<double>> perturb(const SupportSet& queries, const PerturbSpec& spec);

// Copy of `queries` with vectors replaced, ids and labels kept.
SupportSet with_vectors(const SupportSet& queries, const std::vector<std::vector<double>>& vectors);

// ---- evaluation ---------------------------------------------------------------

struct EvalRun {
    CalibrationReport report;
    std::vector<Prediction> predictions;
};

std::vector<EvalOutcome> outcomes_of(std::span<const Prediction> predictions, const SupportSet& truth);

// Predicts every query and scores the predictions against the query labels.
// Throws LabelSpaceMismatch when the query label space is not the support's.
EvalRun evaluate_run(const SupportSet& support, const SupportSet& queries, const ScorerConfig& config,
                     std::size_t num_bins = kDefaultBins, std::size_t threads = 0);

// How NED's temperature is chosen inside a sweep.
struct TemperaturePolicy {
    std::optional<double> fixed;  // use this T everywhere
    bool tune_once = false;       // tune at the first k and reuse it
    TuneConfig tune;              // k is overwritten per sweep point
};

struct SweepRow {
    ScoreRule rule = ScoreRule::ned;
    std::size_t k = 0;
    int severity = 0;  // 0 = clean queries
    double accuracy = 0.0;
    std::optional<double> ece;     // absent for 1NN (no calibrated confidence)
    std::optional<double> t_used;  // NED only
    std::uint64_t seed = 0;
};

struct SweepReport {
    std::vector<SweepRow> rows;
    std::string dataset;
    std::string perturbation = "none";
    MetricKind metric = MetricKind::squared_euclidean;
    std::uint64_t seed = 0;
};

// Accuracy and ECE per rule and k on clean queries. Neighbour lists are
// retrieved once at the largest k and truncated for smaller k. NED retunes T
// at each k unless the policy fixes it.
SweepReport sweep_k(const SupportSet& support, const SupportSet& queries, std::span<const ScoreRule> rules,
                    std::span<const std::size_t> k_values, MetricKind metric, const TemperaturePolicy& temperature,
                    std::size_t num_bins = kDefaultBins, std::size_t threads = 0);

// Accuracy and ECE per rule and severity with perturbed queries and an
// untouched support set. T is chosen once on clean data.
SweepReport sweep_severity(const SupportSet& support, const SupportSet& queries, std::span<const ScoreRule> rules,
                           std::size_t k, PerturbKind kind, std::span<const int> severities, MetricKind metric,
                           const TemperaturePolicy& temperature, std::uint64_t seed,
                           std::size_t num_bins = kDefaultBins, std::size_t threads = 0);

struct RuleAverage {
    ScoreRule rule = ScoreRule::ned;
    std::size_t rows = 0;
    double accuracy = 0.0;
    std::optional<double> ece;
};

// Mean accuracy and ECE per rule over all rows of a report, in first-seen
// rule order.
std::vector<RuleAverage> average_by_rule(const SweepReport& report);

// Temperature for NED under a policy at neighbourhood size k.
double resolve_temperature(const SupportSet& support, std::size_t k, MetricKind metric,
                           const TemperaturePolicy& policy);

// Columns: rule,k,severity,accuracy,ece,t_used,seed. Missing values are empty.
void write_sweep_csv(const SweepReport& report, const std::filesystem::path& path);
std::string sweep_csv(const SweepReport& report);
std::string format_sweep_table(const SweepReport& report);

}  // namespace nedcal
