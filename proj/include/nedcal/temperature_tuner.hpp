#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "nedcal/embedding_store.hpp"
#include "nedcal/metric_index.hpp"

namespace nedcal {

enum class TuneMode { leave_one_out, holdout };

std::string_view to_string(TuneMode m);
// Accepts "loo"/"leave-one-out" and "holdout".
TuneMode parse_tune_mode(std::string_view s);

struct TuneConfig {
    TuneMode mode = TuneMode::leave_one_out;
    std::size_t k = 10;
    // Grid bounds; when unset the bracket is [1e-3, 1e3] times the mean
    // nearest-neighbour distance of the scored points.
    std::optional<double> t_min;
    std::optional<double> t_max;
    std::size_t grid_points = 32;
    std::size_t refine_iters = 24;
    // Holdout mode only.
    double holdout_fraction = 0.2;
    std::uint64_t seed = 0;
    std::size_t threads = 0;
    // Neighbour retrieval; kd_tree needs squared Euclidean.
    IndexBackend backend = IndexBackend::exhaustive;
    // Leave-one-out only: score at most this many support points, a subset
    // drawn with `seed`. 0 scores every point.
    std::size_t max_scored = 0;

    void validate() const;
};

struct NllPoint {
    double temperature = 0.0;
    double nll = 0.0;
};

struct TuneResult {
    double t_star = 0.0;
    double nll_at_t_star = 0.0;
    std::vector<NllPoint> nll_curve;        // the log-spaced grid
    std::vector<NllPoint> refinement_path;  // golden-section evaluations
    double t_min = 0.0;
    double t_max = 0.0;
    // Width of the final golden-section bracket, in natural-log units of T.
    double log_tolerance = 0.0;

    // True when the grid minimum is not an end point of the grid, so the
    // optimum lies inside the bracket.
    bool interior = false;
};

// Neighbour lists for the points whose likelihood is scored, computed once
// and shared by every temperature. For leave-one-out each support point (or
// each position in `scored`, when given) is scored against the rest of the set; for holdout each validation point is
// scored against the training part.
class NeighborCache {
public:
    static NeighborCache leave_one_out(const SupportSet& set, std::size_t k, MetricKind metric,
                                       std::size_t threads = 0, IndexBackend backend = IndexBackend::exhaustive,
                                       std::span<const std::size_t> scored = {});
    static NeighborCache holdout(const SupportSet& train, const SupportSet& validation, std::size_t k,
                                 MetricKind metric, std::size_t threads = 0,
                                 IndexBackend backend = IndexBackend::exhaustive);

    std::size_t size() const { return truth_.size(); }
    std::size_t num_classes() const { return num_classes_; }
    std::span<const double> distances(std::size_t p) const {
        return {distances_.data() + offsets_[p], offsets_[p + 1] - offsets_[p]};
    }
    std::span<const ClassIndex> labels(std::size_t p) const {
        return {labels_.data() + offsets_[p], offsets_[p + 1] - offsets_[p]};
    }
    ClassIndex truth(std::size_t p) const { return truth_[p]; }

    // Mean distance from each scored point to its nearest neighbour.
    double mean_nearest_distance() const;

    // -(1/n) sum log max(p_i, 1e-12), p_i the NED score of the true class.
    double nll(double temperature, std::size_t threads = 0) const;

private:
    std::vector<double> distances_;
    std::vector<ClassIndex> labels_;
    std::vector<std::size_t> offsets_{0};
    std::vector<ClassIndex> truth_;
    std::size_t num_classes_ = 0;
};

inline constexpr double kProbabilityFloor = 1e-12;

// Leave-one-out NLL of NED confidences on the support set. Throws
// TuningPreconditionError when a class has a single record or k > N - 1.
double loo_nll(const SupportSet& set, std::size_t k, double temperature, MetricKind metric,
               std::size_t threads = 0);

// Evaluates the NLL on a log-spaced grid, then refines around the grid
// minimum with golden-section search in log T. Lowest T wins ties.
TuneResult tune_temperature(const SupportSet& set, const TuneConfig& config, MetricKind metric);

// Same procedure on a prepared cache.
TuneResult tune_on_cache(const NeighborCache& cache, const TuneConfig& config);

// CSV with header "T,NLL", one row per grid point.
void write_nll_curve_csv(const TuneResult& result, const std::filesystem::path& path);

}  // namespace nedcal
