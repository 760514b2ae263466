#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "nedcal/embedding_store.hpp"
#include "nedcal/metric_index.hpp"

namespace nedcal {

enum class ScoreRule { ned, knn, wknn_a, wknn_b, one_nn };

std::string_view to_string(ScoreRule r);
// Accepts "ned", "knn", "wknn-a", "wknn-b", "1nn".
ScoreRule parse_rule(std::string_view s);

struct ScorerConfig {
    ScoreRule rule = ScoreRule::ned;
    std::size_t k = 10;
    double temperature = 1.0;  // NED only
    MetricKind metric = MetricKind::squared_euclidean;

    // Throws ValidationError when k == 0 or temperature is not a positive
    // finite number.
    void validate() const;
    // ONE_NN always retrieves a single neighbour.
    std::size_t effective_k() const { return rule == ScoreRule::one_nn ? 1 : k; }
};

struct Prediction {
    ClassIndex label = 0;
    double confidence = 0.0;
    std::vector<double> class_scores;
    // False for ONE_NN, whose confidence of 1.0 is a placeholder.
    bool calibrated = true;
};

// Normalised sum of exponentials of negative distances, per class:
//   score_j = sum_i exp(-d_i/T)[y_i = j] / sum_i exp(-d_i/T)
// evaluated as exp(-(d_i - d_min)/T) so the nearest neighbour always carries
// weight 1. `distances` are metric distances (squared for squared-euclidean).
std::vector<double> ned_scores(std::span<const double> distances, std::span<const ClassIndex> labels,
                               double temperature, std::size_t num_classes);

// Vote fractions over the given neighbour labels.
std::vector<double> knn_scores(std::span<const ClassIndex> labels, std::size_t num_classes);

enum class WknnVariant { a, b };

// Distance-weighted votes with weights linear in distance. Variant A uses
// w_i = (d_k - d_i)/(d_k - d_1); variant B blends that with a uniform floor of
// 1/k. All-equal distances give uniform weights. `distances` must be sorted
// ascending and be raw (unsquared) distances.
std::vector<double> wknn_scores(std::span<const double> distances, std::span<const ClassIndex> labels,
                                WknnVariant variant, std::size_t num_classes);

// Neighbour distances in the form the WkNN baselines expect: square roots
// under squared-euclidean, unchanged under cosine.
std::vector<double> baseline_distances(const NeighborList& neighbors, MetricKind metric);

// Scores one neighbour list under a rule (k is taken from the list length).
Prediction score_neighbors(const NeighborList& neighbors, const SupportSet& set, const ScorerConfig& config);

// argmax with ties to the lowest class index.
ClassIndex argmax(std::span<const double> scores);

Prediction predict(const Index& index, std::span<const double> query, const ScorerConfig& config,
                   const SupportSet& set);

// Order-preserving, deterministic for any thread count (0 = hardware
// concurrency). Dimension errors name the first offending position.
std::vector<Prediction> predict_batch(const Index& index, std::span<const std::vector<double>> queries,
                                      const ScorerConfig& config, const SupportSet& set, std::size_t threads = 0);

// Same, with queries taken from the rows of a set.
std::vector<Prediction> predict_batch(const Index& index, const SupportSet& queries, const ScorerConfig& config,
                                      const SupportSet& set, std::size_t threads = 0);

}  // namespace nedcal
