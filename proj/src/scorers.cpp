#include "nedcal/scorers.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "nedcal/errors.hpp"
#include "nedcal/parallel.hpp"

namespace nedcal {

namespace {

void check_lengths(std::size_t distances, std::size_t labels) {
    if (distances != labels) throw ValidationError("distance and label counts differ");
    if (labels == 0) throw ValidationError("at least one neighbour is required");
}

std::vector<double> weighted_votes(std::span<const double> weights, std::span<const ClassIndex> labels,
                                   std::size_t num_classes) {
    std::vector<double> scores(num_classes, 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= num_classes) throw ValidationError("neighbour label outside the label space");
        scores[labels[i]] += weights[i];
        total += weights[i];
    }
    for (double& s : scores) s /= total;
    return scores;
}

}  // namespace

std::string_view to_string(ScoreRule r) {
    switch (r) {
        case ScoreRule::ned: return "ned";
        case ScoreRule::knn: return "knn";
        case ScoreRule::wknn_a: return "wknn-a";
        case ScoreRule::wknn_b: return "wknn-b";
        case ScoreRule::one_nn: return "1nn";
    }
    return "?";
}

ScoreRule parse_rule(std::string_view s) {
    if (s == "ned") return ScoreRule::ned;
    if (s == "knn") return ScoreRule::knn;
    if (s == "wknn-a" || s == "wknn_a") return ScoreRule::wknn_a;
    if (s == "wknn-b" || s == "wknn_b") return ScoreRule::wknn_b;
    if (s == "1nn" || s == "one_nn" || s == "one-nn") return ScoreRule::one_nn;
    throw ValidationError("unknown rule '" + std::string(s) + "'");
}

void ScorerConfig::validate() const {
    if (k == 0) throw ValidationError("k must be at least 1");
    if (!(temperature > 0.0) || !std::isfinite(temperature))
        throw ValidationError("temperature must be a positive finite number");
}

std::vector<double> ned_scores(std::span<const double> distances, std::span<const ClassIndex> labels,
                               double temperature, std::size_t num_classes) {
    check_lengths(distances.size(), labels.size());
    if (!(temperature > 0.0)) throw ValidationError("temperature must be positive");
    const double d_min = *std::min_element(distances.begin(), distances.end());
    std::vector<double> weights(distances.size());
    for (std::size_t i = 0; i < distances.size(); ++i) weights[i] = std::exp(-(distances[i] - d_min) / temperature);
    return weighted_votes(weights, labels, num_classes);
}

std::vector<double> knn_scores(std::span<const ClassIndex> labels, std::size_t num_classes) {
    if (labels.empty()) throw ValidationError("at least one neighbour is required");
    const std::vector<double> ones(labels.size(), 1.0);
    return weighted_votes(ones, labels, num_classes);
}

std::vector<double> wknn_scores(std::span<const double> distances, std::span<const ClassIndex> labels,
                                WknnVariant variant, std::size_t num_classes) {
    check_lengths(distances.size(), labels.size());
    const std::size_t k = distances.size();
    const double d1 = distances.front();
    const double dk = distances.back();
    const double span = dk - d1;
    std::vector<double> weights(k, 1.0);
    if (span > 0.0) {
        const double floor = variant == WknnVariant::b ? 1.0 / static_cast<double>(k) : 0.0;
        for (std::size_t i = 0; i < k; ++i)
            weights[i] = ((dk - distances[i]) + floor * span) / ((1.0 + floor) * span);
    }
    return weighted_votes(weights, labels, num_classes);
}

std::vector<double> baseline_distances(const NeighborList& neighbors, MetricKind metric) {
    std::vector<double> out(neighbors.size());
    for (std::size_t i = 0; i < neighbors.size(); ++i)
        out[i] = metric == MetricKind::squared_euclidean ? std::sqrt(neighbors[i].distance) : neighbors[i].distance;
    return out;
}

ClassIndex argmax(std::span<const double> scores) {
    ClassIndex best = 0;
    for (ClassIndex c = 1; c < scores.size(); ++c)
        if (scores[c] > scores[best]) best = c;
    return best;
}

Prediction score_neighbors(const NeighborList& neighbors, const SupportSet& set, const ScorerConfig& config) {
    if (neighbors.empty()) throw ValidationError("empty neighbour list");
    std::vector<ClassIndex> labels(neighbors.size());
    std::vector<double> dists(neighbors.size());
    for (std::size_t i = 0; i < neighbors.size(); ++i) {
        labels[i] = set.label(neighbors[i].index);
        dists[i] = neighbors[i].distance;
    }
    const std::size_t m = set.num_classes();

    Prediction p;
    switch (config.rule) {
        case ScoreRule::ned: p.class_scores = ned_scores(dists, labels, config.temperature, m); break;
        case ScoreRule::knn: p.class_scores = knn_scores(labels, m); break;
        case ScoreRule::wknn_a:
            p.class_scores = wknn_scores(baseline_distances(neighbors, config.metric), labels, WknnVariant::a, m);
            break;
        case ScoreRule::wknn_b:
            p.class_scores = wknn_scores(baseline_distances(neighbors, config.metric), labels, WknnVariant::b, m);
            break;
        case ScoreRule::one_nn:
            p.class_scores.assign(m, 0.0);
            p.class_scores[labels.front()] = 1.0;
            p.calibrated = false;
            break;
    }
    p.label = argmax(p.class_scores);
    p.confidence = p.class_scores[p.label];
    return p;
}

Prediction predict(const Index& index, std::span<const double> query, const ScorerConfig& config,
                   const SupportSet& set) {
    config.validate();
    return score_neighbors(index.query(query, config.effective_k()), set, config);
}

std::vector<Prediction> predict_batch(const Index& index, std::span<const std::vector<double>> queries,
                                      const ScorerConfig& config, const SupportSet& set, std::size_t threads) {
    config.validate();
    for (std::size_t q = 0; q < queries.size(); ++q)
        if (queries[q].size() != index.dim())
            throw ValidationError("query at position " + std::to_string(q) + " has dimension " +
                                  std::to_string(queries[q].size()) + ", expected " + std::to_string(index.dim()));
    std::vector<Prediction> out(queries.size());
    parallel_for(queries.size(), threads, [&](std::size_t q) { out[q] = predict(index, queries[q], config, set); });
    return out;
}

std::vector<Prediction> predict_batch(const Index& index, const SupportSet& queries, const ScorerConfig& config,
                                      const SupportSet& set, std::size_t threads) {
    config.validate();
    if (!queries.empty() && queries.dim() != index.dim())
        throw ValidationError("query set at position 0 has dimension " + std::to_string(queries.dim()) +
                              ", expected " + std::to_string(index.dim()));
    std::vector<Prediction> out(queries.size());
    parallel_for(queries.size(), threads,
                 [&](std::size_t q) { out[q] = predict(index, queries.vector(q), config, set); });
    return out;
}

}  // namespace nedcal
