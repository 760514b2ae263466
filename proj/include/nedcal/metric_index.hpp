#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "nedcal/embedding_store.hpp"

namespace nedcal {

enum class MetricKind { squared_euclidean, cosine };

std::string_view to_string(MetricKind m);
// Accepts "sqeuclidean"/"squared-euclidean" and "cosine".
MetricKind parse_metric(std::string_view s);

double squared_euclidean(std::span<const double> a, std::span<const double> b);
// 1 - <a,b>/(|a||b|), clamped to [0, 2]. Both vectors must be nonzero.
double cosine_distance(std::span<const double> a, std::span<const double> b);
double distance(MetricKind metric, std::span<const double> a, std::span<const double> b);

struct Neighbor {
    std::size_t index = 0;
    double distance = 0.0;

    friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

// Ascending by distance, ties by lower record index.
using NeighborList = std::vector<Neighbor>;

inline bool neighbor_before(const Neighbor& a, const Neighbor& b) {
    return a.distance < b.distance || (a.distance == b.distance && a.index < b.index);
}

enum class IndexBackend {
    exhaustive,  // normative
    kd_tree,     // exact; squared-euclidean only, otherwise falls back to exhaustive
};

// Exact k-nearest-neighbour index over a copy of a set's vectors. Immutable
// after construction; concurrent queries are safe.
class Index {
public:
    virtual ~Index() = default;

    std::size_t size() const { return size_; }
    std::size_t dim() const { return dim_; }
    MetricKind metric() const { return metric_; }
    virtual IndexBackend backend() const = 0;

    // The min(k, N) nearest records, excluding `exclude` when given (used for
    // leave-one-out). Throws ValidationError on dimension mismatch, k == 0, or
    // a zero query under the cosine metric.
    NeighborList query(std::span<const double> z, std::size_t k,
                       std::optional<std::size_t> exclude = std::nullopt) const;

protected:
    Index(std::size_t size, std::size_t dim, MetricKind metric) : size_(size), dim_(dim), metric_(metric) {}

    virtual NeighborList search(std::span<const double> z, std::size_t k,
                                std::optional<std::size_t> exclude) const = 0;

private:
    std::size_t size_;
    std::size_t dim_;
    MetricKind metric_;
};

// Throws ValidationError for an empty set or, under cosine, a zero vector.
std::unique_ptr<Index> build_index(const SupportSet& set, MetricKind metric,
                                   IndexBackend backend = IndexBackend::exhaustive);

// Same as Index::query; kept as a free function for symmetry with the CLI.
NeighborList query_knn(const Index& index, std::span<const double> z, std::size_t k);

struct SeparationStats {
    double intra_mean = 0.0;
    double inter_mean = 0.0;
    std::size_t intra_pairs = 0;
    std::size_t inter_pairs = 0;

    double ratio() const { return intra_mean / inter_mean; }
};

// Monte-Carlo estimate of mean same-class and cross-class distances from
// `sample` pairs of each kind. Diagnostic only. Throws ValidationError for a
// set with fewer than two classes.
SeparationStats separation_diagnostic(const SupportSet& set, MetricKind metric, std::size_t sample,
                                      std::uint64_t seed);

}  // namespace nedcal
