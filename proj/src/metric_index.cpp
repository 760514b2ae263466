#include "nedcal/metric_index.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>
#include <string>

#include "nedcal/errors.hpp"
#include "nedcal/random.hpp"

namespace nedcal {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double cosine_from_parts(double ab, double na, double nb) {
    return std::clamp(1.0 - ab / (na * nb), 0.0, 2.0);
}

// Keeps the k best neighbours seen so far; top() is the worst of them.
class TopK {
public:
    explicit TopK(std::size_t k) : k_(k) {}

    void offer(const Neighbor& n) {
        if (heap_.size() < k_) {
            heap_.push(n);
        } else if (neighbor_before(n, heap_.top())) {
            heap_.pop();
            heap_.push(n);
        }
    }

    bool full() const { return heap_.size() == k_; }
    double worst() const { return heap_.top().distance; }

    NeighborList take() {
        NeighborList out(heap_.size());
        for (std::size_t i = out.size(); i-- > 0;) {
            out[i] = heap_.top();
            heap_.pop();
        }
        return out;
    }

private:
    struct Later {
        bool operator()(const Neighbor& a, const Neighbor& b) const { return neighbor_before(a, b); }
    };
    std::size_t k_;
    std::priority_queue<Neighbor, std::vector<Neighbor>, Later> heap_;
};

class ExhaustiveIndex final : public Index {
public:
    ExhaustiveIndex(const SupportSet& set, MetricKind metric)
        : Index(set.size(), set.dim(), metric), data_(set.data().begin(), set.data().end()) {
        if (metric == MetricKind::cosine) {
            norms_.resize(set.size());
            for (std::size_t i = 0; i < set.size(); ++i) norms_[i] = norm(set.vector(i));
        }
    }

    IndexBackend backend() const override { return IndexBackend::exhaustive; }

protected:
    NeighborList search(std::span<const double> z, std::size_t k,
                        std::optional<std::size_t> exclude) const override {
        NeighborList all;
        all.reserve(size());
        const double zn = metric() == MetricKind::cosine ? norm(z) : 0.0;
        for (std::size_t i = 0; i < size(); ++i) {
            if (exclude && *exclude == i) continue;
            std::span<const double> x(data_.data() + i * dim(), dim());
            const double d = metric() == MetricKind::cosine ? cosine_from_parts(dot(z, x), zn, norms_[i])
                                                            : squared_euclidean(z, x);
            all.push_back({i, d});
        }
        k = std::min(k, all.size());
        if (k < all.size()) {
            std::nth_element(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k - 1), all.end(),
                             neighbor_before);
            all.resize(k);
        }
        std::sort(all.begin(), all.end(), neighbor_before);
        return all;
    }

private:
    std::vector<double> data_;
    std::vector<double> norms_;
};

// Median-split k-d tree for squared-euclidean distance. A subtree is skipped
// only when its bound is strictly greater than the current k-th distance, so
// equal-distance candidates still compete on index and results match the
// exhaustive scan exactly.
class KdTreeIndex final : public Index {
public:
    KdTreeIndex(const SupportSet& set)
        : Index(set.size(), set.dim(), MetricKind::squared_euclidean),
          data_(set.data().begin(), set.data().end()),
          order_(set.size()) {
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        nodes_.reserve(2 * set.size() / kLeafSize + 2);
        build(0, order_.size());
    }

    IndexBackend backend() const override { return IndexBackend::kd_tree; }

protected:
    NeighborList search(std::span<const double> z, std::size_t k,
                        std::optional<std::size_t> exclude) const override {
        const std::size_t available = size() - (exclude && *exclude < size() ? 1 : 0);
        TopK best(std::min(k, available));
        if (available > 0) descend(0, z, exclude, best);
        return best.take();
    }

private:
    static constexpr std::size_t kLeafSize = 16;
    static constexpr std::size_t kNoChild = static_cast<std::size_t>(-1);

    struct Node {
        std::size_t begin = 0, end = 0;
        std::size_t axis = 0;
        double split = 0.0;
        std::size_t left = kNoChild, right = kNoChild;
    };

    std::span<const double> point(std::size_t i) const { return {data_.data() + i * dim(), dim()}; }

    std::size_t build(std::size_t begin, std::size_t end) {
        const std::size_t id = nodes_.size();
        nodes_.push_back({begin, end});
        if (end - begin <= kLeafSize) return id;

        std::size_t axis = 0;
        double best_spread = -1.0;
        for (std::size_t d = 0; d < dim(); ++d) {
            double lo = point(order_[begin])[d], hi = lo;
            for (std::size_t i = begin + 1; i < end; ++i) {
                const double v = point(order_[i])[d];
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
            if (hi - lo > best_spread) {
                best_spread = hi - lo;
                axis = d;
            }
        }
        if (best_spread <= 0.0) return id;  // all points identical

        const std::size_t mid = begin + (end - begin) / 2;
        std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin),
                         order_.begin() + static_cast<std::ptrdiff_t>(mid),
                         order_.begin() + static_cast<std::ptrdiff_t>(end),
                         [&](std::size_t a, std::size_t b) { return point(a)[axis] < point(b)[axis]; });
        const double split = point(order_[mid])[axis];
        // Left holds coordinates <= split, right holds coordinates >= split.
        const std::size_t left = build(begin, mid);
        const std::size_t right = build(mid, end);
        nodes_[id].axis = axis;
        nodes_[id].split = split;
        nodes_[id].left = left;
        nodes_[id].right = right;
        return id;
    }

    void descend(std::size_t id, std::span<const double> z, std::optional<std::size_t> exclude, TopK& best) const {
        const Node& node = nodes_[id];
        if (node.left == kNoChild) {
            for (std::size_t i = node.begin; i < node.end; ++i) {
                const std::size_t idx = order_[i];
                if (exclude && *exclude == idx) continue;
                best.offer({idx, squared_euclidean(z, point(idx))});
            }
            return;
        }
        const double diff = z[node.axis] - node.split;
        const std::size_t near = diff <= 0.0 ? node.left : node.right;
        const std::size_t far = diff <= 0.0 ? node.right : node.left;
        descend(near, z, exclude, best);
        if (!best.full() || diff * diff <= best.worst()) descend(far, z, exclude, best);
    }

    std::vector<double> data_;
    std::vector<std::size_t> order_;
    std::vector<Node> nodes_;
};

}  // namespace

std::string_view to_string(MetricKind m) {
    return m == MetricKind::cosine ? "cosine" : "sqeuclidean";
}

MetricKind parse_metric(std::string_view s) {
    if (s == "sqeuclidean" || s == "squared-euclidean") return MetricKind::squared_euclidean;
    if (s == "cosine") return MetricKind::cosine;
    throw ValidationError("unknown metric '" + std::string(s) + "'");
}

double squared_euclidean(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

double cosine_distance(std::span<const double> a, std::span<const double> b) {
    const double na = norm(a), nb = norm(b);
    if (na == 0.0 || nb == 0.0) throw ValidationError("cosine distance is undefined for a zero vector");
    return cosine_from_parts(dot(a, b), na, nb);
}

double distance(MetricKind metric, std::span<const double> a, std::span<const double> b) {
    return metric == MetricKind::cosine ? cosine_distance(a, b) : squared_euclidean(a, b);
}

NeighborList Index::query(std::span<const double> z, std::size_t k, std::optional<std::size_t> exclude) const {
    if (z.size() != dim_)
        throw ValidationError("query dimension " + std::to_string(z.size()) + " does not match index dimension " +
                              std::to_string(dim_));
    if (k == 0) throw ValidationError("k must be at least 1");
    if (metric_ == MetricKind::cosine && norm(z) == 0.0)
        throw ValidationError("zero query vector under the cosine metric");
    return search(z, k, exclude);
}

std::unique_ptr<Index> build_index(const SupportSet& set, MetricKind metric, IndexBackend backend) {
    if (set.empty()) throw ValidationError("cannot build an index over an empty set");
    if (metric == MetricKind::cosine) {
        for (std::size_t i = 0; i < set.size(); ++i)
            if (norm(set.vector(i)) == 0.0)
                throw ValidationError("record '" + set.id(i) + "' is a zero vector; cosine distance undefined");
    }
    if (backend == IndexBackend::kd_tree && metric == MetricKind::squared_euclidean)
        return std::make_unique<KdTreeIndex>(set);
    return std::make_unique<ExhaustiveIndex>(set, metric);
}

NeighborList query_knn(const Index& index, std::span<const double> z, std::size_t k) {
    return index.query(z, k);
}

SeparationStats separation_diagnostic(const SupportSet& set, MetricKind metric, std::size_t sample,
                                      std::uint64_t seed) {
    if (set.num_classes() < 2) throw ValidationError("separation diagnostic needs at least two classes");
    if (sample == 0) throw ValidationError("sample must be positive");

    std::vector<std::vector<std::size_t>> by_class(set.num_classes());
    for (std::size_t i = 0; i < set.size(); ++i) by_class[set.label(i)].push_back(i);

    std::vector<std::size_t> pairable;  // records whose class has a second member
    for (std::size_t i = 0; i < set.size(); ++i)
        if (by_class[set.label(i)].size() >= 2) pairable.push_back(i);

    SeparationStats stats;
    Rng intra_rng(seed, "separation/intra");
    if (!pairable.empty()) {
        double sum = 0.0;
        for (std::size_t s = 0; s < sample; ++s) {
            const std::size_t a = pairable[intra_rng.below(pairable.size())];
            const auto& members = by_class[set.label(a)];
            std::size_t b = members[intra_rng.below(members.size() - 1)];
            if (b == a) b = members.back();
            sum += distance(metric, set.vector(a), set.vector(b));
        }
        stats.intra_mean = sum / static_cast<double>(sample);
        stats.intra_pairs = sample;
    }

    Rng inter_rng(seed, "separation/inter");
    double sum = 0.0;
    for (std::size_t s = 0; s < sample; ++s) {
        const std::size_t a = inter_rng.below(set.size());
        std::size_t b;
        do {
            b = inter_rng.below(set.size());
        } while (set.label(b) == set.label(a));
        sum += distance(metric, set.vector(a), set.vector(b));
    }
    stats.inter_mean = sum / static_cast<double>(sample);
    stats.inter_pairs = sample;
    return stats;
}

}  // namespace nedcal
