#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "nedcal/errors.hpp"
#include "nedcal/metric_index.hpp"
#include "test_util.hpp"

using namespace nedcal;
using nedcal::test::make_set;
using nedcal::test::random_set;

namespace {

// Independent reference: full sort of (distance, index) pairs.
NeighborList brute_force(const SupportSet& set, std::span<const double> z, std::size_t k, MetricKind metric) {
    NeighborList all;
    for (std::size_t i = 0; i < set.size(); ++i) {
        double d = 0.0;
        if (metric == MetricKind::squared_euclidean) {
            for (std::size_t j = 0; j < z.size(); ++j) d += (z[j] - set.vector(i)[j]) * (z[j] - set.vector(i)[j]);
        } else {
            double ab = 0, aa = 0, bb = 0;
            for (std::size_t j = 0; j < z.size(); ++j) {
                ab += z[j] * set.vector(i)[j];
                aa += z[j] * z[j];
                bb += set.vector(i)[j] * set.vector(i)[j];
            }
            d = std::clamp(1.0 - ab / (std::sqrt(aa) * std::sqrt(bb)), 0.0, 2.0);
        }
        all.push_back({i, d});
    }
    std::sort(all.begin(), all.end(), [](const Neighbor& a, const Neighbor& b) {
        return a.distance < b.distance || (a.distance == b.distance && a.index < b.index);
    });
    all.resize(std::min(k, all.size()));
    return all;
}

void expect_same(const NeighborList& a, const NeighborList& b) {
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].index, b[i].index) << "rank " << i;
        EXPECT_EQ(a[i].distance, b[i].distance) << "rank " << i;
    }
}

}  // namespace

TEST(MetricIndex, HandExample) {
    const auto set = make_set({{0, 0}, {1, 0}, {4, 0}}, {"A", "B", "B"});
    const auto index = build_index(set, MetricKind::squared_euclidean);
    const std::vector<double> q{0.9, 0.0};
    const auto nn = query_knn(*index, q, 2);
    ASSERT_EQ(nn.size(), 2u);
    EXPECT_EQ(nn[0].index, 1u);
    EXPECT_NEAR(nn[0].distance, 0.01, 1e-15);
    EXPECT_EQ(nn[1].index, 0u);
    EXPECT_NEAR(nn[1].distance, 0.81, 1e-15);
    EXPECT_EQ(index->size(), 3u);
}

TEST(MetricIndex, LargeKReturnsEverythingSorted) {
    const auto set = random_set(30, 3, 2, 1);
    const auto index = build_index(set, MetricKind::squared_euclidean);
    const auto nn = index->query(set.vector(4), 100);
    ASSERT_EQ(nn.size(), 30u);
    EXPECT_TRUE(std::is_sorted(nn.begin(), nn.end(), neighbor_before));
    EXPECT_EQ(nn[0].index, 4u);
    EXPECT_EQ(nn[0].distance, 0.0);
}

TEST(MetricIndex, SelfQueryAndExclusion) {
    const auto set = random_set(40, 4, 3, 2);
    for (auto backend : {IndexBackend::exhaustive, IndexBackend::kd_tree}) {
        const auto index = build_index(set, MetricKind::squared_euclidean, backend);
        for (std::size_t i = 0; i < set.size(); ++i) {
            EXPECT_EQ(index->query(set.vector(i), 1)[0].index, i);
            const auto ex = index->query(set.vector(i), 39, i);
            EXPECT_EQ(ex.size(), 39u);
            EXPECT_TRUE(std::none_of(ex.begin(), ex.end(), [&](const Neighbor& n) { return n.index == i; }));
        }
    }
}

TEST(MetricIndex, TiesGoToLowerIndex) {
    const auto set = make_set({{1, 0}, {0, 1}, {-1, 0}, {0, -1}}, {"A", "B", "A", "B"});
    for (auto backend : {IndexBackend::exhaustive, IndexBackend::kd_tree}) {
        const auto nn = build_index(set, MetricKind::squared_euclidean, backend)->query(std::vector<double>{0, 0}, 3);
        EXPECT_EQ(nn[0].index, 0u);
        EXPECT_EQ(nn[1].index, 1u);
        EXPECT_EQ(nn[2].index, 2u);
    }
}

TEST(MetricIndex, PrefixProperty) {
    const auto set = random_set(60, 3, 3, 5);
    const auto index = build_index(set, MetricKind::squared_euclidean);
    const std::vector<double> q{0.1, -0.2, 0.3};
    for (std::size_t k = 1; k < 30; ++k) {
        const auto a = index->query(q, k);
        const auto b = index->query(q, k + 1);
        expect_same(a, NeighborList(b.begin(), b.begin() + static_cast<std::ptrdiff_t>(k)));
    }
}

TEST(MetricIndex, MatchesBruteForceBothMetrics) {
    const auto set = random_set(200, 6, 4, 9);
    Rng rng(10);
    for (auto metric : {MetricKind::squared_euclidean, MetricKind::cosine}) {
        const auto index = build_index(set, metric);
        for (int q = 0; q < 50; ++q) {
            std::vector<double> z(6);
            for (auto& x : z) x = rng.normal();
            const std::size_t k = 1 + rng.below(200);
            expect_same(index->query(z, k), brute_force(set, z, k, metric));
        }
    }
}

TEST(MetricIndex, KdTreeMatchesExhaustive) {
    // Integer grid coordinates create many exact ties.
    Rng rng(4);
    std::vector<std::vector<double>> v(200, std::vector<double>(3));
    std::vector<std::string> labels(200);
    for (std::size_t i = 0; i < v.size(); ++i) {
        for (auto& x : v[i]) x = static_cast<double>(rng.below(5));
        labels[i] = i % 2 ? "a" : "b";
    }
    for (const auto& set : {make_set(v, labels), random_set(200, 5, 3, 8)}) {
        const auto ex = build_index(set, MetricKind::squared_euclidean, IndexBackend::exhaustive);
        const auto kd = build_index(set, MetricKind::squared_euclidean, IndexBackend::kd_tree);
        for (int q = 0; q < 50; ++q) {
            std::vector<double> z(set.dim());
            for (auto& x : z) x = static_cast<double>(rng.below(5)) + (q % 2 ? 0.0 : rng.uniform(-0.5, 0.5));
            const std::size_t k = 1 + rng.below(set.size());
            expect_same(kd->query(z, k), ex->query(z, k));
        }
    }
}

TEST(MetricIndex, PermutationInvariantAsMultisets) {
    const auto set = random_set(80, 3, 3, 12);
    std::vector<std::size_t> perm(set.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = perm.size() - 1 - i;
    const auto shuffled = set.select(perm, SetRole::support);
    const std::vector<double> q{0.5, 0.5, -1.0};
    const auto a = build_index(set, MetricKind::squared_euclidean)->query(q, 10);
    const auto b = build_index(shuffled, MetricKind::squared_euclidean)->query(q, 10);
    std::multimap<std::string, double> ma, mb;
    for (const auto& n : a) ma.insert({set.id(n.index), n.distance});
    for (const auto& n : b) mb.insert({shuffled.id(n.index), n.distance});
    EXPECT_EQ(ma, mb);
}

TEST(MetricIndex, Errors) {
    const auto set = make_set({{1, 0}, {0, 1}}, {"A", "B"});
    const auto index = build_index(set, MetricKind::squared_euclidean);
    EXPECT_THROW(index->query(std::vector<double>{1, 2, 3}, 1), ValidationError);
    EXPECT_THROW(index->query(std::vector<double>{1, 2}, 0), ValidationError);
    const auto cos = build_index(set, MetricKind::cosine);
    EXPECT_THROW(cos->query(std::vector<double>{0, 0}, 1), ValidationError);
    EXPECT_THROW(build_index(make_set({{0, 0}, {1, 0}}, {"A", "B"}), MetricKind::cosine), ValidationError);
    EXPECT_EQ(build_index(set, MetricKind::cosine, IndexBackend::kd_tree)->backend(), IndexBackend::exhaustive);
    EXPECT_THROW(parse_metric("manhattan"), ValidationError);
}

TEST(Distances, Properties) {
    Rng rng(6);
    for (int t = 0; t < 100; ++t) {
        std::vector<double> a(5), b(5);
        for (auto& x : a) x = rng.normal();
        for (auto& x : b) x = rng.normal();
        EXPECT_EQ(squared_euclidean(a, b), squared_euclidean(b, a));
        EXPECT_EQ(squared_euclidean(a, a), 0.0);
        EXPECT_GT(squared_euclidean(a, b), 0.0);
        const double c = cosine_distance(a, b);
        EXPECT_GE(c, 0.0);
        EXPECT_LE(c, 2.0);
    }
    const std::vector<double> x{1, 0}, y{0, 2}, z{-3, 0};
    EXPECT_DOUBLE_EQ(cosine_distance(x, y), 1.0);
    EXPECT_DOUBLE_EQ(cosine_distance(x, z), 2.0);
    EXPECT_DOUBLE_EQ(cosine_distance(x, x), 0.0);
}

TEST(Separation, WellSeparatedClusters) {
    std::vector<std::vector<double>> v;
    std::vector<std::string> labels;
    Rng rng(1);
    for (int i = 0; i < 100; ++i) {
        v.push_back({rng.normal() * 0.1, rng.normal() * 0.1});
        labels.push_back("A");
        v.push_back({5 + rng.normal() * 0.1, rng.normal() * 0.1});
        labels.push_back("B");
    }
    const auto s = separation_diagnostic(make_set(v, labels), MetricKind::squared_euclidean, 500, 3);
    EXPECT_LT(s.intra_mean, s.inter_mean);
}

TEST(Separation, IdenticalDistributions) {
    const auto set = random_set(2000, 4, 2, 21);
    const auto s = separation_diagnostic(set, MetricKind::squared_euclidean, 20000, 4);
    // E||x - y||^2 = 2m for both pair kinds; standard error ~ 0.6% at 20k pairs.
    EXPECT_NEAR(s.ratio(), 1.0, 0.05);
}

TEST(Separation, TenSigmaApartMatchesAnalytic) {
    const std::size_t m = 8;
    const double sigma = 0.5;
    Rng rng(7);
    std::vector<std::vector<double>> v;
    std::vector<std::string> labels;
    for (int i = 0; i < 1000; ++i) {
        for (int c = 0; c < 2; ++c) {
            std::vector<double> x(m);
            for (auto& e : x) e = sigma * rng.normal();
            x[0] += c * 10 * sigma;
            v.push_back(x);
            labels.push_back(c ? "B" : "A");
        }
    }
    const auto s = separation_diagnostic(make_set(v, labels), MetricKind::squared_euclidean, 20000, 5);
    const double intra = 2.0 * m * sigma * sigma;
    const double inter = intra + 100.0 * sigma * sigma;
    EXPECT_NEAR(s.intra_mean, intra, 0.05 * intra);
    EXPECT_NEAR(s.inter_mean, inter, 0.05 * inter);
    EXPECT_LT(s.ratio(), 0.2);
    EXPECT_NEAR(s.ratio(), intra / inter, 0.02);
}

TEST(Separation, SingleClassRejected) {
    EXPECT_THROW(separation_diagnostic(make_set({{0.0}, {1.0}}, {"A", "A"}), MetricKind::squared_euclidean, 10, 1),
                 ValidationError);
}
