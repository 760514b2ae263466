#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "nedcal/errors.hpp"
#include "nedcal/kde_oracle.hpp"
#include "nedcal/scorers.hpp"
#include "nedcal/temperature_tuner.hpp"
#include "test_util.hpp"

using namespace nedcal;
using nedcal::test::make_set;
using nedcal::test::random_set;

namespace {

MixtureSpec two_class(double prior0 = 0.5, double gap = 2.0) {
    MixtureSpec spec;
    spec.classes.push_back({Eigen::Vector2d(0, 0), Eigen::Matrix2d::Identity(), prior0});
    spec.classes.push_back({Eigen::Vector2d(gap, 0), Eigen::Matrix2d::Identity(), 1.0 - prior0});
    spec.seed = 17;
    return spec;
}

void expect_normalized(const std::vector<double>& p, double tol = 1e-12) {
    EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, tol);
}

// 2-D Gaussian density written out with the closed-form 2x2 inverse.
double gauss2(double dx, double dy, const Eigen::Matrix2d& S) {
    const double det = S(0, 0) * S(1, 1) - S(0, 1) * S(1, 0);
    const double q = (S(1, 1) * dx * dx - 2 * S(0, 1) * dx * dy + S(0, 0) * dy * dy) / det;
    return std::exp(-0.5 * q) / (2 * M_PI * std::sqrt(det));
}

}  // namespace

TEST(KdePosterior, SharedAlphaEqualsNedWithAllNeighbours) {
    const auto set = random_set(120, 3, 4, 1);
    const auto index = build_index(set, MetricKind::squared_euclidean);
    Rng rng(2);
    for (double T : {0.05, 0.5, 3.0, 40.0}) {
        for (int q = 0; q < 20; ++q) {
            const std::vector<double> z{rng.normal(), rng.normal(), rng.normal()};
            const auto kde = kde_posterior(set, z, KernelSpec::shared(T / 2));
            const auto ned = predict(*index, z, {ScoreRule::ned, set.size(), T}, set).class_scores;
            for (std::size_t j = 0; j < kde.size(); ++j) EXPECT_NEAR(kde[j], ned[j], 1e-12) << T;
        }
    }
}

TEST(KdePosterior, SymmetricQuery) {
    const auto set = make_set({{-1, 0}, {1, 0}}, {"A", "B"});
    for (const auto& spec : {KernelSpec::shared(0.7), KernelSpec::per_class({0.7, 0.7}),
                             KernelSpec::full({Eigen::Matrix2d::Identity(), Eigen::Matrix2d::Identity()})}) {
        const auto p = kde_posterior(set, std::vector<double>{0, 3}, spec);
        EXPECT_NEAR(p[0], 0.5, 1e-15);
        EXPECT_NEAR(p[1], 0.5, 1e-15);
    }
}

TEST(KdePosterior, FullCovarianceMatchesDirectSum) {
    Rng rng(3);
    std::vector<std::vector<double>> v;
    std::vector<std::string> labels;
    for (int i = 0; i < 30; ++i) {
        v.push_back({rng.normal() + i % 3, rng.normal()});
        labels.push_back(std::string(1, static_cast<char>('a' + i % 3)));
    }
    const auto set = make_set(v, labels);
    std::vector<Eigen::MatrixXd> covs;
    for (int c = 0; c < 3; ++c) {
        Eigen::Matrix2d a;
        a << rng.normal(), rng.normal(), rng.normal(), rng.normal();
        covs.push_back(a * a.transpose() + 0.3 * Eigen::Matrix2d::Identity());
    }
    for (int q = 0; q < 25; ++q) {
        const std::vector<double> z{rng.uniform(-2, 4), rng.uniform(-2, 2)};
        std::vector<double> sums(3, 0.0);
        for (std::size_t i = 0; i < set.size(); ++i) {
            const auto c = set.label(i);
            sums[c] += gauss2(z[0] - set.vector(i)[0], z[1] - set.vector(i)[1], covs[c]);
        }
        const double total = sums[0] + sums[1] + sums[2];
        const auto p = kde_posterior(set, z, KernelSpec::full(covs));
        for (int c = 0; c < 3; ++c) {
            EXPECT_NEAR(p[c], sums[c] / total, 1e-10);
            EXPECT_GT(p[c], 0.0);
        }
        expect_normalized(p);
    }
}

TEST(KdePosterior, PerClassAlphaIncludesNormalisers) {
    // alpha_j^{-m/2} factors matter when alphas differ.
    const auto set = make_set({{0, 0}, {0.5, 0}}, {"A", "B"});
    const std::vector<double> z{0.2, 0.1};
    const double a0 = 0.3, a1 = 1.7;
    const auto p = kde_posterior(set, z, KernelSpec::per_class({a0, a1}));
    const double k0 = std::exp(-(0.04 + 0.01) / (2 * a0)) / a0;
    const double k1 = std::exp(-(0.09 + 0.01) / (2 * a1)) / a1;
    EXPECT_NEAR(p[0], k0 / (k0 + k1), 1e-14);
    // Per-class with equal alphas equals the shared form.
    const auto s = kde_posterior(set, z, KernelSpec::shared(0.8));
    const auto e = kde_posterior(set, z, KernelSpec::per_class({0.8, 0.8}));
    EXPECT_NEAR(s[0], e[0], 1e-15);
}

TEST(KdePosterior, DuplicationShiftsPrior) {
    const auto set = random_set(60, 2, 3, 4);
    std::vector<std::vector<double>> v;
    std::vector<std::string> labels;
    for (std::size_t i = 0; i < set.size(); ++i) {
        const std::string name = set.label_space().name(set.label(i));
        const int copies = set.label(i) == 1 ? 2 : 1;
        for (int c = 0; c < copies; ++c) {
            v.emplace_back(set.vector(i).begin(), set.vector(i).end());
            labels.push_back(name);
        }
    }
    const auto doubled = make_set(v, labels);
    const std::vector<double> z{0.3, -0.4};
    const auto p = kde_posterior(set, z, KernelSpec::shared(0.6));
    const auto d = kde_posterior(doubled, z, KernelSpec::shared(0.6));
    EXPECT_NEAR(d[1], 2 * p[1] / (1 + p[1]), 1e-12);
    EXPECT_NEAR(d[0], p[0] / (1 + p[1]), 1e-12);
}

TEST(KdePosterior, Validation) {
    const auto set = make_set({{0, 0}, {1, 0}}, {"A", "B"});
    const std::vector<double> z{0, 0};
    EXPECT_THROW(kde_posterior(set, z, KernelSpec::shared(0.0)), ValidationError);
    EXPECT_THROW(kde_posterior(set, z, KernelSpec::per_class({1.0})), ValidationError);
    Eigen::Matrix2d bad;
    bad << 1, 2, 2, 1;
    EXPECT_THROW(kde_posterior(set, z, KernelSpec::full({bad, Eigen::Matrix2d::Identity()})), ValidationError);
    EXPECT_THROW(kde_posterior(set, std::vector<double>{0, 0, 0}, KernelSpec::shared(1.0)), ValidationError);
}

TEST(TruePosterior, Examples) {
    auto spec = two_class(0.5, 10.0);
    EXPECT_GT(true_posterior(spec, std::vector<double>{0, 0})[0], 0.99);
    EXPECT_GT(true_posterior(spec, std::vector<double>{10, 0})[1], 0.99);

    auto same = two_class(0.5, 0.0);
    for (double x : {-3.0, 0.0, 5.0}) EXPECT_NEAR(true_posterior(same, std::vector<double>{x, 1})[0], 0.5, 1e-15);

    const auto skew = two_class(0.3, 2.0);
    const auto p = true_posterior(skew, std::vector<double>{1, 0.4});
    EXPECT_NEAR(p[0] / p[1], 3.0 / 7.0, 1e-12);
    expect_normalized(p);
}

TEST(TruePosterior, FarTailsStayFinite) {
    const auto spec = two_class(0.5, 2.0);
    const auto p = true_posterior(spec, std::vector<double>{1e3, 0});
    EXPECT_TRUE(std::isfinite(p[0]));
    EXPECT_NEAR(p[1], 1.0, 1e-12);
}

TEST(GenerateMixture, DeterministicAndUnbiased) {
    MixtureSpec spec = two_class(0.5, 3.0);
    spec.classes[1].covariance << 2.0, 0.5, 0.5, 1.0;
    const auto a = generate_mixture(spec, 4000, 9);
    const auto b = generate_mixture(spec, 4000, 9);
    EXPECT_TRUE(std::ranges::equal(a.data(), b.data()));
    EXPECT_EQ(a.id(0), "sc0-0");
    const auto c = generate_mixture(spec, 4000, 10);
    EXPECT_FALSE(std::ranges::equal(a.data(), c.data()));
    for (int cls = 0; cls < 2; ++cls) {
        Eigen::Vector2d mean = Eigen::Vector2d::Zero();
        Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
        std::size_t n = 0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (a.label(i) != static_cast<ClassIndex>(cls)) continue;
            mean += Eigen::Vector2d(a.vector(i)[0], a.vector(i)[1]);
            ++n;
        }
        mean /= static_cast<double>(n);
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (a.label(i) != static_cast<ClassIndex>(cls)) continue;
            const Eigen::Vector2d d = Eigen::Vector2d(a.vector(i)[0], a.vector(i)[1]) - mean;
            cov += d * d.transpose();
        }
        cov /= static_cast<double>(n - 1);
        const auto& spec_cls = spec.classes[cls];
        for (int d = 0; d < 2; ++d) {
            const double se = std::sqrt(spec_cls.covariance(d, d) / static_cast<double>(n));
            EXPECT_LT(std::abs(mean[d] - spec_cls.mean[d]), 4 * se);
        }
        EXPECT_NEAR(cov(0, 1), spec_cls.covariance(0, 1), 0.1);
    }
    EXPECT_THROW(generate_mixture(spec, 0, 1), ValidationError);
}

TEST(SampleBenchmark, CountsFollowPriors) {
    MixtureSpec spec = two_class(0.3, 2.0);
    spec.n_support = 101;
    spec.n_query = 50;
    const auto counts = counts_by_prior(spec, 101);
    EXPECT_EQ(counts[0] + counts[1], 101u);
    EXPECT_EQ(counts[0], 30u);
    const auto sets = sample_benchmark(spec);
    EXPECT_EQ(sets.support.size(), 101u);
    EXPECT_EQ(sets.queries.size(), 50u);
    EXPECT_EQ(sets.queries.role(), SetRole::query);
    EXPECT_EQ(sets.queries.id(0).front(), 'q');
    const auto again = sample_benchmark(spec);
    EXPECT_TRUE(std::ranges::equal(again.queries.data(), sets.queries.data()));
}

TEST(MixtureJson, ParseForms) {
    const auto full = parse_mixture_spec(R"({"name": "t", "seed": 5, "n_support": 10, "n_query": 4,
        "priors": [0.25, 0.75], "means": [[0, 0], [1, 2]],
        "covariances": [[[1, 0], [0, 1]], [[2, 0.5], [0.5, 1]]]})");
    EXPECT_EQ(full.name, "t");
    EXPECT_EQ(full.seed, 5u);
    EXPECT_EQ(full.n_support, 10u);
    EXPECT_EQ(full.classes[1].covariance(0, 1), 0.5);
    EXPECT_EQ(full.classes[0].prior, 0.25);
    EXPECT_EQ(full.class_names(), (std::vector<std::string>{"c0", "c1"}));

    const auto diag = parse_mixture_spec(R"({"means": [[0, 0], [1, 1]], "diagonal_variances": [[1, 4], [0.5, 0.5]]})");
    EXPECT_EQ(diag.classes[0].covariance(1, 1), 4.0);
    EXPECT_EQ(diag.classes[0].covariance(0, 1), 0.0);
    EXPECT_EQ(diag.classes[1].prior, 0.5);

    const auto iso = parse_mixture_spec(R"({"means": [[0], [1], [2]], "stddevs": [1, 2, 3]})");
    EXPECT_EQ(iso.classes[2].covariance(0, 0), 9.0);
    EXPECT_NEAR(iso.classes[1].prior, 1.0 / 3.0, 1e-15);

    const auto back = parse_mixture_spec(mixture_spec_to_json(full));
    EXPECT_EQ(back.classes[1].covariance, full.classes[1].covariance);
    EXPECT_EQ(back.classes[1].mean, full.classes[1].mean);
    EXPECT_EQ(back.seed, full.seed);

    EXPECT_THROW(parse_mixture_spec(R"({"means": [[0, 0], [1]], "stddevs": [1, 1]})"), ValidationError);
    EXPECT_THROW(parse_mixture_spec(R"({"means": [[0], [1]], "priors": [0.5, 0.6]})"), ValidationError);
    EXPECT_THROW(parse_mixture_spec(R"({"means": [[0], [1]], "stddevs": [1, -1]})"), ValidationError);
    EXPECT_THROW(parse_mixture_spec(R"({"means": [[0], [1]]})"), ValidationError);
    EXPECT_THROW(parse_mixture_spec("{not json"), ValidationError);
}

TEST(MixtureJson, CheckedInBenchmarksLoad) {
    for (const char* name : {"separable", "overlapping", "imbalanced"}) {
        const auto spec = load_mixture_spec(std::filesystem::path(NEDCAL_SOURCE_DIR) / "data/benchmarks" /
                                            (std::string(name) + ".json"));
        EXPECT_EQ(spec.name, name);
        EXPECT_EQ(spec.n_support, 2000u);
        EXPECT_EQ(spec.dim(), 16u);
    }
}

TEST(Consistency, TwoClassErrorShrinksWithN) {
    // Tuned NED over the whole support set against the Bayes posterior.
    const auto spec = two_class(0.5, 2.0);
    const std::vector<std::size_t> q_counts{250, 250};
    const auto queries = sample_mixture(spec, q_counts, 99, "q", SetRole::query);
    std::vector<double> mae;
    for (std::size_t n : {25, 100, 400, 1600}) {
        const auto set = generate_mixture(spec, n, derive_seed(1, "consistency", n));
        TuneConfig config;
        config.k = std::min<std::size_t>(set.size() - 1, 1000);
        config.backend = IndexBackend::kd_tree;
        config.max_scored = 1000;
        const auto tuned = tune_temperature(set, config, MetricKind::squared_euclidean);
        double err = 0.0;
        for (std::size_t q = 0; q < queries.size(); ++q) {
            const auto p = kde_posterior(set, queries.vector(q), KernelSpec::shared(tuned.t_star / 2));
            const auto t = true_posterior(spec, queries.vector(q));
            err += std::abs(p[0] - t[0]) + std::abs(p[1] - t[1]);
        }
        mae.push_back(err / (2.0 * static_cast<double>(queries.size())));
    }
    int inversions = 0;
    for (std::size_t i = 1; i < mae.size(); ++i) inversions += mae[i] >= mae[i - 1];
    EXPECT_LE(inversions, 1) << mae[0] << " " << mae[1] << " " << mae[2] << " " << mae[3];
    EXPECT_LT(mae.back(), mae.front());
}
