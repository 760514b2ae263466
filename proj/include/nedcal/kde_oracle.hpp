#pragma once

// Reference computations for the NED score: the Gaussian-kernel class
// posterior summed over the whole support set, and Gaussian mixtures whose
// Bayes posterior is known in closed form. Everything here is brute force
// (O(N * M) per query, no index) and independent of the scorer code paths.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "nedcal/embedding_store.hpp"

namespace nedcal {

enum class KernelMode { shared_alpha, per_class_alpha, per_class_full_covariance };

struct KernelSpec {
    KernelMode mode = KernelMode::shared_alpha;
    std::vector<double> alphas;               // one entry (shared) or one per class
    std::vector<Eigen::MatrixXd> covariances;  // one per class, full-covariance mode

    static KernelSpec shared(double alpha);
    static KernelSpec per_class(std::vector<double> alphas);
    static KernelSpec full(std::vector<Eigen::MatrixXd> covariances);
};

// Kernel-smoothed class posterior at z using every support point:
//   p_j  proportional to  sum_{i in class j} K_j(z - z_i)
// with K_j the N(0, alpha_j I) density (alpha modes) or the N(0, Sigma_j)
// density (full mode), normalising constants that differ between classes
// included. The per-class sums carry the N_j / N class-prior estimate
// implicitly. Computed in log space. Throws ValidationError when the spec
// does not match the set, an alpha is not positive, or a covariance is not
// positive definite.
std::vector<double> kde_posterior(const SupportSet& set, std::span<const double> z, const KernelSpec& spec);

struct MixtureClass {
    Eigen::VectorXd mean;
    Eigen::MatrixXd covariance;
    double prior = 0.0;
};

struct MixtureSpec {
    std::vector<MixtureClass> classes;
    std::uint64_t seed = 0;
    // Optional sizes used by `synth` and the benchmarks.
    std::size_t n_support = 0;
    std::size_t n_query = 0;
    std::string name;

    std::size_t num_classes() const { return classes.size(); }
    std::size_t dim() const { return classes.empty() ? 0 : static_cast<std::size_t>(classes.front().mean.size()); }

    // Priors positive and summing to 1 (within 1e-9), consistent dimensions,
    // covariances symmetric positive definite. Throws ValidationError.
    void validate() const;

    // Label names sort in class order ("c0".."c9", or "c00".. for more).
    std::vector<std::string> class_names() const;
    LabelSpace label_space() const;
};

// JSON document:
//   {"name": ..., "seed": 7, "n_support": 2000, "n_query": 2000,
//    "priors": [..], "means": [[..], ..],
//    "covariances": [[[..], ..], ..]}
// Instead of "covariances", "diagonal_variances": [[..], ..] gives diagonal
// covariances and "stddevs": [s0, s1, ..] gives isotropic s_j^2 I. Priors
// default to uniform.
MixtureSpec parse_mixture_spec(std::string_view json_text);
MixtureSpec load_mixture_spec(const std::filesystem::path& path);
std::string mixture_spec_to_json(const MixtureSpec& spec);

// n_per_class samples from each class Gaussian, class-major order, ids
// "<prefix><class>-<i>". Deterministic in (spec, counts, seed).
SupportSet generate_mixture(const MixtureSpec& spec, std::size_t n_per_class, std::uint64_t seed,
                            std::string_view id_prefix = "s");

struct BenchmarkSets {
    SupportSet support;
    SupportSet queries;
};

// Support and query sets of the spec's sizes, split across classes by prior,
// each drawn from its own stream derived from the spec seed.
BenchmarkSets sample_benchmark(const MixtureSpec& spec);

// Per-class counts given explicitly; classes with zero samples are allowed
// only for SetRole::query.
SupportSet sample_mixture(const MixtureSpec& spec, std::span<const std::size_t> counts, std::uint64_t seed,
                          std::string_view id_prefix, SetRole role);

// Counts proportional to the priors (largest-remainder rounding), summing to n.
std::vector<std::size_t> counts_by_prior(const MixtureSpec& spec, std::size_t n);

// Exact Bayes posterior p(c_j) N(z; mu_j, Sigma_j) / sum_j' (...), log space.
std::vector<double> true_posterior(const MixtureSpec& spec, std::span<const double> z);

}  // namespace nedcal
