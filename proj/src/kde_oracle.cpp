#include "nedcal/kde_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "nedcal/errors.hpp"
#include "nedcal/random.hpp"

namespace nedcal {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_sum_exp(std::span<const double> xs) {
    double hi = kNegInf;
    for (double x : xs) hi = std::max(hi, x);
    if (hi == kNegInf) return kNegInf;
    double s = 0.0;
    for (double x : xs) s += std::exp(x - hi);
    return hi + std::log(s);
}

// Normalises per-class log masses into probabilities.
std::vector<double> normalise_logs(const std::vector<double>& logs) {
    const double total = log_sum_exp(logs);
    std::vector<double> p(logs.size());
    for (std::size_t j = 0; j < logs.size(); ++j) p[j] = logs[j] == kNegInf ? 0.0 : std::exp(logs[j] - total);
    return p;
}

Eigen::LLT<Eigen::MatrixXd> factor_spd(const Eigen::MatrixXd& cov, const std::string& what) {
    if (cov.rows() != cov.cols()) throw ValidationError(what + " is not square");
    if (!cov.isApprox(cov.transpose(), 1e-12)) throw ValidationError(what + " is not symmetric");
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success) throw ValidationError(what + " is not positive definite");
    // LLT can succeed on matrices with non-positive pivots in floating point.
    const Eigen::VectorXd diag = llt.matrixL().toDenseMatrix().diagonal();
    if ((diag.array() <= 0.0).any() || !diag.allFinite()) throw ValidationError(what + " is not positive definite");
    return llt;
}

double log_det_from_llt(const Eigen::LLT<Eigen::MatrixXd>& llt) {
    const Eigen::MatrixXd L = llt.matrixL();
    return 2.0 * L.diagonal().array().log().sum();
}

double squared_norm_diff(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
}

// (x)^T Sigma^-1 (x) via a triangular solve with the Cholesky factor.
double mahalanobis(const Eigen::LLT<Eigen::MatrixXd>& llt, const Eigen::VectorXd& x) {
    const Eigen::VectorXd y = llt.matrixL().solve(x);
    return y.squaredNorm();
}

Eigen::VectorXd to_eigen(std::span<const double> v) {
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

KernelSpec KernelSpec::shared(double alpha) { return {KernelMode::shared_alpha, {alpha}, {}}; }

KernelSpec KernelSpec::per_class(std::vector<double> alphas) {
    return {KernelMode::per_class_alpha, std::move(alphas), {}};
}

KernelSpec KernelSpec::full(std::vector<Eigen::MatrixXd> covariances) {
    return {KernelMode::per_class_full_covariance, {}, std::move(covariances)};
}

std::vector<double> kde_posterior(const SupportSet& set, std::span<const double> z, const KernelSpec& spec) {
    const std::size_t M = set.num_classes();
    const std::size_t m = set.dim();
    if (z.size() != m) throw ValidationError("query dimension does not match the support set");
    if (set.empty()) throw ValidationError("empty support set");

    // Per-record log kernel value, grouped by class.
    std::vector<std::vector<double>> logs_by_class(M);
    switch (spec.mode) {
        case KernelMode::shared_alpha:
        case KernelMode::per_class_alpha: {
            const bool shared = spec.mode == KernelMode::shared_alpha;
            if (shared ? spec.alphas.size() != 1 : spec.alphas.size() != M)
                throw ValidationError("kernel spec has the wrong number of alphas");
            for (double a : spec.alphas)
                if (!(a > 0.0) || !std::isfinite(a)) throw ValidationError("kernel alphas must be positive");
            for (std::size_t i = 0; i < set.size(); ++i) {
                const auto j = set.label(i);
                const double alpha = shared ? spec.alphas[0] : spec.alphas[j];
                // N(0, alpha I) density up to the class-independent (2 pi)^(m/2).
                double v = -squared_norm_diff(z, set.vector(i)) / (2.0 * alpha);
                if (!shared) v -= 0.5 * static_cast<double>(m) * std::log(alpha);
                logs_by_class[j].push_back(v);
            }
            break;
        }
        case KernelMode::per_class_full_covariance: {
            if (spec.covariances.size() != M) throw ValidationError("kernel spec needs one covariance per class");
            std::vector<Eigen::LLT<Eigen::MatrixXd>> factors;
            std::vector<double> half_log_det(M);
            factors.reserve(M);
            for (std::size_t j = 0; j < M; ++j) {
                if (static_cast<std::size_t>(spec.covariances[j].rows()) != m)
                    throw ValidationError("covariance dimension does not match the support set");
                factors.push_back(factor_spd(spec.covariances[j], "covariance of class " + std::to_string(j)));
                half_log_det[j] = 0.5 * log_det_from_llt(factors[j]);
            }
            const Eigen::VectorXd zq = to_eigen(z);
            for (std::size_t i = 0; i < set.size(); ++i) {
                const auto j = set.label(i);
                const Eigen::VectorXd diff = zq - to_eigen(set.vector(i));
                logs_by_class[j].push_back(-0.5 * mahalanobis(factors[j], diff) - half_log_det[j]);
            }
            break;
        }
    }
    std::vector<double> class_logs(M, kNegInf);
    for (std::size_t j = 0; j < M; ++j) class_logs[j] = log_sum_exp(logs_by_class[j]);
    return normalise_logs(class_logs);
}

void MixtureSpec::validate() const {
    if (classes.empty()) throw ValidationError("mixture needs at least one class");
    const auto m = dim();
    if (m == 0) throw ValidationError("mixture dimension must be positive");
    double total = 0.0;
    for (std::size_t j = 0; j < classes.size(); ++j) {
        const auto& c = classes[j];
        if (static_cast<std::size_t>(c.mean.size()) != m)
            throw ValidationError("mean of class " + std::to_string(j) + " has the wrong dimension");
        if (static_cast<std::size_t>(c.covariance.rows()) != m || static_cast<std::size_t>(c.covariance.cols()) != m)
            throw ValidationError("covariance of class " + std::to_string(j) + " has the wrong shape");
        if (!(c.prior > 0.0)) throw ValidationError("priors must be positive");
        if (!c.mean.allFinite()) throw ValidationError("mean of class " + std::to_string(j) + " is not finite");
        factor_spd(c.covariance, "covariance of class " + std::to_string(j));
        total += c.prior;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ValidationError("priors must sum to 1");
}

std::vector<std::string> MixtureSpec::class_names() const {
    const std::size_t width = std::to_string(classes.empty() ? 0 : classes.size() - 1).size();
    std::vector<std::string> names;
    for (std::size_t j = 0; j < classes.size(); ++j) {
        auto s = std::to_string(j);
        names.push_back("c" + std::string(width - s.size(), '0') + s);
    }
    return names;
}

LabelSpace MixtureSpec::label_space() const { return LabelSpace::from_names(class_names()); }

MixtureSpec parse_mixture_spec(std::string_view json_text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError(std::string("malformed mixture spec: ") + e.what());
    }
    try {
        MixtureSpec spec;
        spec.name = j.value("name", std::string{});
        spec.seed = j.value("seed", std::uint64_t{0});
        spec.n_support = j.value("n_support", std::size_t{0});
        spec.n_query = j.value("n_query", std::size_t{0});
        const auto means = j.at("means").get<std::vector<std::vector<double>>>();
        const std::size_t M = means.size();
        std::vector<double> priors = j.contains("priors") ? j.at("priors").get<std::vector<double>>()
                                                          : std::vector<double>(M, 1.0 / static_cast<double>(M));
        if (priors.size() != M) throw ValidationError("mixture spec: priors and means differ in length");
        std::vector<Eigen::MatrixXd> covs;
        if (j.contains("covariances")) {
            const auto raw = j.at("covariances").get<std::vector<std::vector<std::vector<double>>>>();
            for (const auto& c : raw) {
                Eigen::MatrixXd mat(c.size(), c.empty() ? 0 : c.front().size());
                for (std::size_t r = 0; r < c.size(); ++r) {
                    if (c[r].size() != static_cast<std::size_t>(mat.cols()))
                        throw ValidationError("mixture spec: ragged covariance matrix");
                    for (std::size_t col = 0; col < c[r].size(); ++col) mat(r, col) = c[r][col];
                }
                covs.push_back(std::move(mat));
            }
        } else if (j.contains("diagonal_variances")) {
            const auto diag = j.at("diagonal_variances").get<std::vector<std::vector<double>>>();
            for (const auto& v : diag) covs.push_back(to_eigen(v).asDiagonal());
        } else if (j.contains("stddevs")) {
            const auto sd = j.at("stddevs").get<std::vector<double>>();
            for (std::size_t c = 0; c < sd.size(); ++c) {
                if (!(sd[c] > 0.0)) throw ValidationError("mixture spec: stddevs must be positive");
                const auto m = means.at(c).size();
                covs.push_back(Eigen::MatrixXd::Identity(m, m) * sd[c] * sd[c]);
            }
        } else {
            throw ValidationError("mixture spec needs \"covariances\", \"diagonal_variances\" or \"stddevs\"");
        }
        if (covs.size() != M) throw ValidationError("mixture spec: one covariance per class is required");
        for (std::size_t c = 0; c < M; ++c)
            spec.classes.push_back({to_eigen(means[c]), covs[c], priors[c]});
        spec.validate();
        return spec;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed mixture spec: ") + e.what());
    }
}

MixtureSpec load_mixture_spec(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_mixture_spec(ss.str());
}

std::string mixture_spec_to_json(const MixtureSpec& spec) {
    nlohmann::ordered_json j;
    j["name"] = spec.name;
    j["seed"] = spec.seed;
    j["n_support"] = spec.n_support;
    j["n_query"] = spec.n_query;
    std::vector<double> priors;
    std::vector<std::vector<double>> means;
    std::vector<std::vector<std::vector<double>>> covs;
    for (const auto& c : spec.classes) {
        priors.push_back(c.prior);
        means.emplace_back(c.mean.data(), c.mean.data() + c.mean.size());
        std::vector<std::vector<double>> rows;
        for (Eigen::Index r = 0; r < c.covariance.rows(); ++r) {
            std::vector<double> row;
            for (Eigen::Index col = 0; col < c.covariance.cols(); ++col) row.push_back(c.covariance(r, col));
            rows.push_back(std::move(row));
        }
        covs.push_back(std::move(rows));
    }
    j["priors"] = priors;
    j["means"] = means;
    j["covariances"] = covs;
    return j.dump(2);
}

SupportSet sample_mixture(const MixtureSpec& spec, std::span<const std::size_t> counts, std::uint64_t seed,
                          std::string_view id_prefix, SetRole role) {
    spec.validate();
    if (counts.size() != spec.num_classes()) throw ValidationError("one count per class is required");
    const auto names = spec.class_names();
    const auto m = spec.dim();
    std::vector<EmbeddingRecord> records;
    for (std::size_t j = 0; j < spec.num_classes(); ++j) {
        const auto& c = spec.classes[j];
        const Eigen::MatrixXd L = factor_spd(c.covariance, "covariance").matrixL();
        Rng rng(seed, "mixture/" + std::string(id_prefix), j);
        Eigen::VectorXd eps(m);
        for (std::size_t i = 0; i < counts[j]; ++i) {
            for (std::size_t d = 0; d < m; ++d) eps[static_cast<Eigen::Index>(d)] = rng.normal();
            const Eigen::VectorXd x = c.mean + L * eps;
            records.push_back({std::string(id_prefix) + names[j] + "-" + std::to_string(i),
                               std::vector<double>(x.data(), x.data() + m), j});
        }
    }
    return SupportSet::create(std::move(records), spec.label_space(), role, m);
}

SupportSet generate_mixture(const MixtureSpec& spec, std::size_t n_per_class, std::uint64_t seed,
                            std::string_view id_prefix) {
    const std::vector<std::size_t> counts(spec.num_classes(), n_per_class);
    return sample_mixture(spec, counts, seed, id_prefix, SetRole::support);
}

BenchmarkSets sample_benchmark(const MixtureSpec& spec) {
    if (spec.n_support == 0 || spec.n_query == 0) throw ValidationError("mixture spec needs n_support and n_query");
    const auto support_counts = counts_by_prior(spec, spec.n_support);
    const auto query_counts = counts_by_prior(spec, spec.n_query);
    return {sample_mixture(spec, support_counts, derive_seed(spec.seed, "support"), "s", SetRole::support),
            sample_mixture(spec, query_counts, derive_seed(spec.seed, "query"), "q", SetRole::query)};
}

std::vector<std::size_t> counts_by_prior(const MixtureSpec& spec, std::size_t n) {
    const std::size_t M = spec.num_classes();
    std::vector<std::size_t> counts(M);
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (std::size_t j = 0; j < M; ++j) {
        const double exact = spec.classes[j].prior * static_cast<double>(n);
        counts[j] = static_cast<std::size_t>(std::floor(exact));
        assigned += counts[j];
        remainders.push_back({exact - std::floor(exact), j});
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t r = 0; assigned < n && r < remainders.size(); ++r, ++assigned) ++counts[remainders[r].second];
    return counts;
}

std::vector<double> true_posterior(const MixtureSpec& spec, std::span<const double> z) {
    spec.validate();
    const auto m = spec.dim();
    if (z.size() != m) throw ValidationError("query dimension does not match the mixture");
    const Eigen::VectorXd zq = to_eigen(z);
    const double log_norm = 0.5 * static_cast<double>(m) * std::log(2.0 * std::numbers::pi);
    std::vector<double> logs(spec.num_classes());
    for (std::size_t j = 0; j < spec.num_classes(); ++j) {
        const auto& c = spec.classes[j];
        const auto llt = factor_spd(c.covariance, "covariance");
        logs[j] = std::log(c.prior) - log_norm - 0.5 * log_det_from_llt(llt) - 0.5 * mahalanobis(llt, zq - c.mean);
    }
    return normalise_logs(logs);
}

}  // namespace nedcal
