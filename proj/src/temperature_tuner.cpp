#include "nedcal/temperature_tuner.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "nedcal/errors.hpp"
#include "nedcal/parallel.hpp"
#include "nedcal/random.hpp"
#include "nedcal/text_format.hpp"

namespace nedcal {

namespace {

// 1/phi, the golden-section shrink factor.
const double kInvPhi = (std::sqrt(5.0) - 1.0) / 2.0;

void require_loo_preconditions(const SupportSet& set, std::size_t k) {
    for (std::size_t c = 0; c < set.num_classes(); ++c)
        if (set.class_counts()[c] < 2)
            throw TuningPreconditionError("class '" + set.label_space().name(c) +
                                          "' has a single record, so its leave-one-out likelihood is undefined; "
                                          "use holdout mode or drop the class");
    if (set.size() < 2 || k > set.size() - 1)
        throw TuningPreconditionError("leave-one-out tuning needs k <= N - 1 (k = " + std::to_string(k) +
                                      ", N = " + std::to_string(set.size()) + ")");
}

std::vector<NeighborList> neighbor_lists(const Index& index, const SupportSet& points, std::size_t k, bool exclude_self,
                                         std::size_t threads) {
    std::vector<NeighborList> lists(points.size());
    parallel_for(points.size(), threads, [&](std::size_t p) {
        lists[p] = exclude_self ? index.query(points.vector(p), k, p) : index.query(points.vector(p), k);
    });
    return lists;
}

std::vector<std::size_t> scored_subset(std::size_t n, std::size_t max_scored, std::uint64_t seed) {
    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    if (max_scored == 0 || max_scored >= n) return all;
    Rng rng(seed, "loo_subsample");
    rng.shuffle(all.begin(), all.end());
    all.resize(max_scored);
    std::sort(all.begin(), all.end());
    return all;
}

}  // namespace

std::string_view to_string(TuneMode m) { return m == TuneMode::holdout ? "holdout" : "leave-one-out"; }

TuneMode parse_tune_mode(std::string_view s) {
    if (s == "loo" || s == "leave-one-out" || s == "leave-one-out-support") return TuneMode::leave_one_out;
    if (s == "holdout" || s == "holdout-validation") return TuneMode::holdout;
    throw ValidationError("unknown tuning mode '" + std::string(s) + "'");
}

void TuneConfig::validate() const {
    if (k == 0) throw ValidationError("k must be at least 1");
    if (grid_points < 8) throw ValidationError("the temperature grid needs at least 8 points");
    if (t_min && !(*t_min > 0.0)) throw ValidationError("t_min must be positive");
    if (t_min && t_max && !(*t_max > *t_min)) throw ValidationError("t_max must exceed t_min");
    if (t_max && !(*t_max > 0.0)) throw ValidationError("t_max must be positive");
    if (mode == TuneMode::holdout && !(holdout_fraction > 0.0 && holdout_fraction < 1.0))
        throw ValidationError("holdout fraction must be in (0, 1)");
}

NeighborCache NeighborCache::leave_one_out(const SupportSet& set, std::size_t k, MetricKind metric,
                                           std::size_t threads, IndexBackend backend,
                                           std::span<const std::size_t> scored) {
    require_loo_preconditions(set, k);
    std::vector<std::size_t> positions(scored.begin(), scored.end());
    if (scored.empty()) positions = scored_subset(set.size(), 0, 0);
    for (auto p : positions)
        if (p >= set.size()) throw ValidationError("scored position out of range");
    const auto index = build_index(set, metric, backend);
    std::vector<NeighborList> lists(positions.size());
    parallel_for(positions.size(), threads,
                 [&](std::size_t i) { lists[i] = index->query(set.vector(positions[i]), k, positions[i]); });
    NeighborCache cache;
    cache.num_classes_ = set.num_classes();
    for (std::size_t i = 0; i < positions.size(); ++i) {
        for (const auto& n : lists[i]) {
            cache.distances_.push_back(n.distance);
            cache.labels_.push_back(set.label(n.index));
        }
        cache.offsets_.push_back(cache.distances_.size());
        cache.truth_.push_back(set.label(positions[i]));
    }
    return cache;
}

NeighborCache NeighborCache::holdout(const SupportSet& train, const SupportSet& validation, std::size_t k,
                                     MetricKind metric, std::size_t threads, IndexBackend backend) {
    if (validation.empty()) throw TuningPreconditionError("empty validation set");
    if (!(train.label_space() == validation.label_space()))
        throw LabelSpaceMismatch("validation and training label spaces differ");
    if (k > train.size())
        throw TuningPreconditionError("holdout tuning needs k <= training size (k = " + std::to_string(k) +
                                      ", N = " + std::to_string(train.size()) + ")");
    const auto index = build_index(train, metric, backend);
    const auto lists = neighbor_lists(*index, validation, k, false, threads);
    NeighborCache cache;
    cache.num_classes_ = train.num_classes();
    for (std::size_t p = 0; p < validation.size(); ++p) {
        for (const auto& n : lists[p]) {
            cache.distances_.push_back(n.distance);
            cache.labels_.push_back(train.label(n.index));
        }
        cache.offsets_.push_back(cache.distances_.size());
        cache.truth_.push_back(validation.label(p));
    }
    return cache;
}

double NeighborCache::mean_nearest_distance() const {
    double sum = 0.0;
    for (std::size_t p = 0; p < size(); ++p) sum += distances(p).front();
    return size() ? sum / static_cast<double>(size()) : 0.0;
}

double NeighborCache::nll(double temperature, std::size_t threads) const {
    if (!(temperature > 0.0)) throw ValidationError("temperature must be positive");
    std::vector<double> terms(size());
    parallel_for(size(), threads, [&](std::size_t p) {
        const auto d = distances(p);
        const auto y = labels(p);
        const double d_min = d.front();  // lists are sorted ascending
        double total = 0.0, hit = 0.0;
        for (std::size_t i = 0; i < d.size(); ++i) {
            const double w = std::exp(-(d[i] - d_min) / temperature);
            total += w;
            if (y[i] == truth_[p]) hit += w;
        }
        terms[p] = std::log(std::max(hit / total, kProbabilityFloor));
    });
    double sum = 0.0;
    for (double t : terms) sum += t;
    return -sum / static_cast<double>(size());
}

double loo_nll(const SupportSet& set, std::size_t k, double temperature, MetricKind metric, std::size_t threads) {
    return NeighborCache::leave_one_out(set, k, metric, threads).nll(temperature, threads);
}

TuneResult tune_on_cache(const NeighborCache& cache, const TuneConfig& config) {
    config.validate();
    if (cache.size() == 0) throw TuningPreconditionError("nothing to score");

    double scale = cache.mean_nearest_distance();
    if (!(scale > 0.0)) scale = 1.0;  // every point has a duplicate
    TuneResult result;
    result.t_min = config.t_min.value_or(1e-3 * scale);
    result.t_max = config.t_max.value_or(std::max(1e3 * scale, result.t_min * 10.0));
    if (!(result.t_max > result.t_min)) throw ValidationError("t_max must exceed t_min");

    const std::size_t n = config.grid_points;
    const double log_lo = std::log(result.t_min);
    const double log_hi = std::log(result.t_max);
    const double step = (log_hi - log_lo) / static_cast<double>(n - 1);

    result.nll_curve.resize(n);
    for (std::size_t g = 0; g < n; ++g) {
        // Pin the end points so the bracket is exactly [t_min, t_max].
        const double t = g == 0 ? result.t_min : g == n - 1 ? result.t_max : std::exp(log_lo + step * double(g));
        result.nll_curve[g] = {t, cache.nll(t, config.threads)};
    }
    std::size_t best_g = 0;
    for (std::size_t g = 1; g < n; ++g)
        if (result.nll_curve[g].nll < result.nll_curve[best_g].nll) best_g = g;
    result.interior = best_g != 0 && best_g != n - 1;
    result.t_star = result.nll_curve[best_g].temperature;
    result.nll_at_t_star = result.nll_curve[best_g].nll;

    double a = std::log(result.nll_curve[best_g == 0 ? 0 : best_g - 1].temperature);
    double b = std::log(result.nll_curve[best_g == n - 1 ? n - 1 : best_g + 1].temperature);
    auto eval = [&](double log_t) {
        const double t = std::clamp(std::exp(log_t), result.t_min, result.t_max);
        const double v = cache.nll(t, config.threads);
        result.refinement_path.push_back({t, v});
        if (v < result.nll_at_t_star) {
            result.nll_at_t_star = v;
            result.t_star = t;
        }
        return v;
    };
    if (config.refine_iters > 0) {
        double x1 = b - kInvPhi * (b - a);
        double x2 = a + kInvPhi * (b - a);
        double f1 = eval(x1);
        double f2 = eval(x2);
        for (std::size_t it = 1; it < config.refine_iters; ++it) {
            if (f1 <= f2) {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - kInvPhi * (b - a);
                f1 = eval(x1);
            } else {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + kInvPhi * (b - a);
                f2 = eval(x2);
            }
        }
        if (f1 <= f2)
            b = x2;
        else
            a = x1;
    }
    result.log_tolerance = b - a;
    return result;
}

TuneResult tune_temperature(const SupportSet& set, const TuneConfig& config, MetricKind metric) {
    config.validate();
    if (config.mode == TuneMode::leave_one_out) {
        const auto scored = scored_subset(set.size(), config.max_scored, config.seed);
        return tune_on_cache(
            NeighborCache::leave_one_out(set, config.k, metric, config.threads, config.backend, scored), config);
    }
    auto [train, validation] = split_holdout(set, config.holdout_fraction, config.seed);
    return tune_on_cache(NeighborCache::holdout(train, validation, config.k, metric, config.threads, config.backend),
                         config);
}

void write_nll_curve_csv(const TuneResult& result, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << "T,NLL\n";
    for (const auto& p : result.nll_curve) out << format_double(p.temperature) << ',' << format_double(p.nll) << '\n';
    if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace nedcal
