#include "nedcal/calibration_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "nedcal/errors.hpp"
#include "nedcal/text_format.hpp"

namespace nedcal {

namespace {

double edge(std::size_t m, std::size_t num_bins) { return static_cast<double>(m) / static_cast<double>(num_bins); }

void check_outcomes(std::span<const EvalOutcome> outcomes) {
    if (outcomes.empty()) throw ValidationError("no outcomes to evaluate");
}

void check_bins(std::size_t num_bins) {
    if (num_bins < 2) throw ValidationError("at least 2 bins are required");
}

}  // namespace

std::size_t bin_index(double confidence, std::size_t num_bins) {
    if (!(confidence >= 0.0 && confidence <= 1.0))
        throw ValidationError("confidence " + format_double(confidence) + " is outside [0, 1]");
    const double scaled = std::ceil(confidence * static_cast<double>(num_bins));
    std::size_t b = scaled <= 1.0 ? 0 : std::min(num_bins - 1, static_cast<std::size_t>(scaled) - 1);
    // Products like 0.3 * 10 can land an ulp off an edge; settle against the
    // edges themselves.
    while (b > 0 && confidence <= edge(b, num_bins)) --b;
    while (b + 1 < num_bins && confidence > edge(b + 1, num_bins)) ++b;
    return b;
}

BinTally::BinTally(std::size_t num_bins) : counts_(num_bins, 0), correct_(num_bins, 0), conf_sums_(num_bins, 0.0) {
    check_bins(num_bins);
}

void BinTally::add(const EvalOutcome& outcome) {
    const auto b = bin_index(outcome.confidence, num_bins());
    ++counts_[b];
    if (outcome.correct()) ++correct_[b];
    conf_sums_[b] += outcome.confidence;
    ++total_;
}

void BinTally::merge(const BinTally& other) {
    if (other.num_bins() != num_bins()) throw ValidationError("cannot merge tallies with different bin counts");
    for (std::size_t b = 0; b < num_bins(); ++b) {
        counts_[b] += other.counts_[b];
        correct_[b] += other.correct_[b];
        conf_sums_[b] += other.conf_sums_[b];
    }
    total_ += other.total_;
}

std::vector<ReliabilityBin> BinTally::bins() const {
    std::vector<ReliabilityBin> out(num_bins());
    for (std::size_t b = 0; b < num_bins(); ++b) {
        auto& bin = out[b];
        bin.lo = edge(b, num_bins());
        bin.hi = edge(b + 1, num_bins());
        bin.count = counts_[b];
        if (bin.count > 0) {
            const double n = static_cast<double>(bin.count);
            bin.mean_conf = std::clamp(conf_sums_[b] / n, bin.lo, bin.hi);
            bin.accuracy = static_cast<double>(correct_[b]) / n;
        }
    }
    return out;
}

double accuracy(std::span<const EvalOutcome> outcomes) {
    check_outcomes(outcomes);
    const auto hits = std::count_if(outcomes.begin(), outcomes.end(), [](const EvalOutcome& o) { return o.correct(); });
    return static_cast<double>(hits) / static_cast<double>(outcomes.size());
}

std::vector<ReliabilityBin> reliability_bins(std::span<const EvalOutcome> outcomes, std::size_t num_bins) {
    check_outcomes(outcomes);
    BinTally tally(num_bins);
    for (const auto& o : outcomes) tally.add(o);
    return tally.bins();
}

double ece_from_bins(std::span<const ReliabilityBin> bins) {
    std::size_t n = 0;
    for (const auto& b : bins) n += b.count;
    if (n == 0) throw ValidationError("no outcomes in bins");
    double sum = 0.0;
    for (const auto& b : bins)
        sum += static_cast<double>(b.count) / static_cast<double>(n) * std::abs(b.accuracy - b.mean_conf);
    return sum;
}

double ece(std::span<const EvalOutcome> outcomes, std::size_t num_bins) {
    return ece_from_bins(reliability_bins(outcomes, num_bins));
}

CalibrationReport calibration_report(std::span<const EvalOutcome> outcomes, std::size_t num_bins) {
    CalibrationReport r;
    r.accuracy = accuracy(outcomes);
    r.bins = reliability_bins(outcomes, num_bins);
    r.ece = ece_from_bins(r.bins);
    r.n = outcomes.size();
    return r;
}

void write_reliability_csv(std::span<const ReliabilityBin> bins, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << "bin_lo,bin_hi,count,mean_conf,accuracy\n";
    for (const auto& b : bins)
        out << format_double(b.lo) << ',' << format_double(b.hi) << ',' << b.count << ',' << format_double(b.mean_conf)
            << ',' << format_double(b.accuracy) << '\n';
    if (!out) throw IoError("write failed for " + path.string());
}

std::vector<ReliabilityBin> read_reliability_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::string line;
    std::getline(in, line);
    if (line != "bin_lo,bin_hi,count,mean_conf,accuracy") throw ValidationError("unexpected reliability CSV header");
    std::vector<ReliabilityBin> bins;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto f = split(line, ',');
        if (f.size() != 5) throw ValidationError("line " + std::to_string(lineno) + ": expected 5 columns");
        const auto lo = parse_double(f[0]), hi = parse_double(f[1]), count = parse_double(f[2]),
                   conf = parse_double(f[3]), acc = parse_double(f[4]);
        if (!lo || !hi || !count || !conf || !acc)
            throw ValidationError("line " + std::to_string(lineno) + ": unparsable number");
        bins.push_back({*lo, *hi, static_cast<std::size_t>(*count), *conf, *acc});
    }
    return bins;
}

std::string reliability_svg(std::span<const ReliabilityBin> bins, const std::string& title) {
    constexpr double W = 360, H = 360, L = 50, T = 40, P = 260;  // plot square of side P at (L, T)
    std::ostringstream s;
    auto x = [&](double v) { return format_double(L + v * P); };
    auto y = [&](double v) { return format_double(T + (1.0 - v) * P); };
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
      << ' ' << H << "\">\n";
    s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">"
      << title << "</text>\n";
    for (const auto& b : bins) {
        if (b.count == 0) continue;
        s << "<rect x=\"" << x(b.lo) << "\" y=\"" << y(b.accuracy) << "\" width=\"" << format_double((b.hi - b.lo) * P)
          << "\" height=\"" << format_double(b.accuracy * P)
          << "\" fill=\"#4878cf\" stroke=\"#1f3f7f\" stroke-width=\"1\"/>\n";
    }
    s << "<line x1=\"" << x(0) << "\" y1=\"" << y(0) << "\" x2=\"" << x(1) << "\" y2=\"" << y(1)
      << "\" stroke=\"#888\" stroke-dasharray=\"4 3\"/>\n";
    s << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << P << "\" height=\"" << P
      << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 5; ++t) {
        const double v = t / 5.0;
        s << "<text x=\"" << x(v) << "\" y=\"" << T + P + 16
          << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">" << format_double(v) << "</text>\n";
        s << "<text x=\"" << L - 6 << "\" y=\"" << y(v)
          << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" << format_double(v) << "</text>\n";
    }
    s << "<text x=\"" << L + P / 2 << "\" y=\"" << H - 12
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">confidence</text>\n";
    s << "<text x=\"14\" y=\"" << T + P / 2 << "\" transform=\"rotate(-90 14 " << T + P / 2
      << ")\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">accuracy</text>\n";
    s << "</svg>\n";
    return s.str();
}

}  // namespace nedcal
