#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "nedcal/embedding_store.hpp"

namespace nedcal {

struct EvalOutcome {
    double confidence = 0.0;
    ClassIndex predicted = 0;
    ClassIndex actual = 0;

    bool correct() const { return predicted == actual; }
};

struct ReliabilityBin {
    double lo = 0.0;
    double hi = 0.0;
    std::size_t count = 0;
    double mean_conf = 0.0;  // 0 for empty bins
    double accuracy = 0.0;   // 0 for empty bins
};

struct CalibrationReport {
    double accuracy = 0.0;
    double ece = 0.0;
    std::vector<ReliabilityBin> bins;
    std::size_t n = 0;
};

inline constexpr std::size_t kDefaultBins = 10;

// Index of the equal-width bin holding `confidence`: bin m (0-based) covers
// (m/M, (m+1)/M], and bin 0 also holds 0.
std::size_t bin_index(double confidence, std::size_t num_bins);

// Per-bin running sums. Tallies over disjoint outcome lists merge exactly by
// adding counts, so reports over concatenated data can be assembled from
// parts.
class BinTally {
public:
    explicit BinTally(std::size_t num_bins);

    void add(const EvalOutcome& outcome);
    void merge(const BinTally& other);

    std::size_t num_bins() const { return counts_.size(); }
    std::size_t total() const { return total_; }
    std::size_t count(std::size_t b) const { return counts_[b]; }
    std::size_t correct(std::size_t b) const { return correct_[b]; }
    double confidence_sum(std::size_t b) const { return conf_sums_[b]; }

    std::vector<ReliabilityBin> bins() const;

private:
    std::vector<std::size_t> counts_;
    std::vector<std::size_t> correct_;
    std::vector<double> conf_sums_;
    std::size_t total_ = 0;
};

// All of these throw ValidationError for an empty outcome list, a bin count
// below 2, or a confidence outside [0, 1].
double accuracy(std::span<const EvalOutcome> outcomes);
std::vector<ReliabilityBin> reliability_bins(std::span<const EvalOutcome> outcomes, std::size_t num_bins = kDefaultBins);
double ece(std::span<const EvalOutcome> outcomes, std::size_t num_bins = kDefaultBins);

// ECE = sum_m (|B_m| / n) |acc(B_m) - conf(B_m)|, the only ECE formula in the
// library; ece() and CalibrationReport both go through it.
double ece_from_bins(std::span<const ReliabilityBin> bins);

CalibrationReport calibration_report(std::span<const EvalOutcome> outcomes, std::size_t num_bins = kDefaultBins);

// CSV columns: bin_lo,bin_hi,count,mean_conf,accuracy.
void write_reliability_csv(std::span<const ReliabilityBin> bins, const std::filesystem::path& path);
std::vector<ReliabilityBin> read_reliability_csv(const std::filesystem::path& path);

// Bar chart of per-bin accuracy against confidence with the diagonal.
std::string reliability_svg(std::span<const ReliabilityBin> bins, const std::string& title);

}  // namespace nedcal
