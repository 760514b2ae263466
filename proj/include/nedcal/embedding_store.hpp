#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace nedcal {

using ClassIndex = std::size_t;

// One labeled embedding as read from or written to a file.
struct EmbeddingRecord {
    std::string id;
    std::vector<double> vector;
    ClassIndex label = 0;
};

// Ordered set of distinct class names. Index i is the dense class id used by
// every scorer.
class LabelSpace {
public:
    LabelSpace() = default;

    // Names are sorted and deduplicated, so the mapping depends only on the
    // set of names.
    static LabelSpace from_names(std::vector<std::string> names);

    std::size_t size() const { return names_.size(); }
    bool empty() const { return names_.empty(); }
    const std::string& name(ClassIndex c) const { return names_.at(c); }
    const std::vector<std::string>& names() const { return names_; }
    std::optional<ClassIndex> find(std::string_view name) const;

    friend bool operator==(const LabelSpace&, const LabelSpace&) = default;

private:
    std::vector<std::string> names_;
};

// Whether a class of the label space may have zero records. Support sets need
// at least one record per class; query sets do not.
enum class SetRole { support, query };

// Immutable, validated collection of embeddings sharing one dimension and one
// label space. Vectors are stored row-major in a single buffer.
class SupportSet {
public:
    SupportSet() = default;

    // Validates and builds a set. Throws ValidationError on dimension
    // mismatch (naming the record), non-finite components, duplicate ids,
    // labels outside the label space, and (for SetRole::support) classes
    // without records. `dim` is only consulted when `records` is empty.
    static SupportSet create(std::vector<EmbeddingRecord> records, LabelSpace labels,
                             SetRole role = SetRole::support, std::size_t dim = 0);

    std::size_t size() const { return ids_.size(); }
    bool empty() const { return ids_.empty(); }
    std::size_t dim() const { return dim_; }
    std::size_t num_classes() const { return label_space_.size(); }

    std::span<const double> vector(std::size_t i) const {
        return {data_.data() + i * dim_, dim_};
    }
    const std::string& id(std::size_t i) const { return ids_[i]; }
    ClassIndex label(std::size_t i) const { return labels_[i]; }

    const std::vector<std::string>& ids() const { return ids_; }
    const std::vector<ClassIndex>& labels() const { return labels_; }
    std::span<const double> data() const { return data_; }
    const LabelSpace& label_space() const { return label_space_; }
    const std::vector<std::size_t>& class_counts() const { return class_counts_; }
    SetRole role() const { return role_; }

    EmbeddingRecord record(std::size_t i) const;

    // Subset by record positions, in the given order, keeping the label space.
    SupportSet select(std::span<const std::size_t> positions, SetRole role) const;

    // Classes whose record count is below k (diagnostic only).
    std::vector<ClassIndex> classes_smaller_than(std::size_t k) const;

private:
    std::vector<std::string> ids_;
    std::vector<ClassIndex> labels_;
    std::vector<double> data_;
    std::size_t dim_ = 0;
    LabelSpace label_space_;
    std::vector<std::size_t> class_counts_;
    SetRole role_ = SetRole::support;
};

enum class FileFormat { binary, jsonl, csv };

std::string_view to_string(FileFormat f);
// Accepts "binary"/"bin", "jsonl"/"json-lines", "csv"/"delimited-text".
FileFormat parse_file_format(std::string_view s);
// Guesses from the extension: .bin/.nedb, .jsonl/.ndjson, .csv.
std::optional<FileFormat> format_from_extension(const std::filesystem::path& p);

struct LoadOptions {
    // When set, labels are looked up in this space instead of being derived
    // from the file; unknown labels raise LabelSpaceMismatch.
    std::optional<LabelSpace> fixed_labels;
    SetRole role = SetRole::support;
};

SupportSet load_records(const std::filesystem::path& path, FileFormat format,
                        const LoadOptions& options = {});

// Binary output stores float32, so values are rounded once; text output uses
// shortest round-trip formatting and is value-exact.
void write_records(const SupportSet& set, const std::filesystem::path& path, FileFormat format);

// Stratified split. Each class sends ceil(fraction * N_j) records to the
// second set while keeping at least one in the first. Both outputs keep input
// order and the input label space.
std::pair<SupportSet, SupportSet> split_holdout(const SupportSet& set, double fraction,
                                                std::uint64_t seed);

}  // namespace nedcal
