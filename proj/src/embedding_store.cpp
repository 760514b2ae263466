#include "nedcal/embedding_store.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "nedcal/errors.hpp"
#include "nedcal/random.hpp"
#include "nedcal/text_format.hpp"

namespace nedcal {

namespace {

constexpr std::array<char, 4> kMagic = {'N', 'E', 'D', 'B'};
constexpr std::uint8_t kVersion = 1;

// A record before its label has been mapped to a class index.
struct RawRecord {
    std::string id;
    std::string label;
    std::vector<double> vector;
};

SupportSet finish(std::vector<RawRecord> raw, const LoadOptions& options, std::size_t dim) {
    LabelSpace space;
    if (options.fixed_labels) {
        space = *options.fixed_labels;
    } else {
        std::vector<std::string> names;
        names.reserve(raw.size());
        for (const auto& r : raw) names.push_back(r.label);
        space = LabelSpace::from_names(std::move(names));
    }
    std::vector<EmbeddingRecord> records;
    records.reserve(raw.size());
    for (auto& r : raw) {
        const auto idx = space.find(r.label);
        if (!idx)
            throw LabelSpaceMismatch("record '" + r.id + "' has label '" + r.label +
                                     "' which is not in the label space");
        records.push_back({std::move(r.id), std::move(r.vector), *idx});
    }
    return SupportSet::create(std::move(records), std::move(space), options.role, dim);
}

// ---- binary ---------------------------------------------------------------

class ByteReader {
public:
    explicit ByteReader(const std::filesystem::path& path) : in_(path, std::ios::binary) {
        if (!in_) throw IoError("cannot open " + path.string());
    }

    void read(void* dst, std::size_t n, const char* what) {
        in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n)
            throw ValidationError(std::string("truncated binary file while reading ") + what);
    }

    std::uint64_t u64(const char* what) {
        unsigned char b[8];
        read(b, 8, what);
        std::uint64_t v = 0;
        for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
        return v;
    }

    std::uint16_t u16(const char* what) {
        unsigned char b[2];
        read(b, 2, what);
        return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
    }

    std::string str(const char* what) {
        const auto len = u16(what);
        std::string s(len, '\0');
        if (len) read(s.data(), len, what);
        return s;
    }

    float f32(const char* what) {
        unsigned char b[4];
        read(b, 4, what);
        const std::uint32_t bits = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                                   (static_cast<std::uint32_t>(b[2]) << 16) |
                                   (static_cast<std::uint32_t>(b[3]) << 24);
        return std::bit_cast<float>(bits);
    }

    bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

private:
    std::ifstream in_;
};

SupportSet load_binary(const std::filesystem::path& path, const LoadOptions& options) {
    ByteReader in(path);
    std::array<char, 4> magic{};
    in.read(magic.data(), 4, "magic");
    if (magic != kMagic) throw ValidationError("malformed header: bad magic bytes in " + path.string());
    std::uint8_t version = 0;
    in.read(&version, 1, "version");
    if (version != kVersion)
        throw ValidationError("malformed header: unsupported version " + std::to_string(version));
    const auto count = in.u64("record count");
    const auto dim = in.u64("dimension");
    if (count > 0 && dim == 0) throw ValidationError("malformed header: dimension 0 with records");

    std::vector<RawRecord> raw;
    raw.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(count, 1u << 20)));
    for (std::uint64_t i = 0; i < count; ++i) {
        RawRecord r;
        r.id = in.str("record id");
        r.label = in.str("record label");
        r.vector.resize(dim);
        for (std::uint64_t d = 0; d < dim; ++d) r.vector[d] = in.f32("vector payload");
        raw.push_back(std::move(r));
    }
    if (!in.at_end()) throw ValidationError("trailing bytes after " + std::to_string(count) + " records");
    return finish(std::move(raw), options, dim);
}

void put_u16(std::ostream& out, std::size_t v, const std::string& what) {
    if (v > 0xffff) throw ValidationError(what + " longer than 65535 bytes");
    const unsigned char b[2] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>(v >> 8)};
    out.write(reinterpret_cast<const char*>(b), 2);
}

void put_u64(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(b), 8);
}

void put_f32(std::ostream& out, float f) {
    const auto bits = std::bit_cast<std::uint32_t>(f);
    const unsigned char b[4] = {static_cast<unsigned char>(bits & 0xff), static_cast<unsigned char>((bits >> 8) & 0xff),
                                static_cast<unsigned char>((bits >> 16) & 0xff),
                                static_cast<unsigned char>((bits >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

void write_binary(const SupportSet& set, std::ostream& out) {
    out.write(kMagic.data(), 4);
    out.put(static_cast<char>(kVersion));
    put_u64(out, set.size());
    put_u64(out, set.dim());
    for (std::size_t i = 0; i < set.size(); ++i) {
        const auto& id = set.id(i);
        const auto& label = set.label_space().name(set.label(i));
        put_u16(out, id.size(), "id '" + id + "'");
        out.write(id.data(), static_cast<std::streamsize>(id.size()));
        put_u16(out, label.size(), "label '" + label + "'");
        out.write(label.data(), static_cast<std::streamsize>(label.size()));
        for (double v : set.vector(i)) put_f32(out, static_cast<float>(v));
    }
}

// ---- json lines -----------------------------------------------------------

SupportSet load_jsonl(const std::filesystem::path& path, const LoadOptions& options) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<RawRecord> raw;
    std::optional<std::size_t> dim;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto where = "line " + std::to_string(lineno);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw ValidationError(where + ": malformed JSON: " + e.what());
        }
        if (!j.is_object() || !j.contains("id") || !j.contains("label") || !j.contains("vector") ||
            !j["id"].is_string() || !j["label"].is_string() || !j["vector"].is_array())
            throw ValidationError(where + ": expected object with string \"id\", string \"label\", array \"vector\"");
        RawRecord r;
        r.id = j["id"].get<std::string>();
        r.label = j["label"].get<std::string>();
        r.vector.reserve(j["vector"].size());
        for (const auto& v : j["vector"]) {
            if (!v.is_number()) throw ValidationError(where + ": record '" + r.id + "' has a non-numeric component");
            r.vector.push_back(v.get<double>());
        }
        if (!dim) dim = r.vector.size();
        if (r.vector.size() != *dim)
            throw ValidationError(where + ": dimension mismatch for record '" + r.id + "': expected " +
                                  std::to_string(*dim) + ", got " + std::to_string(r.vector.size()));
        raw.push_back(std::move(r));
    }
    return finish(std::move(raw), options, dim.value_or(0));
}

void write_jsonl(const SupportSet& set, std::ostream& out) {
    for (std::size_t i = 0; i < set.size(); ++i) {
        nlohmann::ordered_json j;
        j["id"] = set.id(i);
        j["label"] = set.label_space().name(set.label(i));
        auto v = set.vector(i);
        j["vector"] = std::vector<double>(v.begin(), v.end());
        out << j.dump() << '\n';
    }
}

// ---- delimited text -------------------------------------------------------

SupportSet load_csv(const std::filesystem::path& path, const LoadOptions& options) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw ValidationError("malformed header: empty file " + path.string());
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = split(line, ',');
    if (header.size() < 2 || header[0] != "id" || header[1] != "label")
        throw ValidationError("malformed header: expected 'id,label,v0,...'");
    const std::size_t dim = header.size() - 2;
    for (std::size_t d = 0; d < dim; ++d)
        if (header[d + 2] != "v" + std::to_string(d))
            throw ValidationError("malformed header: column " + std::to_string(d + 2) + " should be v" +
                                  std::to_string(d));

    std::vector<RawRecord> raw;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto where = "line " + std::to_string(lineno);
        const auto fields = split(line, ',');
        if (fields.size() < 2) throw ValidationError(where + ": malformed row");
        RawRecord r;
        r.id = std::string(fields[0]);
        r.label = std::string(fields[1]);
        if (fields.size() != header.size())
            throw ValidationError(where + ": dimension mismatch for record '" + r.id + "': expected " +
                                  std::to_string(dim) + ", got " + std::to_string(fields.size() - 2));
        r.vector.reserve(dim);
        for (std::size_t d = 0; d < dim; ++d) {
            const auto v = parse_double(fields[d + 2]);
            if (!v) throw ValidationError(where + ": record '" + r.id + "' has unparsable value in column v" +
                                          std::to_string(d));
            r.vector.push_back(*v);
        }
        raw.push_back(std::move(r));
    }
    return finish(std::move(raw), options, dim);
}

void write_csv(const SupportSet& set, std::ostream& out) {
    out << "id,label";
    for (std::size_t d = 0; d < set.dim(); ++d) out << ",v" << d;
    out << '\n';
    for (std::size_t i = 0; i < set.size(); ++i) {
        out << set.id(i) << ',' << set.label_space().name(set.label(i));
        for (double v : set.vector(i)) out << ',' << format_double(v);
        out << '\n';
    }
}

}  // namespace

// ---- LabelSpace / SupportSet ----------------------------------------------

LabelSpace LabelSpace::from_names(std::vector<std::string> names) {
    std::sort(names.begin(), names.end());
    names.erase(std::unique(names.begin(), names.end()), names.end());
    LabelSpace space;
    space.names_ = std::move(names);
    return space;
}

std::optional<ClassIndex> LabelSpace::find(std::string_view name) const {
    auto it = std::lower_bound(names_.begin(), names_.end(), name);
    if (it == names_.end() || *it != name) return std::nullopt;
    return static_cast<ClassIndex>(it - names_.begin());
}

SupportSet SupportSet::create(std::vector<EmbeddingRecord> records, LabelSpace labels, SetRole role,
                              std::size_t dim) {
    if (!std::is_sorted(labels.names().begin(), labels.names().end()) ||
        std::adjacent_find(labels.names().begin(), labels.names().end()) != labels.names().end())
        throw ValidationError("label space must be sorted and unique");

    SupportSet set;
    set.dim_ = records.empty() ? dim : records.front().vector.size();
    if (!records.empty() && set.dim_ == 0) throw ValidationError("records must have dimension >= 1");
    set.label_space_ = std::move(labels);
    set.role_ = role;
    set.class_counts_.assign(set.label_space_.size(), 0);
    set.ids_.reserve(records.size());
    set.labels_.reserve(records.size());
    set.data_.reserve(records.size() * set.dim_);

    std::unordered_set<std::string> seen;
    for (auto& r : records) {
        if (r.vector.size() != set.dim_)
            throw ValidationError("dimension mismatch for record '" + r.id + "': expected " +
                                  std::to_string(set.dim_) + ", got " + std::to_string(r.vector.size()));
        for (double v : r.vector)
            if (!std::isfinite(v)) throw ValidationError("record '" + r.id + "' has a non-finite component");
        if (r.label >= set.label_space_.size())
            throw LabelSpaceMismatch("record '" + r.id + "' has label index " + std::to_string(r.label) +
                                     " outside the label space of size " +
                                     std::to_string(set.label_space_.size()));
        if (!seen.insert(r.id).second) throw ValidationError("duplicate record id '" + r.id + "'");
        ++set.class_counts_[r.label];
        set.data_.insert(set.data_.end(), r.vector.begin(), r.vector.end());
        set.labels_.push_back(r.label);
        set.ids_.push_back(std::move(r.id));
    }
    if (role == SetRole::support) {
        for (std::size_t c = 0; c < set.class_counts_.size(); ++c)
            if (set.class_counts_[c] == 0)
                throw ValidationError("class '" + set.label_space_.name(c) + "' has no records in the support set");
    }
    return set;
}

EmbeddingRecord SupportSet::record(std::size_t i) const {
    auto v = vector(i);
    return {ids_[i], std::vector<double>(v.begin(), v.end()), labels_[i]};
}

SupportSet SupportSet::select(std::span<const std::size_t> positions, SetRole role) const {
    std::vector<EmbeddingRecord> records;
    records.reserve(positions.size());
    for (auto p : positions) records.push_back(record(p));
    return create(std::move(records), label_space_, role, dim_);
}

std::vector<ClassIndex> SupportSet::classes_smaller_than(std::size_t k) const {
    std::vector<ClassIndex> out;
    for (std::size_t c = 0; c < class_counts_.size(); ++c)
        if (class_counts_[c] < k) out.push_back(c);
    return out;
}

// ---- formats ----------------------------------------------------------------

std::string_view to_string(FileFormat f) {
    switch (f) {
        case FileFormat::binary: return "binary";
        case FileFormat::jsonl: return "jsonl";
        case FileFormat::csv: return "csv";
    }
    return "?";
}

FileFormat parse_file_format(std::string_view s) {
    if (s == "binary" || s == "bin") return FileFormat::binary;
    if (s == "jsonl" || s == "json-lines") return FileFormat::jsonl;
    if (s == "csv" || s == "delimited-text") return FileFormat::csv;
    throw ValidationError("unknown file format '" + std::string(s) + "'");
}

std::optional<FileFormat> format_from_extension(const std::filesystem::path& p) {
    const auto ext = p.extension().string();
    if (ext == ".bin" || ext == ".nedb") return FileFormat::binary;
    if (ext == ".jsonl" || ext == ".ndjson") return FileFormat::jsonl;
    if (ext == ".csv") return FileFormat::csv;
    return std::nullopt;
}

SupportSet load_records(const std::filesystem::path& path, FileFormat format, const LoadOptions& options) {
    if (!std::filesystem::exists(path)) throw IoError("no such file: " + path.string());
    switch (format) {
        case FileFormat::binary: return load_binary(path, options);
        case FileFormat::jsonl: return load_jsonl(path, options);
        case FileFormat::csv: return load_csv(path, options);
    }
    throw ValidationError("unknown format");
}

void write_records(const SupportSet& set, const std::filesystem::path& path, FileFormat format) {
    std::ofstream out(path, format == FileFormat::binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    switch (format) {
        case FileFormat::binary: write_binary(set, out); break;
        case FileFormat::jsonl: write_jsonl(set, out); break;
        case FileFormat::csv: write_csv(set, out); break;
    }
    out.flush();
    if (!out) throw IoError("write failed for " + path.string());
}

std::pair<SupportSet, SupportSet> split_holdout(const SupportSet& set, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0)) throw ValidationError("holdout fraction must be in (0, 1)");
    std::vector<std::vector<std::size_t>> by_class(set.num_classes());
    for (std::size_t i = 0; i < set.size(); ++i) by_class[set.label(i)].push_back(i);

    std::vector<bool> held(set.size(), false);
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        auto& members = by_class[c];
        if (members.size() < 2)
            throw ValidationError("class '" + set.label_space().name(c) + "' has " + std::to_string(members.size()) +
                                  " record(s); holdout split needs at least 2");
        // The small offset keeps products such as 0.1 * 30 from rounding up past an integer.
        auto take = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(members.size()) - 1e-9));
        take = std::min(take, members.size() - 1);
        Rng rng(seed, "split_holdout", c);
        rng.shuffle(members.begin(), members.end());
        for (std::size_t t = 0; t < take; ++t) held[members[t]] = true;
    }
    std::vector<std::size_t> keep_pos, held_pos;
    for (std::size_t i = 0; i < set.size(); ++i) (held[i] ? held_pos : keep_pos).push_back(i);
    return {set.select(keep_pos, set.role()), set.select(held_pos, set.role())};
}

}  // namespace nedcal
