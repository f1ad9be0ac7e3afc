#pragma once

// Persistent record types shared by every stage, plus their JSONL encoding.
//
// Every record serializes to one JSON object per line with a top-level
// schema version field `v`. Object keys are emitted in sorted order so that
// serialization is canonical and byte-comparable across runs.

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace medforge {

inline constexpr int kSchemaVersion = 1;

// Record violates a type invariant.
class RecordError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed JSONL input; carries the 1-based line number.
class ParseError : public std::runtime_error {
public:
    ParseError(std::size_t line, const std::string& what);
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

// ---------------------------------------------------------------------------
// Edit taxonomy

enum class EditCategory : std::uint8_t {
    Object,
    Attribute,
    Scene,
    Spatial,
    Action,
    Part,
    Counting,
    Differentiation,
    Comparison,
    Negation,
    Universality,
};

inline constexpr std::size_t kCategoryCount = 11;

inline constexpr std::array<EditCategory, kCategoryCount> kAllCategories = {
    EditCategory::Object,     EditCategory::Attribute,       EditCategory::Scene,
    EditCategory::Spatial,    EditCategory::Action,          EditCategory::Part,
    EditCategory::Counting,   EditCategory::Differentiation, EditCategory::Comparison,
    EditCategory::Negation,   EditCategory::Universality,
};

constexpr std::size_t category_index(EditCategory c) { return static_cast<std::size_t>(c); }

// Canonical CamelCase name, e.g. "Spatial".
std::string_view to_string(EditCategory c);
// Column header used in score tables, e.g. "Attr.".
std::string_view short_label(EditCategory c);
// Case-insensitive match on canonical names.
std::optional<EditCategory> parse_category(std::string_view name);
// As parse_category, but throws RecordError on unknown names.
EditCategory category_from_string(std::string_view name);

// ---------------------------------------------------------------------------
// Records

// Path of an image relative to a content store root.
struct ImageRef {
    std::string path;

    bool empty() const noexcept { return path.empty(); }
    friend bool operator==(const ImageRef&, const ImageRef&) = default;
    friend auto operator<=>(const ImageRef&, const ImageRef&) = default;
};

struct Source {
    enum class Kind : std::uint8_t { DOCCI, VisualGenome, Other };
    Kind kind = Kind::Other;
    std::string name;  // only meaningful for Other

    static Source docci() { return {Kind::DOCCI, {}}; }
    static Source visual_genome() { return {Kind::VisualGenome, {}}; }
    static Source other(std::string n) { return {Kind::Other, std::move(n)}; }

    friend bool operator==(const Source&, const Source&) = default;
};

std::string to_string(const Source& s);
Source source_from_string(std::string_view text);

struct SourceSample {
    std::string id;
    ImageRef image_ref;
    std::string caption;
    Source source;
    std::map<std::string, std::string> meta;

    friend bool operator==(const SourceSample&, const SourceSample&) = default;
};

// Builds a sample whose id digests the image bytes and caption.
SourceSample make_source_sample(std::string_view image_bytes, ImageRef ref, std::string caption,
                                Source source, std::map<std::string, std::string> meta = {});

struct EditPlan {
    std::string sample_id;
    EditCategory category = EditCategory::Object;
    std::string instruction;

    friend bool operator==(const EditPlan&, const EditPlan&) = default;
};

struct EditedPair {
    std::string pair_id;
    ImageRef original_ref;
    ImageRef edited_ref;
    EditPlan plan;
    std::optional<double> similarity;

    friend bool operator==(const EditedPair&, const EditedPair&) = default;
};

std::string make_pair_id(std::string_view original_bytes, std::string_view edited_bytes,
                         std::string_view instruction);

struct CaptionSet {
    std::string pair_id;
    std::string original_complete;
    std::string edited;
    std::string difference;
    EditCategory difference_category = EditCategory::Object;
    bool judge1_pass = false;
    bool judge2_pass = false;

    bool judges_passed() const noexcept { return judge1_pass && judge2_pass; }
    friend bool operator==(const CaptionSet&, const CaptionSet&) = default;
};

struct SFTRecord {
    std::string pair_id;
    std::string question;
    std::string answer;
    EditCategory category = EditCategory::Object;

    friend bool operator==(const SFTRecord&, const SFTRecord&) = default;
};

enum class Split : std::uint8_t { Synthetic, Real };
std::string_view to_string(Split s);
Split split_from_string(std::string_view text);

inline constexpr std::size_t kOptionCount = 4;

struct BenchmarkItem {
    std::string item_id;
    std::string pair_id;
    EditCategory category = EditCategory::Object;
    std::string question;
    std::array<std::string, kOptionCount> options;
    int answer_index = 0;
    Split split = Split::Synthetic;
    // Images shown with the question; empty when the consumer resolves them
    // from pair_id.
    ImageRef original_ref;
    ImageRef edited_ref;

    friend bool operator==(const BenchmarkItem&, const BenchmarkItem&) = default;
};

enum class Decision : std::uint8_t { Accept, Reject, Flag };
std::string_view to_string(Decision d);
Decision decision_from_string(std::string_view text);

struct Verdict {
    std::string pair_id;
    Decision decision = Decision::Accept;
    std::vector<std::string> issue_tags;
    std::string annotator;
    std::int64_t timestamp_ms = 0;

    friend bool operator==(const Verdict&, const Verdict&) = default;
};

// Invariant checks; throw RecordError with a field-specific message.
void validate(const SourceSample& r);
void validate(const EditPlan& r);
void validate(const EditedPair& r);
void validate(const CaptionSet& r);
void validate(const SFTRecord& r);
void validate(const BenchmarkItem& r);
void validate(const Verdict& r);

// Whitespace-collapsed, case-folded text used for option distinctness checks.
std::string normalize_text(std::string_view text);

// ---------------------------------------------------------------------------
// JSON

void to_json(nlohmann::json& j, const ImageRef& r);
void from_json(const nlohmann::json& j, ImageRef& r);
void to_json(nlohmann::json& j, EditCategory c);
void from_json(const nlohmann::json& j, EditCategory& c);
void to_json(nlohmann::json& j, const SourceSample& r);
void from_json(const nlohmann::json& j, SourceSample& r);
void to_json(nlohmann::json& j, const EditPlan& r);
void from_json(const nlohmann::json& j, EditPlan& r);
void to_json(nlohmann::json& j, const EditedPair& r);
void from_json(const nlohmann::json& j, EditedPair& r);
void to_json(nlohmann::json& j, const CaptionSet& r);
void from_json(const nlohmann::json& j, CaptionSet& r);
void to_json(nlohmann::json& j, const SFTRecord& r);
void from_json(const nlohmann::json& j, SFTRecord& r);
void to_json(nlohmann::json& j, const BenchmarkItem& r);
void from_json(const nlohmann::json& j, BenchmarkItem& r);
void to_json(nlohmann::json& j, const Verdict& r);
void from_json(const nlohmann::json& j, Verdict& r);

// ---------------------------------------------------------------------------
// JSONL

template <class T>
std::string to_jsonl_line(const T& record) {
    validate(record);
    nlohmann::json j = record;
    return j.dump();
}

// Parses one line; `line_no` is used in error messages only.
template <class T>
T from_jsonl_line(std::string_view line, std::size_t line_no = 1) {
    try {
        return nlohmann::json::parse(line).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(line_no, e.what());
    } catch (const RecordError& e) {
        throw ParseError(line_no, e.what());
    }
}

template <class T>
T roundtrip(const T& record) {
    return from_jsonl_line<T>(to_jsonl_line(record));
}

// Reads non-empty lines. Throws std::runtime_error if the file is missing.
std::vector<std::string> read_lines(const std::filesystem::path& path);

template <class T>
std::vector<T> read_jsonl(const std::filesystem::path& path) {
    std::vector<T> out;
    std::size_t line_no = 0;
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::string line;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        out.push_back(from_jsonl_line<T>(line, line_no));
    }
    return out;
}

// Atomically replaces `path` with `content` (write temp, then rename).
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

template <class T>
std::string to_jsonl(const std::vector<T>& records) {
    std::string out;
    for (const auto& r : records) {
        out += to_jsonl_line(r);
        out += '\n';
    }
    return out;
}

template <class T>
void write_jsonl(const std::filesystem::path& path, const std::vector<T>& records) {
    write_file_atomic(path, to_jsonl(records));
}

}  // namespace medforge
