#include "medforge/datamodel.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>
#include <utility>

#include "medforge/digest.hpp"

namespace medforge {

using nlohmann::json;

ParseError::ParseError(std::size_t line, const std::string& what)
    : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}

namespace {

constexpr std::array<std::string_view, kCategoryCount> kCategoryNames = {
    "Object", "Attribute", "Scene", "Spatial", "Action", "Part",
    "Counting", "Differentiation", "Comparison", "Negation", "Universality",
};

constexpr std::array<std::string_view, kCategoryCount> kCategoryLabels = {
    "Object", "Attr.", "Scene", "Spatial", "Action", "Part",
    "Count", "Differ.", "Compar.", "Neg.", "Univ.",
};

bool iequals(std::string_view a, std::string_view b) {
    return a.size() == b.size() &&
           std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
               return std::tolower(static_cast<unsigned char>(x)) ==
                      std::tolower(static_cast<unsigned char>(y));
           });
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

void require(bool ok, const std::string& what) {
    if (!ok) throw RecordError("invariant violation: " + what);
}

void check_version(const json& j) {
    if (!j.is_object()) throw RecordError("record is not a JSON object");
    if (j.contains("v") && j.at("v").get<int>() != kSchemaVersion) {
        throw RecordError("unsupported schema version " + j.at("v").dump());
    }
}

}  // namespace

std::string_view to_string(EditCategory c) { return kCategoryNames.at(category_index(c)); }
std::string_view short_label(EditCategory c) { return kCategoryLabels.at(category_index(c)); }

std::optional<EditCategory> parse_category(std::string_view name) {
    name = trim(name);
    for (std::size_t i = 0; i < kCategoryCount; ++i) {
        if (iequals(name, kCategoryNames[i])) return kAllCategories[i];
    }
    return std::nullopt;
}

EditCategory category_from_string(std::string_view name) {
    if (auto c = parse_category(name)) return *c;
    throw RecordError("unknown edit category \"" + std::string(name) + "\"");
}

std::string to_string(const Source& s) {
    switch (s.kind) {
        case Source::Kind::DOCCI: return "DOCCI";
        case Source::Kind::VisualGenome: return "VisualGenome";
        case Source::Kind::Other: return "Other:" + s.name;
    }
    return "Other:";
}

Source source_from_string(std::string_view text) {
    if (iequals(text, "DOCCI")) return Source::docci();
    if (iequals(text, "VisualGenome")) return Source::visual_genome();
    if (text.size() >= 6 && iequals(text.substr(0, 6), "Other:")) return Source::other(std::string(text.substr(6)));
    return Source::other(std::string(text));
}

std::string_view to_string(Split s) { return s == Split::Synthetic ? "Synthetic" : "Real"; }

Split split_from_string(std::string_view text) {
    if (iequals(text, "Synthetic")) return Split::Synthetic;
    if (iequals(text, "Real")) return Split::Real;
    throw RecordError("unknown split \"" + std::string(text) + "\"");
}

std::string_view to_string(Decision d) {
    switch (d) {
        case Decision::Accept: return "Accept";
        case Decision::Reject: return "Reject";
        case Decision::Flag: return "Flag";
    }
    return "Accept";
}

Decision decision_from_string(std::string_view text) {
    if (iequals(text, "Accept")) return Decision::Accept;
    if (iequals(text, "Reject")) return Decision::Reject;
    if (iequals(text, "Flag")) return Decision::Flag;
    throw RecordError("unknown decision \"" + std::string(text) + "\"");
}

SourceSample make_source_sample(std::string_view image_bytes, ImageRef ref, std::string caption,
                                Source source, std::map<std::string, std::string> meta) {
    if (image_bytes.empty()) throw std::invalid_argument("empty input");
    SourceSample s;
    s.id = derive_id({image_bytes, caption});
    s.image_ref = std::move(ref);
    s.caption = std::move(caption);
    s.source = std::move(source);
    s.meta = std::move(meta);
    return s;
}

std::string make_pair_id(std::string_view original_bytes, std::string_view edited_bytes,
                         std::string_view instruction) {
    return derive_id({original_bytes, edited_bytes, instruction});
}

std::string normalize_text(std::string_view text) {
    std::string out;
    bool pending_space = false;
    for (char ch : trim(text)) {
        auto c = static_cast<unsigned char>(ch);
        if (std::isspace(c)) {
            pending_space = true;
            continue;
        }
        if (pending_space && !out.empty()) out.push_back(' ');
        pending_space = false;
        out.push_back(static_cast<char>(std::tolower(c)));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Validation

void validate(const SourceSample& r) {
    require(!r.id.empty(), "SourceSample.id is empty");
    require(!r.image_ref.empty(), "SourceSample.image_ref is empty");
}

void validate(const EditPlan& r) {
    require(!r.sample_id.empty(), "EditPlan.sample_id is empty");
    require(!trim(r.instruction).empty(), "EditPlan.instruction is empty");
    require(category_index(r.category) < kCategoryCount, "EditPlan.category out of range");
}

void validate(const EditedPair& r) {
    require(!r.pair_id.empty(), "EditedPair.pair_id is empty");
    require(!r.original_ref.empty() && !r.edited_ref.empty(), "EditedPair image refs must be set");
    validate(r.plan);
    if (r.similarity) {
        require(std::isfinite(*r.similarity) && *r.similarity >= -1.0 && *r.similarity <= 1.0,
                "EditedPair.similarity must be finite and in [-1,1]");
    }
}

void validate(const CaptionSet& r) {
    require(!r.pair_id.empty(), "CaptionSet.pair_id is empty");
    require(category_index(r.difference_category) < kCategoryCount, "CaptionSet.difference_category out of range");
    if (r.judges_passed()) {
        require(!trim(r.difference).empty(), "CaptionSet.difference is empty while both judges passed");
    }
}

void validate(const SFTRecord& r) {
    require(!r.pair_id.empty(), "SFTRecord.pair_id is empty");
    require(!trim(r.question).empty(), "SFTRecord.question is empty");
    require(!trim(r.answer).empty(), "SFTRecord.answer is empty");
}

void validate(const BenchmarkItem& r) {
    require(!r.item_id.empty(), "BenchmarkItem.item_id is empty");
    require(!r.pair_id.empty(), "BenchmarkItem.pair_id is empty");
    require(!trim(r.question).empty(), "BenchmarkItem.question is empty");
    require(r.answer_index >= 0 && r.answer_index < static_cast<int>(kOptionCount),
            "BenchmarkItem.answer_index must be in 0..3");
    std::set<std::string> seen;
    for (const auto& o : r.options) {
        auto n = normalize_text(o);
        require(!n.empty(), "BenchmarkItem option is empty");
        require(seen.insert(n).second, "BenchmarkItem options must be pairwise distinct");
    }
}

void validate(const Verdict& r) {
    require(!r.pair_id.empty(), "Verdict.pair_id is empty");
    require(!r.annotator.empty(), "Verdict.annotator is empty");
    if (r.decision == Decision::Flag) {
        require(!r.issue_tags.empty(), "Flag verdict requires at least one issue tag");
    }
}

// ---------------------------------------------------------------------------
// JSON

void to_json(json& j, const ImageRef& r) { j = r.path; }
void from_json(const json& j, ImageRef& r) { r.path = j.get<std::string>(); }

void to_json(json& j, EditCategory c) { j = std::string(to_string(c)); }
void from_json(const json& j, EditCategory& c) { c = category_from_string(j.get<std::string>()); }

void to_json(json& j, const SourceSample& r) {
    j = json{{"v", kSchemaVersion}, {"id", r.id},         {"image_ref", r.image_ref},
             {"caption", r.caption}, {"source", to_string(r.source)}, {"meta", r.meta}};
}

void from_json(const json& j, SourceSample& r) {
    check_version(j);
    r.id = j.at("id").get<std::string>();
    r.image_ref = j.at("image_ref").get<ImageRef>();
    r.caption = j.at("caption").get<std::string>();
    r.source = source_from_string(j.at("source").get<std::string>());
    r.meta = j.value("meta", std::map<std::string, std::string>{});
    validate(r);
}

void to_json(json& j, const EditPlan& r) {
    j = json{{"v", kSchemaVersion}, {"sample_id", r.sample_id}, {"category", r.category},
             {"instruction", r.instruction}};
}

void from_json(const json& j, EditPlan& r) {
    check_version(j);
    r.sample_id = j.at("sample_id").get<std::string>();
    r.category = j.at("category").get<EditCategory>();
    r.instruction = j.at("instruction").get<std::string>();
    validate(r);
}

void to_json(json& j, const EditedPair& r) {
    j = json{{"v", kSchemaVersion},        {"pair_id", r.pair_id},   {"original_ref", r.original_ref},
             {"edited_ref", r.edited_ref}, {"plan", r.plan}};
    if (r.similarity) {
        j["similarity"] = *r.similarity;
    } else {
        j["similarity"] = nullptr;
    }
    j["plan"].erase("v");
}

void from_json(const json& j, EditedPair& r) {
    check_version(j);
    r.pair_id = j.at("pair_id").get<std::string>();
    r.original_ref = j.at("original_ref").get<ImageRef>();
    r.edited_ref = j.at("edited_ref").get<ImageRef>();
    r.plan = j.at("plan").get<EditPlan>();
    if (j.contains("similarity") && !j.at("similarity").is_null()) {
        r.similarity = j.at("similarity").get<double>();
    } else {
        r.similarity.reset();
    }
    validate(r);
}

void to_json(json& j, const CaptionSet& r) {
    j = json{{"v", kSchemaVersion},
             {"pair_id", r.pair_id},
             {"original_complete", r.original_complete},
             {"edited", r.edited},
             {"difference", r.difference},
             {"difference_category", r.difference_category},
             {"judge1_pass", r.judge1_pass},
             {"judge2_pass", r.judge2_pass}};
}

void from_json(const json& j, CaptionSet& r) {
    check_version(j);
    r.pair_id = j.at("pair_id").get<std::string>();
    r.original_complete = j.at("original_complete").get<std::string>();
    r.edited = j.at("edited").get<std::string>();
    r.difference = j.at("difference").get<std::string>();
    r.difference_category = j.at("difference_category").get<EditCategory>();
    r.judge1_pass = j.at("judge1_pass").get<bool>();
    r.judge2_pass = j.at("judge2_pass").get<bool>();
    validate(r);
}

void to_json(json& j, const SFTRecord& r) {
    j = json{{"v", kSchemaVersion}, {"pair_id", r.pair_id}, {"question", r.question},
             {"answer", r.answer},   {"category", r.category}};
}

void from_json(const json& j, SFTRecord& r) {
    check_version(j);
    r.pair_id = j.at("pair_id").get<std::string>();
    r.question = j.at("question").get<std::string>();
    r.answer = j.at("answer").get<std::string>();
    r.category = j.at("category").get<EditCategory>();
    validate(r);
}

void to_json(json& j, const BenchmarkItem& r) {
    j = json{{"v", kSchemaVersion},
             {"item_id", r.item_id},
             {"pair_id", r.pair_id},
             {"category", r.category},
             {"question", r.question},
             {"options", r.options},
             {"answer_index", r.answer_index},
             {"split", std::string(to_string(r.split))}};
    if (!r.original_ref.path.empty()) j["original_ref"] = r.original_ref;
    if (!r.edited_ref.path.empty()) j["edited_ref"] = r.edited_ref;
}

void from_json(const json& j, BenchmarkItem& r) {
    check_version(j);
    r.item_id = j.at("item_id").get<std::string>();
    r.pair_id = j.at("pair_id").get<std::string>();
    r.category = j.at("category").get<EditCategory>();
    r.question = j.at("question").get<std::string>();
    const auto& opts = j.at("options");
    if (!opts.is_array() || opts.size() != kOptionCount) {
        throw RecordError("invariant violation: BenchmarkItem must have exactly 4 options, got " +
                          std::to_string(opts.is_array() ? opts.size() : 0));
    }
    for (std::size_t i = 0; i < kOptionCount; ++i) r.options[i] = opts[i].get<std::string>();
    r.answer_index = j.at("answer_index").get<int>();
    r.split = split_from_string(j.at("split").get<std::string>());
    r.original_ref = ImageRef{j.value("original_ref", "")};
    r.edited_ref = ImageRef{j.value("edited_ref", "")};
    validate(r);
}

void to_json(json& j, const Verdict& r) {
    j = json{{"v", kSchemaVersion},
             {"pair_id", r.pair_id},
             {"decision", std::string(to_string(r.decision))},
             {"issue_tags", r.issue_tags},
             {"annotator", r.annotator},
             {"timestamp_ms", r.timestamp_ms}};
}

void from_json(const json& j, Verdict& r) {
    check_version(j);
    r.pair_id = j.at("pair_id").get<std::string>();
    r.decision = decision_from_string(j.at("decision").get<std::string>());
    r.issue_tags = j.value("issue_tags", std::vector<std::string>{});
    r.annotator = j.at("annotator").get<std::string>();
    r.timestamp_ms = j.value("timestamp_ms", std::int64_t{0});
    validate(r);
}

// ---------------------------------------------------------------------------
// Files

std::vector<std::string> read_lines(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::vector<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        out.push_back(std::move(line));
    }
    return out;
}

void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
    namespace fs = std::filesystem;
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        out.flush();
        if (!out) throw std::runtime_error("short write to " + tmp.string());
    }
    fs::rename(tmp, path);
}

}  // namespace medforge
