#pragma once

// Running a model over the benchmark, parsing its multiple-choice replies and
// turning the results into per-category score tables.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "medforge/benchgen.hpp"
#include "medforge/content_store.hpp"
#include "medforge/datamodel.hpp"
#include "medforge/providers.hpp"

namespace medforge::eval {

class ScoreError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ModelConfig {
    std::string label;
    providers::ProviderConfig provider;
    std::filesystem::path store_dir = "store";
    // Optional replacement for the question layout; slots {question},
    // {option_a} .. {option_d}.
    std::optional<std::string> eval_template;
    int max_parallel = 1;
    std::uint64_t seed = 0;
};

ModelConfig model_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});

// Question plus lettered options (A-D), as sent alongside the two images.
std::string render_question(const BenchmarkItem& item, const std::optional<std::string>& tmpl = std::nullopt);

// Reply to option index. Precedence: a single distinct standalone capital
// letter A-D; then a unique "(X)" or "X." marker; then a unique
// case-insensitive option-text match. Anything else is unparseable.
std::optional<int> parse_choice(std::string_view raw, const std::array<std::string, kOptionCount>& options);

struct RunRecord {
    std::string item_id;
    std::string model;
    EditCategory category = EditCategory::Object;
    Split split = Split::Synthetic;
    std::string raw_response;
    std::optional<int> parsed_index;
    std::string unparseable_reason;  // "no-choice" or "transport" when unparsed
    bool correct = false;
    std::int64_t timestamp_ms = 0;
};

void to_json(nlohmann::json& j, const RunRecord& r);
void from_json(const nlohmann::json& j, RunRecord& r);

// Sends both images and the question in one vision call; provider failures
// leave the item unparsed with reason "transport".
RunRecord ask(providers::ChatProvider& chat, const ContentStore& store, const BenchmarkItem& item,
              const bench::AnswerKey& key, const ModelConfig& cfg);

std::vector<RunRecord> run_eval(providers::ChatProvider& chat, const ContentStore& store,
                                const std::vector<BenchmarkItem>& items, const bench::AnswerKey& key,
                                const ModelConfig& cfg);

struct Tally {
    std::size_t correct = 0;
    std::size_t count = 0;

    // Percentage; nullopt when count is 0.
    std::optional<double> accuracy() const;
};

struct ScoreTable {
    std::string model;
    std::array<Tally, kCategoryCount> categories{};
    std::map<Split, Tally> splits;
    Tally overall;

    std::optional<double> category_accuracy(EditCategory c) const { return categories[category_index(c)].accuracy(); }
    // Mean of category accuracies over categories with at least one item.
    double macro_average() const;
};

// Mean of the present cells; throws ScoreError if none is present.
double mean_of_present(std::span<const std::optional<double>> cells);

// Every key item must appear exactly once in the run and every run item must
// be in the key; correctness is recomputed from the key.
ScoreTable score(const std::vector<RunRecord>& run, const bench::AnswerKey& key);

nlohmann::json to_json(const ScoreTable& t);

// Columns in category order plus Avg; rows sorted by macro average
// (descending), cells at 2 decimals, empty categories as "--".
std::string report_markdown(std::vector<ScoreTable> tables);
// Same layout with unrounded values and empty cells left blank.
std::string report_csv(std::vector<ScoreTable> tables);

// External-benchmark rows: named cells, some possibly missing.
struct ExternalRow {
    std::string model;
    std::map<std::string, std::optional<double>> cells;
};

const std::vector<std::string>& default_external_columns();  // averaged columns
double external_average(const ExternalRow& row, const std::vector<std::string>& columns = default_external_columns());

// {"rows": [{"model": "...", "Pope": 92.5 | null | "--", ...}], "columns": [...]?}
struct ExternalTable {
    std::vector<std::string> columns;        // averaged
    std::vector<std::string> extra_columns;  // shown, not averaged (e.g. MME)
    std::vector<ExternalRow> rows;
};

ExternalTable external_table_from_json(const nlohmann::json& j);
std::string external_markdown(const ExternalTable& t);

}  // namespace medforge::eval
