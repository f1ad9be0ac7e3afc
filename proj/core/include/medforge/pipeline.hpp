#pragma once

// Multi-stage construction of edited image pairs, aligned captions and QA
// training records from source image/caption samples.
//
// Stages run in a fixed order. Each stage writes a checkpoint holding the
// outcome of every input record; re-running reuses finalized outcomes and
// retries deferred ones, so an interrupted run resumes where it stopped.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "medforge/checkpoint.hpp"
#include "medforge/content_store.hpp"
#include "medforge/datamodel.hpp"
#include "medforge/prompts.hpp"
#include "medforge/providers.hpp"

namespace medforge::pipeline {

enum class Stage : std::uint8_t {
    Filter,
    Plan,
    Edit,
    SimFilter,
    CaptionComplete,
    CaptionEdited,
    Difference,
    Judges,
    SFT,
};

inline constexpr std::array<Stage, 9> kAllStages = {
    Stage::Filter,          Stage::Plan,          Stage::Edit,       Stage::SimFilter, Stage::CaptionComplete,
    Stage::CaptionEdited,   Stage::Difference,    Stage::Judges,     Stage::SFT,
};

// "stage_filter", "stage_plan", ...
std::string_view to_string(Stage s);
// Accepts names with or without the "stage_" prefix.
std::optional<Stage> parse_stage(std::string_view name);

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Semantic failure: the record is dropped with a machine-readable reason.
class StageDrop : public std::runtime_error {
public:
    StageDrop(std::string reason, std::string detail, nlohmann::json payload = {});
    const std::string& reason() const noexcept { return reason_; }
    const std::string& detail() const noexcept { return detail_; }
    const nlohmann::json& payload() const noexcept { return payload_; }

private:
    std::string reason_;
    std::string detail_;
    nlohmann::json payload_;
};

class UnparseableCategory : public StageDrop {
public:
    explicit UnparseableCategory(std::string reply);
};

struct PipelineConfig {
    providers::ProviderConfig vision;
    providers::ProviderConfig text;
    providers::ProviderConfig editor;
    providers::ProviderConfig embedder;
    std::optional<providers::ProviderConfig> judge1;  // defaults to vision
    std::optional<providers::ProviderConfig> judge2;  // defaults to vision
    double dataset_sim_threshold = 0.7;
    std::uint64_t seed = 0;
    int max_parallel = 1;
    std::vector<EditCategory> category_priority = default_category_priority();
    std::filesystem::path store_dir = "store";
    std::optional<std::filesystem::path> prompts_dir;

    // Canonical order with Object moved last.
    static std::vector<EditCategory> default_category_priority();
};

// Throws ConfigError.
void validate(const PipelineConfig& cfg);
// Relative paths in the JSON are resolved against `base_dir`.
PipelineConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
nlohmann::json config_to_json(const PipelineConfig& cfg);
// All-mock configuration, handy for tests and demos.
PipelineConfig mock_config(std::filesystem::path store_dir, std::uint64_t seed = 0);

struct Providers {
    std::shared_ptr<providers::ChatProvider> vision;
    std::shared_ptr<providers::ChatProvider> text;
    std::shared_ptr<providers::ChatProvider> judge1;
    std::shared_ptr<providers::ChatProvider> judge2;
    std::shared_ptr<providers::ImageEditor> editor;
    std::shared_ptr<providers::ImageEmbedder> embedder;
    std::size_t embed_dimension = 512;
};

Providers make_providers(const PipelineConfig& cfg);

struct StageContext {
    const PipelineConfig& config;
    Providers& providers;
    const ContentStore& store;
    const PromptRegistry& prompts;
};

// Accumulated state of one source sample as it moves through the stages.
struct WorkItem {
    SourceSample sample;
    std::string filter_rationale;
    std::optional<EditPlan> plan;
    std::optional<EditedPair> pair;
    std::string original_complete;
    std::string edited_caption;
    bool suspect = false;
    std::string difference;
    std::optional<EditCategory> difference_category;
    std::optional<bool> judge1_pass;
    std::optional<bool> judge2_pass;
    std::optional<SFTRecord> sft;

    CaptionSet caption_set() const;
};

void to_json(nlohmann::json& j, const WorkItem& w);
void from_json(const nlohmann::json& j, WorkItem& w);

// ---------------------------------------------------------------------------
// Reply parsing

// Trimmed, case-folded reply begins with the token "yes".
bool strict_yes(std::string_view reply);

// Categories named in `text` (whole-word, case-insensitive), resolved by the
// first entry of `priority` that is mentioned.
std::optional<EditCategory> pick_category(std::string_view text, const std::vector<EditCategory>& priority);

// Value after a `Label:` line prefix (case-insensitive), trimmed; nullopt if absent.
std::optional<std::string> labeled_field(std::string_view reply, std::string_view label);

struct QaPair {
    std::string question;
    std::string answer;
};
// Splits on `Q:` / `A:` delimiters; nullopt unless both parts are non-empty.
std::optional<QaPair> parse_qa(std::string_view reply);

// ---------------------------------------------------------------------------
// Stages. Provider failures propagate as providers::ProviderError (the
// record is deferred); semantic failures throw StageDrop.

struct FilterResult {
    bool keep = false;
    std::string rationale;
};

FilterResult stage_filter(const StageContext& ctx, const SourceSample& sample);
EditPlan stage_plan(const StageContext& ctx, const SourceSample& sample);
EditedPair stage_edit(const StageContext& ctx, const SourceSample& sample, const EditPlan& plan);
// Stores the similarity on the pair; returns whether it passes the dataset gate.
bool stage_simfilter(const StageContext& ctx, EditedPair& pair);
std::string stage_caption_complete(const StageContext& ctx, const EditedPair& pair, const SourceSample& sample);

struct EditedCaption {
    std::string text;
    bool suspect = false;  // byte-equal to the completed original caption
};
EditedCaption stage_caption_edited(const StageContext& ctx, const EditedPair& pair,
                                   const std::string& original_complete);

struct DifferenceResult {
    std::string difference;
    EditCategory category = EditCategory::Object;
};
DifferenceResult stage_difference(const StageContext& ctx, const std::string& original_complete,
                                  const std::string& edited_caption);

struct JudgeResult {
    bool judge1 = false;
    bool judge2 = false;
};
JudgeResult stage_judges(const StageContext& ctx, const EditedPair& pair, const CaptionSet& captions);

SFTRecord stage_sft(const StageContext& ctx, const CaptionSet& captions);

// Applies one stage to a work item. Throws StageDrop or ProviderError.
WorkItem apply_stage(const StageContext& ctx, Stage stage, WorkItem item);

// Runs `item` through every stage from `from` to the end.
struct ItemOutcome {
    EntryStatus status = EntryStatus::Kept;
    Stage last_stage = Stage::SFT;
    std::string reason;
    std::string detail;
    WorkItem item;
};
ItemOutcome run_item(const StageContext& ctx, WorkItem item, Stage from);

// ---------------------------------------------------------------------------
// Whole-corpus run

struct StageCounts {
    Stage stage = Stage::Filter;
    std::size_t input = 0;
    std::size_t kept = 0;
    std::size_t deferred = 0;
    std::size_t suspect = 0;
    std::map<std::string, std::size_t> dropped;  // reason -> count

    std::size_t dropped_total() const;
};

struct Manifest {
    std::uint64_t seed = 0;
    std::vector<StageCounts> stages;
    std::map<std::string, std::string> outputs;  // file name -> sha256
    bool complete = false;

    const StageCounts* find(Stage s) const;
};

nlohmann::json to_json(const Manifest& m);
Manifest manifest_from_json(const nlohmann::json& j);

struct RunOptions {
    // Discard checkpoints for this stage and every later one.
    std::optional<Stage> from;
    // Stop after this stage's checkpoint commits (simulated interruption).
    std::optional<Stage> stop_after;
};

// Output directory layout:
//   checkpoints/<stage>.json, plans.jsonl, pairs.jsonl, captions.jsonl,
//   sft.jsonl, drops.jsonl, manifest.json, run.json
Manifest run(const PipelineConfig& cfg, Providers& providers, const std::vector<SourceSample>& samples,
             const std::filesystem::path& out_dir, const RunOptions& options = {});

}  // namespace medforge::pipeline
