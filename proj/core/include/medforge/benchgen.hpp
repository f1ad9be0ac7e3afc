#pragma once

// Assembly of the multiple-choice edit-detection benchmark from pipeline
// outputs plus an optional set of real image pairs.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "medforge/content_store.hpp"
#include "medforge/datamodel.hpp"
#include "medforge/prompts.hpp"
#include "medforge/providers.hpp"

namespace medforge::bench {

class AssemblyError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct BenchConfig {
    std::filesystem::path pairs_path;
    std::filesystem::path captions_path;
    std::filesystem::path sft_path;
    std::optional<std::filesystem::path> real_pairs_path;
    // Where the SFT records left after removing benchmark pairs are written.
    std::filesystem::path sft_out_path;
    std::optional<std::filesystem::path> prompts_dir;

    double benchmark_sim_threshold = 0.95;
    int rephrasings_per_pair = 9;
    int distractors_per_question = 3;
    int items_per_pair = 1;
    int target_total_synthetic = 165;
    // Per-category synthetic quota in canonical category order. Empty means
    // equal-as-possible shares of target_total_synthetic.
    std::vector<int> category_quota;
    std::uint64_t seed = 0;
    int max_parallel = 1;
    providers::ProviderConfig text;
};

// Throws AssemblyError on invalid settings.
void validate(const BenchConfig& cfg);
// `pipeline_dir` expands to pairs.jsonl, captions.jsonl and sft.jsonl inside
// it; explicit paths override. Relative paths resolve against `base_dir`.
BenchConfig bench_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});

// Equal-as-possible split of `total` over the 11 categories; earlier
// categories receive the remainder.
std::vector<int> equal_quota(int total);

// A real (non-synthetic) image pair offered for the Real split.
struct RealPair {
    std::string pair_id;  // derived from the refs when empty
    ImageRef original_ref;
    ImageRef edited_ref;
    double similarity = 0.0;
    EditCategory category = EditCategory::Object;
    std::string original_caption;
    std::string edited_caption;
    std::string difference;
    std::optional<std::string> question;
};

void to_json(nlohmann::json& j, const RealPair& r);
void from_json(const nlohmann::json& j, RealPair& r);

// Mock stand-in for a set of minimally different real photo pairs: each
// original is a mock image, its partner a lightly edited copy, and the
// similarity is measured with `embedder`.
std::vector<RealPair> make_mock_real_pairs(const ContentStore& store, providers::ImageEmbedder& embedder,
                                           std::size_t n, std::uint64_t seed);

struct Candidate {
    std::string pair_id;
    EditCategory category = EditCategory::Object;
    Split split = Split::Synthetic;
    double similarity = 0.0;
    CaptionSet captions;
    std::optional<std::string> fixed_question;
    ImageRef original_ref;
    ImageRef edited_ref;
};

// Pairs above the strict benchmark gate whose caption set is complete and
// passed both judges, ordered by (category, pair_id).
std::vector<Candidate> select_pairs(const std::vector<EditedPair>& pairs, const std::vector<CaptionSet>& captions,
                                    double threshold);

struct RephraseResult {
    std::vector<std::string> questions;
    bool regenerated = false;
    int shortfall = 0;  // requested minus distinct questions obtained
};

// Questions via the BenchQuestion template. Exact duplicates trigger one
// regeneration; remaining duplicates are removed.
RephraseResult rephrase(providers::ChatProvider& chat, const PromptRegistry& prompts, const CaptionSet& captions,
                        int n);

struct OptionTexts {
    std::string correct;
    std::vector<std::string> distractors;
};

struct OptionsResult {
    std::optional<OptionTexts> options;  // nullopt: question dropped
    int regenerations = 0;
};

// RightAnswer then WrongAnswer. A distractor that matches the correct answer
// (or another distractor) after normalization triggers one regeneration of
// the distractors; if it persists the question is dropped.
OptionsResult gen_options(providers::ChatProvider& chat, const PromptRegistry& prompts, const std::string& question,
                          const CaptionSet& captions, int distractors);

// Permutation applied to [correct, d1, d2, d3]; a pure function of
// (seed, item_id).
std::array<int, kOptionCount> shuffle_order(std::uint64_t seed, std::string_view item_id);

BenchmarkItem make_item(const Candidate& c, const std::string& question, const OptionTexts& texts,
                        std::uint64_t seed);

// Removes SFT records whose pair_id appears in `items`.
std::vector<SFTRecord> dedup_against_sft(const std::vector<BenchmarkItem>& items, std::vector<SFTRecord> sft,
                                         std::size_t* removed = nullptr);

struct AnswerKey {
    std::map<std::string, int> answers;  // item_id -> answer_index
    std::map<EditCategory, std::size_t> counts;
    std::map<Split, std::size_t> split_counts;

    std::size_t total() const noexcept { return answers.size(); }
};

AnswerKey make_key(const std::vector<BenchmarkItem>& items);
void to_json(nlohmann::json& j, const AnswerKey& k);
void from_json(const nlohmann::json& j, AnswerKey& k);
AnswerKey load_key(const std::filesystem::path& path);

struct BenchInputs {
    std::vector<EditedPair> pairs;
    std::vector<CaptionSet> captions;
    std::vector<SFTRecord> sft;
    std::vector<RealPair> real;
};

BenchInputs load_inputs(const BenchConfig& cfg);

struct AssemblySummary {
    std::size_t eligible_pairs = 0;
    std::size_t synthetic_items = 0;
    std::size_t real_items = 0;
    std::map<EditCategory, std::size_t> category_counts;
    std::map<std::string, int> question_shortfalls;  // pair_id -> missing
    std::size_t dropped_questions = 0;
    std::size_t regenerations = 0;
    std::vector<std::string> deferred_pairs;
    std::map<std::string, std::string> skipped_real;  // pair_id -> reason
    std::size_t sft_removed = 0;
};

nlohmann::json to_json(const AssemblySummary& s);

struct Assembly {
    std::vector<BenchmarkItem> items;
    AnswerKey key;
    std::vector<SFTRecord> sft_filtered;
    AssemblySummary summary;
};

// Throws AssemblyError when no pair is eligible, when a category ends up
// empty, or (with strict_count) when the synthetic total misses the target.
Assembly assemble(const BenchConfig& cfg, providers::ChatProvider& chat, const BenchInputs& inputs,
                  bool strict_count = false);

// Writes the items, the key and the filtered SFT set atomically.
void write_assembly(const Assembly& a, const std::filesystem::path& bench_out, const std::filesystem::path& key_out,
                    const std::filesystem::path& sft_out);

}  // namespace medforge::bench
