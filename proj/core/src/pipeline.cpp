#include "medforge/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>

#include "medforge/digest.hpp"
#include "medforge/mocks.hpp"
#include "medforge/simfilter.hpp"
#include "parallel.hpp"

namespace medforge::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;
using providers::ChatMessage;
using providers::ProviderConfig;

namespace {

constexpr std::array<std::string_view, 9> kStageNames = {
    "stage_filter",          "stage_plan",       "stage_edit",   "stage_simfilter", "stage_caption_complete",
    "stage_caption_edited",  "stage_difference", "stage_judges", "stage_sft",
};

std::size_t stage_index(Stage s) { return static_cast<std::size_t>(s); }

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

std::string lower(std::string_view s) {
    std::string out(s);
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

bool blank(std::string_view s) { return trim(s).empty(); }

std::string clarify(std::string prompt) {
    return prompt + "\n\nYour previous reply could not be parsed. Follow the requested format exactly and use only "
                    "these category names: " +
           category_list() + ".";
}

}  // namespace

std::string_view to_string(Stage s) { return kStageNames.at(stage_index(s)); }

std::optional<Stage> parse_stage(std::string_view name) {
    std::string n = lower(trim(name));
    for (std::size_t i = 0; i < kStageNames.size(); ++i) {
        std::string_view full = kStageNames[i];
        if (n == full || n == full.substr(6)) return kAllStages[i];
    }
    return std::nullopt;
}

StageDrop::StageDrop(std::string reason, std::string detail, json payload)
    : std::runtime_error(reason + (detail.empty() ? "" : ": " + detail)),
      reason_(std::move(reason)),
      detail_(std::move(detail)),
      payload_(std::move(payload)) {}

UnparseableCategory::UnparseableCategory(std::string reply)
    : StageDrop("unparseable-category", std::move(reply)) {}

// ---------------------------------------------------------------------------
// Configuration

std::vector<EditCategory> PipelineConfig::default_category_priority() {
    std::vector<EditCategory> out;
    for (auto c : kAllCategories) {
        if (c != EditCategory::Object) out.push_back(c);
    }
    out.push_back(EditCategory::Object);
    return out;
}

void validate(const PipelineConfig& cfg) {
    if (!(cfg.dataset_sim_threshold > 0.0 && cfg.dataset_sim_threshold < 1.0)) {
        throw ConfigError("dataset_sim_threshold must be in (0, 1)");
    }
    if (cfg.max_parallel < 1) throw ConfigError("max_parallel must be positive");
    std::set<EditCategory> seen(cfg.category_priority.begin(), cfg.category_priority.end());
    if (cfg.category_priority.size() != kCategoryCount || seen.size() != kCategoryCount) {
        throw ConfigError("category_priority must be a permutation of the 11 categories");
    }
    try {
        providers::validate(cfg.vision);
        providers::validate(cfg.text);
        providers::validate(cfg.editor);
        providers::validate(cfg.embedder);
        if (cfg.judge1) providers::validate(*cfg.judge1);
        if (cfg.judge2) providers::validate(*cfg.judge2);
    } catch (const providers::PreconditionError& e) {
        throw ConfigError(std::string("provider config: ") + e.what());
    }
    if (cfg.prompts_dir && !fs::is_directory(*cfg.prompts_dir)) {
        throw ConfigError("prompts_dir does not exist: " + cfg.prompts_dir->string());
    }
}

PipelineConfig config_from_json(const json& j, const fs::path& base_dir) {
    auto resolve = [&](const fs::path& p) { return p.is_absolute() || base_dir.empty() ? p : base_dir / p; };
    PipelineConfig cfg;
    try {
        const json& prov = j.at("providers");
        cfg.vision = prov.at("vision").get<ProviderConfig>();
        cfg.text = prov.at("text").get<ProviderConfig>();
        cfg.editor = prov.at("editor").get<ProviderConfig>();
        cfg.embedder = prov.at("embedder").get<ProviderConfig>();
        if (prov.contains("judge1")) cfg.judge1 = prov.at("judge1").get<ProviderConfig>();
        if (prov.contains("judge2")) cfg.judge2 = prov.at("judge2").get<ProviderConfig>();
        cfg.dataset_sim_threshold = j.value("dataset_sim_threshold", cfg.dataset_sim_threshold);
        cfg.seed = j.value("seed", cfg.seed);
        cfg.max_parallel = j.value("max_parallel", cfg.max_parallel);
        if (j.contains("category_priority")) {
            cfg.category_priority = j.at("category_priority").get<std::vector<EditCategory>>();
        }
        cfg.store_dir = resolve(j.value("store_dir", std::string("store")));
        if (j.contains("prompts_dir")) cfg.prompts_dir = resolve(j.at("prompts_dir").get<std::string>());
    } catch (const json::exception& e) {
        throw ConfigError(std::string("pipeline config: ") + e.what());
    } catch (const providers::PreconditionError& e) {
        throw ConfigError(std::string("provider config: ") + e.what());
    } catch (const RecordError& e) {
        throw ConfigError(std::string("pipeline config: ") + e.what());
    }
    validate(cfg);
    return cfg;
}

json config_to_json(const PipelineConfig& cfg) {
    json prov{{"vision", cfg.vision}, {"text", cfg.text}, {"editor", cfg.editor}, {"embedder", cfg.embedder}};
    if (cfg.judge1) prov["judge1"] = *cfg.judge1;
    if (cfg.judge2) prov["judge2"] = *cfg.judge2;
    json j{{"providers", prov},
           {"dataset_sim_threshold", cfg.dataset_sim_threshold},
           {"seed", cfg.seed},
           {"max_parallel", cfg.max_parallel},
           {"category_priority", cfg.category_priority},
           {"store_dir", cfg.store_dir.string()}};
    if (cfg.prompts_dir) j["prompts_dir"] = cfg.prompts_dir->string();
    return j;
}

PipelineConfig mock_config(fs::path store_dir, std::uint64_t seed) {
    PipelineConfig cfg;
    ProviderConfig mock;
    mock.kind = "mock";
    cfg.vision = mock;
    cfg.text = mock;
    cfg.editor = mock;
    cfg.embedder = mock;
    cfg.seed = seed;
    cfg.store_dir = std::move(store_dir);
    return cfg;
}

Providers make_providers(const PipelineConfig& cfg) {
    validate(cfg);
    Providers p;
    p.vision = providers::make_chat_provider(cfg.vision, cfg.seed);
    p.text = providers::make_chat_provider(cfg.text, cfg.seed);
    p.judge1 = cfg.judge1 ? providers::make_chat_provider(*cfg.judge1, cfg.seed) : p.vision;
    p.judge2 = cfg.judge2 ? providers::make_chat_provider(*cfg.judge2, cfg.seed) : p.vision;
    p.editor = providers::make_image_editor(cfg.editor, cfg.seed);
    p.embedder = providers::make_image_embedder(cfg.embedder, cfg.seed);
    p.embed_dimension = cfg.embedder.dimension;
    return p;
}

// ---------------------------------------------------------------------------
// WorkItem

CaptionSet WorkItem::caption_set() const {
    CaptionSet c;
    c.pair_id = pair ? pair->pair_id : std::string{};
    c.original_complete = original_complete;
    c.edited = edited_caption;
    c.difference = difference;
    c.difference_category = difference_category.value_or(plan ? plan->category : EditCategory::Object);
    c.judge1_pass = judge1_pass.value_or(false);
    c.judge2_pass = judge2_pass.value_or(false);
    return c;
}

void to_json(json& j, const WorkItem& w) {
    j = json{{"sample", w.sample}};
    if (!w.filter_rationale.empty()) j["filter_rationale"] = w.filter_rationale;
    if (w.plan) j["plan"] = *w.plan;
    if (w.pair) j["pair"] = *w.pair;
    if (!w.original_complete.empty()) j["original_complete"] = w.original_complete;
    if (!w.edited_caption.empty()) j["edited_caption"] = w.edited_caption;
    if (w.suspect) j["suspect"] = true;
    if (!w.difference.empty()) j["difference"] = w.difference;
    if (w.difference_category) j["difference_category"] = *w.difference_category;
    if (w.judge1_pass) j["judge1_pass"] = *w.judge1_pass;
    if (w.judge2_pass) j["judge2_pass"] = *w.judge2_pass;
    if (w.sft) j["sft"] = *w.sft;
}

void from_json(const json& j, WorkItem& w) {
    w = WorkItem{};
    w.sample = j.at("sample").get<SourceSample>();
    w.filter_rationale = j.value("filter_rationale", "");
    if (j.contains("plan")) w.plan = j.at("plan").get<EditPlan>();
    if (j.contains("pair")) w.pair = j.at("pair").get<EditedPair>();
    w.original_complete = j.value("original_complete", "");
    w.edited_caption = j.value("edited_caption", "");
    w.suspect = j.value("suspect", false);
    w.difference = j.value("difference", "");
    if (j.contains("difference_category")) w.difference_category = j.at("difference_category").get<EditCategory>();
    if (j.contains("judge1_pass")) w.judge1_pass = j.at("judge1_pass").get<bool>();
    if (j.contains("judge2_pass")) w.judge2_pass = j.at("judge2_pass").get<bool>();
    if (j.contains("sft")) w.sft = j.at("sft").get<SFTRecord>();
}

// ---------------------------------------------------------------------------
// Parsing

bool strict_yes(std::string_view reply) {
    std::string r = lower(trim(reply));
    if (r.rfind("yes", 0) != 0) return false;
    return r.size() == 3 || !std::isalnum(static_cast<unsigned char>(r[3]));
}

std::optional<EditCategory> pick_category(std::string_view text, const std::vector<EditCategory>& priority) {
    std::string hay = lower(text);
    std::set<EditCategory> mentioned;
    for (auto c : kAllCategories) {
        std::string needle = lower(to_string(c));
        for (std::size_t pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos + 1)) {
            bool left_ok = pos == 0 || !is_word_char(hay[pos - 1]);
            std::size_t end = pos + needle.size();
            bool right_ok = end == hay.size() || !is_word_char(hay[end]);
            if (left_ok && right_ok) {
                mentioned.insert(c);
                break;
            }
        }
    }
    for (auto c : priority) {
        if (mentioned.count(c)) return c;
    }
    return std::nullopt;
}

std::optional<std::string> labeled_field(std::string_view reply, std::string_view label) {
    std::string want = lower(label) + ":";
    std::size_t start = 0;
    while (start <= reply.size()) {
        std::size_t eol = reply.find('\n', start);
        std::string_view line = reply.substr(start, eol == std::string_view::npos ? std::string_view::npos : eol - start);
        std::string_view t = trim(line);
        // tolerate markdown emphasis around the label, e.g. "**Category:**"
        while (!t.empty() && (t.front() == '*' || t.front() == '-')) t.remove_prefix(1);
        t = trim(t);
        if (t.size() >= want.size() && lower(t.substr(0, want.size())) == want) {
            std::string_view value = t.substr(want.size());
            while (!value.empty() && value.front() == '*') value.remove_prefix(1);
            return std::string(trim(value));
        }
        if (eol == std::string_view::npos) break;
        start = eol + 1;
    }
    return std::nullopt;
}

std::optional<QaPair> parse_qa(std::string_view reply) {
    std::size_t q = reply.find("Q:");
    if (q == std::string_view::npos) return std::nullopt;
    std::size_t a = reply.find("A:", q + 2);
    if (a == std::string_view::npos) return std::nullopt;
    QaPair out{std::string(trim(reply.substr(q + 2, a - q - 2))), std::string(trim(reply.substr(a + 2)))};
    if (out.question.empty() || out.answer.empty()) return std::nullopt;
    return out;
}

// ---------------------------------------------------------------------------
// Stages

namespace {

std::string ask_vision(const StageContext& ctx, providers::ChatProvider& provider, std::vector<ImageRef> images,
                       const std::string& prompt, PromptRole role) {
    return providers::chat_vision(provider, ctx.store, {ChatMessage::user(std::move(images), prompt)},
                                  std::string(to_string(role)))
        .text;
}

std::string ask_text(providers::ChatProvider& provider, const std::string& prompt, PromptRole role) {
    return providers::chat_text(provider, {ChatMessage::user(prompt)}, std::string(to_string(role))).text;
}

bool says_no_difference(std::string_view difference) {
    std::string d = normalize_text(difference);
    for (std::string_view p : {"no difference", "no detectable difference", "no visible difference",
                               "there is no difference", "none", "identical", "the captions are identical"}) {
        if (d.rfind(p, 0) == 0) return true;
    }
    return d.empty();
}

}  // namespace

FilterResult stage_filter(const StageContext& ctx, const SourceSample& sample) {
    std::string prompt = ctx.prompts.render(PromptRole::FilterEditable, {{"caption", sample.caption}});
    std::string reply = ask_vision(ctx, *ctx.providers.vision, {sample.image_ref}, prompt, PromptRole::FilterEditable);
    return {strict_yes(reply), reply};
}

EditPlan stage_plan(const StageContext& ctx, const SourceSample& sample) {
    std::string prompt =
        ctx.prompts.render(PromptRole::EditInstruction, {{"caption", sample.caption}, {"categories", category_list()}});
    std::string reply;
    std::optional<EditCategory> category;
    for (int attempt = 0; attempt < 2 && !category; ++attempt) {
        reply = ask_vision(ctx, *ctx.providers.vision, {sample.image_ref}, attempt == 0 ? prompt : clarify(prompt),
                           PromptRole::EditInstruction);
        std::string field = labeled_field(reply, "category").value_or(reply);
        category = pick_category(field, ctx.config.category_priority);
    }
    if (!category) throw UnparseableCategory(reply);
    std::string instruction = labeled_field(reply, "instruction").value_or("");
    if (blank(instruction)) throw StageDrop("missing-instruction", reply);
    return EditPlan{sample.id, *category, instruction};
}

EditedPair stage_edit(const StageContext& ctx, const SourceSample& sample, const EditPlan& plan) {
    if (!ctx.store.exists(sample.image_ref)) throw StageDrop("missing-image", sample.image_ref.path);
    ImageRef edited_ref;
    try {
        edited_ref = providers::edit_image(*ctx.providers.editor, ctx.store, sample.image_ref, plan.instruction);
    } catch (const providers::EditRefused& e) {
        throw StageDrop("edit-refused", e.provider_message());
    }
    std::string original = ctx.store.read(sample.image_ref);
    std::string edited = ctx.store.read(edited_ref);
    if (original == edited) throw StageDrop("no-op-edit", "editor returned the original bytes");
    EditedPair pair;
    pair.pair_id = make_pair_id(original, edited, plan.instruction);
    pair.original_ref = sample.image_ref;
    pair.edited_ref = edited_ref;
    pair.plan = plan;
    return pair;
}

bool stage_simfilter(const StageContext& ctx, EditedPair& pair) {
    auto& emb = *ctx.providers.embedder;
    std::size_t dim = ctx.providers.embed_dimension;
    std::vector<double> a = providers::embed_image(emb, ctx.store, pair.original_ref, dim);
    std::vector<double> b = providers::embed_image(emb, ctx.store, pair.edited_ref, dim);
    double s = sim::cosine(a, b);
    pair.similarity = s;
    return sim::gate(s, sim::GateKind::Dataset, {ctx.config.dataset_sim_threshold, 0.95});
}

std::string stage_caption_complete(const StageContext& ctx, const EditedPair& pair, const SourceSample& sample) {
    std::string prompt = ctx.prompts.render(PromptRole::OriginalDescription,
                                            {{"caption", sample.caption}, {"instruction", pair.plan.instruction}});
    std::string reply =
        ask_vision(ctx, *ctx.providers.vision, {pair.original_ref}, prompt, PromptRole::OriginalDescription);
    if (blank(reply)) throw StageDrop("empty-reply", "original caption completion");
    return std::string(trim(reply));
}

EditedCaption stage_caption_edited(const StageContext& ctx, const EditedPair& pair,
                                   const std::string& original_complete) {
    std::string prompt = ctx.prompts.render(
        PromptRole::EditedDescription,
        {{"original_caption", original_complete},
         {"category", std::string(to_string(pair.plan.category))},
         {"category_description", std::string(category_description(pair.plan.category))},
         {"instruction", pair.plan.instruction}});
    std::string reply = ask_vision(ctx, *ctx.providers.vision, {pair.original_ref, pair.edited_ref}, prompt,
                                   PromptRole::EditedDescription);
    if (blank(reply)) throw StageDrop("empty-reply", "edited caption");
    std::string text(trim(reply));
    return {text, text == original_complete};
}

DifferenceResult stage_difference(const StageContext& ctx, const std::string& original_complete,
                                  const std::string& edited_caption) {
    std::string prompt = ctx.prompts.render(
        PromptRole::DifferenceDescription,
        {{"original_caption", original_complete}, {"edited_caption", edited_caption}, {"categories", category_list()}});
    std::string reply;
    for (int attempt = 0; attempt < 2; ++attempt) {
        reply = ask_text(*ctx.providers.text, attempt == 0 ? prompt : clarify(prompt), PromptRole::DifferenceDescription);
        auto diff_field = labeled_field(reply, "difference");
        std::string_view first_line = trim(std::string_view(reply).substr(0, reply.find('\n')));
        std::string difference = diff_field ? *diff_field : std::string(first_line);
        if (says_no_difference(difference)) throw StageDrop("no-detectable-difference", reply);
        auto cat_field = labeled_field(reply, "category");
        if (cat_field) {
            if (auto category = pick_category(*cat_field, ctx.config.category_priority)) {
                return {difference, *category};
            }
        }
    }
    throw UnparseableCategory(reply);
}

JudgeResult stage_judges(const StageContext& ctx, const EditedPair& pair, const CaptionSet& captions) {
    SlotMap slots{{"original_caption", captions.original_complete},
                  {"edited_caption", captions.edited},
                  {"difference", captions.difference}};
    std::vector<ImageRef> images{pair.original_ref, pair.edited_ref};
    std::string r1 = ask_vision(ctx, *ctx.providers.judge1, images, ctx.prompts.render(PromptRole::Judge1, slots),
                                PromptRole::Judge1);
    std::string r2 = ask_vision(ctx, *ctx.providers.judge2, images, ctx.prompts.render(PromptRole::Judge2, slots),
                                PromptRole::Judge2);
    return {strict_yes(r1), strict_yes(r2)};
}

SFTRecord stage_sft(const StageContext& ctx, const CaptionSet& captions) {
    std::string prompt = ctx.prompts.render(
        PromptRole::SFTData,
        {{"difference", captions.difference}, {"category", std::string(to_string(captions.difference_category))}});
    std::string reply;
    for (int attempt = 0; attempt < 2; ++attempt) {
        reply = ask_text(*ctx.providers.text, attempt == 0 ? prompt : clarify(prompt), PromptRole::SFTData);
        if (auto qa = parse_qa(reply)) {
            return SFTRecord{captions.pair_id, qa->question, qa->answer, captions.difference_category};
        }
    }
    throw StageDrop("unparseable-qa", reply);
}

WorkItem apply_stage(const StageContext& ctx, Stage stage, WorkItem item) {
    auto need = [&](bool ok, const char* what) {
        if (!ok) throw StageDrop("missing-upstream", what);
    };
    switch (stage) {
        case Stage::Filter: {
            FilterResult r = stage_filter(ctx, item.sample);
            item.filter_rationale = r.rationale;
            if (!r.keep) throw StageDrop("filter-rejected", r.rationale);
            break;
        }
        case Stage::Plan:
            item.plan = stage_plan(ctx, item.sample);
            break;
        case Stage::Edit:
            need(item.plan.has_value(), "plan");
            item.pair = stage_edit(ctx, item.sample, *item.plan);
            break;
        case Stage::SimFilter: {
            need(item.pair.has_value(), "pair");
            bool keep = stage_simfilter(ctx, *item.pair);
            if (!keep) {
                throw StageDrop("below-similarity-threshold", std::to_string(*item.pair->similarity), json(item));
            }
            break;
        }
        case Stage::CaptionComplete:
            need(item.pair.has_value(), "pair");
            item.original_complete = stage_caption_complete(ctx, *item.pair, item.sample);
            break;
        case Stage::CaptionEdited: {
            need(item.pair.has_value(), "pair");
            EditedCaption e = stage_caption_edited(ctx, *item.pair, item.original_complete);
            item.edited_caption = e.text;
            item.suspect = e.suspect;
            break;
        }
        case Stage::Difference: {
            DifferenceResult d = stage_difference(ctx, item.original_complete, item.edited_caption);
            item.difference = d.difference;
            item.difference_category = d.category;
            break;
        }
        case Stage::Judges: {
            need(item.pair.has_value() && !item.difference.empty(), "difference");
            JudgeResult r = stage_judges(ctx, *item.pair, item.caption_set());
            item.judge1_pass = r.judge1;
            item.judge2_pass = r.judge2;
            if (!r.judge1 || !r.judge2) {
                throw StageDrop("judge-failed", !r.judge2 ? (!r.judge1 ? "both" : "judge2") : "judge1", json(item));
            }
            break;
        }
        case Stage::SFT:
            item.sft = stage_sft(ctx, item.caption_set());
            break;
    }
    return item;
}

ItemOutcome run_item(const StageContext& ctx, WorkItem item, Stage from) {
    ItemOutcome out;
    for (Stage s : kAllStages) {
        if (stage_index(s) < stage_index(from)) continue;
        out.last_stage = s;
        try {
            item = apply_stage(ctx, s, std::move(item));
        } catch (const StageDrop& d) {
            out.status = EntryStatus::Dropped;
            out.reason = d.reason();
            out.detail = d.detail();
            out.item = d.payload().is_null() ? item : d.payload().get<WorkItem>();
            return out;
        } catch (const providers::ProviderError& e) {
            out.status = EntryStatus::Deferred;
            out.reason = "provider-error";
            out.detail = e.what();
            out.item = item;
            return out;
        }
    }
    out.status = EntryStatus::Kept;
    out.item = std::move(item);
    return out;
}

// ---------------------------------------------------------------------------
// Manifest

std::size_t StageCounts::dropped_total() const {
    std::size_t n = 0;
    for (const auto& [_, c] : dropped) n += c;
    return n;
}

const StageCounts* Manifest::find(Stage s) const {
    for (const auto& c : stages) {
        if (c.stage == s) return &c;
    }
    return nullptr;
}

json to_json(const Manifest& m) {
    json stages = json::array();
    for (const auto& c : m.stages) {
        stages.push_back(json{{"stage", std::string(to_string(c.stage))},
                              {"input", c.input},
                              {"kept", c.kept},
                              {"deferred", c.deferred},
                              {"suspect", c.suspect},
                              {"dropped", c.dropped}});
    }
    return json{{"v", kSchemaVersion},
                {"seed", m.seed},
                {"complete", m.complete},
                {"stages", std::move(stages)},
                {"outputs", m.outputs}};
}

Manifest manifest_from_json(const json& j) {
    Manifest m;
    m.seed = j.value("seed", std::uint64_t{0});
    m.complete = j.value("complete", false);
    for (const auto& s : j.at("stages")) {
        StageCounts c;
        c.stage = parse_stage(s.at("stage").get<std::string>()).value();
        c.input = s.at("input").get<std::size_t>();
        c.kept = s.at("kept").get<std::size_t>();
        c.deferred = s.value("deferred", std::size_t{0});
        c.suspect = s.value("suspect", std::size_t{0});
        c.dropped = s.value("dropped", std::map<std::string, std::size_t>{});
        m.stages.push_back(std::move(c));
    }
    m.outputs = j.value("outputs", std::map<std::string, std::string>{});
    return m;
}

// ---------------------------------------------------------------------------
// Run

namespace {

fs::path checkpoint_path(const fs::path& out_dir, Stage s) {
    return out_dir / "checkpoints" / (std::string(to_string(s)) + ".json");
}

struct DropRow {
    std::string id;
    std::string stage;
    std::string status;
    std::string reason;
    std::string detail;
};

}  // namespace

Manifest run(const PipelineConfig& cfg, Providers& prov, const std::vector<SourceSample>& samples,
             const fs::path& out_dir, const RunOptions& options) {
    validate(cfg);
    PromptRegistry prompts = PromptRegistry::defaults();
    if (cfg.prompts_dir) prompts.load_dir(*cfg.prompts_dir);
    ContentStore store(cfg.store_dir);
    StageContext ctx{cfg, prov, store, prompts};

    {
        std::set<std::string> ids;
        for (const auto& s : samples) {
            validate(s);
            if (!ids.insert(s.id).second) throw ConfigError("duplicate sample id " + s.id);
        }
    }

    fs::create_directories(out_dir / "checkpoints");
    if (options.from) {
        for (Stage s : kAllStages) {
            if (stage_index(s) >= stage_index(*options.from)) fs::remove(checkpoint_path(out_dir, s));
        }
    }
    write_file_atomic(out_dir / "run.json",
                      json{{"v", kSchemaVersion}, {"store_dir", fs::absolute(cfg.store_dir).string()},
                           {"config", config_to_json(cfg)}}
                              .dump(2) +
                          "\n");

    Manifest manifest;
    manifest.seed = cfg.seed;

    std::vector<WorkItem> current;
    current.reserve(samples.size());
    for (const auto& s : samples) {
        WorkItem w;
        w.sample = s;
        current.push_back(std::move(w));
    }

    std::vector<DropRow> drops;
    std::vector<EditPlan> plans;
    std::vector<EditedPair> pairs;
    std::vector<CaptionSet> captions;
    std::vector<SFTRecord> sft;

    for (Stage stage : kAllStages) {
        fs::path cp_path = checkpoint_path(out_dir, stage);
        std::optional<StageCheckpoint> prior = load_checkpoint(cp_path);

        StageCheckpoint cp;
        cp.stage = std::string(to_string(stage));
        cp.entries.resize(current.size());
        std::vector<std::size_t> todo;
        for (std::size_t i = 0; i < current.size(); ++i) {
            const std::string& id = current[i].sample.id;
            const StageEntry* old = prior ? prior->find(id) : nullptr;
            if (old != nullptr && old->status != EntryStatus::Deferred) {
                cp.entries[i] = *old;
            } else {
                todo.push_back(i);
            }
        }

        detail::parallel_for(todo.size(), cfg.max_parallel, [&](std::size_t k) {
            std::size_t i = todo[k];
            StageEntry e;
            e.id = current[i].sample.id;
            try {
                e.payload = json(apply_stage(ctx, stage, current[i]));
                e.status = EntryStatus::Kept;
            } catch (const StageDrop& d) {
                e.status = EntryStatus::Dropped;
                e.reason = d.reason();
                e.detail = d.detail();
                e.payload = d.payload();
            } catch (const providers::PreconditionError& p) {
                e.status = EntryStatus::Dropped;
                e.reason = "precondition";
                e.detail = p.what();
            } catch (const providers::ProviderError& p) {
                e.status = EntryStatus::Deferred;
                e.reason = "provider-error";
                e.detail = p.what();
            } catch (const DecodeError& p) {
                e.status = EntryStatus::Deferred;
                e.reason = "decode-error";
                e.detail = p.what();
            }
            cp.entries[i] = std::move(e);
        });

        cp.manifest_digest = payload_digest(cp.entries);
        save_checkpoint(cp_path, cp);

        StageCounts counts;
        counts.stage = stage;
        counts.input = current.size();
        std::vector<WorkItem> next;
        for (const auto& e : cp.entries) {
            switch (e.status) {
                case EntryStatus::Kept: {
                    WorkItem w = e.payload.get<WorkItem>();
                    if (w.suspect && stage == Stage::CaptionEdited) ++counts.suspect;
                    next.push_back(std::move(w));
                    ++counts.kept;
                    break;
                }
                case EntryStatus::Dropped:
                    ++counts.dropped[e.reason];
                    drops.push_back({e.id, cp.stage, "dropped", e.reason, e.detail});
                    break;
                case EntryStatus::Deferred:
                    ++counts.deferred;
                    drops.push_back({e.id, cp.stage, "deferred", e.reason, e.detail});
                    break;
            }
            if (stage == Stage::Judges && !e.payload.is_null()) {
                captions.push_back(e.payload.get<WorkItem>().caption_set());
            }
        }
        if (stage == Stage::Plan) {
            for (const auto& w : next) plans.push_back(*w.plan);
        }
        if (stage == Stage::SimFilter) {
            for (const auto& w : next) pairs.push_back(*w.pair);
        }
        if (stage == Stage::SFT) {
            for (const auto& w : next) sft.push_back(*w.sft);
        }
        manifest.stages.push_back(std::move(counts));
        current = std::move(next);

        if (options.stop_after && *options.stop_after == stage) {
            write_file_atomic(out_dir / "manifest.partial.json", to_json(manifest).dump(2) + "\n");
            return manifest;
        }
    }

    auto emit = [&](const std::string& name, const std::string& content) {
        write_file_atomic(out_dir / name, content);
        manifest.outputs[name] = sha256_hex(content);
    };
    emit("plans.jsonl", to_jsonl(plans));
    emit("pairs.jsonl", to_jsonl(pairs));
    emit("captions.jsonl", to_jsonl(captions));
    emit("sft.jsonl", to_jsonl(sft));
    std::string drop_lines;
    for (const auto& d : drops) {
        drop_lines += json{{"id", d.id}, {"stage", d.stage}, {"status", d.status}, {"reason", d.reason},
                           {"detail", d.detail}}
                          .dump();
        drop_lines += '\n';
    }
    emit("drops.jsonl", drop_lines);
    manifest.complete = true;
    write_file_atomic(out_dir / "manifest.json", to_json(manifest).dump(2) + "\n");
    fs::remove(out_dir / "manifest.partial.json");
    return manifest;
}

}  // namespace medforge::pipeline
