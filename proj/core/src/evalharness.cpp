#include "medforge/evalharness.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <set>

#include <fmt/format.h>

#include "medforge/prompts.hpp"
#include "parallel.hpp"

namespace medforge::eval {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::string_view kDefaultLayout =
    "The first image is the original and the second image is an edited version of it.\n"
    "{question}\n"
    "A. {option_a}\n"
    "B. {option_b}\n"
    "C. {option_c}\n"
    "D. {option_d}\n"
    "Answer with the letter of the correct option.";

std::int64_t now_ms() {
    using namespace std::chrono;
    return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

bool alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

}  // namespace

ModelConfig model_config_from_json(const json& j, const fs::path& base_dir) {
    ModelConfig cfg;
    try {
        cfg.provider = j.at("provider").get<providers::ProviderConfig>();
        cfg.label = j.value("label", cfg.provider.model.empty() ? std::string("model") : cfg.provider.model);
        fs::path store = j.value("store_dir", std::string("store"));
        cfg.store_dir = store.is_absolute() || base_dir.empty() ? store : base_dir / store;
        if (j.contains("eval_template")) cfg.eval_template = j.at("eval_template").get<std::string>();
        cfg.max_parallel = j.value("max_parallel", cfg.max_parallel);
        cfg.seed = j.value("seed", cfg.seed);
    } catch (const json::exception& e) {
        throw ScoreError(std::string("model config: ") + e.what());
    } catch (const providers::PreconditionError& e) {
        throw ScoreError(std::string("model config: ") + e.what());
    }
    if (cfg.max_parallel < 1) throw ScoreError("model config: max_parallel must be positive");
    return cfg;
}

std::string render_question(const BenchmarkItem& item, const std::optional<std::string>& tmpl) {
    PromptTemplate t{PromptRole::BenchQuestion, tmpl ? *tmpl : std::string(kDefaultLayout)};
    return render(t, {{"question", item.question},
                      {"option_a", item.options[0]},
                      {"option_b", item.options[1]},
                      {"option_c", item.options[2]},
                      {"option_d", item.options[3]}});
}

std::optional<int> parse_choice(std::string_view raw, const std::array<std::string, kOptionCount>& options) {
    std::size_t b = raw.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return std::nullopt;
    std::string_view t = raw.substr(b, raw.find_last_not_of(" \t\r\n") - b + 1);
    if (t.size() == 1 && t[0] >= 'a' && t[0] <= 'd') return t[0] - 'a';

    std::set<int> letters;
    std::set<int> marked;
    for (std::size_t i = 0; i < raw.size(); ++i) {
        char c = raw[i];
        if (c < 'A' || c > 'D') continue;
        bool left = i == 0 || !alnum(raw[i - 1]);
        bool right = i + 1 == raw.size() || !alnum(raw[i + 1]);
        if (!left || !right) continue;
        letters.insert(c - 'A');
        bool paren = i > 0 && raw[i - 1] == '(' && i + 1 < raw.size() && raw[i + 1] == ')';
        bool dot = i + 1 < raw.size() && raw[i + 1] == '.';
        if (paren || dot) marked.insert(c - 'A');
    }
    if (letters.size() == 1) return *letters.begin();
    if (marked.size() == 1) return *marked.begin();

    std::string hay = normalize_text(raw);
    std::optional<int> hit;
    int hits = 0;
    for (std::size_t k = 0; k < kOptionCount; ++k) {
        std::string needle = normalize_text(options[k]);
        if (!needle.empty() && hay.find(needle) != std::string::npos) {
            hit = static_cast<int>(k);
            ++hits;
        }
    }
    if (hits == 1) return hit;
    return std::nullopt;
}

void to_json(json& j, const RunRecord& r) {
    j = json{{"v", kSchemaVersion},
             {"item_id", r.item_id},
             {"model", r.model},
             {"category", r.category},
             {"split", std::string(to_string(r.split))},
             {"raw_response", r.raw_response},
             {"parsed_index", r.parsed_index ? json(*r.parsed_index) : json(nullptr)},
             {"correct", r.correct},
             {"timestamp_ms", r.timestamp_ms}};
    if (!r.parsed_index) j["unparseable_reason"] = r.unparseable_reason;
}

void from_json(const json& j, RunRecord& r) {
    r.item_id = j.at("item_id").get<std::string>();
    r.model = j.value("model", "");
    r.category = j.at("category").get<EditCategory>();
    r.split = split_from_string(j.value("split", "Synthetic"));
    r.raw_response = j.value("raw_response", "");
    const json& p = j.at("parsed_index");
    r.parsed_index = p.is_null() ? std::nullopt : std::optional<int>(p.get<int>());
    if (r.parsed_index && (*r.parsed_index < 0 || *r.parsed_index >= static_cast<int>(kOptionCount))) {
        throw RecordError("parsed_index out of range for " + r.item_id);
    }
    r.unparseable_reason = j.value("unparseable_reason", "");
    r.correct = j.value("correct", false);
    r.timestamp_ms = j.value("timestamp_ms", std::int64_t{0});
}

RunRecord ask(providers::ChatProvider& chat, const ContentStore& store, const BenchmarkItem& item,
              const bench::AnswerKey& key, const ModelConfig& cfg) {
    auto it = key.answers.find(item.item_id);
    if (it == key.answers.end()) throw ScoreError("item " + item.item_id + " is not in the key");
    RunRecord r;
    r.item_id = item.item_id;
    r.model = cfg.label;
    r.category = item.category;
    r.split = item.split;
    std::string prompt = render_question(item, cfg.eval_template);
    std::vector<ImageRef> images;
    if (!item.original_ref.empty()) images.push_back(item.original_ref);
    if (!item.edited_ref.empty()) images.push_back(item.edited_ref);
    try {
        auto msg = images.empty() ? providers::ChatMessage::user(prompt)
                                  : providers::ChatMessage::user(images, prompt);
        r.raw_response = providers::chat_vision(chat, store, {msg}, "MultipleChoice").text;
        r.parsed_index = parse_choice(r.raw_response, item.options);
        if (!r.parsed_index) r.unparseable_reason = "no-choice";
    } catch (const providers::ProviderError& e) {
        r.unparseable_reason = "transport";
        r.raw_response = e.what();
    }
    r.correct = r.parsed_index && *r.parsed_index == it->second;
    r.timestamp_ms = now_ms();
    return r;
}

std::vector<RunRecord> run_eval(providers::ChatProvider& chat, const ContentStore& store,
                                const std::vector<BenchmarkItem>& items, const bench::AnswerKey& key,
                                const ModelConfig& cfg) {
    std::vector<RunRecord> out(items.size());
    detail::parallel_for(items.size(), cfg.max_parallel,
                         [&](std::size_t i) { out[i] = ask(chat, store, items[i], key, cfg); });
    return out;
}

// ---------------------------------------------------------------------------

std::optional<double> Tally::accuracy() const {
    if (count == 0) return std::nullopt;
    return 100.0 * static_cast<double>(correct) / static_cast<double>(count);
}

double mean_of_present(std::span<const std::optional<double>> cells) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& c : cells) {
        if (c) {
            sum += *c;
            ++n;
        }
    }
    if (n == 0) throw ScoreError("no cells present to average");
    return sum / static_cast<double>(n);
}

double ScoreTable::macro_average() const {
    std::array<std::optional<double>, kCategoryCount> cells;
    for (std::size_t i = 0; i < kCategoryCount; ++i) cells[i] = categories[i].accuracy();
    return mean_of_present(cells);
}

ScoreTable score(const std::vector<RunRecord>& run, const bench::AnswerKey& key) {
    ScoreTable t;
    std::set<std::string> seen;
    for (const auto& r : run) {
        auto it = key.answers.find(r.item_id);
        if (it == key.answers.end()) throw ScoreError("run item " + r.item_id + " is absent from the key");
        if (!seen.insert(r.item_id).second) throw ScoreError("run item " + r.item_id + " appears twice");
        if (t.model.empty()) t.model = r.model;
        bool correct = r.parsed_index && *r.parsed_index == it->second;
        Tally& c = t.categories[category_index(r.category)];
        Tally& s = t.splits[r.split];
        for (Tally* x : {&c, &s, &t.overall}) {
            ++x->count;
            x->correct += correct ? 1 : 0;
        }
    }
    if (seen.size() != key.answers.size()) {
        throw ScoreError("run covers " + std::to_string(seen.size()) + " of " + std::to_string(key.answers.size()) +
                         " key items");
    }
    for (auto c : kAllCategories) {
        auto it = key.counts.find(c);
        std::size_t want = it == key.counts.end() ? 0 : it->second;
        if (t.categories[category_index(c)].count != want) {
            throw ScoreError(fmt::format("run has {} {} items, key has {}", t.categories[category_index(c)].count,
                                         to_string(c), want));
        }
    }
    return t;
}

json to_json(const ScoreTable& t) {
    json cats = json::object();
    for (auto c : kAllCategories) {
        const Tally& x = t.categories[category_index(c)];
        auto acc = x.accuracy();
        cats[std::string(to_string(c))] = {
            {"correct", x.correct}, {"count", x.count}, {"accuracy", acc ? json(*acc) : json(nullptr)}};
    }
    json splits = json::object();
    for (const auto& [s, x] : t.splits) {
        splits[std::string(to_string(s))] = {{"correct", x.correct}, {"count", x.count}, {"accuracy", *x.accuracy()}};
    }
    return json{{"model", t.model},
                {"categories", cats},
                {"splits", splits},
                {"overall", {{"correct", t.overall.correct}, {"count", t.overall.count}}},
                {"macro_average", t.overall.count ? json(t.macro_average()) : json(nullptr)}};
}

namespace {

void sort_tables(std::vector<ScoreTable>& tables) {
    std::stable_sort(tables.begin(), tables.end(), [](const ScoreTable& a, const ScoreTable& b) {
        return a.macro_average() > b.macro_average();
    });
}

}  // namespace

std::string report_markdown(std::vector<ScoreTable> tables) {
    sort_tables(tables);
    std::string out = "| Model |";
    std::string rule = "|---|";
    for (auto c : kAllCategories) {
        out += fmt::format(" {} |", short_label(c));
        rule += "---:|";
    }
    out += " Avg |\n" + rule + "---:|\n";
    for (const auto& t : tables) {
        out += fmt::format("| {} |", t.model);
        for (auto c : kAllCategories) {
            auto acc = t.category_accuracy(c);
            out += acc ? fmt::format(" {:.2f} |", *acc) : std::string(" -- |");
        }
        out += fmt::format(" {:.2f} |\n", t.macro_average());
    }
    bool any_split = std::any_of(tables.begin(), tables.end(), [](const ScoreTable& t) { return !t.splits.empty(); });
    if (any_split) {
        out += "\n| Model | Synthetic | Real | Overall |\n|---|---:|---:|---:|\n";
        for (const auto& t : tables) {
            auto cell = [&](Split s) {
                auto it = t.splits.find(s);
                return it == t.splits.end() ? std::string("--") : fmt::format("{:.2f}", *it->second.accuracy());
            };
            out += fmt::format("| {} | {} | {} | {:.2f} |\n", t.model, cell(Split::Synthetic), cell(Split::Real),
                               t.overall.accuracy().value_or(0.0));
        }
    }
    return out;
}

std::string report_csv(std::vector<ScoreTable> tables) {
    sort_tables(tables);
    std::string out = "model";
    for (auto c : kAllCategories) out += fmt::format(",{}", to_string(c));
    out += ",Avg,Synthetic,Real\n";
    for (const auto& t : tables) {
        out += t.model;
        for (auto c : kAllCategories) {
            auto acc = t.category_accuracy(c);
            out += acc ? fmt::format(",{}", *acc) : std::string(",");
        }
        out += fmt::format(",{}", t.macro_average());
        for (Split s : {Split::Synthetic, Split::Real}) {
            auto it = t.splits.find(s);
            out += it == t.splits.end() ? std::string(",") : fmt::format(",{}", *it->second.accuracy());
        }
        out += "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------

const std::vector<std::string>& default_external_columns() {
    static const std::vector<std::string> cols{"Pope", "Coarse", "Fine", "Visual_Sim", "Visual_Corr", "Count", "MMVP"};
    return cols;
}

double external_average(const ExternalRow& row, const std::vector<std::string>& columns) {
    std::vector<std::optional<double>> cells;
    for (const auto& c : columns) {
        auto it = row.cells.find(c);
        cells.push_back(it == row.cells.end() ? std::nullopt : it->second);
    }
    try {
        return mean_of_present(cells);
    } catch (const ScoreError&) {
        throw ScoreError("row \"" + row.model + "\" has no cells to average");
    }
}

ExternalTable external_table_from_json(const json& j) {
    ExternalTable t;
    try {
        t.columns = j.contains("columns") ? j.at("columns").get<std::vector<std::string>>() : default_external_columns();
        std::set<std::string> averaged(t.columns.begin(), t.columns.end());
        std::set<std::string> extra;
        for (const auto& r : j.at("rows")) {
            ExternalRow row;
            row.model = r.at("model").get<std::string>();
            for (const auto& [name, v] : r.items()) {
                if (name == "model") continue;
                if (v.is_number()) {
                    row.cells[name] = v.get<double>();
                } else if (v.is_null() || (v.is_string() && (v == "--" || v == "-" || v == "" || v == "\xE2\x80\x94"))) {
                    row.cells[name] = std::nullopt;
                } else {
                    throw ScoreError("row \"" + row.model + "\": cell " + name + " is not a number");
                }
                if (!averaged.count(name)) extra.insert(name);
            }
            t.rows.push_back(std::move(row));
        }
        t.extra_columns.assign(extra.begin(), extra.end());
    } catch (const json::exception& e) {
        throw ScoreError(std::string("scores file: ") + e.what());
    }
    if (t.rows.empty()) throw ScoreError("scores file has no rows");
    return t;
}

std::string external_markdown(const ExternalTable& t) {
    std::string out = "| Model |";
    std::string rule = "|---|";
    for (const auto& c : t.columns) {
        out += " " + c + " |";
        rule += "---:|";
    }
    out += " Ave |";
    rule += "---:|";
    for (const auto& c : t.extra_columns) {
        out += " " + c + " |";
        rule += "---:|";
    }
    out += "\n" + rule + "\n";
    auto cell = [](const ExternalRow& r, const std::string& c) {
        auto it = r.cells.find(c);
        return it == r.cells.end() || !it->second ? std::string("--") : fmt::format("{:.2f}", *it->second);
    };
    for (const auto& r : t.rows) {
        out += "| " + r.model + " |";
        for (const auto& c : t.columns) out += " " + cell(r, c) + " |";
        out += fmt::format(" {:.2f} |", external_average(r, t.columns));
        for (const auto& c : t.extra_columns) out += " " + cell(r, c) + " |";
        out += "\n";
    }
    return out;
}

}  // namespace medforge::eval
