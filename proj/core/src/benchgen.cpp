#include "medforge/benchgen.hpp"

#include <algorithm>
#include <cctype>
#include <limits>
#include <random>
#include <set>

#include "medforge/digest.hpp"
#include "medforge/image.hpp"
#include "medforge/mocks.hpp"
#include "medforge/simfilter.hpp"
#include "parallel.hpp"

namespace medforge::bench {

namespace fs = std::filesystem;
using nlohmann::json;
using providers::ChatMessage;
using providers::ChatProvider;

void validate(const BenchConfig& cfg) {
    if (!(cfg.benchmark_sim_threshold > -1.0 && cfg.benchmark_sim_threshold < 1.0)) {
        throw AssemblyError("benchmark_sim_threshold must be in (-1, 1)");
    }
    if (cfg.rephrasings_per_pair < 1) throw AssemblyError("rephrasings_per_pair must be >= 1");
    if (cfg.distractors_per_question != 3) throw AssemblyError("distractors_per_question must be 3");
    if (cfg.items_per_pair < 1 || cfg.items_per_pair > cfg.rephrasings_per_pair) {
        throw AssemblyError("items_per_pair must be in [1, rephrasings_per_pair]");
    }
    if (cfg.target_total_synthetic < 0) throw AssemblyError("target_total_synthetic must be >= 0");
    if (!cfg.category_quota.empty()) {
        if (cfg.category_quota.size() != kCategoryCount) throw AssemblyError("category_quota needs 11 entries");
        int sum = 0;
        for (int q : cfg.category_quota) {
            if (q < 0) throw AssemblyError("category_quota entries must be >= 0");
            sum += q;
        }
        if (sum != cfg.target_total_synthetic) {
            throw AssemblyError("category_quota sums to " + std::to_string(sum) + ", target_total_synthetic is " +
                                std::to_string(cfg.target_total_synthetic));
        }
    }
    if (cfg.max_parallel < 1) throw AssemblyError("max_parallel must be positive");
}

BenchConfig bench_config_from_json(const json& j, const fs::path& base_dir) {
    auto resolve = [&](const fs::path& p) { return p.is_absolute() || base_dir.empty() ? p : base_dir / p; };
    BenchConfig cfg;
    try {
        if (j.contains("pipeline_dir")) {
            fs::path dir = resolve(j.at("pipeline_dir").get<std::string>());
            cfg.pairs_path = dir / "pairs.jsonl";
            cfg.captions_path = dir / "captions.jsonl";
            cfg.sft_path = dir / "sft.jsonl";
        }
        if (j.contains("pairs")) cfg.pairs_path = resolve(j.at("pairs").get<std::string>());
        if (j.contains("captions")) cfg.captions_path = resolve(j.at("captions").get<std::string>());
        if (j.contains("sft")) cfg.sft_path = resolve(j.at("sft").get<std::string>());
        if (j.contains("real_pairs_path")) cfg.real_pairs_path = resolve(j.at("real_pairs_path").get<std::string>());
        if (j.contains("prompts_dir")) cfg.prompts_dir = resolve(j.at("prompts_dir").get<std::string>());
        cfg.sft_out_path = j.contains("sft_out") ? resolve(j.at("sft_out").get<std::string>())
                                                 : cfg.sft_path.parent_path() / "sft.filtered.jsonl";
        cfg.benchmark_sim_threshold = j.value("benchmark_sim_threshold", cfg.benchmark_sim_threshold);
        cfg.rephrasings_per_pair = j.value("rephrasings_per_pair", cfg.rephrasings_per_pair);
        cfg.distractors_per_question = j.value("distractors_per_question", cfg.distractors_per_question);
        cfg.items_per_pair = j.value("items_per_pair", cfg.items_per_pair);
        cfg.target_total_synthetic = j.value("target_total_synthetic", cfg.target_total_synthetic);
        if (j.contains("category_quota")) {
            const json& q = j.at("category_quota");
            if (q.is_object()) {
                cfg.category_quota.assign(kCategoryCount, 0);
                for (const auto& [name, n] : q.items()) {
                    cfg.category_quota[category_index(category_from_string(name))] = n.get<int>();
                }
            } else {
                cfg.category_quota = q.get<std::vector<int>>();
            }
        }
        cfg.seed = j.value("seed", cfg.seed);
        cfg.max_parallel = j.value("max_parallel", cfg.max_parallel);
        if (j.contains("text")) {
            cfg.text = j.at("text").get<providers::ProviderConfig>();
        } else {
            cfg.text.kind = "mock";
        }
    } catch (const json::exception& e) {
        throw AssemblyError(std::string("bench config: ") + e.what());
    } catch (const RecordError& e) {
        throw AssemblyError(std::string("bench config: ") + e.what());
    } catch (const providers::PreconditionError& e) {
        throw AssemblyError(std::string("bench config: ") + e.what());
    }
    if (cfg.pairs_path.empty() || cfg.captions_path.empty() || cfg.sft_path.empty()) {
        throw AssemblyError("bench config needs pipeline_dir or pairs/captions/sft paths");
    }
    validate(cfg);
    return cfg;
}

std::vector<int> equal_quota(int total) {
    std::vector<int> q(kCategoryCount, total / static_cast<int>(kCategoryCount));
    int rem = total % static_cast<int>(kCategoryCount);
    for (int i = 0; i < rem; ++i) ++q[static_cast<std::size_t>(i)];
    return q;
}

void to_json(json& j, const RealPair& r) {
    j = json{{"pair_id", r.pair_id},
             {"original_ref", r.original_ref},
             {"edited_ref", r.edited_ref},
             {"similarity", r.similarity},
             {"category", r.category},
             {"original_caption", r.original_caption},
             {"edited_caption", r.edited_caption},
             {"difference", r.difference}};
    if (r.question) j["question"] = *r.question;
}

void from_json(const json& j, RealPair& r) {
    r.original_ref = j.at("original_ref").get<ImageRef>();
    r.edited_ref = j.at("edited_ref").get<ImageRef>();
    r.pair_id = j.value("pair_id", "");
    if (r.pair_id.empty()) r.pair_id = derive_id({"real", r.original_ref.path, r.edited_ref.path});
    r.similarity = j.at("similarity").get<double>();
    r.category = j.at("category").get<EditCategory>();
    r.original_caption = j.value("original_caption", "");
    r.edited_caption = j.value("edited_caption", "");
    r.difference = j.at("difference").get<std::string>();
    if (j.contains("question")) r.question = j.at("question").get<std::string>();
}

std::vector<RealPair> make_mock_real_pairs(const ContentStore& store, providers::ImageEmbedder& embedder,
                                           std::size_t n, std::uint64_t seed) {
    static constexpr std::array<const char*, 11> kChanges = {
        "the cup on the left is missing",       "the jacket is green instead of grey",
        "the sky is cloudy instead of clear",   "the dog sits to the right of the bench",
        "the man is sitting instead of standing", "the bicycle has no front basket",
        "there are three birds instead of two", "only one of the two cars is white",
        "the left tree is taller than the right one", "there is no shadow under the table",
        "all of the windows are lit",
    };
    providers::PixelEditor editor(providers::PixelEditorOptions{seed, {2}, 0.0, 0.0});
    std::vector<RealPair> out;
    for (std::size_t i = 0; i < n; ++i) {
        std::string idx = std::to_string(i);
        std::uint64_t h = derive_seed({"mock-real", std::to_string(seed), idx});
        std::string original = encode_ppm(providers::make_mock_image(h, 32, 32));
        std::string edited = editor.edit(original, "real pair " + idx);
        RealPair r;
        r.original_ref = store.put(original);
        r.edited_ref = store.put(edited);
        r.pair_id = derive_id({"real", r.original_ref.path, r.edited_ref.path});
        auto a = embedder.embed(original);
        auto b = embedder.embed(edited);
        r.similarity = sim::cosine(a, b);
        r.category = kAllCategories[i % kCategoryCount];
        r.original_caption = "A real photograph, number " + idx + ".";
        r.edited_caption = "A near-identical photograph, number " + idx + ".";
        r.difference = std::string("In the second image ") + kChanges[i % kChanges.size()] + ".";
        out.push_back(std::move(r));
    }
    return out;
}

// ---------------------------------------------------------------------------

std::vector<Candidate> select_pairs(const std::vector<EditedPair>& pairs, const std::vector<CaptionSet>& captions,
                                    double threshold) {
    std::map<std::string, const CaptionSet*> by_pair;
    for (const auto& c : captions) by_pair[c.pair_id] = &c;
    std::vector<Candidate> out;
    for (const auto& p : pairs) {
        if (!p.similarity) continue;
        if (!sim::gate(*p.similarity, sim::GateKind::Benchmark, {0.7, threshold})) continue;
        auto it = by_pair.find(p.pair_id);
        if (it == by_pair.end()) continue;
        const CaptionSet& c = *it->second;
        if (!c.judges_passed() || c.difference.empty() || c.edited.empty() || c.original_complete.empty()) continue;
        out.push_back(Candidate{p.pair_id, c.difference_category, Split::Synthetic, *p.similarity, c, std::nullopt,
                                p.original_ref, p.edited_ref});
    }
    std::sort(out.begin(), out.end(), [](const Candidate& a, const Candidate& b) {
        if (a.category != b.category) return category_index(a.category) < category_index(b.category);
        return a.pair_id < b.pair_id;
    });
    return out;
}

namespace {

// Non-empty lines with list markers ("1.", "2)", "-", "*") and wrapping
// quotes removed.
std::vector<std::string> reply_lines(std::string_view reply) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= reply.size()) {
        std::size_t eol = reply.find('\n', start);
        std::string_view line = reply.substr(start, eol == std::string_view::npos ? std::string_view::npos : eol - start);
        std::size_t b = line.find_first_not_of(" \t\r");
        if (b != std::string_view::npos) {
            line = line.substr(b, line.find_last_not_of(" \t\r") - b + 1);
            std::size_t k = 0;
            while (k < line.size() && std::isdigit(static_cast<unsigned char>(line[k]))) ++k;
            if (k > 0 && k < line.size() && (line[k] == '.' || line[k] == ')')) {
                line.remove_prefix(k + 1);
            } else if (line.front() == '-' || line.front() == '*') {
                line.remove_prefix(1);
            }
            while (!line.empty() && line.front() == ' ') line.remove_prefix(1);
            if (line.size() >= 2 && line.front() == '"' && line.back() == '"') line = line.substr(1, line.size() - 2);
            if (!line.empty()) out.emplace_back(line);
        }
        if (eol == std::string_view::npos) break;
        start = eol + 1;
    }
    return out;
}

std::string ask(ChatProvider& chat, const PromptRegistry& prompts, PromptRole role, const SlotMap& slots) {
    std::string prompt = prompts.render(role, slots);
    return providers::chat_text(chat, {ChatMessage::user(prompt)}, std::string(to_string(role))).text;
}

// Bounded draw in [0, n) by rejection, independent of the standard library's
// distribution implementation.
std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t n) {
    std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x = rng();
    while (x >= limit) x = rng();
    return x % n;
}

}  // namespace

RephraseResult rephrase(ChatProvider& chat, const PromptRegistry& prompts, const CaptionSet& captions, int n) {
    if (n < 1) throw std::invalid_argument("rephrase needs n >= 1");
    SlotMap slots{{"difference", captions.difference},
                  {"original_caption", captions.original_complete},
                  {"edited_caption", captions.edited},
                  {"count", std::to_string(n)}};
    RephraseResult out;
    std::vector<std::string> lines = reply_lines(ask(chat, prompts, PromptRole::BenchQuestion, slots));
    std::set<std::string> distinct(lines.begin(), lines.end());
    if (distinct.size() < lines.size() || static_cast<int>(lines.size()) < n) {
        out.regenerated = true;
        auto more = reply_lines(ask(chat, prompts, PromptRole::BenchQuestion, slots));
        lines.insert(lines.end(), more.begin(), more.end());
    }
    std::set<std::string> seen;
    for (auto& q : lines) {
        if (static_cast<int>(out.questions.size()) == n) break;
        if (seen.insert(normalize_text(q)).second) out.questions.push_back(std::move(q));
    }
    out.shortfall = n - static_cast<int>(out.questions.size());
    return out;
}

OptionsResult gen_options(ChatProvider& chat, const PromptRegistry& prompts, const std::string& question,
                          const CaptionSet& captions, int distractors) {
    if (question.find_first_not_of(" \t\r\n") == std::string::npos) throw std::invalid_argument("empty question");
    OptionsResult out;
    auto right = reply_lines(ask(chat, prompts, PromptRole::RightAnswer,
                                 {{"question", question}, {"difference", captions.difference}}));
    if (right.empty()) return out;
    std::string correct = right.front();
    SlotMap slots{{"question", question},
                  {"difference", captions.difference},
                  {"correct", correct},
                  {"count", std::to_string(distractors)}};
    for (int attempt = 0; attempt < 2; ++attempt) {
        if (attempt > 0) ++out.regenerations;
        auto wrong = reply_lines(ask(chat, prompts, PromptRole::WrongAnswer, slots));
        std::set<std::string> seen{normalize_text(correct)};
        std::vector<std::string> picked;
        bool clash = false;
        for (auto& w : wrong) {
            if (!seen.insert(normalize_text(w)).second) {
                clash = true;
                continue;
            }
            if (static_cast<int>(picked.size()) < distractors) picked.push_back(std::move(w));
        }
        if (!clash && static_cast<int>(picked.size()) == distractors) {
            out.options = OptionTexts{correct, std::move(picked)};
            return out;
        }
    }
    return out;
}

std::array<int, kOptionCount> shuffle_order(std::uint64_t seed, std::string_view item_id) {
    std::mt19937_64 rng(derive_seed({"option-shuffle", std::to_string(seed), item_id}));
    std::array<int, kOptionCount> order{0, 1, 2, 3};
    for (std::size_t i = kOptionCount - 1; i > 0; --i) {
        std::size_t j = static_cast<std::size_t>(bounded(rng, i + 1));
        std::swap(order[i], order[j]);
    }
    return order;
}

BenchmarkItem make_item(const Candidate& c, const std::string& question, const OptionTexts& texts,
                        std::uint64_t seed) {
    if (texts.distractors.size() != kOptionCount - 1) throw std::invalid_argument("need exactly 3 distractors");
    BenchmarkItem item;
    item.item_id = derive_id({c.pair_id, question});
    item.pair_id = c.pair_id;
    item.category = c.category;
    item.question = question;
    item.split = c.split;
    item.original_ref = c.original_ref;
    item.edited_ref = c.edited_ref;
    std::array<std::string, kOptionCount> base{texts.correct, texts.distractors[0], texts.distractors[1],
                                              texts.distractors[2]};
    auto order = shuffle_order(seed, item.item_id);
    for (std::size_t pos = 0; pos < kOptionCount; ++pos) {
        item.options[pos] = base[static_cast<std::size_t>(order[pos])];
        if (order[pos] == 0) item.answer_index = static_cast<int>(pos);
    }
    validate(item);
    return item;
}

std::vector<SFTRecord> dedup_against_sft(const std::vector<BenchmarkItem>& items, std::vector<SFTRecord> sft,
                                         std::size_t* removed) {
    std::set<std::string> bench_pairs;
    for (const auto& it : items) bench_pairs.insert(it.pair_id);
    std::size_t before = sft.size();
    std::erase_if(sft, [&](const SFTRecord& r) { return bench_pairs.count(r.pair_id) > 0; });
    if (removed) *removed = before - sft.size();
    return sft;
}

// ---------------------------------------------------------------------------

AnswerKey make_key(const std::vector<BenchmarkItem>& items) {
    AnswerKey k;
    for (const auto& it : items) {
        if (!k.answers.emplace(it.item_id, it.answer_index).second) {
            throw AssemblyError("duplicate item id " + it.item_id);
        }
        ++k.counts[it.category];
        ++k.split_counts[it.split];
    }
    return k;
}

void to_json(json& j, const AnswerKey& k) {
    json counts = json::object();
    for (auto c : kAllCategories) {
        auto it = k.counts.find(c);
        counts[std::string(to_string(c))] = it == k.counts.end() ? 0 : it->second;
    }
    json splits = json::object();
    for (auto s : {Split::Synthetic, Split::Real}) {
        auto it = k.split_counts.find(s);
        splits[std::string(to_string(s))] = it == k.split_counts.end() ? 0 : it->second;
    }
    j = json{{"v", kSchemaVersion}, {"answers", k.answers}, {"counts", counts}, {"split_counts", splits}};
}

void from_json(const json& j, AnswerKey& k) {
    k = AnswerKey{};
    k.answers = j.at("answers").get<std::map<std::string, int>>();
    for (const auto& [name, n] : j.at("counts").items()) {
        auto c = n.get<std::size_t>();
        if (c > 0) k.counts[category_from_string(name)] = c;
    }
    if (j.contains("split_counts")) {
        for (const auto& [name, n] : j.at("split_counts").items()) {
            auto c = n.get<std::size_t>();
            if (c > 0) k.split_counts[split_from_string(name)] = c;
        }
    }
    std::size_t sum = 0;
    for (const auto& [_, n] : k.counts) sum += n;
    if (sum != k.answers.size()) throw RecordError("key counts do not sum to the number of answers");
    for (const auto& [id, idx] : k.answers) {
        if (idx < 0 || idx >= static_cast<int>(kOptionCount)) throw RecordError("answer index out of range for " + id);
    }
}

AnswerKey load_key(const fs::path& path) {
    auto lines = read_lines(path);
    std::string text;
    for (const auto& l : lines) text += l + "\n";
    try {
        return json::parse(text).get<AnswerKey>();
    } catch (const json::exception& e) {
        throw RecordError("key " + path.string() + ": " + e.what());
    }
}

BenchInputs load_inputs(const BenchConfig& cfg) {
    BenchInputs in;
    in.pairs = read_jsonl<EditedPair>(cfg.pairs_path);
    in.captions = read_jsonl<CaptionSet>(cfg.captions_path);
    in.sft = read_jsonl<SFTRecord>(cfg.sft_path);
    if (cfg.real_pairs_path) in.real = read_jsonl<RealPair>(*cfg.real_pairs_path);
    return in;
}

json to_json(const AssemblySummary& s) {
    json counts = json::object();
    for (auto c : kAllCategories) {
        auto it = s.category_counts.find(c);
        counts[std::string(to_string(c))] = it == s.category_counts.end() ? 0 : it->second;
    }
    return json{{"eligible_pairs", s.eligible_pairs},
                {"synthetic_items", s.synthetic_items},
                {"real_items", s.real_items},
                {"total_items", s.synthetic_items + s.real_items},
                {"category_counts", counts},
                {"question_shortfalls", s.question_shortfalls},
                {"dropped_questions", s.dropped_questions},
                {"regenerations", s.regenerations},
                {"deferred_pairs", s.deferred_pairs},
                {"skipped_real", s.skipped_real},
                {"sft_removed", s.sft_removed}};
}

namespace {

struct PairOutcome {
    std::vector<BenchmarkItem> items;
    int shortfall = 0;
    std::size_t dropped = 0;
    std::size_t regenerations = 0;
    bool deferred = false;
};

PairOutcome build_pair(const BenchConfig& cfg, ChatProvider& chat, const PromptRegistry& prompts,
                       const Candidate& c) {
    PairOutcome out;
    try {
        std::vector<std::string> questions;
        if (c.fixed_question) {
            questions.push_back(*c.fixed_question);
        } else {
            RephraseResult r = rephrase(chat, prompts, c.captions, cfg.rephrasings_per_pair);
            out.shortfall = r.shortfall;
            out.regenerations += r.regenerated ? 1 : 0;
            questions = std::move(r.questions);
        }
        // Seeded visiting order over the rephrasings; the first questions
        // that yield valid options become items.
        std::vector<std::size_t> order(questions.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::mt19937_64 rng(derive_seed({"question-pick", std::to_string(cfg.seed), c.pair_id}));
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[static_cast<std::size_t>(bounded(rng, i))]);
        }
        for (std::size_t idx : order) {
            if (static_cast<int>(out.items.size()) == cfg.items_per_pair) break;
            const std::string& q = questions[idx];
            OptionsResult o = gen_options(chat, prompts, q, c.captions, cfg.distractors_per_question);
            out.regenerations += static_cast<std::size_t>(o.regenerations);
            if (!o.options) {
                ++out.dropped;
                continue;
            }
            out.items.push_back(make_item(c, q, *o.options, cfg.seed));
        }
    } catch (const providers::ProviderError&) {
        out.items.clear();
        out.deferred = true;
    }
    return out;
}

}  // namespace

Assembly assemble(const BenchConfig& cfg, ChatProvider& chat, const BenchInputs& inputs, bool strict_count) {
    validate(cfg);
    PromptRegistry prompts = PromptRegistry::defaults();
    if (cfg.prompts_dir) prompts.load_dir(*cfg.prompts_dir);

    Assembly a;
    std::vector<Candidate> eligible = select_pairs(inputs.pairs, inputs.captions, cfg.benchmark_sim_threshold);
    a.summary.eligible_pairs = eligible.size();

    std::vector<Candidate> real;
    for (const auto& r : inputs.real) {
        if (!sim::gate(r.similarity, sim::GateKind::Benchmark, {0.7, cfg.benchmark_sim_threshold})) {
            a.summary.skipped_real[r.pair_id] = "below-similarity-threshold";
            continue;
        }
        if (r.difference.empty()) {
            a.summary.skipped_real[r.pair_id] = "missing-difference";
            continue;
        }
        CaptionSet cs{r.pair_id, r.original_caption, r.edited_caption, r.difference, r.category, true, true};
        real.push_back(
            Candidate{r.pair_id, r.category, Split::Real, r.similarity, cs, r.question, r.original_ref, r.edited_ref});
    }
    if (eligible.empty() && real.empty()) throw AssemblyError("no eligible pairs above the benchmark threshold");

    // Candidates are consumed per category in pair_id order until the quota
    // is met. Rounds are processed in parallel but committed in order, so
    // the result does not depend on scheduling.
    std::vector<int> quota = cfg.category_quota.empty() ? equal_quota(cfg.target_total_synthetic) : cfg.category_quota;
    std::array<std::vector<const Candidate*>, kCategoryCount> queues;
    for (const auto& c : eligible) queues[category_index(c.category)].push_back(&c);
    std::array<std::size_t, kCategoryCount> next{};
    std::array<int, kCategoryCount> have{};

    std::vector<BenchmarkItem> synthetic;
    auto absorb = [&](const Candidate& c, PairOutcome& o) {
        if (o.deferred) a.summary.deferred_pairs.push_back(c.pair_id);
        if (o.shortfall > 0) a.summary.question_shortfalls[c.pair_id] = o.shortfall;
        a.summary.dropped_questions += o.dropped;
        a.summary.regenerations += o.regenerations;
    };
    while (true) {
        std::vector<const Candidate*> round;
        for (std::size_t k = 0; k < kCategoryCount; ++k) {
            int missing = quota[k] - have[k];
            int per_pair = cfg.items_per_pair;
            int pairs_needed = (missing + per_pair - 1) / per_pair;
            for (int t = 0; t < pairs_needed && next[k] < queues[k].size(); ++t) round.push_back(queues[k][next[k]++]);
        }
        if (round.empty()) break;
        std::vector<PairOutcome> outcomes(round.size());
        detail::parallel_for(round.size(), cfg.max_parallel,
                             [&](std::size_t i) { outcomes[i] = build_pair(cfg, chat, prompts, *round[i]); });
        for (std::size_t i = 0; i < round.size(); ++i) {
            const Candidate& c = *round[i];
            absorb(c, outcomes[i]);
            std::size_t k = category_index(c.category);
            for (auto& item : outcomes[i].items) {
                if (have[k] >= quota[k]) break;
                synthetic.push_back(std::move(item));
                ++have[k];
            }
        }
    }

    std::vector<PairOutcome> real_out(real.size());
    detail::parallel_for(real.size(), cfg.max_parallel,
                         [&](std::size_t i) { real_out[i] = build_pair(cfg, chat, prompts, real[i]); });
    std::vector<BenchmarkItem> real_items;
    for (std::size_t i = 0; i < real.size(); ++i) {
        absorb(real[i], real_out[i]);
        for (auto& item : real_out[i].items) real_items.push_back(std::move(item));
    }

    auto by_cat = [](const BenchmarkItem& x, const BenchmarkItem& y) {
        if (x.category != y.category) return category_index(x.category) < category_index(y.category);
        if (x.pair_id != y.pair_id) return x.pair_id < y.pair_id;
        return x.item_id < y.item_id;
    };
    std::sort(synthetic.begin(), synthetic.end(), by_cat);
    std::sort(real_items.begin(), real_items.end(), by_cat);
    a.summary.synthetic_items = synthetic.size();
    a.summary.real_items = real_items.size();
    a.items = std::move(synthetic);
    a.items.insert(a.items.end(), std::make_move_iterator(real_items.begin()),
                   std::make_move_iterator(real_items.end()));

    a.key = make_key(a.items);
    a.summary.category_counts = a.key.counts;
    std::vector<std::string> empty;
    for (auto c : kAllCategories) {
        if (!a.key.counts.count(c)) empty.emplace_back(to_string(c));
    }
    if (!empty.empty()) {
        std::string names;
        for (const auto& n : empty) names += (names.empty() ? "" : ", ") + n;
        throw AssemblyError("no benchmark items for category " + names);
    }
    if (strict_count && static_cast<int>(a.summary.synthetic_items) != cfg.target_total_synthetic) {
        throw AssemblyError("synthetic item count " + std::to_string(a.summary.synthetic_items) +
                            " differs from target " + std::to_string(cfg.target_total_synthetic));
    }
    a.sft_filtered = dedup_against_sft(a.items, inputs.sft, &a.summary.sft_removed);
    return a;
}

void write_assembly(const Assembly& a, const fs::path& bench_out, const fs::path& key_out, const fs::path& sft_out) {
    write_jsonl(bench_out, a.items);
    write_file_atomic(key_out, json(a.key).dump(2) + "\n");
    write_jsonl(sft_out, a.sft_filtered);
}

}  // namespace medforge::bench
