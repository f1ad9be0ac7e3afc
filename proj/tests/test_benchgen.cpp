#include <set>

#include <gtest/gtest.h>

#include "medforge/benchgen.hpp"
#include "medforge/digest.hpp"
#include "medforge/mocks.hpp"
#include "support.hpp"

using namespace medforge;
using namespace medforge::bench;
using medforge::providers::ChatRequest;
using medforge::providers::ScriptedChat;
using medforge::testing::slurp;
using medforge::testing::TempDir;
using nlohmann::json;

namespace {

CaptionSet captions_for(const std::string& pair_id, EditCategory c, bool j1 = true, bool j2 = true) {
    CaptionSet cs;
    cs.pair_id = pair_id;
    cs.original_complete = "A red mug on a table, pair " + pair_id.substr(0, 6) + ".";
    cs.edited = "A blue mug on a table, pair " + pair_id.substr(0, 6) + ".";
    cs.difference = "The mug changed from red to blue in pair " + pair_id.substr(0, 6) + ".";
    cs.difference_category = c;
    cs.judge1_pass = j1;
    cs.judge2_pass = j2;
    return cs;
}

EditedPair pair_for(const std::string& pair_id, EditCategory c, double sim) {
    EditedPair p;
    p.pair_id = pair_id;
    p.original_ref = ImageRef{"images/aa/" + pair_id + "-o.ppm"};
    p.edited_ref = ImageRef{"images/aa/" + pair_id + "-e.ppm"};
    p.plan = EditPlan{"s-" + pair_id, c, "edit"};
    p.similarity = sim;
    return p;
}

// `per_category` eligible pairs in every category plus one SFT record each.
BenchInputs synthetic_inputs(int per_category, double sim = 0.97) {
    BenchInputs in;
    for (auto c : kAllCategories) {
        for (int i = 0; i < per_category; ++i) {
            std::string id = derive_id({"pair", std::string(to_string(c)), std::to_string(i)});
            in.pairs.push_back(pair_for(id, c, sim));
            in.captions.push_back(captions_for(id, c));
            in.sft.push_back(SFTRecord{id, "What changed?", "The mug changed colour.", c});
        }
    }
    return in;
}

std::vector<RealPair> real_pairs(int n, double sim = 0.99) {
    std::vector<RealPair> out;
    for (int i = 0; i < n; ++i) {
        RealPair r;
        r.original_ref = ImageRef{"images/bb/r" + std::to_string(i) + "-o.ppm"};
        r.edited_ref = ImageRef{"images/bb/r" + std::to_string(i) + "-e.ppm"};
        r.pair_id = derive_id({"real", r.original_ref.path, r.edited_ref.path});
        r.similarity = sim;
        r.category = kAllCategories[static_cast<std::size_t>(i) % kCategoryCount];
        r.difference = "In the second image photo " + std::to_string(i) + " is brighter.";
        out.push_back(r);
    }
    return out;
}

BenchConfig test_config(std::uint64_t seed = 5) {
    BenchConfig cfg;
    cfg.seed = seed;
    cfg.text.kind = "mock";
    cfg.max_parallel = 2;
    return cfg;
}

std::shared_ptr<providers::ChatProvider> world(std::uint64_t seed = 5) {
    providers::MockWorldOptions o;
    o.seed = seed;
    return std::make_shared<providers::SyntheticWorld>(o);
}

std::string join_lines(const std::vector<std::string>& lines) {
    std::string s;
    for (const auto& l : lines) s += l + "\n";
    return s;
}

}  // namespace

TEST(SelectPairs, StrictGateAndJudges) {
    std::vector<EditedPair> pairs{pair_for("a", EditCategory::Scene, 0.96), pair_for("b", EditCategory::Scene, 0.95),
                                  pair_for("c", EditCategory::Object, 0.99)};
    std::vector<CaptionSet> caps{captions_for("a", EditCategory::Scene), captions_for("b", EditCategory::Scene),
                                 captions_for("c", EditCategory::Object, true, false)};
    auto out = select_pairs(pairs, caps, 0.95);
    ASSERT_EQ(out.size(), 1u);
    EXPECT_EQ(out[0].pair_id, "a");
    EXPECT_EQ(out[0].original_ref, pairs[0].original_ref);
}

TEST(Rephrase, NineDistinctQuestions) {
    std::vector<std::string> qs;
    for (int i = 1; i <= 9; ++i) qs.push_back("q" + std::to_string(i));
    auto chat = ScriptedChat::always(join_lines(qs));
    auto r = rephrase(*chat, PromptRegistry::defaults(), captions_for("p", EditCategory::Part), 9);
    EXPECT_EQ(r.questions, qs);
    EXPECT_EQ(r.shortfall, 0);
    EXPECT_FALSE(r.regenerated);
}

TEST(Rephrase, DuplicatesCollapseAndRecordShortfall) {
    auto chat = ScriptedChat::always(join_lines(std::vector<std::string>(9, "q1")));
    auto r = rephrase(*chat, PromptRegistry::defaults(), captions_for("p", EditCategory::Part), 9);
    EXPECT_EQ(r.questions, std::vector<std::string>{"q1"});
    EXPECT_EQ(r.shortfall, 8);
    EXPECT_TRUE(r.regenerated);
    EXPECT_EQ(chat->calls(), 2u);
}

TEST(Rephrase, SingleQuestionAndListMarkers) {
    auto chat = ScriptedChat::always("1. \"What changed?\"\n2) What moved?\n- What is new?");
    auto r = rephrase(*chat, PromptRegistry::defaults(), captions_for("p", EditCategory::Part), 1);
    EXPECT_EQ(r.questions, std::vector<std::string>{"What changed?"});
    auto all = rephrase(*chat, PromptRegistry::defaults(), captions_for("p", EditCategory::Part), 3);
    EXPECT_EQ(all.questions, (std::vector<std::string>{"What changed?", "What moved?", "What is new?"}));
}

TEST(GenOptions, FourDistinctOptions) {
    auto chat = std::make_shared<ScriptedChat>([](const ChatRequest& r) -> std::string {
        if (r.purpose == "RightAnswer") return "The mug turned blue.";
        return "The mug turned green.\nThe plate vanished.\nThe mug moved left.";
    });
    auto o = gen_options(*chat, PromptRegistry::defaults(), "What changed?", captions_for("p", EditCategory::Attribute), 3);
    ASSERT_TRUE(o.options);
    EXPECT_EQ(o.regenerations, 0);
    Candidate c{"p", EditCategory::Attribute, Split::Synthetic, 0.97, captions_for("p", EditCategory::Attribute),
                std::nullopt, {}, {}};
    BenchmarkItem item = make_item(c, "What changed?", *o.options, 1);
    EXPECT_GE(item.answer_index, 0);
    EXPECT_LT(item.answer_index, 4);
    EXPECT_EQ(item.options[static_cast<std::size_t>(item.answer_index)], "The mug turned blue.");
    std::set<std::string> distinct(item.options.begin(), item.options.end());
    EXPECT_EQ(distinct.size(), 4u);
}

TEST(GenOptions, CaseDifferingClashTriggersRegeneration) {
    auto wrong = ScriptedChat::sequence({"THE MUG TURNED BLUE.\nb\nc", "a\nb\nc"});
    auto chat = std::make_shared<ScriptedChat>([&](const ChatRequest& r) -> std::string {
        if (r.purpose == "RightAnswer") return "The mug turned blue.";
        return wrong->complete(r).text;
    });
    auto o = gen_options(*chat, PromptRegistry::defaults(), "What changed?", captions_for("p", EditCategory::Attribute), 3);
    EXPECT_EQ(o.regenerations, 1);
    ASSERT_TRUE(o.options);
    EXPECT_EQ(o.options->distractors, (std::vector<std::string>{"a", "b", "c"}));

    auto stuck = std::make_shared<ScriptedChat>([](const ChatRequest& r) -> std::string {
        if (r.purpose == "RightAnswer") return "Same";
        return "same\nb\nc";
    });
    auto dropped = gen_options(*stuck, PromptRegistry::defaults(), "q?", captions_for("p", EditCategory::Attribute), 3);
    EXPECT_FALSE(dropped.options);
    EXPECT_EQ(dropped.regenerations, 1);
}

TEST(Shuffle, HundredSeededShufflesAreBalanced) {
    std::array<int, 4> freq{};
    for (int i = 0; i < 100; ++i) {
        auto order = shuffle_order(2024, "item-" + std::to_string(i));
        for (int pos = 0; pos < 4; ++pos) {
            if (order[static_cast<std::size_t>(pos)] == 0) ++freq[static_cast<std::size_t>(pos)];
        }
        std::array<int, 4> sorted = order;
        std::sort(sorted.begin(), sorted.end());
        EXPECT_EQ(sorted, (std::array<int, 4>{0, 1, 2, 3}));
    }
    for (int f : freq) {
        EXPECT_GE(f, 15);
        EXPECT_LE(f, 35);
    }
}

TEST(Shuffle, ChiSquareOnGeneratedItems) {
    // 400 items; chi-square with 3 degrees of freedom, critical value 11.345 at p = 0.01.
    std::array<double, 4> counts{};
    const int n = 400;
    OptionTexts t{"right", {"w1", "w2", "w3"}};
    for (int i = 0; i < n; ++i) {
        Candidate c{"pair" + std::to_string(i), EditCategory::Scene, Split::Synthetic, 0.97, {}, std::nullopt, {}, {}};
        counts[static_cast<std::size_t>(make_item(c, "What changed?", t, 77).answer_index)] += 1;
    }
    double expected = n / 4.0;
    double chi2 = 0;
    for (double o : counts) chi2 += (o - expected) * (o - expected) / expected;
    EXPECT_LT(chi2, 11.345);
}

TEST(Shuffle, PureFunctionOfSeedAndItem) {
    EXPECT_EQ(shuffle_order(1, "x"), shuffle_order(1, "x"));
    int differ = 0;
    for (int i = 0; i < 20; ++i) differ += shuffle_order(1, "x" + std::to_string(i)) != shuffle_order(2, "x" + std::to_string(i));
    EXPECT_GT(differ, 0);
}

TEST(Dedup, RemovesOverlapOnly) {
    std::vector<SFTRecord> sft;
    for (int i = 0; i < 6; ++i) sft.push_back(SFTRecord{"p" + std::to_string(i), "q", "a", EditCategory::Object});
    std::vector<BenchmarkItem> items;
    for (int i : {1, 3, 5}) {
        BenchmarkItem it;
        it.pair_id = "p" + std::to_string(i);
        items.push_back(it);
    }
    std::size_t removed = 0;
    auto out = dedup_against_sft(items, sft, &removed);
    EXPECT_EQ(removed, 3u);
    EXPECT_EQ(out.size(), 3u);
    for (const auto& r : out) EXPECT_NE(std::stoi(r.pair_id.substr(1)) % 2, 1);

    BenchmarkItem other;
    other.pair_id = "zz";
    EXPECT_EQ(dedup_against_sft({other}, sft, &removed), sft);
    EXPECT_EQ(removed, 0u);
    EXPECT_EQ(dedup_against_sft({}, sft), sft);
}

TEST(Quota, EqualSplit) {
    auto q = equal_quota(165);
    EXPECT_EQ(q, std::vector<int>(11, 15));
    auto r = equal_quota(170);
    EXPECT_EQ(std::accumulate(r.begin(), r.end(), 0), 170);
    EXPECT_EQ(r[0], 16);
    EXPECT_EQ(r[10], 15);
}

TEST(Assemble, SyntheticPlusRealTotals) {
    BenchInputs in = synthetic_inputs(16);
    in.real = real_pairs(35);
    auto chat = world();
    Assembly a = assemble(test_config(), *chat, in, true);
    EXPECT_EQ(a.summary.synthetic_items, 165u);
    EXPECT_EQ(a.summary.real_items, 35u);
    EXPECT_EQ(a.items.size(), 200u);
    EXPECT_EQ(a.key.total(), 200u);
    EXPECT_EQ(a.key.split_counts.at(Split::Synthetic), 165u);
    EXPECT_EQ(a.key.split_counts.at(Split::Real), 35u);

    std::set<std::string> synthetic_pairs;
    for (const auto& it : a.items) {
        validate(it);
        EXPECT_EQ(a.key.answers.at(it.item_id), it.answer_index);
        if (it.split == Split::Synthetic) synthetic_pairs.insert(it.pair_id);
    }
    for (const auto& r : a.sft_filtered) EXPECT_FALSE(synthetic_pairs.count(r.pair_id));
    EXPECT_EQ(a.summary.sft_removed, 165u);
    EXPECT_EQ(a.sft_filtered.size(), in.sft.size() - 165);
}

TEST(Assemble, RealPairBelowGateIsSkipped) {
    BenchInputs in = synthetic_inputs(15);
    in.real = real_pairs(3);
    in.real[1].similarity = 0.90;
    auto chat = world();
    Assembly a = assemble(test_config(), *chat, in);
    EXPECT_EQ(a.summary.real_items, 2u);
    EXPECT_EQ(a.summary.skipped_real.at(in.real[1].pair_id), "below-similarity-threshold");
}

TEST(Assemble, RealPairWithFixedQuestion) {
    BenchInputs in = synthetic_inputs(15);
    in.real = real_pairs(1);
    in.real[0].question = "Which change is visible?";
    auto chat = world();
    Assembly a = assemble(test_config(), *chat, in);
    ASSERT_EQ(a.summary.real_items, 1u);
    EXPECT_EQ(a.items.back().question, "Which change is visible?");
    EXPECT_EQ(a.items.back().split, Split::Real);
}

TEST(Assemble, EmptyCategoryNamesTheCategory) {
    BenchInputs in = synthetic_inputs(2);
    std::erase_if(in.pairs, [](const EditedPair& p) { return p.plan.category == EditCategory::Negation; });
    std::erase_if(in.captions, [](const CaptionSet& c) { return c.difference_category == EditCategory::Negation; });
    auto chat = world();
    try {
        assemble(test_config(), *chat, in);
        FAIL();
    } catch (const AssemblyError& e) {
        EXPECT_NE(std::string(e.what()).find("Negation"), std::string::npos) << e.what();
    }
}

TEST(Assemble, StrictCountFailsOnShortfall) {
    BenchInputs in = synthetic_inputs(10);
    auto chat = world();
    EXPECT_NO_THROW(assemble(test_config(), *chat, in, false));
    EXPECT_THROW(assemble(test_config(), *chat, in, true), AssemblyError);
}

TEST(Assemble, CustomQuotaVector) {
    BenchInputs in = synthetic_inputs(20);
    BenchConfig cfg = test_config();
    cfg.category_quota = {14, 16, 13, 14, 15, 16, 18, 12, 19, 14, 14};
    cfg.target_total_synthetic = 165;
    auto chat = world();
    Assembly a = assemble(cfg, *chat, in, true);
    for (std::size_t k = 0; k < kCategoryCount; ++k) {
        EXPECT_EQ(a.key.counts.at(kAllCategories[k]), static_cast<std::size_t>(cfg.category_quota[k]));
    }
}

TEST(Assemble, SameSeedIsByteIdentical) {
    TempDir dir;
    BenchInputs in = synthetic_inputs(16);
    in.real = real_pairs(35);
    for (const char* tag : {"a", "b"}) {
        auto chat = world();
        Assembly a = assemble(test_config(), *chat, in, true);
        write_assembly(a, dir / (std::string(tag) + ".jsonl"), dir / (std::string(tag) + ".key.json"),
                       dir / (std::string(tag) + ".sft.jsonl"));
    }
    EXPECT_EQ(slurp(dir / "a.jsonl"), slurp(dir / "b.jsonl"));
    EXPECT_EQ(slurp(dir / "a.key.json"), slurp(dir / "b.key.json"));
    EXPECT_EQ(slurp(dir / "a.sft.jsonl"), slurp(dir / "b.sft.jsonl"));
    EXPECT_EQ(load_key(dir / "a.key.json").total(), 200u);

    auto chat = world();
    BenchConfig other = test_config(6);
    Assembly c = assemble(other, *chat, in, true);
    write_jsonl(dir / "c.jsonl", c.items);
    EXPECT_NE(slurp(dir / "a.jsonl"), slurp(dir / "c.jsonl"));
}

TEST(Assemble, ProviderFailureDefersPairs) {
    BenchInputs in = synthetic_inputs(15);
    auto failing = std::make_shared<providers::FailingChat>();
    try {
        assemble(test_config(), *failing, in);
        FAIL();
    } catch (const AssemblyError&) {
    }
    BenchInputs none;
    EXPECT_THROW(assemble(test_config(), *world(), none), AssemblyError);
}

TEST(Key, JsonRoundTripAndValidation) {
    AnswerKey k;
    k.answers = {{"a", 0}, {"b", 3}};
    k.counts = {{EditCategory::Scene, 2}};
    k.split_counts = {{Split::Synthetic, 2}};
    json j = k;
    EXPECT_EQ(j.at("counts").size(), 11u);
    AnswerKey back = j.get<AnswerKey>();
    EXPECT_EQ(back.answers, k.answers);
    EXPECT_EQ(back.counts, k.counts);
    j["counts"]["Scene"] = 3;
    EXPECT_THROW(j.get<AnswerKey>(), RecordError);
}

TEST(Config, FromJsonAndValidation) {
    auto cfg = bench_config_from_json(json{{"pipeline_dir", "run"}, {"category_quota", {{"Object", 165}}}}, "/base");
    EXPECT_EQ(cfg.pairs_path, std::filesystem::path("/base/run/pairs.jsonl"));
    EXPECT_EQ(cfg.sft_out_path, std::filesystem::path("/base/run/sft.filtered.jsonl"));
    EXPECT_EQ(cfg.category_quota[0], 165);
    EXPECT_THROW(bench_config_from_json(json{{"pipeline_dir", "run"}, {"distractors_per_question", 2}}), AssemblyError);
    EXPECT_THROW(bench_config_from_json(json{{"pipeline_dir", "run"}, {"category_quota", {{"Object", 3}}}}),
                 AssemblyError);
    EXPECT_THROW(bench_config_from_json(json::object()), AssemblyError);
}

TEST(MockReal, PairsPassStrictGate) {
    TempDir dir;
    ContentStore store(dir / "store");
    providers::ProjectionEmbedder emb(512, 3);
    auto real = make_mock_real_pairs(store, emb, 35, 3);
    ASSERT_EQ(real.size(), 35u);
    std::set<std::string> ids;
    for (const auto& r : real) {
        EXPECT_GT(r.similarity, 0.95);
        EXPECT_TRUE(store.exists(r.original_ref));
        EXPECT_TRUE(store.exists(r.edited_ref));
        ids.insert(r.pair_id);
        EXPECT_EQ(json(r).get<RealPair>().pair_id, r.pair_id);
    }
    EXPECT_EQ(ids.size(), 35u);
}
