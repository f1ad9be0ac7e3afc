#include <random>
#include <set>

#include <gtest/gtest.h>

#include "medforge/checkpoint.hpp"
#include "medforge/content_store.hpp"
#include "medforge/datamodel.hpp"
#include "medforge/digest.hpp"
#include "medforge/image.hpp"
#include "medforge/mocks.hpp"
#include "medforge/prompts.hpp"
#include "support.hpp"

using namespace medforge;
using medforge::testing::TempDir;

namespace {

// Random printable text including quotes, escapes and multibyte UTF-8.
std::string random_text(std::mt19937_64& rng, std::size_t min_len = 1) {
    static const std::vector<std::string> atoms = {"a", "B", "z", " ", "\"", "\\", "\n", "{", "}", "é", "日", "7", ",", ":"};
    std::size_t n = min_len + rng() % 24;
    std::string s;
    for (std::size_t i = 0; i < n; ++i) s += atoms[rng() % atoms.size()];
    s += "x";  // never blank after trimming
    return s;
}

EditCategory random_category(std::mt19937_64& rng) { return kAllCategories[rng() % kCategoryCount]; }

}  // namespace

TEST(Category, ExactlyElevenCanonicalNames) {
    EXPECT_EQ(kAllCategories.size(), 11u);
    std::set<std::string> names;
    for (std::size_t i = 0; i < kAllCategories.size(); ++i) {
        EXPECT_EQ(category_index(kAllCategories[i]), i);
        names.insert(std::string(to_string(kAllCategories[i])));
        EXPECT_EQ(category_from_string(to_string(kAllCategories[i])), kAllCategories[i]);
        EXPECT_FALSE(short_label(kAllCategories[i]).empty());
    }
    EXPECT_EQ(names.size(), 11u);
}

TEST(Category, ParseIsCaseInsensitive) {
    EXPECT_EQ(category_from_string("spatial"), EditCategory::Spatial);
    EXPECT_EQ(category_from_string("UNIVERSALITY"), EditCategory::Universality);
    EXPECT_EQ(parse_category("colorful"), std::nullopt);
    EXPECT_THROW(category_from_string("colorful"), RecordError);
    EXPECT_EQ(nlohmann::json("differentiation").get<EditCategory>(), EditCategory::Differentiation);
    EXPECT_EQ(nlohmann::json(EditCategory::Counting).get<std::string>(), "Counting");
}

TEST(DeriveId, DeterministicAndSensitive) {
    std::string bytes = "\x89PNG fake bytes";
    auto a = make_source_sample(bytes, ImageRef{"x.png"}, "A red mug on a table.", Source::docci());
    auto b = make_source_sample(bytes, ImageRef{"x.png"}, "A red mug on a table.", Source::docci());
    auto c = make_source_sample(bytes, ImageRef{"x.png"}, "A red mug on a table!", Source::docci());
    EXPECT_EQ(a.id, b.id);
    EXPECT_NE(a.id, c.id);
    EXPECT_EQ(a.id.size(), 64u);
}

TEST(DeriveId, EmptyInputIsAnError) {
    try {
        make_source_sample("", ImageRef{"x.png"}, "caption", Source::docci());
        FAIL() << "expected an error";
    } catch (const std::invalid_argument& e) {
        EXPECT_STREQ(e.what(), "empty input");
    }
    EXPECT_THROW(derive_id({"", ""}), std::invalid_argument);
    EXPECT_THROW(derive_id(std::span<const std::string_view>{}), std::invalid_argument);
}

TEST(DeriveId, FieldBoundariesMatter) {
    EXPECT_NE(derive_id({"ab", "c"}), derive_id({"a", "bc"}));
    EXPECT_NE(derive_seed({"ab", "c"}), derive_seed({"a", "bc"}));
    EXPECT_EQ(derive_seed({"s", "1"}), derive_seed({"s", "1"}));
}

TEST(PairId, InjectiveOverDistinctTriples) {
    std::set<std::string> ids;
    std::size_t n = 0;
    for (int o = 0; o < 8; ++o) {
        for (int e = 0; e < 8; ++e) {
            for (int i = 0; i < 4; ++i) {
                ids.insert(make_pair_id("orig" + std::to_string(o), "edit" + std::to_string(e),
                                        "instr" + std::to_string(i)));
                ++n;
            }
        }
    }
    EXPECT_EQ(ids.size(), n);
}

TEST(Digest, Sha256KnownVectors) {
    EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Digest, Base64RoundTrip) {
    EXPECT_EQ(base64_encode("foobar"), "Zm9vYmFy");
    EXPECT_EQ(base64_encode("fo"), "Zm8=");
    std::mt19937_64 rng(3);
    for (int k = 0; k < 50; ++k) {
        std::string s(rng() % 40, '\0');
        for (auto& ch : s) ch = static_cast<char>(rng() & 0xff);
        EXPECT_EQ(base64_decode(base64_encode(s)), s);
    }
    EXPECT_THROW(base64_decode("Zm9v!"), std::invalid_argument);
}

TEST(RoundTrip, BenchmarkItemWithFourOptions) {
    BenchmarkItem item;
    item.item_id = "i1";
    item.pair_id = "p1";
    item.category = EditCategory::Spatial;
    item.question = "What changed?";
    item.options = {"The mug moved left", "The mug turned blue", "A plate appeared", "Nothing moved"};
    item.answer_index = 2;
    item.split = Split::Real;
    item.original_ref = ImageRef{"images/aa/a.ppm"};
    EXPECT_EQ(roundtrip(item), item);
}

TEST(RoundTrip, ThreeOptionsIsAnInvariantViolation) {
    std::string line =
        R"({"v":1,"item_id":"i","pair_id":"p","category":"Object","question":"q","options":["a","b","c"],"answer_index":0,"split":"Synthetic"})";
    try {
        from_jsonl_line<BenchmarkItem>(line, 7);
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 7u);
        EXPECT_NE(std::string(e.what()).find("invariant violation"), std::string::npos);
    }
}

TEST(RoundTrip, DuplicateOptionsRejected) {
    BenchmarkItem item;
    item.item_id = "i1";
    item.pair_id = "p1";
    item.question = "q";
    item.options = {"Red mug", "red  MUG", "c", "d"};
    EXPECT_THROW(validate(item), RecordError);
}

TEST(RoundTrip, WrongSchemaVersionRejected) {
    EXPECT_THROW(from_jsonl_line<EditPlan>(R"({"v":2,"sample_id":"s","category":"Object","instruction":"x"})"),
                 ParseError);
}

TEST(RoundTrip, PropertyOverGeneratedRecords) {
    std::mt19937_64 rng(20240611);
    for (int k = 0; k < 200; ++k) {
        SourceSample s;
        s.id = derive_id({random_text(rng)});
        s.image_ref = ImageRef{"images/" + s.id.substr(0, 2) + "/" + s.id + ".ppm"};
        s.caption = random_text(rng);
        s.source = (k % 3 == 0) ? Source::docci() : (k % 3 == 1 ? Source::visual_genome() : Source::other(random_text(rng)));
        if (k % 2) s.meta["note"] = random_text(rng);
        EXPECT_EQ(roundtrip(s), s);

        EditPlan plan{s.id, random_category(rng), random_text(rng)};
        EXPECT_EQ(roundtrip(plan), plan);

        EditedPair pair;
        pair.pair_id = make_pair_id(s.id, random_text(rng), plan.instruction);
        pair.original_ref = s.image_ref;
        pair.edited_ref = ImageRef{"images/zz/" + pair.pair_id + ".ppm"};
        pair.plan = plan;
        if (k % 2) pair.similarity = std::uniform_real_distribution<double>(-1.0, 1.0)(rng);
        EXPECT_EQ(roundtrip(pair), pair);

        CaptionSet c;
        c.pair_id = pair.pair_id;
        c.original_complete = random_text(rng);
        c.edited = random_text(rng);
        c.difference = random_text(rng);
        c.difference_category = random_category(rng);
        c.judge1_pass = rng() % 2;
        c.judge2_pass = rng() % 2;
        EXPECT_EQ(roundtrip(c), c);

        SFTRecord sft{pair.pair_id, random_text(rng), random_text(rng), random_category(rng)};
        EXPECT_EQ(roundtrip(sft), sft);

        BenchmarkItem item;
        item.item_id = derive_id({pair.pair_id, "q"});
        item.pair_id = pair.pair_id;
        item.category = random_category(rng);
        item.question = random_text(rng);
        for (std::size_t i = 0; i < kOptionCount; ++i) item.options[i] = std::to_string(i) + random_text(rng);
        item.answer_index = static_cast<int>(rng() % 4);
        item.split = rng() % 2 ? Split::Real : Split::Synthetic;
        EXPECT_EQ(roundtrip(item), item);

        Verdict v;
        v.pair_id = pair.pair_id;
        v.decision = static_cast<Decision>(rng() % 3);
        v.annotator = "ann" + std::to_string(k);
        if (v.decision == Decision::Flag || rng() % 2) v.issue_tags = {"other", random_text(rng)};
        v.timestamp_ms = static_cast<std::int64_t>(rng() % 1'000'000'000);
        EXPECT_EQ(roundtrip(v), v);
    }
}

TEST(RoundTrip, SerializationIsCanonical) {
    EditPlan plan{"s", EditCategory::Part, "Remove the handle."};
    EXPECT_EQ(to_jsonl_line(plan), R"({"category":"Part","instruction":"Remove the handle.","sample_id":"s","v":1})");
}

TEST(Validate, RecordInvariants) {
    EXPECT_THROW(validate(EditPlan{"s", EditCategory::Object, "   "}), RecordError);
    EditedPair p;
    p.pair_id = "p";
    p.original_ref = ImageRef{"a"};
    p.edited_ref = ImageRef{"b"};
    p.plan = EditPlan{"s", EditCategory::Object, "x"};
    p.similarity = 1.5;
    EXPECT_THROW(validate(p), RecordError);
    p.similarity = std::nan("");
    EXPECT_THROW(validate(p), RecordError);
    CaptionSet c;
    c.pair_id = "p";
    c.judge1_pass = c.judge2_pass = true;
    EXPECT_THROW(validate(c), RecordError);
    Verdict v{"p", Decision::Flag, {}, "ann", 0};
    EXPECT_THROW(validate(v), RecordError);
}

TEST(Jsonl, ReadReportsLineNumbers) {
    TempDir dir;
    std::vector<EditPlan> plans = {{"a", EditCategory::Scene, "x"}, {"b", EditCategory::Action, "y"}};
    write_jsonl(dir / "plans.jsonl", plans);
    EXPECT_EQ(read_jsonl<EditPlan>(dir / "plans.jsonl"), plans);

    write_file_atomic(dir / "bad.jsonl", to_jsonl(plans) + "\n{not json\n");
    try {
        read_jsonl<EditPlan>(dir / "bad.jsonl");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 4u);
    }
    EXPECT_THROW(read_jsonl<EditPlan>(dir / "missing.jsonl"), std::runtime_error);
}

TEST(Image, PpmRoundTripAndSniffing) {
    RgbImage img = providers::make_mock_image(4, 5, 3);
    std::string bytes = encode_ppm(img);
    EXPECT_EQ(sniff_format(bytes), ImageFormat::Ppm);
    EXPECT_EQ(decode_ppm(bytes), img);
    EXPECT_EQ(sniff_format("\x89PNG\r\n\x1a\nrest"), ImageFormat::Png);
    EXPECT_EQ(sniff_format("\xff\xd8\xff\xe0"), ImageFormat::Jpeg);
    EXPECT_THROW(check_decodable(bytes.substr(0, bytes.size() - 1)), DecodeError);
    EXPECT_THROW(check_decodable("garbage"), DecodeError);
}

TEST(ContentStore, AddressesByDigest) {
    TempDir dir;
    ContentStore store(dir / "store");
    std::string bytes = encode_ppm(providers::make_mock_image(1, 4, 4));
    ImageRef a = store.put(bytes);
    ImageRef b = store.put(bytes);
    EXPECT_EQ(a, b);
    std::string digest = sha256_hex(bytes);
    EXPECT_EQ(a.path, "images/" + digest.substr(0, 2) + "/" + digest + ".ppm");
    EXPECT_TRUE(store.exists(a));
    EXPECT_EQ(store.read(a), bytes);
    EXPECT_EQ(ContentStore::digest_of(a), digest);
    EXPECT_EQ(store.find(digest), a);
    EXPECT_EQ(store.find(std::string(64, '0')), std::nullopt);
    EXPECT_THROW(store.read(ImageRef{"images/00/none.ppm"}), std::runtime_error);
}

TEST(Checkpoint, ReplayMayExtendButNotRewrite) {
    TempDir dir;
    auto path = dir / "cp.json";
    StageCheckpoint cp;
    cp.stage = "stage_filter";
    cp.entries = {{"a", EntryStatus::Kept, "", "", nlohmann::json{{"x", 1}}},
                  {"b", EntryStatus::Deferred, "provider-error", "timeout", {}}};
    cp.manifest_digest = payload_digest(cp.entries);
    save_checkpoint(path, cp);
    auto loaded = load_checkpoint(path);
    ASSERT_TRUE(loaded);
    EXPECT_EQ(loaded->entries, cp.entries);
    EXPECT_EQ(loaded->processed_ids(), std::set<std::string>{"a"});

    // Deferred entry finalised: a superset, accepted.
    StageCheckpoint next = cp;
    next.entries[1] = {"b", EntryStatus::Dropped, "filter-rejected", "No", {}};
    save_checkpoint(path, next);

    // Rewriting a finalised entry is a conflict and leaves the file untouched.
    StageCheckpoint bad = next;
    bad.entries[0].payload = nlohmann::json{{"x", 2}};
    EXPECT_THROW(save_checkpoint(path, bad), CheckpointConflict);
    EXPECT_EQ(load_checkpoint(path)->entries, next.entries);
    EXPECT_EQ(load_checkpoint(dir / "none.json"), std::nullopt);
}

TEST(Prompts, RenderSlotsAndEscapes) {
    PromptTemplate t{PromptRole::EditInstruction, "Edit: {cat}"};
    EXPECT_EQ(render(t, {{"cat", "Spatial"}}), "Edit: Spatial");
    try {
        render(t, {});
        FAIL();
    } catch (const TemplateError& e) {
        EXPECT_NE(std::string(e.what()).find("cat"), std::string::npos);
    }
    PromptTemplate esc{PromptRole::EditInstruction, "JSON {{\"k\": {v}}}"};
    EXPECT_EQ(render(esc, {{"v", "1"}}), "JSON {\"k\": 1}");
    EXPECT_EQ(esc.slots(), std::vector<std::string>{"v"});
    EXPECT_THROW(PromptTemplate({PromptRole::Judge1, "open {slot"}).slots(), TemplateError);
}

TEST(Prompts, DefaultsCoverEveryRoleAndLoadDirOverrides) {
    auto reg = PromptRegistry::defaults();
    for (auto role : kAllPromptRoles) EXPECT_FALSE(reg.get(role).text.empty()) << to_string(role);

    TempDir dir;
    write_file_atomic(dir / "judge1.txt", "role: Judge1\nIs it right? {difference}");
    reg.load_dir(dir.path());
    EXPECT_EQ(reg.render(PromptRole::Judge1, {{"difference", "d"}}), "Is it right? d");
    EXPECT_EQ(parse_prompt_file(format_prompt_file(reg.get(PromptRole::Judge1))).text, "Is it right? {difference}");

    write_file_atomic(dir / "dup.txt", "role: Judge1\nagain");
    EXPECT_THROW(reg.load_dir(dir.path()), TemplateError);
    EXPECT_THROW(parse_prompt_file("role: Nonsense\nx"), TemplateError);
}

TEST(Prompts, ShippedFilesMatchDefaults) {
    PromptRegistry shipped = PromptRegistry::defaults();
    shipped.load_dir(std::filesystem::path(MEDFORGE_SOURCE_DIR) / "prompts");
    PromptRegistry defaults = PromptRegistry::defaults();
    for (auto role : kAllPromptRoles) EXPECT_EQ(shipped.get(role).text, defaults.get(role).text) << to_string(role);
}
