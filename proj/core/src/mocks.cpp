#include "medforge/mocks.hpp"

#include <array>
#include <cmath>
#include <regex>

#include "medforge/digest.hpp"
#include "medforge/http_client.hpp"
#include "medforge/prompts.hpp"

namespace medforge::providers {

namespace {

// SplitMix64; the standard distributions are implementation-defined, so mocks
// draw from this directly to keep outputs identical across toolchains.
struct SplitMix64 {
    std::uint64_t state;

    std::uint64_t next() {
        std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }
    double unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
    double gaussian() {
        double u1 = unit();
        double u2 = unit();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }
};

double unit_from(std::uint64_t h) { return static_cast<double>(h >> 11) * 0x1.0p-53; }

std::string seed_str(std::uint64_t seed) { return std::to_string(seed); }

std::string request_text(const ChatRequest& r) {
    std::string out;
    for (const auto& m : r.messages) {
        out += m.text();
        out += '\n';
    }
    return out;
}

std::string match1(const std::string& text, const std::regex& re) {
    std::smatch m;
    if (std::regex_search(text, m, re)) return m[1].str();
    return {};
}

int match_int(const std::string& text, const std::regex& re, int fallback) {
    std::string s = match1(text, re);
    if (s.empty()) return fallback;
    return std::stoi(s);
}

constexpr std::array<const char*, 10> kNouns = {
    "mug", "chair", "bicycle", "lamp", "dog", "umbrella", "vase", "book", "bench", "kite",
};

std::string instruction_for(EditCategory c, std::string_view noun) {
    std::string n(noun);
    switch (c) {
        case EditCategory::Object: return "Remove the " + n + " from the scene";
        case EditCategory::Attribute: return "Change the color of the " + n + " to blue";
        case EditCategory::Scene: return "Make the sky behind the " + n + " overcast";
        case EditCategory::Spatial: return "Move the " + n + " to the left edge of the image";
        case EditCategory::Action: return "Make the person next to the " + n + " raise one arm";
        case EditCategory::Part: return "Remove one part of the " + n;
        case EditCategory::Counting: return "Add a second " + n + " next to the first one";
        case EditCategory::Differentiation: return "Make the two " + n + "s different colors";
        case EditCategory::Comparison: return "Make the " + n + " larger than the object beside it";
        case EditCategory::Negation: return "Remove the shadow under the " + n;
        case EditCategory::Universality: return "Make every " + n + " in the image red";
    }
    return "Change the " + n;
}

std::string lower_first(std::string s) {
    if (!s.empty()) s[0] = static_cast<char>(std::tolower(static_cast<unsigned char>(s[0])));
    return s;
}

constexpr std::array<const char*, 12> kQuestionForms = {
    "What is the most notable difference between the first and the second image?",
    "Which change turns the first image into the second one?",
    "How does the second image differ from the first image?",
    "What was modified between the two images?",
    "Which statement correctly describes the change from the first to the second image?",
    "What is different in the second image compared with the first?",
    "Looking at both images, which edit was applied?",
    "Which difference can be observed between the two images?",
    "What changed from the original image to the edited image?",
    "Identify the key visual change between the two pictures.",
    "Which option describes how the first image was altered?",
    "Compared with the first image, what is new or different in the second?",
};

}  // namespace

// ---------------------------------------------------------------------------

ScriptedChat::ScriptedChat(Script script) : script_(std::move(script)) {}

std::shared_ptr<ScriptedChat> ScriptedChat::always(std::string reply) {
    return std::make_shared<ScriptedChat>([reply = std::move(reply)](const ChatRequest&) { return reply; });
}

std::shared_ptr<ScriptedChat> ScriptedChat::sequence(std::vector<std::string> replies) {
    auto state = std::make_shared<std::pair<std::mutex, std::size_t>>();
    return std::make_shared<ScriptedChat>([replies = std::move(replies), state](const ChatRequest&) {
        std::lock_guard lock(state->first);
        std::size_t i = std::min(state->second, replies.size() - 1);
        ++state->second;
        return replies.at(i);
    });
}

ChatReply ScriptedChat::complete(const ChatRequest& request) {
    ++calls_;
    return {script_(request), 0};
}

ChatReply EchoChat::complete(const ChatRequest& request) {
    return {request.messages.back().text(), 0};
}

ChatReply FailingChat::complete(const ChatRequest&) { throw TransportError("mock transport failure"); }

// ---------------------------------------------------------------------------

MockWorldOptions MockWorldOptions::from_json(const nlohmann::json& j, std::uint64_t seed) {
    MockWorldOptions o;
    o.seed = seed;
    if (j.is_object()) {
        o.filter_reject_rate = j.value("filter_reject_rate", 0.0);
        o.judge1_fail_rate = j.value("judge1_fail_rate", 0.0);
        o.judge2_fail_rate = j.value("judge2_fail_rate", 0.0);
    }
    return o;
}

SyntheticWorld::SyntheticWorld(MockWorldOptions options) : opt_(options) {}

double SyntheticWorld::unit(std::string_view purpose, std::string_view text) const {
    return unit_from(derive_seed({seed_str(opt_.seed), purpose, text}));
}

ChatReply SyntheticWorld::complete(const ChatRequest& request) {
    static const std::regex kFirstQuoted(R"re("([^"]*)")re");
    static const std::regex kCaption(R"re(Caption: "([^"]*)")re");
    static const std::regex kEditType(R"re(edit type is (\w+))re");
    static const std::regex kEditInstruction(R"re(Edit instruction: "([^"]*)")re");
    static const std::regex kStyleCaption(R"re(expected style:\s*"([^"]*)")re");
    static const std::regex kMarker(R"re(\[(\w+) edit: ([^\]]*)\])re");
    static const std::regex kDifferenceSlot(R"re(Difference: "([^"]*)")re");
    static const std::regex kDifferFollows(R"re(differ as follows: "([^"]*)")re");
    static const std::regex kTrueDifference(R"re(The true difference between the images: "([^"]*)")re");
    static const std::regex kCorrect(R"re(Correct answer: "([^"]*)")re");
    static const std::regex kWriteCount(R"re(Write (\d+) )re");

    const std::string text = request_text(request);
    const std::string& purpose = request.purpose;
    const double u = unit(purpose, text);
    const std::uint64_t h = derive_seed({seed_str(opt_.seed), "pick", purpose, text});

    auto reply = [](std::string s) { return ChatReply{std::move(s), 0}; };

    if (purpose == "FilterEditable") {
        if (u < opt_.filter_reject_rate) return reply("No. The main subject is too small to edit reliably.");
        return reply("Yes. The subject is sharp and the scene can be edited locally.");
    }
    if (purpose == "EditInstruction") {
        EditCategory c = kAllCategories[h % kCategoryCount];
        const char* noun = kNouns[(h / kCategoryCount) % kNouns.size()];
        return reply("Category: " + std::string(to_string(c)) + "\nInstruction: " + instruction_for(c, noun) + ".");
    }
    if (purpose == "OriginalDescription") {
        std::string caption = match1(text, kCaption);
        return reply(caption.empty() ? "A photo with a clearly visible main subject." : caption);
    }
    if (purpose == "EditedDescription") {
        std::string cat = match1(text, kEditType);
        std::string instr = match1(text, kEditInstruction);
        std::string original = match1(text, kStyleCaption);
        if (cat.empty() || instr.empty()) return reply("An edited photo.");
        while (!instr.empty() && instr.back() == '.') instr.pop_back();
        return reply(original + " [" + cat + " edit: " + instr + "]");
    }
    if (purpose == "DifferenceDescription") {
        std::smatch m;
        if (std::regex_search(text, m, kMarker)) {
            return reply("Difference: In the second image, " + lower_first(m[2].str()) +
                         " has been applied.\nCategory: " + m[1].str());
        }
        return reply("Difference: no difference\nCategory: Object");
    }
    if (purpose == "Judge1") {
        return reply(u < opt_.judge1_fail_rate ? "No, the difference is not visible." : "Yes, the captions and difference are consistent.");
    }
    if (purpose == "Judge2") {
        return reply(u < opt_.judge2_fail_rate ? "No." : "Yes.");
    }
    if (purpose == "SFTData") {
        std::string diff = match1(text, kDifferenceSlot);
        if (diff.empty()) diff = "The images differ.";
        return reply("Q: What is the most notable difference between the two images?\nA: " + diff);
    }
    if (purpose == "BenchQuestion") {
        int count = match_int(text, kWriteCount, 1);
        std::string out;
        for (int k = 0; k < count; ++k) {
            out += kQuestionForms[(h + static_cast<std::uint64_t>(k)) % kQuestionForms.size()];
            out += '\n';
        }
        return reply(out);
    }
    if (purpose == "RightAnswer") {
        std::string diff = match1(text, kTrueDifference);
        return reply(diff.empty() ? "The images differ in one detail." : diff);
    }
    if (purpose == "WrongAnswer") {
        int count = match_int(text, kWriteCount, 3);
        std::string correct = normalize_text(match1(text, kCorrect));
        std::string out;
        int produced = 0;
        for (std::uint64_t k = 0; produced < count && k < 64; ++k) {
            EditCategory c = kAllCategories[(h + k * 7) % kCategoryCount];
            const char* noun = kNouns[(h / 3 + k) % kNouns.size()];
            std::string cand = "In the second image, " + lower_first(instruction_for(c, noun)) + " has been applied.";
            if (normalize_text(cand) == correct || out.find(cand) != std::string::npos) continue;
            out += cand + "\n";
            ++produced;
        }
        return reply(out);
    }
    if (purpose == "MultipleChoice") {
        // A guessing test-taker: a fixed letter per question.
        const char letter = static_cast<char>('A' + h % 4);
        return reply(std::string("The answer is (") + letter + ").");
    }
    (void)kFirstQuoted;
    return reply("Yes.");
}

// ---------------------------------------------------------------------------

PixelEditorOptions PixelEditorOptions::from_json(const nlohmann::json& j, std::uint64_t seed) {
    PixelEditorOptions o;
    o.seed = seed;
    if (j.is_object()) {
        o.patch_sides = j.value("patch_sides", o.patch_sides);
        o.refuse_rate = j.value("refuse_rate", 0.0);
        o.noop_rate = j.value("noop_rate", 0.0);
    }
    if (o.patch_sides.empty()) o.patch_sides = {1};
    return o;
}

PixelEditor::PixelEditor(PixelEditorOptions options) : opt_(std::move(options)) {}

std::string PixelEditor::edit(std::string_view image_bytes, std::string_view instruction) {
    std::string digest = sha256_hex(image_bytes);
    std::uint64_t h = derive_seed({seed_str(opt_.seed), digest, instruction});
    SplitMix64 rng{h};
    double u_refuse = rng.unit();
    double u_noop = rng.unit();
    if (instruction.find("[refuse]") != std::string_view::npos || u_refuse < opt_.refuse_rate) {
        throw EditRefused("I can't make that edit to this image.");
    }
    if (instruction.find("[noop]") != std::string_view::npos || u_noop < opt_.noop_rate) {
        return std::string(image_bytes);
    }
    RgbImage img = decode_ppm(image_bytes);
    int side = opt_.patch_sides[rng.next() % opt_.patch_sides.size()];
    side = std::max(1, std::min({side, img.width, img.height}));
    int x0 = static_cast<int>(rng.next() % static_cast<std::uint64_t>(img.width - side + 1));
    int y0 = static_cast<int>(rng.next() % static_cast<std::uint64_t>(img.height - side + 1));
    for (int y = y0; y < y0 + side; ++y) {
        for (int x = x0; x < x0 + side; ++x) {
            std::size_t base = (static_cast<std::size_t>(y) * static_cast<std::size_t>(img.width) +
                                static_cast<std::size_t>(x)) * 3;
            for (std::size_t ch = 0; ch < 3; ++ch) img.pixels[base + ch] = static_cast<std::uint8_t>(255 - img.pixels[base + ch]);
        }
    }
    return encode_ppm(img);
}

// ---------------------------------------------------------------------------

DigestEmbedder::DigestEmbedder(std::size_t dimension, std::uint64_t seed) : dimension_(dimension), seed_(seed) {}

std::vector<double> DigestEmbedder::embed(std::string_view image_bytes) {
    check_decodable(image_bytes);
    SplitMix64 rng{derive_seed({seed_str(seed_), sha256_hex(image_bytes)})};
    std::vector<double> v(dimension_);
    double norm = 0.0;
    for (double& x : v) {
        x = rng.gaussian();
        norm += x * x;
    }
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
    return v;
}

ProjectionEmbedder::ProjectionEmbedder(std::size_t dimension, std::uint64_t seed)
    : dimension_(dimension), seed_(seed) {}

const std::vector<double>& ProjectionEmbedder::projection(std::size_t features) {
    std::lock_guard lock(mu_);
    auto it = cache_.find(features);
    if (it != cache_.end()) return it->second;
    // One fixed Gaussian row per feature index.
    SplitMix64 rng{derive_seed({"projection", seed_str(seed_)})};
    std::vector<double> m(features * dimension_);
    for (double& x : m) x = rng.gaussian();
    return cache_.emplace(features, std::move(m)).first->second;
}

std::vector<double> ProjectionEmbedder::embed(std::string_view image_bytes) {
    if (sniff_format(image_bytes) != ImageFormat::Ppm) return DigestEmbedder(dimension_, seed_).embed(image_bytes);
    RgbImage img = decode_ppm(image_bytes);
    const std::vector<double>& proj = projection(img.pixels.size());
    // Features are centred intensities, so inverting a pixel moves the embedding.
    std::vector<double> v(dimension_, 0.0);
    for (std::size_t f = 0; f < img.pixels.size(); ++f) {
        double x = static_cast<double>(img.pixels[f]) / 255.0 - 0.5;
        const double* row = proj.data() + f * dimension_;
        for (std::size_t k = 0; k < dimension_; ++k) v[k] += x * row[k];
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm == 0.0) throw ProviderError("degenerate image embedding");
    for (double& x : v) x /= norm;
    return v;
}

RgbImage make_mock_image(std::uint64_t seed, int width, int height) {
    SplitMix64 rng{seed};
    RgbImage img;
    img.width = width;
    img.height = height;
    img.pixels.resize(static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 3);
    std::array<double, 9> coef{};
    for (double& c : coef) c = rng.unit();
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            double fx = static_cast<double>(x) / std::max(1, width - 1);
            double fy = static_cast<double>(y) / std::max(1, height - 1);
            for (int ch = 0; ch < 3; ++ch) {
                double val = coef[static_cast<std::size_t>(ch) * 3] * fx + coef[static_cast<std::size_t>(ch) * 3 + 1] * fy +
                             coef[static_cast<std::size_t>(ch) * 3 + 2] * 0.5;
                val = std::clamp(val / 1.5 + 0.15 * (rng.unit() - 0.5), 0.0, 1.0);
                img.pixels[(static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)) * 3 +
                           static_cast<std::size_t>(ch)] = static_cast<std::uint8_t>(std::lround(val * 255.0));
            }
        }
    }
    return img;
}

std::vector<SourceSample> make_mock_corpus(const ContentStore& store, std::size_t n, std::uint64_t seed, int width,
                                           int height) {
    static constexpr std::array<const char*, 8> kAdjectives = {
        "red", "wooden", "small", "old", "striped", "bright", "tall", "round",
    };
    static constexpr std::array<const char*, 8> kPlaces = {
        "on a kitchen table", "in a sunny park", "beside a brick wall", "on a beach",
        "in a quiet street",  "near a window",   "on a wooden floor",  "in a garden",
    };
    std::vector<SourceSample> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::uint64_t h = derive_seed({"mock-corpus", seed_str(seed), std::to_string(i)});
        SplitMix64 rng{h};
        std::string bytes = encode_ppm(make_mock_image(h, width, height));
        ImageRef ref = store.put(bytes);
        std::string caption = std::string("A ") + kAdjectives[rng.next() % kAdjectives.size()] + " " +
                              kNouns[rng.next() % kNouns.size()] + " " + kPlaces[rng.next() % kPlaces.size()] + ".";
        Source src{Source::Kind::Other, "mock"};
        out.push_back(make_source_sample(bytes, ref, caption, src, {{"index", std::to_string(i)}}));
    }
    return out;
}

// ---------------------------------------------------------------------------

std::shared_ptr<ChatProvider> make_chat_provider(const ProviderConfig& cfg, std::uint64_t seed) {
    validate(cfg);
    if (cfg.kind == "http") return std::make_shared<HttpChatProvider>(make_poster(cfg));
    std::string behavior = cfg.options.is_object() ? cfg.options.value("behavior", "world") : "world";
    if (behavior == "world") return std::make_shared<SyntheticWorld>(MockWorldOptions::from_json(cfg.options, seed));
    if (behavior == "echo") return std::make_shared<EchoChat>();
    if (behavior == "fail") return std::make_shared<FailingChat>();
    if (behavior == "always") return ScriptedChat::always(cfg.options.value("reply", "Yes"));
    throw PreconditionError("unknown mock chat behavior \"" + behavior + "\"");
}

std::shared_ptr<ImageEditor> make_image_editor(const ProviderConfig& cfg, std::uint64_t seed) {
    validate(cfg);
    if (cfg.kind == "http") return std::make_shared<HttpImageEditor>(make_poster(cfg));
    return std::make_shared<PixelEditor>(PixelEditorOptions::from_json(cfg.options, seed));
}

std::shared_ptr<ImageEmbedder> make_image_embedder(const ProviderConfig& cfg, std::uint64_t seed) {
    validate(cfg);
    if (cfg.kind == "http") return std::make_shared<HttpImageEmbedder>(make_poster(cfg));
    std::string behavior = cfg.options.is_object() ? cfg.options.value("behavior", "projection") : "projection";
    if (behavior == "digest") return std::make_shared<DigestEmbedder>(cfg.dimension, seed);
    if (behavior == "projection") return std::make_shared<ProjectionEmbedder>(cfg.dimension, seed);
    throw PreconditionError("unknown mock embedder behavior \"" + behavior + "\"");
}

}  // namespace medforge::providers
