#include <atomic>
#include <cmath>
#include <thread>

#include <gtest/gtest.h>
#include <httplib.h>

#include "medforge/digest.hpp"
#include "medforge/http_client.hpp"
#include "medforge/image.hpp"
#include "medforge/mocks.hpp"
#include "medforge/prompts.hpp"
#include "medforge/providers.hpp"
#include "support.hpp"

using namespace medforge;
using namespace medforge::providers;
using medforge::testing::TempDir;
using nlohmann::json;

namespace {

std::string completion(const std::string& text) {
    return json{{"choices", json::array({json{{"message", json{{"role", "assistant"}, {"content", text}}}}})}}.dump();
}

// Local OpenAI-shaped server on an ephemeral port.
class FakeServer {
public:
    FakeServer() {
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~FakeServer() {
        server_.stop();
        thread_.join();
    }
    httplib::Server& server() { return server_; }
    std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }

private:
    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
};

TimeSource no_sleep() {
    TimeSource t;
    t.sleep = [](Clock::duration) {};
    return t;
}

ProviderConfig http_cfg(const std::string& endpoint) {
    ProviderConfig cfg;
    cfg.kind = "http";
    cfg.endpoint = endpoint;
    cfg.model = "test-model";
    cfg.timeout_s = 5;
    return cfg;
}

// Deterministic fake clock shared between threads.
struct FakeClock {
    std::atomic<std::int64_t> ns{0};
    TimeSource source() {
        TimeSource t;
        t.now = [this] { return Clock::time_point(std::chrono::nanoseconds(ns.load())); };
        t.sleep = [this](Clock::duration d) {
            ns.fetch_add(std::max<std::int64_t>(1, std::chrono::duration_cast<std::chrono::nanoseconds>(d).count()));
        };
        return t;
    }
};

}  // namespace

TEST(ChatMock, ScriptedYesPassesThrough) {
    auto chat = ScriptedChat::always("Yes");
    EXPECT_EQ(chat_text(*chat, {ChatMessage::user("Is it editable?")}).text, "Yes");
    EXPECT_EQ(chat->calls(), 1u);
}

TEST(ChatMock, EchoReturnsPromptVerbatim) {
    EchoChat echo;
    PromptTemplate t{PromptRole::FilterEditable, "Caption: \"{caption}\". Editable?"};
    std::string prompt = render(t, {{"caption", "A mug."}});
    EXPECT_EQ(chat_text(echo, {ChatMessage::user(prompt)}).text, prompt);
}

TEST(ChatMock, SequenceRepeatsLastReply) {
    auto chat = ScriptedChat::sequence({"one", "two"});
    std::vector<std::string> got;
    for (int i = 0; i < 4; ++i) got.push_back(chat_text(*chat, {ChatMessage::user("x")}).text);
    EXPECT_EQ(got, (std::vector<std::string>{"one", "two", "two", "two"}));
}

TEST(ChatPreconditions, EmptyMessagesAndImagesInTextChat) {
    EchoChat echo;
    EXPECT_THROW(chat_text(echo, {}), PreconditionError);
    EXPECT_THROW(chat_text(echo, {ChatMessage::user({ImageRef{"a.ppm"}}, "x")}), PreconditionError);
    ChatMessage bad = ChatMessage::system("s");
    bad.parts.emplace_back(ImagePart{ImageRef{"a.ppm"}, {}});
    EXPECT_THROW(validate(bad), PreconditionError);
}

TEST(ChatPreconditions, UnresolvableImageFailsBeforeNetwork) {
    TempDir dir;
    ContentStore store(dir / "store");
    auto chat = ScriptedChat::always("Yes");
    EXPECT_THROW(chat_vision(*chat, store, {ChatMessage::user({ImageRef{"images/00/missing.ppm"}}, "x")}),
                 PreconditionError);
    EXPECT_EQ(chat->calls(), 0u);
}

TEST(Http, RetriesOn429ThenSucceeds) {
    FakeServer fake;
    std::atomic<int> hits{0};
    fake.server().Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        auto body = json::parse(req.body);
        EXPECT_EQ(body.at("model"), "test-model");
        if (hits++ < 2) {
            res.status = 429;
            res.set_content("slow down", "text/plain");
            return;
        }
        res.set_content(completion("Yes"), "application/json");
    });
    auto poster = std::make_shared<RetryingPoster>(http_cfg(fake.endpoint()), make_http_transport(), nullptr, no_sleep());
    HttpChatProvider chat(poster);
    ChatReply reply = chat_text(chat, {ChatMessage::user("Editable?")});
    EXPECT_EQ(reply.text, "Yes");
    EXPECT_EQ(reply.retries, 2);
    EXPECT_EQ(hits.load(), 3);
}

TEST(Http, AttemptsCappedAtMaxRetriesPlusOne) {
    FakeServer fake;
    std::atomic<int> hits{0};
    fake.server().Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
        ++hits;
        res.status = 503;
    });
    auto cfg = http_cfg(fake.endpoint());
    cfg.max_retries = 2;
    auto poster = std::make_shared<RetryingPoster>(cfg, make_http_transport(), nullptr, no_sleep());
    HttpChatProvider chat(poster);
    try {
        chat_text(chat, {ChatMessage::user("x")});
        FAIL();
    } catch (const HttpStatusError& e) {
        EXPECT_EQ(e.status(), 503);
    }
    EXPECT_EQ(hits.load(), 3);
}

TEST(Http, ClientErrorIsNotRetried) {
    FakeServer fake;
    std::atomic<int> hits{0};
    fake.server().Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
        ++hits;
        res.status = 400;
    });
    auto poster = std::make_shared<RetryingPoster>(http_cfg(fake.endpoint()), make_http_transport(), nullptr, no_sleep());
    HttpChatProvider chat(poster);
    EXPECT_THROW(chat_text(chat, {ChatMessage::user("x")}), HttpStatusError);
    EXPECT_EQ(hits.load(), 1);
}

TEST(Http, TimeoutBelowServerLatency) {
    FakeServer fake;
    fake.server().Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
        std::this_thread::sleep_for(std::chrono::milliseconds(600));
        res.set_content(completion("late"), "application/json");
    });
    auto cfg = http_cfg(fake.endpoint());
    cfg.timeout_s = 0.1;
    cfg.max_retries = 0;
    auto poster = std::make_shared<RetryingPoster>(cfg, make_http_transport(), nullptr, no_sleep());
    HttpChatProvider chat(poster);
    EXPECT_THROW(chat_text(chat, {ChatMessage::user("x")}), TransportError);
}

TEST(Http, EmptyCompletionIsAnError) {
    FakeServer fake;
    fake.server().Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
        res.set_content(completion("   "), "application/json");
    });
    auto poster = std::make_shared<RetryingPoster>(http_cfg(fake.endpoint()), make_http_transport(), nullptr, no_sleep());
    HttpChatProvider chat(poster);
    EXPECT_THROW(chat_text(chat, {ChatMessage::user("x")}), EmptyCompletionError);
}

TEST(Http, VisionSendsDataUrlsAndEditorRefusal) {
    TempDir dir;
    ContentStore store(dir / "store");
    std::string bytes = encode_ppm(make_mock_image(9, 8, 8));
    ImageRef ref = store.put(bytes);

    FakeServer fake;
    std::string seen_url;
    fake.server().Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        auto body = json::parse(req.body);
        const auto& parts = body.at("messages").at(0).at("content");
        seen_url = parts.at(0).at("image_url").at("url").get<std::string>();
        res.set_content(completion("I cannot edit people."), "application/json");
    });
    auto poster = std::make_shared<RetryingPoster>(http_cfg(fake.endpoint()), make_http_transport(), nullptr, no_sleep());
    HttpChatProvider chat(poster);
    EXPECT_EQ(chat_vision(chat, store, {ChatMessage::user({ref}, "Describe.")}).text, "I cannot edit people.");
    EXPECT_EQ(seen_url, "data:image/x-portable-pixmap;base64," + base64_encode(bytes));

    HttpImageEditor editor(poster);
    try {
        edit_image(editor, store, ref, "Make the mug blue.");
        FAIL();
    } catch (const EditRefused& e) {
        EXPECT_EQ(e.provider_message(), "I cannot edit people.");
    }
}

TEST(Http, EditorReturnsImageAndEmbedderParses) {
    TempDir dir;
    ContentStore store(dir / "store");
    std::string original = encode_ppm(make_mock_image(1, 8, 8));
    std::string edited = encode_ppm(make_mock_image(2, 8, 8));
    ImageRef ref = store.put(original);

    FakeServer fake;
    fake.server().Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
        json msg{{"role", "assistant"},
                 {"content", "done"},
                 {"images", json::array({json{{"image_url", {{"url", "data:image/x-portable-pixmap;base64," +
                                                                         base64_encode(edited)}}}}})}};
        res.set_content(json{{"choices", json::array({json{{"message", msg}}})}}.dump(), "application/json");
    });
    fake.server().Post("/v1/embeddings", [&](const httplib::Request&, httplib::Response& res) {
        res.set_content(json{{"data", json::array({json{{"embedding", {3.0, 4.0}}}})}}.dump(), "application/json");
    });
    auto cfg = http_cfg(fake.endpoint());
    cfg.dimension = 2;
    auto poster = std::make_shared<RetryingPoster>(cfg, make_http_transport(), nullptr, no_sleep());
    HttpImageEditor editor(poster);
    ImageRef out = edit_image(editor, store, ref, "Swap it.");
    EXPECT_EQ(store.read(out), edited);

    HttpImageEmbedder embedder(poster);
    auto v = embed_image(embedder, store, ref, 2);
    EXPECT_NEAR(v[0], 0.6, 1e-12);
    EXPECT_NEAR(v[1], 0.8, 1e-12);
    EXPECT_THROW(embed_image(embedder, store, ref, 512), DimensionMismatch);
}

TEST(RateLimiter, NeverExceedsBudgetInAnyWindow) {
    FakeClock clock;
    RateLimiter limiter(30, clock.source());
    std::vector<std::int64_t> issued;
    for (int i = 0; i < 200; ++i) {
        limiter.acquire();
        issued.push_back(clock.ns.load());
    }
    const std::int64_t window = 60'000'000'000;
    for (std::size_t i = 0; i < issued.size(); ++i) {
        std::size_t in_window = 0;
        for (std::size_t k = i; k < issued.size() && issued[k] - issued[i] < window; ++k) ++in_window;
        EXPECT_LE(in_window, 30u);
    }
    // 200 requests at 30/min cannot finish before six full windows pass.
    EXPECT_GE(issued.back(), 6 * window);
}

TEST(RateLimiter, ThreadedStress) {
    FakeClock clock;
    RateLimiter limiter(20, clock.source());
    std::mutex mu;
    std::vector<std::int64_t> issued;
    std::vector<std::thread> workers;
    for (int t = 0; t < 4; ++t) {
        workers.emplace_back([&] {
            for (int i = 0; i < 25; ++i) {
                limiter.acquire();
                std::lock_guard lock(mu);
                issued.push_back(clock.ns.load());
            }
        });
    }
    for (auto& w : workers) w.join();
    std::sort(issued.begin(), issued.end());
    ASSERT_EQ(issued.size(), 100u);
    for (std::size_t i = 0; i < issued.size(); ++i) {
        std::size_t in_window = 0;
        for (std::size_t k = i; k < issued.size() && issued[k] - issued[i] < 60'000'000'000; ++k) ++in_window;
        EXPECT_LE(in_window, 20u);
    }
}

TEST(RateLimiter, RejectsNonPositiveRate) { EXPECT_THROW(RateLimiter(0), PreconditionError); }

TEST(Backoff, ExponentialWithEqualJitter) {
    BackoffPolicy p;
    std::mt19937_64 rng(1);
    for (int attempt = 0; attempt < 10; ++attempt) {
        double capped = std::min(500.0 * std::pow(2.0, attempt), 30000.0);
        for (int k = 0; k < 20; ++k) {
            auto d = p.delay(attempt, rng).count();
            EXPECT_GE(d, static_cast<std::int64_t>(capped / 2) - 1);
            EXPECT_LE(d, static_cast<std::int64_t>(capped));
        }
    }
}

TEST(ProviderConfig, ValidationAndJson) {
    ProviderConfig cfg;
    EXPECT_THROW(validate(cfg), PreconditionError);  // http without endpoint
    cfg.kind = "mock";
    validate(cfg);
    cfg.requests_per_minute = 0;
    EXPECT_THROW(validate(cfg), PreconditionError);
    ProviderConfig h = http_cfg("http://localhost:1/v1");
    h.options = json{{"k", 1}};
    EXPECT_EQ(json(h).get<ProviderConfig>().endpoint, h.endpoint);
    EXPECT_EQ(json(h).get<ProviderConfig>().options, h.options);
}

TEST(Editor, PixelEditorChangesBytes) {
    TempDir dir;
    ContentStore store(dir / "store");
    ImageRef ref = store.put(encode_ppm(make_mock_image(3, 16, 16)));
    PixelEditor editor;
    ImageRef out = edit_image(editor, store, ref, "Make the cup red.");
    EXPECT_NE(out, ref);
    RgbImage a = decode_ppm(store.read(ref));
    RgbImage b = decode_ppm(store.read(out));
    std::size_t changed = 0;
    for (std::size_t i = 0; i < a.pixels.size(); i += 3) {
        changed += (a.pixels[i] != b.pixels[i] || a.pixels[i + 1] != b.pixels[i + 1] || a.pixels[i + 2] != b.pixels[i + 2]);
    }
    EXPECT_EQ(changed, 1u);
    EXPECT_EQ(edit_image(editor, store, ref, "Make the cup red."), out);  // deterministic
    EXPECT_THROW(edit_image(editor, store, ref, "  "), PreconditionError);
    EXPECT_THROW(edit_image(editor, store, ref, "[refuse] anything"), EditRefused);
    EXPECT_EQ(edit_image(editor, store, ref, "[noop] anything"), ref);
}

TEST(Embedder, UnitNormAndDeterministic) {
    TempDir dir;
    ContentStore store(dir / "store");
    DigestEmbedder digest(512, 7);
    ProjectionEmbedder projection(512, 7);
    for (std::uint64_t s = 0; s < 100; ++s) {
        ImageRef ref = store.put(encode_ppm(make_mock_image(s, 8, 8)));
        for (ImageEmbedder* e : {static_cast<ImageEmbedder*>(&digest), static_cast<ImageEmbedder*>(&projection)}) {
            auto v = embed_image(*e, store, ref, 512);
            double n = 0;
            for (double x : v) n += x * x;
            EXPECT_NEAR(std::sqrt(n), 1.0, 1e-6);
            EXPECT_EQ(embed_image(*e, store, ref, 512), v);
        }
    }
}

TEST(Embedder, CorruptBytesAreADecodeError) {
    TempDir dir;
    ContentStore store(dir / "store");
    std::string bytes = encode_ppm(make_mock_image(1, 8, 8));
    ImageRef ref = store.put(bytes.substr(0, bytes.size() / 2));
    DigestEmbedder e(16, 0);
    EXPECT_THROW(embed_image(e, store, ref, 16), DecodeError);
}

TEST(Factories, MockBehaviours) {
    ProviderConfig cfg;
    cfg.kind = "mock";
    cfg.options = json{{"behavior", "always"}, {"reply", "No"}};
    EXPECT_EQ(chat_text(*make_chat_provider(cfg, 0), {ChatMessage::user("x")}).text, "No");
    cfg.options = json{{"behavior", "fail"}};
    EXPECT_THROW(chat_text(*make_chat_provider(cfg, 0), {ChatMessage::user("x")}), TransportError);
    cfg.options = json{{"behavior", "nonsense"}};
    EXPECT_THROW(make_chat_provider(cfg, 0), PreconditionError);
    cfg.options = json{{"behavior", "digest"}};
    cfg.dimension = 32;
    EXPECT_EQ(make_image_embedder(cfg, 0)->dimension(), 32u);
}

TEST(MockWorld, RepliesArePureFunctionsOfSeedAndInput) {
    MockWorldOptions o;
    o.seed = 5;
    SyntheticWorld a(o), b(o);
    ChatRequest req{{ChatMessage::user("Caption: \"A red mug on a table.\"")}, "EditInstruction"};
    EXPECT_EQ(a.complete(req).text, b.complete(req).text);
    EXPECT_FALSE(a.complete(req).text.empty());
}
