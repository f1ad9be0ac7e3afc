#pragma once

// Deterministic stand-ins for the external model roles. Every mock is a pure
// function of (seed, inputs), so repeated runs produce identical bytes.

#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "medforge/content_store.hpp"
#include "medforge/image.hpp"
#include "medforge/providers.hpp"

namespace medforge::providers {

// Replies from a user-supplied function of the request.
class ScriptedChat final : public ChatProvider {
public:
    using Script = std::function<std::string(const ChatRequest&)>;

    explicit ScriptedChat(Script script);
    static std::shared_ptr<ScriptedChat> always(std::string reply);
    // Replies in order; the last reply repeats once the list is exhausted.
    static std::shared_ptr<ScriptedChat> sequence(std::vector<std::string> replies);

    ChatReply complete(const ChatRequest& request) override;
    std::size_t calls() const noexcept { return calls_.load(); }

private:
    Script script_;
    std::atomic<std::size_t> calls_{0};
};

// Returns the text of the last message verbatim.
class EchoChat final : public ChatProvider {
public:
    ChatReply complete(const ChatRequest& request) override;
};

// Always throws TransportError.
class FailingChat final : public ChatProvider {
public:
    ChatReply complete(const ChatRequest& request) override;
};

struct MockWorldOptions {
    std::uint64_t seed = 0;
    double filter_reject_rate = 0.0;
    double judge1_fail_rate = 0.0;
    double judge2_fail_rate = 0.0;

    static MockWorldOptions from_json(const nlohmann::json& j, std::uint64_t seed);
};

// Plays every prompt role of the construction pipeline and benchmark
// generator, keyed on ChatRequest::purpose. Replies follow the formats the
// default templates ask for. Rates are applied by hashing the request, not by
// drawing from shared RNG state, so replies do not depend on call order.
class SyntheticWorld final : public ChatProvider {
public:
    explicit SyntheticWorld(MockWorldOptions options);
    ChatReply complete(const ChatRequest& request) override;

private:
    double unit(std::string_view purpose, std::string_view text) const;
    MockWorldOptions opt_;
};

struct PixelEditorOptions {
    std::uint64_t seed = 0;
    // Side lengths of the inverted square patch; one is chosen per edit.
    std::vector<int> patch_sides{1};
    double refuse_rate = 0.0;
    double noop_rate = 0.0;

    static PixelEditorOptions from_json(const nlohmann::json& j, std::uint64_t seed);
};

// Inverts a small square patch of a PPM image at a position derived from the
// image and instruction. Instructions containing "[refuse]" are always
// refused; "[noop]" returns the input unchanged.
class PixelEditor final : public ImageEditor {
public:
    explicit PixelEditor(PixelEditorOptions options = {});
    std::string edit(std::string_view image_bytes, std::string_view instruction) override;

private:
    PixelEditorOptions opt_;
};

class ScriptedEditor final : public ImageEditor {
public:
    using Script = std::function<std::string(std::string_view, std::string_view)>;
    explicit ScriptedEditor(Script script) : script_(std::move(script)) {}
    std::string edit(std::string_view image_bytes, std::string_view instruction) override {
        return script_(image_bytes, instruction);
    }

private:
    Script script_;
};

// Pseudo-random unit direction seeded by the digest of the image bytes.
// Identical bytes give identical vectors; different bytes are near-orthogonal.
class DigestEmbedder final : public ImageEmbedder {
public:
    DigestEmbedder(std::size_t dimension, std::uint64_t seed);
    std::vector<double> embed(std::string_view image_bytes) override;
    std::size_t dimension() const override { return dimension_; }

private:
    std::size_t dimension_;
    std::uint64_t seed_;
};

// Fixed random projection of decoded PPM pixels, so visually close images
// get close embeddings. Non-PPM input falls back to digest behaviour.
class ProjectionEmbedder final : public ImageEmbedder {
public:
    ProjectionEmbedder(std::size_t dimension, std::uint64_t seed);
    std::vector<double> embed(std::string_view image_bytes) override;
    std::size_t dimension() const override { return dimension_; }

private:
    const std::vector<double>& projection(std::size_t features);

    std::size_t dimension_;
    std::uint64_t seed_;
    std::mutex mu_;
    std::map<std::size_t, std::vector<double>> cache_;  // feature count -> matrix
};

// Smooth random RGB image for mock corpora.
RgbImage make_mock_image(std::uint64_t seed, int width, int height);

// `n` synthetic source samples: mock PPM images written to `store` with
// short template captions.
std::vector<SourceSample> make_mock_corpus(const ContentStore& store, std::size_t n, std::uint64_t seed,
                                           int width = 32, int height = 32);

// Factories honouring ProviderConfig::kind. Mock behaviour is selected by
// cfg.options["behavior"]: chat "world" (default), "echo", "always" (with
// "reply"), "fail"; embedder "projection" (default) or "digest".
std::shared_ptr<ChatProvider> make_chat_provider(const ProviderConfig& cfg, std::uint64_t seed);
std::shared_ptr<ImageEditor> make_image_editor(const ProviderConfig& cfg, std::uint64_t seed);
std::shared_ptr<ImageEmbedder> make_image_embedder(const ProviderConfig& cfg, std::uint64_t seed);

}  // namespace medforge::providers
