#pragma once

// Client-side interfaces for the four external model roles: vision-language
// chat, text-only chat, image editing and image embedding.
//
// Providers return raw text; interpreting replies (e.g. strict "yes"
// parsing) is the caller's job.

#include <chrono>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "medforge/content_store.hpp"
#include "medforge/datamodel.hpp"

namespace medforge::providers {

// ---------------------------------------------------------------------------
// Errors

// Caller broke a precondition; raised before any network traffic.
class PreconditionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Any failure attributable to the remote provider. Pipelines defer on these.
class ProviderError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Connection failure or timeout after all retries.
class TransportError : public ProviderError {
public:
    using ProviderError::ProviderError;
};

class HttpStatusError : public ProviderError {
public:
    HttpStatusError(int status, std::string body);
    int status() const noexcept { return status_; }
    const std::string& body() const noexcept { return body_; }

private:
    int status_;
    std::string body_;
};

class EmptyCompletionError : public ProviderError {
public:
    using ProviderError::ProviderError;
};

// The editor declined (safety filter, refusal text instead of an image).
class EditRefused : public ProviderError {
public:
    explicit EditRefused(std::string provider_message);
    const std::string& provider_message() const noexcept { return message_; }

private:
    std::string message_;
};

class DimensionMismatch : public ProviderError {
public:
    using ProviderError::ProviderError;
};

// ---------------------------------------------------------------------------
// Messages

enum class MessageRole : std::uint8_t { System, User, Assistant };
std::string_view to_string(MessageRole r);

struct TextPart {
    std::string text;
};

// `data` is filled from the content store when the request is issued.
struct ImagePart {
    ImageRef ref;
    std::string data;
};

using ContentPart = std::variant<TextPart, ImagePart>;

struct ChatMessage {
    MessageRole role = MessageRole::User;
    std::vector<ContentPart> parts;

    static ChatMessage system(std::string text);
    static ChatMessage user(std::string text);
    static ChatMessage user(std::vector<ImageRef> images, std::string text);

    // Concatenation of the text parts.
    std::string text() const;
    std::size_t image_count() const;
};

// Throws PreconditionError: no parts, or images outside a user message.
void validate(const ChatMessage& m);

struct ChatRequest {
    std::vector<ChatMessage> messages;
    // Prompt role or other label; informational for HTTP providers, used by
    // mocks to pick a behaviour.
    std::string purpose;
};

struct ChatReply {
    std::string text;
    int retries = 0;
};

// ---------------------------------------------------------------------------
// Configuration

struct ProviderConfig {
    std::string kind = "http";  // "http" or "mock"
    std::string endpoint;
    std::string model;
    std::string api_key_env;
    int max_retries = 3;
    double requests_per_minute = 60.0;
    double timeout_s = 60.0;
    std::size_t dimension = 512;  // embedders only
    nlohmann::json options;       // mock knobs and provider extras

    std::chrono::milliseconds timeout() const;
};

// Throws PreconditionError when max_retries < 0, requests_per_minute <= 0,
// timeout_s <= 0, or an HTTP provider lacks an endpoint.
void validate(const ProviderConfig& cfg);

void to_json(nlohmann::json& j, const ProviderConfig& cfg);
void from_json(const nlohmann::json& j, ProviderConfig& cfg);

// ---------------------------------------------------------------------------
// Interfaces

class ChatProvider {
public:
    virtual ~ChatProvider() = default;
    virtual ChatReply complete(const ChatRequest& request) = 0;
};

class ImageEditor {
public:
    virtual ~ImageEditor() = default;
    // Returns exactly one edited image. Throws EditRefused on refusal.
    virtual std::string edit(std::string_view image_bytes, std::string_view instruction) = 0;
};

class ImageEmbedder {
public:
    virtual ~ImageEmbedder() = default;
    virtual std::vector<double> embed(std::string_view image_bytes) = 0;
    virtual std::size_t dimension() const = 0;
};

// ---------------------------------------------------------------------------
// Operations

// Resolves image parts from the store (PreconditionError if a ref does not
// resolve) and returns the assistant text.
ChatReply chat_vision(ChatProvider& provider, const ContentStore& store, std::vector<ChatMessage> messages,
                      std::string purpose = {});

// As chat_vision but rejects image parts.
ChatReply chat_text(ChatProvider& provider, std::vector<ChatMessage> messages, std::string purpose = {});

// Writes the edited image to the store and returns its ref.
ImageRef edit_image(ImageEditor& editor, const ContentStore& store, const ImageRef& image,
                    std::string_view instruction);

// Returns a unit vector of the configured dimension.
std::vector<double> embed_image(ImageEmbedder& embedder, const ContentStore& store, const ImageRef& image,
                                std::size_t expected_dimension);

// ---------------------------------------------------------------------------
// OpenAI-compatible wire format

// Request body for POST {endpoint}/chat/completions. Images become
// base64 data URLs in `image_url` parts.
nlohmann::json chat_completions_body(const ProviderConfig& cfg, const std::vector<ChatMessage>& messages);
// Extracts choices[0].message.content; throws EmptyCompletionError when blank.
std::string parse_chat_completion(std::string_view body);
// First data-URL image found in choices[0].message (content parts, inline
// text, or an `images` array). Empty when none.
std::string extract_image_payload(std::string_view body);
std::vector<double> parse_embedding_response(std::string_view body);

}  // namespace medforge::providers
