#include "medforge/providers.hpp"

#include <cctype>
#include <cmath>
#include <cstdlib>

#include "medforge/digest.hpp"
#include "medforge/image.hpp"

namespace medforge::providers {

using nlohmann::json;

HttpStatusError::HttpStatusError(int status, std::string body)
    : ProviderError("HTTP " + std::to_string(status) + ": " + body), status_(status), body_(std::move(body)) {}

EditRefused::EditRefused(std::string provider_message)
    : ProviderError("edit refused: " + provider_message), message_(std::move(provider_message)) {}

std::string_view to_string(MessageRole r) {
    switch (r) {
        case MessageRole::System: return "system";
        case MessageRole::User: return "user";
        case MessageRole::Assistant: return "assistant";
    }
    return "user";
}

ChatMessage ChatMessage::system(std::string text) {
    return {MessageRole::System, {TextPart{std::move(text)}}};
}

ChatMessage ChatMessage::user(std::string text) { return {MessageRole::User, {TextPart{std::move(text)}}}; }

ChatMessage ChatMessage::user(std::vector<ImageRef> images, std::string text) {
    ChatMessage m{MessageRole::User, {}};
    for (auto& ref : images) m.parts.emplace_back(ImagePart{std::move(ref), {}});
    m.parts.emplace_back(TextPart{std::move(text)});
    return m;
}

std::string ChatMessage::text() const {
    std::string out;
    for (const auto& p : parts) {
        if (const auto* t = std::get_if<TextPart>(&p)) out += t->text;
    }
    return out;
}

std::size_t ChatMessage::image_count() const {
    std::size_t n = 0;
    for (const auto& p : parts) n += std::holds_alternative<ImagePart>(p) ? 1 : 0;
    return n;
}

void validate(const ChatMessage& m) {
    if (m.parts.empty()) throw PreconditionError("chat message has no parts");
    if (m.role != MessageRole::User && m.image_count() > 0) {
        throw PreconditionError("image parts are only allowed in user messages");
    }
}

std::chrono::milliseconds ProviderConfig::timeout() const {
    return std::chrono::milliseconds(static_cast<std::int64_t>(std::llround(timeout_s * 1000.0)));
}

void validate(const ProviderConfig& cfg) {
    if (cfg.max_retries < 0) throw PreconditionError("max_retries must be >= 0");
    if (!(cfg.requests_per_minute > 0)) throw PreconditionError("requests_per_minute must be > 0");
    if (!(cfg.timeout_s > 0)) throw PreconditionError("timeout_s must be > 0");
    if (cfg.kind != "http" && cfg.kind != "mock") throw PreconditionError("unknown provider kind \"" + cfg.kind + "\"");
    if (cfg.kind == "http" && cfg.endpoint.empty()) throw PreconditionError("http provider requires an endpoint");
    if (cfg.dimension == 0) throw PreconditionError("dimension must be positive");
}

void to_json(json& j, const ProviderConfig& cfg) {
    j = json{{"kind", cfg.kind},
             {"endpoint", cfg.endpoint},
             {"model", cfg.model},
             {"api_key_env", cfg.api_key_env},
             {"max_retries", cfg.max_retries},
             {"requests_per_minute", cfg.requests_per_minute},
             {"timeout_s", cfg.timeout_s},
             {"dimension", cfg.dimension}};
    if (!cfg.options.is_null()) j["options"] = cfg.options;
}

void from_json(const json& j, ProviderConfig& cfg) {
    ProviderConfig d;
    cfg.kind = j.value("kind", d.kind);
    cfg.endpoint = j.value("endpoint", d.endpoint);
    cfg.model = j.value("model", d.model);
    cfg.api_key_env = j.value("api_key_env", d.api_key_env);
    cfg.max_retries = j.value("max_retries", d.max_retries);
    cfg.requests_per_minute = j.value("requests_per_minute", d.requests_per_minute);
    cfg.timeout_s = j.value("timeout_s", d.timeout_s);
    cfg.dimension = j.value("dimension", d.dimension);
    cfg.options = j.value("options", json());
    validate(cfg);
}

// ---------------------------------------------------------------------------

namespace {

void check_messages(const std::vector<ChatMessage>& messages) {
    if (messages.empty()) throw PreconditionError("at least one chat message is required");
    for (const auto& m : messages) validate(m);
}

double l2_norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

}  // namespace

ChatReply chat_vision(ChatProvider& provider, const ContentStore& store, std::vector<ChatMessage> messages,
                      std::string purpose) {
    check_messages(messages);
    for (auto& m : messages) {
        for (auto& p : m.parts) {
            if (auto* img = std::get_if<ImagePart>(&p)) {
                if (!store.exists(img->ref)) {
                    throw PreconditionError("unresolvable image ref \"" + img->ref.path + "\"");
                }
                img->data = store.read(img->ref);
            }
        }
    }
    ChatReply reply = provider.complete(ChatRequest{std::move(messages), std::move(purpose)});
    return reply;
}

ChatReply chat_text(ChatProvider& provider, std::vector<ChatMessage> messages, std::string purpose) {
    check_messages(messages);
    for (const auto& m : messages) {
        if (m.image_count() > 0) throw PreconditionError("text chat does not accept image parts");
    }
    return provider.complete(ChatRequest{std::move(messages), std::move(purpose)});
}

ImageRef edit_image(ImageEditor& editor, const ContentStore& store, const ImageRef& image,
                    std::string_view instruction) {
    bool blank = instruction.find_first_not_of(" \t\r\n") == std::string_view::npos;
    if (blank) throw PreconditionError("edit instruction is empty");
    if (!store.exists(image)) throw PreconditionError("unresolvable image ref \"" + image.path + "\"");
    std::string original = store.read(image);
    std::string edited = editor.edit(original, instruction);
    if (edited.empty()) throw ProviderError("malformed image payload: empty");
    try {
        check_decodable(edited);
    } catch (const DecodeError& e) {
        throw ProviderError(std::string("malformed image payload: ") + e.what());
    }
    return store.put(edited);
}

std::vector<double> embed_image(ImageEmbedder& embedder, const ContentStore& store, const ImageRef& image,
                                std::size_t expected_dimension) {
    if (!store.exists(image)) throw PreconditionError("unresolvable image ref \"" + image.path + "\"");
    std::string bytes = store.read(image);
    check_decodable(bytes);
    std::vector<double> v = embedder.embed(bytes);
    if (v.size() != expected_dimension) {
        throw DimensionMismatch("embedding has dimension " + std::to_string(v.size()) + ", configured " +
                                std::to_string(expected_dimension));
    }
    double n = l2_norm(v);
    if (!std::isfinite(n) || n == 0.0) throw ProviderError("embedding is zero or non-finite");
    for (double& x : v) x /= n;
    return v;
}

// ---------------------------------------------------------------------------

json chat_completions_body(const ProviderConfig& cfg, const std::vector<ChatMessage>& messages) {
    json msgs = json::array();
    for (const auto& m : messages) {
        json entry{{"role", std::string(to_string(m.role))}};
        if (m.image_count() == 0) {
            entry["content"] = m.text();
        } else {
            json parts = json::array();
            for (const auto& p : m.parts) {
                if (const auto* t = std::get_if<TextPart>(&p)) {
                    parts.push_back({{"type", "text"}, {"text", t->text}});
                } else {
                    const auto& img = std::get<ImagePart>(p);
                    std::string url = "data:" + std::string(mime_type_for(sniff_format(img.data))) + ";base64," +
                                      base64_encode(img.data);
                    parts.push_back({{"type", "image_url"}, {"image_url", {{"url", url}}}});
                }
            }
            entry["content"] = std::move(parts);
        }
        msgs.push_back(std::move(entry));
    }
    return json{{"model", cfg.model}, {"messages", std::move(msgs)}};
}

namespace {

const json& first_message(const json& j) {
    const auto& choices = j.at("choices");
    if (!choices.is_array() || choices.empty()) throw EmptyCompletionError("completion has no choices");
    return choices.at(0).at("message");
}

json parse_body(std::string_view body) {
    try {
        return json::parse(body);
    } catch (const json::exception& e) {
        throw ProviderError(std::string("malformed provider response: ") + e.what());
    }
}

}  // namespace

std::string parse_chat_completion(std::string_view body) {
    json j = parse_body(body);
    std::string text;
    try {
        const json& msg = first_message(j);
        const json& content = msg.contains("content") ? msg.at("content") : json();
        if (content.is_string()) {
            text = content.get<std::string>();
        } else if (content.is_array()) {
            for (const auto& part : content) {
                if (part.value("type", "") == "text") text += part.value("text", "");
            }
        }
    } catch (const json::exception& e) {
        throw ProviderError(std::string("malformed provider response: ") + e.what());
    }
    if (text.find_first_not_of(" \t\r\n") == std::string::npos) throw EmptyCompletionError("empty completion");
    return text;
}

std::string extract_image_payload(std::string_view body) {
    json j = parse_body(body);
    auto from_data_url = [](std::string_view s) -> std::string {
        std::size_t start = s.find("data:image/");
        if (start == std::string_view::npos) return {};
        std::size_t comma = s.find(";base64,", start);
        if (comma == std::string_view::npos) return {};
        std::size_t begin = comma + 8;
        std::size_t end = begin;
        while (end < s.size()) {
            char c = s[end];
            bool b64 = std::isalnum(static_cast<unsigned char>(c)) || c == '+' || c == '/' || c == '=';
            if (!b64) break;
            ++end;
        }
        return base64_decode(s.substr(begin, end - begin));
    };
    try {
        const json& msg = first_message(j);
        if (msg.contains("images") && msg.at("images").is_array()) {
            for (const auto& img : msg.at("images")) {
                if (auto bytes = from_data_url(img.at("image_url").at("url").get<std::string>()); !bytes.empty()) {
                    return bytes;
                }
            }
        }
        if (msg.contains("content")) {
            const json& content = msg.at("content");
            if (content.is_string()) return from_data_url(content.get<std::string>());
            if (content.is_array()) {
                for (const auto& part : content) {
                    if (part.value("type", "") == "image_url") {
                        if (auto bytes = from_data_url(part.at("image_url").at("url").get<std::string>());
                            !bytes.empty()) {
                            return bytes;
                        }
                    }
                }
            }
        }
    } catch (const json::exception& e) {
        throw ProviderError(std::string("malformed provider response: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw ProviderError(std::string("malformed image payload: ") + e.what());
    }
    return {};
}

std::vector<double> parse_embedding_response(std::string_view body) {
    json j = parse_body(body);
    try {
        const auto& data = j.at("data");
        if (!data.is_array() || data.empty()) throw ProviderError("embedding response has no data");
        return data.at(0).at("embedding").get<std::vector<double>>();
    } catch (const json::exception& e) {
        throw ProviderError(std::string("malformed embedding response: ") + e.what());
    }
}

}  // namespace medforge::providers
