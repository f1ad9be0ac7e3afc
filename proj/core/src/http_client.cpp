#include "medforge/http_client.hpp"

#include <httplib.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>
#include <optional>

#include "medforge/digest.hpp"
#include "medforge/image.hpp"

namespace medforge::providers {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Transport

namespace {

struct UrlParts {
    std::string origin;  // scheme://host[:port]
    std::string path;
};

UrlParts split_url(const std::string& url) {
    std::size_t scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw PreconditionError("endpoint must include a scheme: " + url);
    std::size_t path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

class HttplibTransport final : public HttpTransport {
public:
    HttpResponse post_json(const std::string& url, const std::string& body, const Headers& headers,
                           std::chrono::milliseconds timeout) override {
        UrlParts parts = split_url(url);
        httplib::Client client(parts.origin);
        client.set_connection_timeout(timeout);
        client.set_read_timeout(timeout);
        client.set_write_timeout(timeout);
        httplib::Headers h;
        for (const auto& [k, v] : headers) h.emplace(k, v);
        auto res = client.Post(parts.path, h, body, "application/json");
        if (!res) {
            throw TransportError("POST " + url + " failed: " + httplib::to_string(res.error()));
        }
        return {res->status, res->body};
    }
};

}  // namespace

std::shared_ptr<HttpTransport> make_http_transport() { return std::make_shared<HttplibTransport>(); }

// ---------------------------------------------------------------------------
// Rate limiting

RateLimiter::RateLimiter(double per_minute, TimeSource time)
    : per_minute_(per_minute),
      capacity_(static_cast<std::size_t>(std::max(1.0, std::floor(per_minute)))),
      time_(std::move(time)) {
    if (!(per_minute > 0)) throw PreconditionError("requests_per_minute must be > 0");
}

void RateLimiter::acquire() {
    constexpr auto kWindow = std::chrono::seconds(60);
    std::unique_lock lock(mu_);
    for (;;) {
        auto now = time_.now();
        while (!issued_.empty() && now - issued_.front() >= kWindow) issued_.pop_front();
        if (issued_.size() < capacity_) {
            issued_.push_back(now);
            return;
        }
        auto wait = issued_.front() + kWindow - now;
        lock.unlock();
        time_.sleep(wait);
        lock.lock();
    }
}

std::shared_ptr<RateLimiter> shared_rate_limiter(const ProviderConfig& cfg) {
    static std::mutex mu;
    static std::map<std::string, std::shared_ptr<RateLimiter>> limiters;
    std::lock_guard lock(mu);
    auto& slot = limiters[cfg.endpoint + "|" + cfg.model];
    if (!slot) slot = std::make_shared<RateLimiter>(cfg.requests_per_minute);
    return slot;
}

std::chrono::milliseconds BackoffPolicy::delay(int attempt, std::mt19937_64& rng) const {
    double raw = static_cast<double>(base.count()) * std::ldexp(1.0, std::min(attempt, 30));
    double capped = std::min(raw, static_cast<double>(cap.count()));
    double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    return std::chrono::milliseconds(static_cast<std::int64_t>(capped / 2.0 + u * capped / 2.0));
}

// ---------------------------------------------------------------------------
// Retries

RetryingPoster::RetryingPoster(ProviderConfig cfg, std::shared_ptr<HttpTransport> transport,
                               std::shared_ptr<RateLimiter> limiter, TimeSource time, BackoffPolicy backoff)
    : cfg_(std::move(cfg)),
      transport_(std::move(transport)),
      limiter_(std::move(limiter)),
      time_(std::move(time)),
      backoff_(backoff),
      rng_(derive_seed({cfg_.endpoint, cfg_.model})) {
    validate(cfg_);
}

Headers RetryingPoster::headers() const {
    Headers h;
    if (!cfg_.api_key_env.empty()) {
        if (const char* key = std::getenv(cfg_.api_key_env.c_str()); key != nullptr && *key != '\0') {
            h.emplace_back("Authorization", std::string("Bearer ") + key);
        }
    }
    return h;
}

std::string RetryingPoster::url_for(const std::string& path) const {
    std::string base = cfg_.endpoint;
    while (!base.empty() && base.back() == '/') base.pop_back();
    if (base.size() >= path.size() && base.compare(base.size() - path.size(), path.size(), path) == 0) return base;
    return base + path;
}

PostResult RetryingPoster::post(const std::string& path, const json& body) {
    const std::string url = url_for(path);
    const std::string payload = body.dump();
    const Headers hdrs = headers();
    int attempt = 0;
    for (;;) {
        if (limiter_) limiter_->acquire();
        std::string failure;
        std::optional<HttpStatusError> status_error;
        try {
            HttpResponse res = transport_->post_json(url, payload, hdrs, cfg_.timeout());
            if (res.status >= 200 && res.status < 300) return {std::move(res.body), attempt};
            bool retryable = res.status == 429 || res.status >= 500;
            if (!retryable) throw HttpStatusError(res.status, res.body);
            status_error.emplace(res.status, res.body);
        } catch (const TransportError& e) {
            failure = e.what();
        }
        if (attempt >= cfg_.max_retries) {
            if (status_error) throw *status_error;
            throw TransportError(failure + " (after " + std::to_string(attempt + 1) + " attempts)");
        }
        std::chrono::milliseconds wait;
        {
            std::lock_guard lock(rng_mu_);
            wait = backoff_.delay(attempt, rng_);
        }
        time_.sleep(wait);
        ++attempt;
    }
}

std::shared_ptr<RetryingPoster> make_poster(const ProviderConfig& cfg) {
    return std::make_shared<RetryingPoster>(cfg, make_http_transport(), shared_rate_limiter(cfg));
}

// ---------------------------------------------------------------------------
// Clients

HttpChatProvider::HttpChatProvider(std::shared_ptr<RetryingPoster> poster) : poster_(std::move(poster)) {}

ChatReply HttpChatProvider::complete(const ChatRequest& request) {
    json body = chat_completions_body(poster_->config(), request.messages);
    PostResult res = poster_->post("/chat/completions", body);
    return {parse_chat_completion(res.body), res.retries};
}

HttpImageEditor::HttpImageEditor(std::shared_ptr<RetryingPoster> poster) : poster_(std::move(poster)) {}

std::string HttpImageEditor::edit(std::string_view image_bytes, std::string_view instruction) {
    ChatMessage msg{MessageRole::User, {}};
    msg.parts.emplace_back(ImagePart{ImageRef{"input"}, std::string(image_bytes)});
    msg.parts.emplace_back(TextPart{std::string(instruction)});
    json body = chat_completions_body(poster_->config(), {msg});
    body["modalities"] = json::array({"image", "text"});
    PostResult res = poster_->post("/chat/completions", body);
    std::string image = extract_image_payload(res.body);
    if (!image.empty()) return image;
    std::string text;
    try {
        text = parse_chat_completion(res.body);
    } catch (const EmptyCompletionError&) {
        text = "(no image and no text returned)";
    }
    throw EditRefused(text);
}

HttpImageEmbedder::HttpImageEmbedder(std::shared_ptr<RetryingPoster> poster) : poster_(std::move(poster)) {}

std::vector<double> HttpImageEmbedder::embed(std::string_view image_bytes) {
    std::string url = "data:" + std::string(mime_type_for(sniff_format(image_bytes))) + ";base64," +
                      base64_encode(image_bytes);
    json body{{"model", poster_->config().model}, {"input", json::array({url})}};
    PostResult res = poster_->post("/embeddings", body);
    return parse_embedding_response(res.body);
}

std::size_t HttpImageEmbedder::dimension() const { return poster_->config().dimension; }

}  // namespace medforge::providers
