#pragma once

#include <chrono>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <random>
#include <thread>
#include <string>
#include <utility>
#include <vector>

#include "medforge/providers.hpp"

namespace medforge::providers {

using Clock = std::chrono::steady_clock;
using Headers = std::vector<std::pair<std::string, std::string>>;

struct HttpResponse {
    int status = 0;
    std::string body;
};

class HttpTransport {
public:
    virtual ~HttpTransport() = default;
    // Throws TransportError on connection failure or timeout.
    virtual HttpResponse post_json(const std::string& url, const std::string& body, const Headers& headers,
                                   std::chrono::milliseconds timeout) = 0;
};

// cpp-httplib backed transport; https when built with TLS support.
std::shared_ptr<HttpTransport> make_http_transport();

// Time source and sleeper, injectable for tests.
struct TimeSource {
    std::function<Clock::time_point()> now = [] { return Clock::now(); };
    std::function<void(Clock::duration)> sleep = [](Clock::duration d) { std::this_thread::sleep_for(d); };
};

// Sliding-window limiter: at most `per_minute` acquisitions in any 60 s
// window. Thread-safe; acquire() blocks until a slot frees up.
class RateLimiter {
public:
    explicit RateLimiter(double per_minute, TimeSource time = {});

    void acquire();
    double per_minute() const noexcept { return per_minute_; }

private:
    double per_minute_;
    std::size_t capacity_;
    TimeSource time_;
    std::mutex mu_;
    std::deque<Clock::time_point> issued_;
};

// Process-wide limiter shared by all clients of the same endpoint + model.
std::shared_ptr<RateLimiter> shared_rate_limiter(const ProviderConfig& cfg);

struct BackoffPolicy {
    std::chrono::milliseconds base{500};
    std::chrono::milliseconds cap{30000};

    // Exponential with equal jitter: half the capped delay plus a uniform
    // draw over the other half.
    std::chrono::milliseconds delay(int attempt, std::mt19937_64& rng) const;
};

struct PostResult {
    std::string body;
    int retries = 0;
};

// Issues the POST with rate limiting and retries. 429, 5xx and transport
// failures are retried up to cfg.max_retries times; other non-2xx statuses
// fail immediately with HttpStatusError.
class RetryingPoster {
public:
    RetryingPoster(ProviderConfig cfg, std::shared_ptr<HttpTransport> transport,
                   std::shared_ptr<RateLimiter> limiter = nullptr, TimeSource time = {}, BackoffPolicy backoff = {});

    PostResult post(const std::string& path, const nlohmann::json& body);
    const ProviderConfig& config() const noexcept { return cfg_; }

private:
    Headers headers() const;
    std::string url_for(const std::string& path) const;

    ProviderConfig cfg_;
    std::shared_ptr<HttpTransport> transport_;
    std::shared_ptr<RateLimiter> limiter_;
    TimeSource time_;
    BackoffPolicy backoff_;
    std::mutex rng_mu_;
    std::mt19937_64 rng_;
};

class HttpChatProvider final : public ChatProvider {
public:
    explicit HttpChatProvider(std::shared_ptr<RetryingPoster> poster);
    ChatReply complete(const ChatRequest& request) override;

private:
    std::shared_ptr<RetryingPoster> poster_;
};

// Sends the image and instruction as a chat completion and expects an image
// back (data URL). Any reply without image data is treated as a refusal.
class HttpImageEditor final : public ImageEditor {
public:
    explicit HttpImageEditor(std::shared_ptr<RetryingPoster> poster);
    std::string edit(std::string_view image_bytes, std::string_view instruction) override;

private:
    std::shared_ptr<RetryingPoster> poster_;
};

// POST {endpoint}/embeddings with the image as a data URL input.
class HttpImageEmbedder final : public ImageEmbedder {
public:
    explicit HttpImageEmbedder(std::shared_ptr<RetryingPoster> poster);
    std::vector<double> embed(std::string_view image_bytes) override;
    std::size_t dimension() const override;

private:
    std::shared_ptr<RetryingPoster> poster_;
};

std::shared_ptr<RetryingPoster> make_poster(const ProviderConfig& cfg);

}  // namespace medforge::providers
