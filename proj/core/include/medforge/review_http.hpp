#pragma once

// JSON-over-HTTP front end for ReviewService.
//
//   POST /api/batches                {size, seed}
//   GET  /api/batches/{id}/next?annotator=NAME
//   GET  /api/pairs/{id}
//   POST /api/pairs/{id}/verdict     {decision, issue_tags, annotator}
//   GET  /api/stats
//   GET  /api/tickets
//   POST /api/reprocess/run
//   GET  /img/{digest}

#include <memory>
#include <optional>
#include <string>

#include "medforge/reviewsvc.hpp"

namespace medforge::review {

class ReviewServer {
public:
    // With a token, every /api request must carry "Authorization: Bearer <token>".
    explicit ReviewServer(ReviewService& service, std::optional<std::string> token = std::nullopt);
    ~ReviewServer();
    ReviewServer(const ReviewServer&) = delete;
    ReviewServer& operator=(const ReviewServer&) = delete;

    // Blocks until stop().
    bool listen(const std::string& host, int port);
    // Binds an ephemeral port and returns it; serve with listen_after_bind().
    int bind_to_any_port(const std::string& host);
    bool listen_after_bind();
    void wait_until_ready() const;
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// Token from MEDFORGE_REVIEW_TOKEN, if set and non-empty.
std::optional<std::string> token_from_env();

}  // namespace medforge::review
