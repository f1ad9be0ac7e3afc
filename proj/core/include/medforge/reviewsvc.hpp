#pragma once

// Human verification of constructed pairs: stratified review batches,
// verdict recording and reprocessing of rejected or flagged pairs.
//
// State lives in <run_dir>/review/ as append-only JSONL logs (batches,
// verdicts, tickets); the in-memory view is rebuilt from them on start.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "medforge/content_store.hpp"
#include "medforge/datamodel.hpp"
#include "medforge/pipeline.hpp"

namespace medforge::review {

class ReviewError : public std::runtime_error {
public:
    enum class Kind { BadRequest, NotFound };
    ReviewError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

// Closed issue-tag vocabulary.
inline constexpr std::array<std::string_view, 5> kIssueTags = {
    "under-specified-change", "inaccurate-attribute", "edit-not-applied", "caption-hallucination", "other",
};

// Canonical tag for a free-form spelling ("Inaccurate attribute" ->
// "inaccurate-attribute"); nullopt when it is not in the vocabulary.
std::optional<std::string> normalize_tag(std::string_view tag);

// Earliest stage implicated by the tags. Reject without tags reruns from
// the edit.
pipeline::Stage route_tags(const std::vector<std::string>& canonical_tags);

struct PoolEntry {
    EditedPair pair;
    CaptionSet captions;
    EditCategory category = EditCategory::Object;
};

struct ReviewBatch {
    std::string batch_id;
    std::vector<std::string> pair_ids;
    std::map<EditCategory, std::size_t> stratification;
    std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const ReviewBatch& b);
void from_json(const nlohmann::json& j, ReviewBatch& b);

// Per-category allocation: as equal as capacity allows, with shortfalls
// redistributed. Ties for the remainder go to categories in a seeded order.
std::map<EditCategory, std::size_t> allocate(const std::map<EditCategory, std::size_t>& capacity, std::size_t size,
                                             std::uint64_t seed);

// Stratified, seeded sample of the pool. Throws ReviewError on an empty
// pool, size 0 or size larger than the pool.
ReviewBatch create_batch(const std::vector<PoolEntry>& pool, std::size_t size, std::uint64_t seed);

enum class TicketStatus { Queued, Done, Dropped };
std::string_view to_string(TicketStatus s);
TicketStatus ticket_status_from_string(std::string_view s);

struct ReprocessTicket {
    std::string ticket_id;
    std::string pair_id;
    pipeline::Stage from_stage = pipeline::Stage::Edit;
    std::vector<std::string> reason_tags;
    TicketStatus status = TicketStatus::Queued;
    std::string last_error;  // set when a retryable failure left it queued
};

void to_json(nlohmann::json& j, const ReprocessTicket& t);
void from_json(const nlohmann::json& j, ReprocessTicket& t);

struct CategoryStats {
    std::size_t accept = 0;
    std::size_t reject = 0;
    std::size_t flag = 0;
};

struct ReprocessSummary {
    std::size_t processed = 0;
    std::size_t done = 0;
    std::size_t dropped = 0;
    std::size_t retryable = 0;
};

struct ServiceOptions {
    // Pipeline setup for reprocessing; read from <run_dir>/run.json when unset.
    std::optional<pipeline::PipelineConfig> config;
    std::optional<pipeline::Providers> providers;
};

class ReviewService {
public:
    // Loads pairs.jsonl and captions.jsonl from the run directory and replays
    // the review logs. The image store location comes from run.json unless
    // the options carry a config.
    explicit ReviewService(std::filesystem::path run_dir, ServiceOptions options = {});

    std::size_t pool_size() const;
    const ContentStore& store() const { return store_; }

    ReviewBatch create_batch(std::size_t size, std::uint64_t seed);
    // Review payload of the next pair without a verdict from `annotator`, or
    // nullopt when the batch is exhausted.
    std::optional<nlohmann::json> next_item(const std::string& batch_id, const std::string& annotator) const;
    nlohmann::json pair_payload(const std::string& pair_id) const;
    // Bytes and mime type of a stored image.
    std::pair<std::string, std::string> image(const std::string& digest) const;

    // Validates, normalizes tags, appends to verdicts.jsonl, then enqueues a
    // ticket for Reject/Flag. Returns the ticket when one was created.
    std::optional<ReprocessTicket> submit_verdict(Verdict v);

    // Latest verdict per (pair, annotator).
    std::map<std::pair<std::string, std::string>, Verdict> latest_verdicts() const;
    std::map<EditCategory, CategoryStats> stats() const;
    nlohmann::json stats_json() const;
    std::vector<ReprocessTicket> tickets() const;

    // Reruns one ticket; a ticket that is not Queued is left as is.
    ReprocessTicket reprocess(const std::string& ticket_id);
    ReprocessSummary reprocess_all();

private:
    void append(const std::filesystem::path& file, const nlohmann::json& line);
    void ensure_pipeline();
    const PoolEntry& entry(const std::string& pair_id) const;

    std::filesystem::path run_dir_;
    std::filesystem::path review_dir_;
    ServiceOptions options_;
    ContentStore store_;
    std::vector<PoolEntry> pool_;
    std::map<std::string, std::size_t> by_id_;
    std::map<std::string, ReviewBatch> batches_;
    std::vector<Verdict> verdict_log_;
    std::map<std::string, ReprocessTicket> tickets_;
    std::vector<std::string> ticket_order_;
    mutable std::mutex mu_;
    std::mutex reprocess_mu_;
};

}  // namespace medforge::review
