#include "medforge/reviewsvc.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <limits>
#include <random>

#include "medforge/digest.hpp"
#include "medforge/image.hpp"

namespace medforge::review {

namespace fs = std::filesystem;
using nlohmann::json;
using pipeline::Stage;

namespace {

std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t n) {
    std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x = rng();
    while (x >= limit) x = rng();
    return x % n;
}

template <typename T>
void seeded_shuffle(std::vector<T>& v, std::mt19937_64& rng) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[static_cast<std::size_t>(bounded(rng, i))]);
}

std::int64_t now_ms() {
    using namespace std::chrono;
    return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

ReviewError bad(const std::string& what) { return {ReviewError::Kind::BadRequest, what}; }
ReviewError missing(const std::string& what) { return {ReviewError::Kind::NotFound, what}; }

}  // namespace

std::optional<std::string> normalize_tag(std::string_view tag) {
    std::string t;
    for (char c : tag) {
        unsigned char u = static_cast<unsigned char>(c);
        if (std::isalnum(u)) {
            t += static_cast<char>(std::tolower(u));
        } else if (!t.empty() && t.back() != '-') {
            t += '-';
        }
    }
    while (!t.empty() && t.back() == '-') t.pop_back();
    static const std::map<std::string, std::string, std::less<>> aliases{
        {"underspecified-change", "under-specified-change"},
        {"under-specified", "under-specified-change"},
        {"inaccurate-attributes", "inaccurate-attribute"},
        {"wrong-attribute", "inaccurate-attribute"},
        {"edit-missing", "edit-not-applied"},
        {"no-edit", "edit-not-applied"},
        {"hallucination", "caption-hallucination"},
        {"hallucinated-caption", "caption-hallucination"},
    };
    if (auto it = aliases.find(t); it != aliases.end()) t = it->second;
    for (auto known : kIssueTags) {
        if (t == known) return t;
    }
    return std::nullopt;
}

Stage route_tags(const std::vector<std::string>& tags) {
    static const std::map<std::string, Stage, std::less<>> routes{
        {"edit-not-applied", Stage::Edit},
        {"caption-hallucination", Stage::CaptionComplete},
        {"other", Stage::CaptionComplete},
        {"inaccurate-attribute", Stage::CaptionEdited},
        {"under-specified-change", Stage::Difference},
    };
    if (tags.empty()) return Stage::Edit;
    Stage best = Stage::SFT;
    for (const auto& t : tags) {
        auto it = routes.find(t);
        if (it == routes.end()) throw bad("unknown issue tag \"" + t + "\"");
        if (static_cast<int>(it->second) < static_cast<int>(best)) best = it->second;
    }
    return best;
}

void to_json(json& j, const ReviewBatch& b) {
    json strat = json::object();
    for (const auto& [c, n] : b.stratification) strat[std::string(to_string(c))] = n;
    j = json{{"batch_id", b.batch_id}, {"pair_ids", b.pair_ids}, {"stratification", strat}, {"seed", b.seed}};
}

void from_json(const json& j, ReviewBatch& b) {
    b.batch_id = j.at("batch_id").get<std::string>();
    b.pair_ids = j.at("pair_ids").get<std::vector<std::string>>();
    b.stratification.clear();
    for (const auto& [name, n] : j.at("stratification").items()) {
        b.stratification[category_from_string(name)] = n.get<std::size_t>();
    }
    b.seed = j.value("seed", std::uint64_t{0});
}

std::map<EditCategory, std::size_t> allocate(const std::map<EditCategory, std::size_t>& capacity, std::size_t size,
                                             std::uint64_t seed) {
    std::vector<EditCategory> order;
    for (const auto& [c, cap] : capacity) {
        if (cap > 0) order.push_back(c);
    }
    std::mt19937_64 rng(derive_seed({"allocate", std::to_string(seed)}));
    seeded_shuffle(order, rng);

    // Water-filling: categories that cannot reach the fair share take all
    // they have, the rest split what is left.
    std::map<EditCategory, std::size_t> alloc;
    std::vector<EditCategory> open = order;
    std::size_t remaining = size;
    bool capped = true;
    while (capped && !open.empty()) {
        capped = false;
        std::size_t share = remaining / open.size();
        std::vector<EditCategory> next;
        for (auto c : open) {
            if (capacity.at(c) <= share) {
                alloc[c] = capacity.at(c);
                remaining -= capacity.at(c);
                capped = true;
            } else {
                next.push_back(c);
            }
        }
        open = std::move(next);
    }
    if (!open.empty()) {
        std::size_t share = remaining / open.size();
        std::size_t extra = remaining % open.size();
        for (std::size_t r = 0; r < open.size(); ++r) alloc[open[r]] = share + (r < extra ? 1 : 0);
    }
    std::erase_if(alloc, [](const auto& kv) { return kv.second == 0; });
    return alloc;
}

ReviewBatch create_batch(const std::vector<PoolEntry>& pool, std::size_t size, std::uint64_t seed) {
    if (pool.empty()) throw bad("review pool is empty");
    if (size == 0) throw bad("batch size must be positive");
    if (size > pool.size()) {
        throw bad("batch size " + std::to_string(size) + " exceeds pool size " + std::to_string(pool.size()));
    }
    std::map<EditCategory, std::vector<std::string>> groups;
    for (const auto& e : pool) groups[e.category].push_back(e.pair.pair_id);
    std::map<EditCategory, std::size_t> capacity;
    for (auto& [c, ids] : groups) {
        std::sort(ids.begin(), ids.end());
        capacity[c] = ids.size();
    }
    ReviewBatch b;
    b.seed = seed;
    b.stratification = allocate(capacity, size, seed);
    for (const auto& [c, n] : b.stratification) {
        std::vector<std::string> ids = groups[c];
        std::mt19937_64 rng(derive_seed({"stratum", std::to_string(seed), to_string(c)}));
        seeded_shuffle(ids, rng);
        b.pair_ids.insert(b.pair_ids.end(), ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n));
    }
    std::mt19937_64 rng(derive_seed({"batch-order", std::to_string(seed)}));
    seeded_shuffle(b.pair_ids, rng);
    std::string seed_text = std::to_string(seed);
    std::string joined;
    for (const auto& id : b.pair_ids) joined += id + ",";
    b.batch_id = derive_id({"batch", seed_text, joined}).substr(0, 16);
    return b;
}

std::string_view to_string(TicketStatus s) {
    switch (s) {
        case TicketStatus::Queued: return "Queued";
        case TicketStatus::Done: return "Done";
        case TicketStatus::Dropped: return "Dropped";
    }
    return "Queued";
}

TicketStatus ticket_status_from_string(std::string_view s) {
    if (s == "Queued") return TicketStatus::Queued;
    if (s == "Done") return TicketStatus::Done;
    if (s == "Dropped") return TicketStatus::Dropped;
    throw RecordError("unknown ticket status \"" + std::string(s) + "\"");
}

void to_json(json& j, const ReprocessTicket& t) {
    j = json{{"ticket_id", t.ticket_id},
             {"pair_id", t.pair_id},
             {"from_stage", std::string(pipeline::to_string(t.from_stage))},
             {"reason_tags", t.reason_tags},
             {"status", std::string(to_string(t.status))}};
    if (!t.last_error.empty()) j["last_error"] = t.last_error;
}

void from_json(const json& j, ReprocessTicket& t) {
    t.ticket_id = j.at("ticket_id").get<std::string>();
    t.pair_id = j.at("pair_id").get<std::string>();
    auto stage = pipeline::parse_stage(j.at("from_stage").get<std::string>());
    if (!stage) throw RecordError("ticket has an invalid from_stage");
    t.from_stage = *stage;
    t.reason_tags = j.value("reason_tags", std::vector<std::string>{});
    t.status = ticket_status_from_string(j.at("status").get<std::string>());
    t.last_error = j.value("last_error", "");
}

// ---------------------------------------------------------------------------

namespace {

fs::path store_dir_for(const fs::path& run_dir, const ServiceOptions& options) {
    if (options.config) return options.config->store_dir;
    fs::path run_json = run_dir / "run.json";
    if (!fs::exists(run_json)) return run_dir / "store";
    std::string text;
    for (const auto& l : read_lines(run_json)) text += l + "\n";
    json j = json::parse(text);
    return j.at("store_dir").get<std::string>();
}

template <typename T>
std::vector<T> read_log(const fs::path& path) {
    if (!fs::exists(path)) return {};
    return read_jsonl<T>(path);
}

}  // namespace

ReviewService::ReviewService(fs::path run_dir, ServiceOptions options)
    : run_dir_(std::move(run_dir)),
      review_dir_(run_dir_ / "review"),
      options_(std::move(options)),
      store_(store_dir_for(run_dir_, options_)) {
    auto pairs = read_jsonl<EditedPair>(run_dir_ / "pairs.jsonl");
    auto captions = read_jsonl<CaptionSet>(run_dir_ / "captions.jsonl");
    std::map<std::string, CaptionSet> by_pair;
    for (auto& c : captions) by_pair[c.pair_id] = std::move(c);
    for (auto& p : pairs) {
        auto it = by_pair.find(p.pair_id);
        if (it == by_pair.end()) continue;
        PoolEntry e{p, it->second, it->second.difference_category};
        by_id_[p.pair_id] = pool_.size();
        pool_.push_back(std::move(e));
    }

    fs::create_directories(review_dir_);
    for (auto& b : read_log<json>(review_dir_ / "batches.jsonl")) {
        auto batch = b.get<ReviewBatch>();
        batches_[batch.batch_id] = std::move(batch);
    }
    verdict_log_ = read_log<Verdict>(review_dir_ / "verdicts.jsonl");
    for (auto& j : read_log<json>(review_dir_ / "tickets.jsonl")) {
        auto t = j.get<ReprocessTicket>();
        if (!tickets_.count(t.ticket_id)) ticket_order_.push_back(t.ticket_id);
        tickets_[t.ticket_id] = std::move(t);
    }
}

std::size_t ReviewService::pool_size() const { return pool_.size(); }

void ReviewService::append(const fs::path& file, const json& line) {
    std::ofstream out(file, std::ios::app | std::ios::binary);
    out << line.dump() << '\n';
    out.flush();
    if (!out) throw std::runtime_error("failed to append to " + file.string());
}

const PoolEntry& ReviewService::entry(const std::string& pair_id) const {
    auto it = by_id_.find(pair_id);
    if (it == by_id_.end()) throw missing("unknown pair " + pair_id);
    return pool_[it->second];
}

ReviewBatch ReviewService::create_batch(std::size_t size, std::uint64_t seed) {
    ReviewBatch b = review::create_batch(pool_, size, seed);
    std::lock_guard lock(mu_);
    if (!batches_.count(b.batch_id)) {
        append(review_dir_ / "batches.jsonl", json(b));
        batches_[b.batch_id] = b;
    }
    return b;
}

std::optional<json> ReviewService::next_item(const std::string& batch_id, const std::string& annotator) const {
    if (annotator.empty()) throw bad("annotator is required");
    std::set<std::string> done;
    ReviewBatch batch;
    {
        std::lock_guard lock(mu_);
        auto it = batches_.find(batch_id);
        if (it == batches_.end()) throw missing("unknown batch " + batch_id);
        batch = it->second;
        for (const auto& v : verdict_log_) {
            if (v.annotator == annotator) done.insert(v.pair_id);
        }
    }
    for (std::size_t i = 0; i < batch.pair_ids.size(); ++i) {
        if (!done.count(batch.pair_ids[i])) {
            json p = pair_payload(batch.pair_ids[i]);
            p["batch_id"] = batch_id;
            p["index"] = i;
            p["remaining"] = batch.pair_ids.size() - done.size();
            return p;
        }
    }
    return std::nullopt;
}

json ReviewService::pair_payload(const std::string& pair_id) const {
    const PoolEntry& e = entry(pair_id);
    auto url = [](const ImageRef& ref) { return "/img/" + ContentStore::digest_of(ref); };
    json j{{"pair_id", e.pair.pair_id},
           {"category", e.category},
           {"original_image", url(e.pair.original_ref)},
           {"edited_image", url(e.pair.edited_ref)},
           {"instruction", e.pair.plan.instruction},
           {"original_caption", e.captions.original_complete},
           {"edited_caption", e.captions.edited},
           {"difference", e.captions.difference},
           {"judges", {{"judge1", e.captions.judge1_pass}, {"judge2", e.captions.judge2_pass}}}};
    j["similarity"] = e.pair.similarity ? json(*e.pair.similarity) : json(nullptr);
    return j;
}

std::pair<std::string, std::string> ReviewService::image(const std::string& digest) const {
    bool hex = digest.size() == 64 && std::all_of(digest.begin(), digest.end(), [](char c) {
                   return std::isxdigit(static_cast<unsigned char>(c)) && !std::isupper(static_cast<unsigned char>(c));
               });
    if (!hex) throw missing("not an image digest");
    auto ref = store_.find(digest);
    if (!ref) throw missing("no stored image " + digest);
    std::string bytes = store_.read(*ref);
    return {bytes, std::string(mime_type_for(sniff_format(bytes)))};
}

std::optional<ReprocessTicket> ReviewService::submit_verdict(Verdict v) {
    entry(v.pair_id);
    std::vector<std::string> canonical;
    for (const auto& t : v.issue_tags) {
        auto c = normalize_tag(t);
        if (!c) throw bad("unknown issue tag \"" + t + "\"");
        if (std::find(canonical.begin(), canonical.end(), *c) == canonical.end()) canonical.push_back(*c);
    }
    v.issue_tags = canonical;
    if (v.timestamp_ms == 0) v.timestamp_ms = now_ms();
    try {
        validate(v);
    } catch (const RecordError& e) {
        throw bad(e.what());
    }

    std::lock_guard lock(mu_);
    // Write-ahead: the verdict is on disk before it is visible or acknowledged.
    append(review_dir_ / "verdicts.jsonl", json(v));
    std::size_t seq = verdict_log_.size();
    verdict_log_.push_back(v);
    if (v.decision == Decision::Accept) return std::nullopt;

    ReprocessTicket t;
    t.ticket_id = derive_id({"ticket", v.pair_id, v.annotator, std::to_string(seq)}).substr(0, 16);
    t.pair_id = v.pair_id;
    t.from_stage = route_tags(canonical);
    t.reason_tags = canonical;
    append(review_dir_ / "tickets.jsonl", json(t));
    ticket_order_.push_back(t.ticket_id);
    tickets_[t.ticket_id] = t;
    return t;
}

std::map<std::pair<std::string, std::string>, Verdict> ReviewService::latest_verdicts() const {
    std::lock_guard lock(mu_);
    std::map<std::pair<std::string, std::string>, Verdict> out;
    for (const auto& v : verdict_log_) out[{v.pair_id, v.annotator}] = v;
    return out;
}

std::map<EditCategory, CategoryStats> ReviewService::stats() const {
    std::map<EditCategory, CategoryStats> out;
    for (auto c : kAllCategories) out[c] = {};
    for (const auto& [key, v] : latest_verdicts()) {
        CategoryStats& s = out[entry(v.pair_id).category];
        switch (v.decision) {
            case Decision::Accept: ++s.accept; break;
            case Decision::Reject: ++s.reject; break;
            case Decision::Flag: ++s.flag; break;
        }
    }
    return out;
}

json ReviewService::stats_json() const {
    json cats = json::object();
    for (const auto& [c, s] : stats()) {
        cats[std::string(to_string(c))] = {{"accept", s.accept}, {"reject", s.reject}, {"flag", s.flag}};
    }
    json tickets = {{"Queued", 0}, {"Done", 0}, {"Dropped", 0}};
    std::size_t verdicts = 0;
    {
        std::lock_guard lock(mu_);
        for (const auto& [_, t] : tickets_) {
            json& n = tickets[std::string(to_string(t.status))];
            n = n.get<int>() + 1;
        }
        verdicts = verdict_log_.size();
    }
    return json{{"categories", cats}, {"tickets", tickets}, {"verdicts_logged", verdicts}, {"pool_size", pool_size()}};
}

std::vector<ReprocessTicket> ReviewService::tickets() const {
    std::lock_guard lock(mu_);
    std::vector<ReprocessTicket> out;
    for (const auto& id : ticket_order_) out.push_back(tickets_.at(id));
    return out;
}

void ReviewService::ensure_pipeline() {
    if (!options_.config) {
        fs::path run_json = run_dir_ / "run.json";
        if (!fs::exists(run_json)) throw std::runtime_error("run.json is missing; cannot reprocess");
        std::string text;
        for (const auto& l : read_lines(run_json)) text += l + "\n";
        options_.config = pipeline::config_from_json(json::parse(text).at("config"));
    }
    if (!options_.providers) options_.providers = pipeline::make_providers(*options_.config);
}

ReprocessTicket ReviewService::reprocess(const std::string& ticket_id) {
    std::lock_guard run_lock(reprocess_mu_);
    ReprocessTicket t;
    {
        std::lock_guard lock(mu_);
        auto it = tickets_.find(ticket_id);
        if (it == tickets_.end()) throw missing("unknown ticket " + ticket_id);
        t = it->second;
    }
    if (t.status != TicketStatus::Queued) return t;

    const PoolEntry& e = entry(t.pair_id);
    json outcome_line;
    try {
        ensure_pipeline();
        if (t.from_stage == Stage::Filter) throw std::runtime_error("cannot reprocess from the first stage");
        // State of the sample as it entered from_stage.
        auto prev = static_cast<Stage>(static_cast<int>(t.from_stage) - 1);
        auto cp = load_checkpoint(run_dir_ / "checkpoints" / (std::string(pipeline::to_string(prev)) + ".json"));
        if (!cp) throw std::runtime_error("checkpoint for " + std::string(pipeline::to_string(prev)) + " is missing");
        const StageEntry* se = cp->find(e.pair.plan.sample_id);
        if (se == nullptr || se->status != EntryStatus::Kept) {
            throw std::runtime_error("sample " + e.pair.plan.sample_id + " has no kept entry before " +
                                     std::string(pipeline::to_string(t.from_stage)));
        }
        pipeline::WorkItem item = se->payload.get<pipeline::WorkItem>();

        PromptRegistry prompts = PromptRegistry::defaults();
        if (options_.config->prompts_dir) prompts.load_dir(*options_.config->prompts_dir);
        pipeline::StageContext ctx{*options_.config, *options_.providers, store_, prompts};
        pipeline::ItemOutcome o = pipeline::run_item(ctx, std::move(item), t.from_stage);
        switch (o.status) {
            case EntryStatus::Kept:
                t.status = TicketStatus::Done;
                t.last_error.clear();
                break;
            case EntryStatus::Dropped:
                t.status = TicketStatus::Dropped;
                t.last_error = o.reason;
                break;
            case EntryStatus::Deferred:
                t.last_error = o.reason + ": " + o.detail;
                break;
        }
        outcome_line = json{{"ticket_id", t.ticket_id},
                            {"pair_id", t.pair_id},
                            {"status", std::string(to_string(t.status))},
                            {"last_stage", std::string(pipeline::to_string(o.last_stage))},
                            {"reason", o.reason},
                            {"item", o.item}};
    } catch (const ReviewError&) {
        throw;
    } catch (const std::exception& ex) {
        t.last_error = ex.what();
    }

    std::lock_guard lock(mu_);
    if (!outcome_line.is_null()) append(review_dir_ / "reprocessed.jsonl", outcome_line);
    append(review_dir_ / "tickets.jsonl", json(t));
    tickets_[t.ticket_id] = t;
    return t;
}

ReprocessSummary ReviewService::reprocess_all() {
    ReprocessSummary s;
    for (const auto& t : tickets()) {
        if (t.status != TicketStatus::Queued) continue;
        ReprocessTicket r = reprocess(t.ticket_id);
        ++s.processed;
        switch (r.status) {
            case TicketStatus::Done: ++s.done; break;
            case TicketStatus::Dropped: ++s.dropped; break;
            case TicketStatus::Queued: ++s.retryable; break;
        }
    }
    return s;
}

}  // namespace medforge::review
