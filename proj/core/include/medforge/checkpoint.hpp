#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace medforge {

enum class EntryStatus : std::uint8_t { Kept, Dropped, Deferred };
std::string_view to_string(EntryStatus s);

// Outcome of one stage for one input record.
struct StageEntry {
    std::string id;
    EntryStatus status = EntryStatus::Kept;
    std::string reason;        // machine-readable; empty when kept
    std::string detail;        // free text, e.g. a provider message
    nlohmann::json payload;    // stage output when kept

    friend bool operator==(const StageEntry&, const StageEntry&) = default;
};

struct StageCheckpoint {
    std::string stage;
    std::vector<StageEntry> entries;  // input order
    std::string manifest_digest;      // digest of the kept payloads

    // Ids with a final (kept or dropped) outcome; deferred ids are retried.
    std::set<std::string> processed_ids() const;
    const StageEntry* find(const std::string& id) const;
};

class CheckpointConflict : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Digest over the canonical serialization of the kept payloads.
std::string payload_digest(const std::vector<StageEntry>& entries);

// Writes atomically. If a checkpoint already exists at `path`, every
// finalized entry in it must reappear unchanged in `cp`; otherwise
// CheckpointConflict is thrown and nothing is written.
void save_checkpoint(const std::filesystem::path& path, const StageCheckpoint& cp);
std::optional<StageCheckpoint> load_checkpoint(const std::filesystem::path& path);

}  // namespace medforge
