#include "medforge/checkpoint.hpp"

#include <fstream>

#include "medforge/datamodel.hpp"
#include "medforge/digest.hpp"

namespace medforge {

using nlohmann::json;

std::string_view to_string(EntryStatus s) {
    switch (s) {
        case EntryStatus::Kept: return "kept";
        case EntryStatus::Dropped: return "dropped";
        case EntryStatus::Deferred: return "deferred";
    }
    return "kept";
}

namespace {

EntryStatus status_from_string(std::string_view s) {
    if (s == "kept") return EntryStatus::Kept;
    if (s == "dropped") return EntryStatus::Dropped;
    if (s == "deferred") return EntryStatus::Deferred;
    throw std::runtime_error("checkpoint: unknown status " + std::string(s));
}

json entry_to_json(const StageEntry& e) {
    return json{{"id", e.id},
                {"status", std::string(to_string(e.status))},
                {"reason", e.reason},
                {"detail", e.detail},
                {"payload", e.payload}};
}

StageEntry entry_from_json(const json& j) {
    StageEntry e;
    e.id = j.at("id").get<std::string>();
    e.status = status_from_string(j.at("status").get<std::string>());
    e.reason = j.value("reason", "");
    e.detail = j.value("detail", "");
    e.payload = j.value("payload", json());
    return e;
}

}  // namespace

std::set<std::string> StageCheckpoint::processed_ids() const {
    std::set<std::string> out;
    for (const auto& e : entries) {
        if (e.status != EntryStatus::Deferred) out.insert(e.id);
    }
    return out;
}

const StageEntry* StageCheckpoint::find(const std::string& id) const {
    for (const auto& e : entries) {
        if (e.id == id) return &e;
    }
    return nullptr;
}

std::string payload_digest(const std::vector<StageEntry>& entries) {
    std::string canon;
    for (const auto& e : entries) {
        if (e.status != EntryStatus::Kept) continue;
        canon += e.payload.dump();
        canon += '\n';
    }
    return sha256_hex(canon);
}

void save_checkpoint(const std::filesystem::path& path, const StageCheckpoint& cp) {
    if (auto prior = load_checkpoint(path)) {
        for (const auto& old : prior->entries) {
            if (old.status == EntryStatus::Deferred) continue;
            const StageEntry* now = cp.find(old.id);
            if (now == nullptr || !(*now == old)) {
                throw CheckpointConflict("checkpoint " + path.string() + ": record " + old.id +
                                         " would be rewritten");
            }
        }
    }
    json j{{"v", kSchemaVersion}, {"stage", cp.stage}, {"manifest_digest", cp.manifest_digest}};
    json arr = json::array();
    for (const auto& e : cp.entries) arr.push_back(entry_to_json(e));
    j["entries"] = std::move(arr);
    write_file_atomic(path, j.dump() + "\n");
}

std::optional<StageCheckpoint> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) return std::nullopt;
    json j = json::parse(in);
    StageCheckpoint cp;
    cp.stage = j.at("stage").get<std::string>();
    cp.manifest_digest = j.value("manifest_digest", "");
    for (const auto& e : j.at("entries")) cp.entries.push_back(entry_from_json(e));
    return cp;
}

}  // namespace medforge
