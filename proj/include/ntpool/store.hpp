#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include "ntpool/errors.hpp"
#include "ntpool/pool_types.hpp"

// Append-only persistence for scrape results. Every observation is one JSONL
// event; in-memory state is whatever the event stream folds to, so replaying
// the log always reconstructs the exact current snapshot. A snapshot file can
// be exported for downstream consumers but the log stays the source of truth.

namespace ntpool::pool {

inline constexpr int kStoreFormatVersion = 1;

// Advisory single-writer lock on a state directory. Held for the life of the
// object; a second writer fails fast instead of interleaving appends.
class DirectoryLock {
public:
    explicit DirectoryLock(const std::filesystem::path& dir) {
        std::filesystem::create_directories(dir);
        auto lock_path = dir / ".lock";
        fd_ = ::open(lock_path.c_str(), O_CREAT | O_RDWR | O_CLOEXEC, 0644);
        if (fd_ < 0) throw ValidationError("cannot open lock file " + lock_path.string());
        if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
            ::close(fd_);
            fd_ = -1;
            throw ValidationError("state directory is locked by another process: " +
                                  dir.string());
        }
    }

    ~DirectoryLock() {
        if (fd_ >= 0) ::close(fd_);
    }

    DirectoryLock(const DirectoryLock&) = delete;
    DirectoryLock& operator=(const DirectoryLock&) = delete;

private:
    int fd_ = -1;
};

struct AnswerState {
    int64_t last_count = 0;
    int64_t segment = 0;  // bumped every time the upstream counter resets
    int64_t resets = 0;
    int64_t fetched_at_ms = 0;

    bool operator==(const AnswerState&) const = default;
};

struct StoreSnapshot {
    int64_t high_water = 0;  // highest allocated server id fully scraped
    int64_t poll_id = 0;     // next unallocated id, armed for re-polling
    int64_t next_poll_at_ms = 0;
    std::map<int64_t, ServerRecord> servers;
    std::map<std::string, std::map<std::string, AnswerState>> answers;
    std::map<std::string, ZoneCounts> zones;

    bool operator==(const StoreSnapshot&) const = default;
};

class ScrapeStore {
public:
    explicit ScrapeStore(const std::filesystem::path& dir) : dir_(dir) {
        std::filesystem::create_directories(dir_);
        auto events = events_path();
        if (std::filesystem::exists(events)) {
            std::streamoff valid_bytes = 0;
            {
                std::ifstream in(events, std::ios::binary);
                snapshot_ = replay(in, &valid_bytes);
            }
            // Drop a torn final line so future appends start on a clean line.
            if (static_cast<uintmax_t>(valid_bytes) < std::filesystem::file_size(events))
                std::filesystem::resize_file(events,
                                             static_cast<uintmax_t>(valid_bytes));
        }
        out_.open(events, std::ios::app);
        if (!out_) throw Error("cannot open event log: " + events.string());
    }

    const StoreSnapshot& snapshot() const { return snapshot_; }

    std::filesystem::path events_path() const { return dir_ / "events.jsonl"; }
    std::filesystem::path snapshot_path() const { return dir_ / "snapshot.json"; }

    // Appends an event only when some field actually changed. first_seen is
    // sticky and last_seen never moves backward.
    bool record_server(ServerRecord record, int64_t ts_ms) {
        std::lock_guard<std::mutex> hold(mutex_);
        record.validate();
        std::sort(record.zones.begin(), record.zones.end());
        auto it = snapshot_.servers.find(record.server_id);
        if (it != snapshot_.servers.end()) {
            record.first_seen_ms = it->second.first_seen_ms;
            record.last_seen_ms = std::max(record.last_seen_ms, it->second.last_seen_ms);
            if (record == it->second) return false;
        }
        nlohmann::json event = {{"format_version", kStoreFormatVersion},
                                {"ts_ms", ts_ms},
                                {"kind", "server"},
                                {"server", server_to_json(record)}};
        apply_and_append(event);
        return true;
    }

    struct RecordedAnswer {
        bool reset = false;
        int64_t segment = 0;
    };

    // A cumulative counter that moves backward starts a new monotone segment
    // and the event is flagged.
    RecordedAnswer record_answer(const AnswerSample& sample) {
        std::lock_guard<std::mutex> hold(mutex_);
        bool reset = false;
        auto addr_it = snapshot_.answers.find(sample.address);
        if (addr_it != snapshot_.answers.end()) {
            auto zone_it = addr_it->second.find(sample.zone);
            if (zone_it != addr_it->second.end() &&
                sample.answer_count < zone_it->second.last_count)
                reset = true;
        }
        nlohmann::json event = {{"format_version", kStoreFormatVersion},
                                {"ts_ms", sample.fetched_at_ms},
                                {"kind", "answer"},
                                {"address", sample.address},
                                {"zone", sample.zone},
                                {"count", sample.answer_count},
                                {"reset", reset}};
        apply_and_append(event);
        return {reset, snapshot_.answers[sample.address][sample.zone].segment};
    }

    void record_zone_counts(const ZoneCounts& counts) {
        std::lock_guard<std::mutex> hold(mutex_);
        counts.validate();
        nlohmann::json event = {{"format_version", kStoreFormatVersion},
                                {"ts_ms", counts.fetched_at_ms},
                                {"kind", "zone_counts"},
                                {"zone_counts", zone_counts_to_json(counts)}};
        apply_and_append(event);
    }

    void set_checkpoint(int64_t high_water, int64_t poll_id, int64_t next_poll_at_ms,
                        int64_t ts_ms) {
        std::lock_guard<std::mutex> hold(mutex_);
        nlohmann::json event = {{"format_version", kStoreFormatVersion},
                                {"ts_ms", ts_ms},
                                {"kind", "checkpoint"},
                                {"high_water", high_water},
                                {"poll_id", poll_id},
                                {"next_poll_at_ms", next_poll_at_ms}};
        apply_and_append(event);
    }

    void write_snapshot() const {
        std::lock_guard<std::mutex> hold(mutex_);
        std::ofstream out(snapshot_path(), std::ios::trunc);
        if (!out) throw Error("cannot write snapshot: " + snapshot_path().string());
        out << snapshot_to_json(snapshot_).dump(2) << '\n';
    }

    // Folds an event log back into a snapshot. A torn final line (crash while
    // appending) is ignored; anything else malformed is an error. valid_bytes,
    // when given, receives the byte length of the applied prefix.
    static StoreSnapshot replay(std::istream& in, std::streamoff* valid_bytes = nullptr) {
        StoreSnapshot snapshot;
        std::string line;
        size_t line_no = 0;
        std::streamoff offset = 0, good = 0;
        std::optional<std::string> pending_error;
        while (std::getline(in, line)) {
            bool had_newline = !in.eof();
            ++line_no;
            if (pending_error)
                throw ParseError(*pending_error);  // only the last line may be torn
            if (!line.empty()) {
                try {
                    auto event = nlohmann::json::parse(line);
                    if (event.at("format_version").get<int>() != kStoreFormatVersion)
                        throw ParseError("unsupported format_version");
                    apply_event(snapshot, event);
                } catch (const std::exception& e) {
                    pending_error = "event log line " + std::to_string(line_no) + ": " +
                                    e.what();
                }
            }
            offset += static_cast<std::streamoff>(line.size()) + (had_newline ? 1 : 0);
            if (!pending_error) good = offset;
        }
        if (valid_bytes) *valid_bytes = good;
        return snapshot;
    }

    static nlohmann::json snapshot_to_json(const StoreSnapshot& s) {
        nlohmann::json servers = nlohmann::json::array();
        for (const auto& [id, record] : s.servers) servers.push_back(server_to_json(record));
        nlohmann::json answers = nlohmann::json::array();
        for (const auto& [address, zones] : s.answers)
            for (const auto& [zone, state] : zones)
                answers.push_back({{"address", address},
                                   {"zone", zone},
                                   {"last_count", state.last_count},
                                   {"segment", state.segment},
                                   {"resets", state.resets},
                                   {"fetched_at_ms", state.fetched_at_ms}});
        nlohmann::json zones = nlohmann::json::array();
        for (const auto& [zone, counts] : s.zones) zones.push_back(zone_counts_to_json(counts));
        return {{"format_version", kStoreFormatVersion},
                {"high_water", s.high_water},
                {"poll_id", s.poll_id},
                {"next_poll_at_ms", s.next_poll_at_ms},
                {"servers", servers},
                {"answers", answers},
                {"zones", zones}};
    }

    static StoreSnapshot snapshot_from_json(const nlohmann::json& j) {
        if (j.at("format_version").get<int>() != kStoreFormatVersion)
            throw ParseError("unsupported snapshot format_version");
        StoreSnapshot s;
        s.high_water = j.at("high_water").get<int64_t>();
        s.poll_id = j.at("poll_id").get<int64_t>();
        s.next_poll_at_ms = j.at("next_poll_at_ms").get<int64_t>();
        for (const auto& item : j.at("servers")) {
            auto record = server_from_json(item);
            s.servers[record.server_id] = std::move(record);
        }
        for (const auto& item : j.at("answers")) {
            AnswerState state;
            state.last_count = item.at("last_count").get<int64_t>();
            state.segment = item.at("segment").get<int64_t>();
            state.resets = item.at("resets").get<int64_t>();
            state.fetched_at_ms = item.at("fetched_at_ms").get<int64_t>();
            s.answers[item.at("address").get<std::string>()]
                     [item.at("zone").get<std::string>()] = state;
        }
        for (const auto& item : j.at("zones")) {
            auto counts = zone_counts_from_json(item);
            s.zones[counts.zone] = std::move(counts);
        }
        return s;
    }

private:
    static void apply_event(StoreSnapshot& snapshot, const nlohmann::json& event) {
        const auto kind = event.at("kind").get<std::string>();
        if (kind == "server") {
            auto record = server_from_json(event.at("server"));
            snapshot.servers[record.server_id] = std::move(record);
        } else if (kind == "answer") {
            auto& state = snapshot.answers[event.at("address").get<std::string>()]
                                          [event.at("zone").get<std::string>()];
            if (event.at("reset").get<bool>()) {
                ++state.segment;
                ++state.resets;
            }
            state.last_count = event.at("count").get<int64_t>();
            state.fetched_at_ms = event.at("ts_ms").get<int64_t>();
        } else if (kind == "zone_counts") {
            auto counts = zone_counts_from_json(event.at("zone_counts"));
            snapshot.zones[counts.zone] = std::move(counts);
        } else if (kind == "checkpoint") {
            snapshot.high_water = event.at("high_water").get<int64_t>();
            snapshot.poll_id = event.at("poll_id").get<int64_t>();
            snapshot.next_poll_at_ms = event.at("next_poll_at_ms").get<int64_t>();
        } else {
            throw ParseError("unknown event kind: " + kind);
        }
    }

    void apply_and_append(const nlohmann::json& event) {
        apply_event(snapshot_, event);
        out_ << event.dump() << '\n';
        out_.flush();
        if (!out_) throw Error("event log write failed");
    }

    std::filesystem::path dir_;
    StoreSnapshot snapshot_;
    std::ofstream out_;
    mutable std::mutex mutex_;
};

}  // namespace ntpool::pool
