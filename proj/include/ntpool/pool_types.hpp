#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ntpool/errors.hpp"

// Domain records scraped from the pool website and its JSON API.

namespace ntpool::pool {

struct ServerRecord {
    int64_t server_id = 0;  // allocation order, monotonically increasing
    std::string address;
    std::vector<std::string> zones;  // country/continent/"@", kept sorted
    double score = 0.0;
    int64_t netspeed_kbps = 0;
    std::optional<std::string> account;  // absent for anonymous servers
    int64_t first_seen_ms = 0;
    int64_t last_seen_ms = 0;
    bool deleted = false;

    bool monitor_only() const { return netspeed_kbps == 0; }

    void validate() const {
        if (server_id < 1) throw ValidationError("server_id must be >= 1");
        if (score < -100.0 || score > 20.0)
            throw ValidationError("score outside [-100, 20]");
        if (netspeed_kbps < 0) throw ValidationError("netspeed must be >= 0");
    }

    bool operator==(const ServerRecord&) const = default;
};

struct ZoneCounts {
    std::string zone;
    int64_t servers_v4 = 0;
    int64_t servers_v6 = 0;
    int64_t aggregate_netspeed_kbps = 0;
    int64_t fetched_at_ms = 0;

    void validate() const {
        if (servers_v4 < 0 || servers_v6 < 0) throw ValidationError("negative count");
        if (aggregate_netspeed_kbps < 0)
            throw ValidationError("negative aggregate netspeed");
    }

    bool operator==(const ZoneCounts&) const = default;
};

struct AnswerSample {
    std::string address;
    std::string zone;
    int64_t answer_count = 0;  // cumulative upstream counter
    int64_t fetched_at_ms = 0;

    bool operator==(const AnswerSample&) const = default;
};

struct RatePolicy {
    int64_t mean_inter_request_ms = 5'000;
    int64_t id_poll_interval_ms = 90 * 60'000;
    int64_t answers_poll_interval_ms = 30 * 60'000;

    void validate() const {
        if (mean_inter_request_ms <= 0 || id_poll_interval_ms <= 0 ||
            answers_poll_interval_ms <= 0)
            throw ValidationError("rate policy intervals must be positive");
    }
};

inline nlohmann::json server_to_json(const ServerRecord& r) {
    nlohmann::json j = {
        {"server_id", r.server_id}, {"address", r.address},
        {"zones", r.zones},         {"score", r.score},
        {"netspeed_kbps", r.netspeed_kbps},
        {"first_seen_ms", r.first_seen_ms},
        {"last_seen_ms", r.last_seen_ms},
        {"deleted", r.deleted},
    };
    if (r.account)
        j["account"] = *r.account;
    else
        j["account"] = nullptr;
    return j;
}

inline ServerRecord server_from_json(const nlohmann::json& j) {
    ServerRecord r;
    r.server_id = j.at("server_id").get<int64_t>();
    r.address = j.at("address").get<std::string>();
    for (const auto& z : j.at("zones")) r.zones.push_back(z.get<std::string>());
    r.score = j.at("score").get<double>();
    r.netspeed_kbps = j.at("netspeed_kbps").get<int64_t>();
    if (j.contains("account") && !j["account"].is_null())
        r.account = j["account"].get<std::string>();
    r.first_seen_ms = j.at("first_seen_ms").get<int64_t>();
    r.last_seen_ms = j.at("last_seen_ms").get<int64_t>();
    r.deleted = j.at("deleted").get<bool>();
    return r;
}

inline nlohmann::json zone_counts_to_json(const ZoneCounts& z) {
    return {
        {"zone", z.zone},
        {"servers_v4", z.servers_v4},
        {"servers_v6", z.servers_v6},
        {"aggregate_netspeed_kbps", z.aggregate_netspeed_kbps},
        {"fetched_at_ms", z.fetched_at_ms},
    };
}

inline ZoneCounts zone_counts_from_json(const nlohmann::json& j) {
    ZoneCounts z;
    z.zone = j.at("zone").get<std::string>();
    z.servers_v4 = j.at("servers_v4").get<int64_t>();
    z.servers_v6 = j.at("servers_v6").get<int64_t>();
    z.aggregate_netspeed_kbps = j.at("aggregate_netspeed_kbps").get<int64_t>();
    z.fetched_at_ms = j.at("fetched_at_ms").get<int64_t>();
    return z;
}

}  // namespace ntpool::pool
