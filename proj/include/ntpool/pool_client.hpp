#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "ntpool/errors.hpp"
#include "ntpool/ip.hpp"
#include "ntpool/pool_types.hpp"
#include "ntpool/rate_limiter.hpp"
#include "ntpool/store.hpp"

// HTTP client for the pool's enumeration and statistics endpoints. Every
// request passes through the shared rate limiter; redirects are parsed, never
// followed, so discovery costs one request per id.

namespace ntpool::pool {

struct ResolveOutcome {
    bool allocated = false;
    std::string address;  // set when allocated
};

struct EnumerationResult {
    std::vector<ServerRecord> records;  // newly observed during this walk
    int64_t next_id = 0;                // first unallocated id
};

class PoolClient {
public:
    PoolClient(std::string base_url, RateLimiter& limiter, Clock& clock,
               RatePolicy policy = {}, int retries = 2)
        : base_url_(std::move(base_url)),
          limiter_(limiter),
          clock_(clock),
          policy_(policy),
          retries_(retries),
          http_(base_url_) {
        policy_.validate();
        if (retries_ < 0) throw ValidationError("retries must be >= 0");
        http_.set_connection_timeout(5, 0);
        http_.set_read_timeout(5, 0);
    }

    // GET /scores/{id}: a 301 names the server's address in its redirect
    // target, which we parse without following. 404 means the id was never
    // allocated.
    ResolveOutcome resolve_id(int64_t server_id) {
        if (server_id < 1) throw ValidationError("server_id must be >= 1");
        auto res = get("/scores/" + std::to_string(server_id));
        if (res.status == 404) return {};
        if (res.status != 301)
            throw ProtocolError("/scores/{id} returned status " +
                                std::to_string(res.status));
        auto location = res.get_header_value("Location");
        auto marker = location.rfind("/scores/");
        if (marker == std::string::npos)
            throw ProtocolError("redirect target has no /scores/ segment: " + location);
        auto address = location.substr(marker + 8);
        while (!address.empty() && address.back() == '/') address.pop_back();
        if (!IpAddress::parse(address))
            throw ProtocolError("redirect target is not an address: " + location);
        return {true, address};
    }

    // GET /scores/{ip}/json: server metadata, stamped with the current time.
    ServerRecord fetch_server(const std::string& address, int64_t server_id) {
        auto res = get("/scores/" + address + "/json");
        if (res.status != 200)
            throw ProtocolError("metadata fetch for " + address + " returned status " +
                                std::to_string(res.status));
        auto body = parse_json(res.body, "server metadata");
        ServerRecord record;
        try {
            const auto& server = body.at("server");
            record.server_id = server_id;
            record.address = server.at("ip").get<std::string>();
            for (const auto& z : server.at("zones"))
                record.zones.push_back(z.get<std::string>());
            record.score = server.at("score").get<double>();
            record.netspeed_kbps = server.at("netspeed").get<int64_t>();
            if (server.contains("account") && !server["account"].is_null())
                record.account = server["account"].get<std::string>();
            record.deleted = server.value("deleted", false);
        } catch (const nlohmann::json::exception& e) {
            throw ProtocolError(std::string("server metadata shape: ") + e.what());
        }
        record.first_seen_ms = record.last_seen_ms = clock_.now_ms();
        record.validate();
        return record;
    }

    // GET /api/data/server/dns/answers/{ip}: cumulative per-zone counters.
    // Unknown addresses yield an empty list.
    std::vector<AnswerSample> fetch_answers(const std::string& address) {
        auto res = get("/api/data/server/dns/answers/" + address);
        if (res.status == 404) return {};
        if (res.status != 200)
            throw ProtocolError("answers fetch for " + address + " returned status " +
                                std::to_string(res.status));
        auto body = parse_json(res.body, "answers");
        if (!body.is_object()) throw ProtocolError("answers body is not an object");
        std::vector<AnswerSample> samples;
        int64_t now = clock_.now_ms();
        for (const auto& [zone, value] : body.items()) {
            if (!value.is_number_integer() || value.get<int64_t>() < 0)
                throw ProtocolError("answer count for zone " + zone +
                                    " is not a non-negative integer");
            samples.push_back({address, zone, value.get<int64_t>(), now});
        }
        return samples;
    }

    // GET /api/data/zone/counts/{zone}.
    ZoneCounts fetch_zone_counts(const std::string& zone) {
        auto res = get("/api/data/zone/counts/" + zone);
        if (res.status == 404) throw ValidationError("zone not found: " + zone);
        if (res.status != 200)
            throw ProtocolError("zone counts fetch for " + zone + " returned status " +
                                std::to_string(res.status));
        auto body = parse_json(res.body, "zone counts");
        ZoneCounts counts;
        try {
            counts.zone = body.at("zone").get<std::string>();
            counts.servers_v4 = body.at("servers_v4").get<int64_t>();
            counts.servers_v6 = body.at("servers_v6").get<int64_t>();
            counts.aggregate_netspeed_kbps = body.at("aggregate_netspeed_kbps").get<int64_t>();
        } catch (const nlohmann::json::exception& e) {
            throw ProtocolError(std::string("zone counts shape: ") + e.what());
        }
        counts.fetched_at_ms = clock_.now_ms();
        counts.validate();
        return counts;
    }

    // Walks ids upward from start_id until the first unallocated one, fetching
    // metadata for every hit. With a store attached, each id is checkpointed
    // as it completes, so a crashed walk resumes without re-fetching.
    EnumerationResult enumerate(int64_t start_id, ScrapeStore* store = nullptr,
                                size_t max_records = SIZE_MAX) {
        if (start_id < 1) throw ValidationError("start_id must be >= 1");
        EnumerationResult result;
        auto checkpoint = [&](int64_t covered, int64_t next) {
            if (!store) return;
            int64_t high_water = std::max(store->snapshot().high_water, covered);
            store->set_checkpoint(high_water, next,
                                  clock_.now_ms() + policy_.id_poll_interval_ms,
                                  clock_.now_ms());
        };
        int64_t id = start_id;
        while (result.records.size() < max_records) {
            auto outcome = resolve_id(id);
            if (!outcome.allocated) break;
            auto record = fetch_server(outcome.address, id);
            if (store) {
                store->record_server(record, clock_.now_ms());
                checkpoint(id, id + 1);
            }
            result.records.push_back(std::move(record));
            ++id;
        }
        result.next_id = id;
        checkpoint(id - 1, id);
        return result;
    }

    const RatePolicy& policy() const { return policy_; }
    const std::vector<int64_t>& emission_times_ms() const { return emissions_; }

private:
    httplib::Response get(const std::string& path) {
        for (int attempt = 0; ; ++attempt) {
            emissions_.push_back(limiter_.acquire());
            auto res = http_.Get(path);
            if (res) return res.value();
            if (attempt >= retries_)
                throw NetworkError("GET " + path + " failed after " +
                                   std::to_string(retries_ + 1) + " attempts: " +
                                   httplib::to_string(res.error()));
        }
    }

    static nlohmann::json parse_json(const std::string& body, const std::string& what) {
        try {
            return nlohmann::json::parse(body);
        } catch (const std::exception& e) {
            throw ProtocolError(what + " body is not JSON: " + e.what());
        }
    }

    std::string base_url_;
    RateLimiter& limiter_;
    Clock& clock_;
    RatePolicy policy_;
    int retries_;
    httplib::Client http_;
    std::vector<int64_t> emissions_;
};

}  // namespace ntpool::pool
