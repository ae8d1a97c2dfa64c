#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ntpool/errors.hpp"

// Deterministic, seedable simulator of pool mechanics: monitors score servers
// each period, clients resolve through zone fallback and weighted answer
// sampling, cache one server, and keep querying it long after re-resolution
// would have moved them elsewhere.

namespace ntpool::poolsim {

// ---------------------------------------------------------------------------
// Scoring

enum class Outcome { accurate, bad };

// One monitor observation: exponential decay toward the endpoint fixed
// points, +1 for accurate time, -5 for bad or missing responses. 20 and -100
// are exact fixed points of the recurrence.
inline double step_score(double score, Outcome outcome) {
    double delta = outcome == Outcome::accurate ? 1.0 : -5.0;
    return std::clamp(0.95 * score + delta, -100.0, 20.0);
}

inline constexpr double kActivationScore = 10.0;

// ---------------------------------------------------------------------------
// Configuration

struct SimServer {
    std::string address;
    std::vector<std::string> zones;  // country/continent/"@" memberships
    int64_t netspeed_kbps = 0;       // 0 = monitor-only
    double initial_score = 0.0;
    bool truthful = true;
    bool responsive = true;
    std::optional<int64_t> stop_responding_s;  // daemon failure time
    bool attacker = false;
};

struct ClientPopulation {
    std::string country;
    std::string continent;
    size_t count = 0;
    double queries_per_day = 100.0;  // NTP queries toward the cached server
};

struct ReResolvePolicy {
    enum class Kind { fixed, pareto };
    Kind kind = Kind::pareto;
    double min_s = 14'400;
    double alpha = 1.1;  // tail exponent for pareto
};

struct AttackSpec {
    std::vector<std::string> zones;  // zones each attack server registers in
    int64_t count = 0;
    int64_t netspeed_kbps = 0;
    double initial_score = 0.0;
    int64_t start_s = 0;
    std::optional<int64_t> removal_s;      // de-registration from DNS
    std::optional<int64_t> daemon_stop_s;  // NTP daemon termination
};

struct SimConfig {
    uint64_t seed = 1;
    int64_t duration_s = 86'400;
    int64_t monitor_period_s = 900;  // also the discrete time step
    int64_t window_s = 86'400;       // report bucketing
    int64_t measure_start_s = 0;     // share summary starts here
    std::optional<int64_t> measure_end_s;
    int failure_threshold = 8;  // failed queries before a client drops its cache
    ReResolvePolicy re_resolve;
    std::vector<SimServer> servers;
    std::vector<ClientPopulation> populations;
    std::optional<AttackSpec> attack;
};

// ---------------------------------------------------------------------------
// Deterministic draws (hand-rolled so reports are stable across platforms)

namespace detail {

inline double uniform01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline int poisson(std::mt19937_64& rng, double lambda) {
    if (lambda <= 0) return 0;
    double limit = std::exp(-lambda);
    double p = 1.0;
    int k = 0;
    do {
        ++k;
        p *= uniform01(rng);
    } while (p > limit);
    return k - 1;
}

inline double draw_re_resolve(std::mt19937_64& rng, const ReResolvePolicy& policy) {
    if (policy.kind == ReResolvePolicy::Kind::fixed) return policy.min_s;
    double u = uniform01(rng);              // [0, 1)
    double tail = 1.0 - u;                  // (0, 1]
    return policy.min_s * std::pow(tail, -1.0 / policy.alpha);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Answer selection

struct ServerRuntime {
    SimServer spec;
    double score = 0.0;
    bool responsive = true;
    bool registered = true;  // still present in DNS zones
};

namespace detail {

inline bool eligible(const ServerRuntime& s, const std::string& zone) {
    if (!s.registered || s.spec.netspeed_kbps <= 0) return false;
    if (s.score < kActivationScore) return false;
    return std::find(s.spec.zones.begin(), s.spec.zones.end(), zone) !=
           s.spec.zones.end();
}

// A server's netspeed is budgeted across every zone it registers in, so
// multi-zone registration dilutes its weight in each single zone.
inline double zone_weight(const ServerRuntime& s) {
    size_t zones = std::max<size_t>(1, s.spec.zones.size());
    return static_cast<double>(s.spec.netspeed_kbps) / static_cast<double>(zones);
}

}  // namespace detail

struct SelectedAnswer {
    std::string zone;             // the zone tier that served the answer
    std::vector<size_t> servers;  // indices, answer order; empty if none anywhere
};

// GeoDNS answer: the client's country zone if it has eligible servers, else
// its continent, else the global zone; then up to four distinct servers by
// successive weighted draws without replacement.
inline SelectedAnswer select_answer(const std::vector<ServerRuntime>& servers,
                                    const std::string& country,
                                    const std::string& continent,
                                    std::mt19937_64& rng, size_t max_answers = 4) {
    SelectedAnswer answer;
    std::vector<size_t> pool;
    for (const std::string& zone : {country, continent, std::string("@")}) {
        if (zone.empty()) continue;
        for (size_t i = 0; i < servers.size(); ++i)
            if (detail::eligible(servers[i], zone)) pool.push_back(i);
        if (!pool.empty()) {
            answer.zone = zone;
            break;
        }
    }
    if (pool.empty()) return answer;

    std::vector<double> weights;
    weights.reserve(pool.size());
    double total = 0;
    for (size_t i : pool) {
        weights.push_back(detail::zone_weight(servers[i]));
        total += weights.back();
    }
    size_t take = std::min(max_answers, pool.size());
    for (size_t round = 0; round < take && total > 0; ++round) {
        double r = detail::uniform01(rng) * total;
        size_t picked = pool.size() - 1;
        double acc = 0;
        for (size_t i = 0; i < pool.size(); ++i) {
            if (weights[i] <= 0) continue;
            acc += weights[i];
            if (r < acc) {
                picked = i;
                break;
            }
        }
        answer.servers.push_back(pool[picked]);
        total -= weights[picked];
        weights[picked] = 0;
    }
    return answer;
}

// ---------------------------------------------------------------------------
// Reports

struct WindowStats {
    int64_t start_s = 0;
    // zone -> address -> count of answers led by that server. Clients adopt
    // the first answer, so first-position counts define the measured share.
    std::map<std::string, std::map<std::string, int64_t>> dns_first;
    std::map<std::string, int64_t> ntp_queries;  // address -> packet arrivals
    int64_t dns_answers = 0;
    int64_t dns_empty = 0;
};

struct SimReport {
    std::vector<WindowStats> windows;
    std::vector<std::string> attacker_addresses;
    std::map<std::string, double> final_scores;
    int64_t duration_s = 0;
    int64_t window_s = 0;
};

struct ShareSummary {
    std::map<std::string, double> share;  // address -> first-position share
    double attacker_share = 0.0;
    int64_t answers = 0;
};

// Shares within one zone over [from_s, to_s): the fraction of answers each
// server led.
inline ShareSummary summarize_shares(const SimReport& report, const std::string& zone,
                                     int64_t from_s, int64_t to_s,
                                     const std::vector<std::string>& attackers = {}) {
    std::map<std::string, int64_t> counts;
    int64_t total = 0;
    for (const auto& w : report.windows) {
        if (w.start_s < from_s || w.start_s >= to_s) continue;
        auto it = w.dns_first.find(zone);
        if (it == w.dns_first.end()) continue;
        for (const auto& [address, count] : it->second) {
            counts[address] += count;
            total += count;
        }
    }
    ShareSummary summary;
    summary.answers = total;
    if (total == 0) return summary;
    std::set<std::string> attacker_set(attackers.begin(), attackers.end());
    for (const auto& [address, count] : counts) {
        double share = static_cast<double>(count) / static_cast<double>(total);
        summary.share[address] = share;
        if (attacker_set.count(address)) summary.attacker_share += share;
    }
    return summary;
}

// Per-window NTP packet arrivals at the given addresses, from from_s onward.
inline std::vector<int64_t> window_ntp_counts(const SimReport& report,
                                              const std::vector<std::string>& addresses,
                                              int64_t from_s) {
    std::set<std::string> wanted(addresses.begin(), addresses.end());
    std::vector<int64_t> out;
    for (const auto& w : report.windows) {
        if (w.start_s < from_s) continue;
        int64_t total = 0;
        for (const auto& [address, count] : w.ntp_queries)
            if (wanted.count(address)) total += count;
        out.push_back(total);
    }
    return out;
}

// ---------------------------------------------------------------------------
// The simulation proper

class Simulation {
public:
    explicit Simulation(SimConfig config) : config_(std::move(config)) {
        if (config_.monitor_period_s <= 0)
            throw ValidationError("monitor period must be positive");
        if (config_.window_s <= 0) throw ValidationError("window must be positive");
        if (config_.duration_s < 0) throw ValidationError("duration must be >= 0");
        if (config_.attack) {
            const auto& a = *config_.attack;
            if (a.count < 0) throw ValidationError("attack count must be >= 0");
            if (a.removal_s && *a.removal_s < a.start_s)
                throw ValidationError("attack removal precedes its start");
        }
    }

    SimReport run() {
        std::mt19937_64 rng(config_.seed);

        std::vector<ServerRuntime> servers;
        for (const auto& spec : config_.servers) {
            ServerRuntime s;
            s.spec = spec;
            s.score = spec.initial_score;
            s.responsive = spec.responsive;
            servers.push_back(std::move(s));
        }

        struct Client {
            size_t population = 0;
            int cached = -1;
            int64_t next_resolve_s = 0;
            int failures = 0;
        };
        std::vector<Client> clients;
        for (size_t p = 0; p < config_.populations.size(); ++p)
            for (size_t i = 0; i < config_.populations[p].count; ++i)
                clients.push_back(Client{p, -1, 0, 0});

        SimReport report;
        report.duration_s = config_.duration_s;
        report.window_s = config_.window_s;

        bool attack_started = false, attack_removed = false, attack_stopped = false;

        auto window_for = [&](int64_t now) -> WindowStats& {
            int64_t start = (now / config_.window_s) * config_.window_s;
            if (report.windows.empty() || report.windows.back().start_s != start) {
                WindowStats w;
                w.start_s = start;
                report.windows.push_back(std::move(w));
            }
            return report.windows.back();
        };

        for (int64_t now = 0; now < config_.duration_s; now += config_.monitor_period_s) {
            // Attack lifecycle events snap to the step boundary.
            if (config_.attack) {
                const auto& a = *config_.attack;
                if (!attack_started && now >= a.start_s) {
                    attack_started = true;
                    for (int64_t i = 0; i < a.count; ++i) {
                        ServerRuntime s;
                        s.spec.address = "attacker-" + std::to_string(i + 1);
                        s.spec.zones = a.zones;
                        s.spec.netspeed_kbps = a.netspeed_kbps;
                        s.spec.initial_score = a.initial_score;
                        s.spec.attacker = true;
                        s.score = a.initial_score;
                        servers.push_back(std::move(s));
                        report.attacker_addresses.push_back(servers.back().spec.address);
                    }
                }
                if (attack_started && !attack_removed && a.removal_s && now >= *a.removal_s) {
                    attack_removed = true;
                    for (auto& s : servers)
                        if (s.spec.attacker) s.registered = false;
                }
                if (attack_started && !attack_stopped && a.daemon_stop_s &&
                    now >= *a.daemon_stop_s) {
                    attack_stopped = true;
                    for (auto& s : servers)
                        if (s.spec.attacker) s.responsive = false;
                }
            }
            for (auto& s : servers)
                if (s.spec.stop_responding_s && now >= *s.spec.stop_responding_s)
                    s.responsive = false;

            // Monitor pass: every registered server is probed once per step.
            for (auto& s : servers) {
                if (!s.registered) continue;
                Outcome o = (s.responsive && s.spec.truthful) ? Outcome::accurate
                                                              : Outcome::bad;
                s.score = step_score(s.score, o);
            }

            WindowStats& window = window_for(now);

            // Client pass.
            for (auto& c : clients) {
                const auto& population = config_.populations[c.population];
                if (c.cached < 0 || now >= c.next_resolve_s ||
                    c.failures >= config_.failure_threshold) {
                    auto answer = select_answer(servers, population.country,
                                                population.continent, rng);
                    if (answer.servers.empty()) {
                        ++window.dns_empty;
                        c.cached = -1;
                        c.next_resolve_s = now + config_.monitor_period_s;
                    } else {
                        ++window.dns_answers;
                        auto& zone_counts = window.dns_first[answer.zone];
                        ++zone_counts[servers[answer.servers.front()].spec.address];
                        c.cached = static_cast<int>(answer.servers.front());
                        c.failures = 0;
                        c.next_resolve_s =
                            now + static_cast<int64_t>(detail::draw_re_resolve(
                                      rng, config_.re_resolve));
                    }
                }
                if (c.cached < 0) continue;
                double lambda = population.queries_per_day *
                                static_cast<double>(config_.monitor_period_s) / 86'400.0;
                int queries = detail::poisson(rng, lambda);
                if (queries == 0) continue;
                auto& server = servers[c.cached];
                window.ntp_queries[server.spec.address] += queries;
                if (server.responsive) {
                    c.failures = 0;
                } else {
                    c.failures += queries;
                }
            }
        }
        for (const auto& s : servers) report.final_scores[s.spec.address] = s.score;
        return report;
    }

    const SimConfig& config() const { return config_; }

private:
    SimConfig config_;
};

// ---------------------------------------------------------------------------
// Scenario file (JSON) and report serialization

inline SimConfig parse_scenario(std::istream& in) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const std::exception& e) {
        throw ParseError(std::string("scenario is not valid JSON: ") + e.what());
    }
    try {
        SimConfig config;
        config.seed = j.value("seed", uint64_t{1});
        config.duration_s = j.at("duration_s").get<int64_t>();
        config.monitor_period_s = j.value("monitor_period_s", int64_t{900});
        config.window_s = j.value("window_s", int64_t{86'400});
        config.measure_start_s = j.value("measure_start_s", int64_t{0});
        if (j.contains("measure_end_s"))
            config.measure_end_s = j["measure_end_s"].get<int64_t>();
        config.failure_threshold = j.value("failure_threshold", 8);
        if (j.contains("re_resolve")) {
            const auto& r = j["re_resolve"];
            std::string kind = r.value("kind", "pareto");
            if (kind == "fixed") {
                config.re_resolve.kind = ReResolvePolicy::Kind::fixed;
            } else if (kind == "pareto") {
                config.re_resolve.kind = ReResolvePolicy::Kind::pareto;
            } else {
                throw ParseError("re_resolve.kind must be 'fixed' or 'pareto'");
            }
            config.re_resolve.min_s = r.value("min_s", 14'400.0);
            config.re_resolve.alpha = r.value("alpha", 1.1);
        }
        for (const auto& s : j.value("servers", nlohmann::json::array())) {
            SimServer server;
            server.address = s.at("address").get<std::string>();
            for (const auto& z : s.at("zones")) server.zones.push_back(z.get<std::string>());
            server.netspeed_kbps = s.at("netspeed_kbps").get<int64_t>();
            server.initial_score = s.value("initial_score", 0.0);
            server.truthful = s.value("truthful", true);
            server.responsive = s.value("responsive", true);
            if (s.contains("stop_responding_s"))
                server.stop_responding_s = s["stop_responding_s"].get<int64_t>();
            server.attacker = s.value("attacker", false);
            config.servers.push_back(std::move(server));
        }
        for (const auto& p : j.value("populations", nlohmann::json::array())) {
            ClientPopulation pop;
            pop.country = p.at("country").get<std::string>();
            pop.continent = p.value("continent", "");
            pop.count = p.at("count").get<size_t>();
            pop.queries_per_day = p.value("queries_per_day", 100.0);
            config.populations.push_back(std::move(pop));
        }
        if (j.contains("attack")) {
            const auto& a = j["attack"];
            AttackSpec attack;
            for (const auto& z : a.at("zones")) attack.zones.push_back(z.get<std::string>());
            attack.count = a.at("count").get<int64_t>();
            attack.netspeed_kbps = a.at("netspeed_kbps").get<int64_t>();
            attack.initial_score = a.value("initial_score", 0.0);
            attack.start_s = a.value("start_s", int64_t{0});
            if (a.contains("removal_s")) attack.removal_s = a["removal_s"].get<int64_t>();
            if (a.contains("daemon_stop_s"))
                attack.daemon_stop_s = a["daemon_stop_s"].get<int64_t>();
            config.attack = std::move(attack);
        }
        return config;
    } catch (const ParseError&) {
        throw;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("scenario field error: ") + e.what());
    }
}

// One row per counter: window_start_s,record,zone,address,count with record
// dns_first or ntp (ntp rows have an empty zone column).
inline void write_windows_csv(std::ostream& out, const SimReport& report) {
    out << "window_start_s,record,zone,address,count\n";
    for (const auto& w : report.windows) {
        for (const auto& [zone, counts] : w.dns_first)
            for (const auto& [address, count] : counts)
                out << w.start_s << ",dns_first," << zone << ',' << address << ','
                    << count << '\n';
        for (const auto& [address, count] : w.ntp_queries)
            out << w.start_s << ",ntp,," << address << ',' << count << '\n';
    }
}

inline nlohmann::json summary_json(const SimReport& report, const SimConfig& config,
                                   const std::string& zone) {
    int64_t to = config.measure_end_s.value_or(config.duration_s);
    auto summary =
        summarize_shares(report, zone, config.measure_start_s, to,
                         report.attacker_addresses);
    nlohmann::json shares = nlohmann::json::object();
    for (const auto& [address, share] : summary.share) shares[address] = share;
    return {
        {"zone", zone},
        {"measure_start_s", config.measure_start_s},
        {"measure_end_s", to},
        {"answers", summary.answers},
        {"share", std::move(shares)},
        {"attacker_share", summary.attacker_share},
        {"attackers", report.attacker_addresses},
    };
}

}  // namespace ntpool::poolsim
