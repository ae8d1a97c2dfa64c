#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <istream>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "ntpool/errors.hpp"
#include "ntpool/independence.hpp"
#include "ntpool/ip.hpp"
#include "ntpool/wire.hpp"

// Discriminator tuples collected from NTP mode-4 responses and their
// clustering into alias sets: addresses whose fingerprints match are inferred
// to front the same NTP daemon.

namespace ntpool::fingerprint {

struct WeakHints {
    uint8_t ttl_or_hoplimit = 0;
    uint8_t dscp_or_trafficclass = 0;

    friend bool operator==(const WeakHints&, const WeakHints&) = default;
};

struct Fingerprint {
    IpAddress address;
    int64_t collected_at_ms = 0;  // prober clock at receive time
    uint8_t version = 0;
    uint8_t stratum = 0;
    std::array<uint8_t, 4> refid{};
    int8_t precision = 0;
    int8_t poll = 0;
    wire::NtpTimestamp reference_ts;
    wire::NtpShort root_dispersion;
    std::optional<WeakHints> weak_hints;

    friend bool operator==(const Fingerprint&, const Fingerprint&) = default;
};

// Which fields participate in matching. The defaults are the strong
// discriminators; poll and the IP-layer hints are weak and opt-in.
struct MatchKey {
    bool version = true;
    bool stratum = true;
    bool refid = true;
    bool precision = true;
    bool reference_ts = true;
    bool poll = false;
    bool ttl = false;
    bool dscp = false;
    int64_t window_ms = 60'000;
};

enum class MatchResult { no_match, match, incomparable };

// Probes farther apart than the window are incomparable: the daemon may have
// resynchronized, so inequality there is not evidence of distinct hosts.
inline MatchResult fingerprints_match(const Fingerprint& a, const Fingerprint& b,
                                      const MatchKey& key = {}) {
    int64_t gap = a.collected_at_ms - b.collected_at_ms;
    if (gap < 0) gap = -gap;
    if (gap > key.window_ms) return MatchResult::incomparable;

    if (key.version && a.version != b.version) return MatchResult::no_match;
    if (key.stratum && a.stratum != b.stratum) return MatchResult::no_match;
    if (key.refid && a.refid != b.refid) return MatchResult::no_match;
    if (key.precision && a.precision != b.precision) return MatchResult::no_match;
    if (key.reference_ts && a.reference_ts != b.reference_ts)
        return MatchResult::no_match;
    if (key.poll && a.poll != b.poll) return MatchResult::no_match;
    if (key.ttl) {
        auto ta = a.weak_hints ? std::optional<uint8_t>(a.weak_hints->ttl_or_hoplimit)
                               : std::nullopt;
        auto tb = b.weak_hints ? std::optional<uint8_t>(b.weak_hints->ttl_or_hoplimit)
                               : std::nullopt;
        if (ta != tb) return MatchResult::no_match;
    }
    if (key.dscp) {
        auto da = a.weak_hints
                      ? std::optional<uint8_t>(a.weak_hints->dscp_or_trafficclass)
                      : std::nullopt;
        auto db = b.weak_hints
                      ? std::optional<uint8_t>(b.weak_hints->dscp_or_trafficclass)
                      : std::nullopt;
        if (da != db) return MatchResult::no_match;
    }
    return MatchResult::match;
}

// Longest prefix containing every member; all members must share a family.
inline IpPrefix covering_prefix(const std::vector<IpAddress>& members) {
    if (members.empty())
        throw ValidationError("covering prefix of an empty set is undefined");
    const IpAddress& first = members.front();
    int length = first.bit_length();
    for (size_t i = 1; i < members.size(); ++i)
        length = std::min(length, common_prefix_length(first, members[i]));
    return IpPrefix(first, length);
}

struct AliasCluster {
    std::vector<IpAddress> members;  // sorted
    bool contains_stratum1 = false;
    std::optional<IpPrefix> covering_prefix_v4;
    std::optional<IpPrefix> covering_prefix_v6;
    bool mixed_family = false;
};

namespace detail {

struct UnionFind {
    std::vector<size_t> parent;

    explicit UnionFind(size_t n) : parent(n) {
        std::iota(parent.begin(), parent.end(), size_t{0});
    }

    size_t find(size_t x) {
        while (parent[x] != x) {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        return x;
    }

    void unite(size_t a, size_t b) { parent[find(a)] = find(b); }
};

}  // namespace detail

// Partitions the probed addresses by the transitive closure of pairwise
// fingerprint matches (any matching pair of probe rounds links two
// addresses). Clusters holding a stratum-1 member are flagged; downstream
// alias tallies must skip them. Output is deterministic: members sorted
// within clusters, clusters sorted by lowest member.
inline std::vector<AliasCluster> build_clusters(const std::vector<Fingerprint>& fps,
                                                const MatchKey& key = {}) {
    std::vector<IpAddress> addresses;
    std::unordered_map<IpAddress, size_t, IpAddressHash> index;
    std::vector<std::vector<const Fingerprint*>> per_address;
    for (const auto& fp : fps) {
        auto [it, fresh] = index.emplace(fp.address, addresses.size());
        if (fresh) {
            addresses.push_back(fp.address);
            per_address.emplace_back();
        }
        per_address[it->second].push_back(&fp);
    }

    detail::UnionFind uf(addresses.size());
    for (size_t i = 0; i < addresses.size(); ++i) {
        for (size_t j = i + 1; j < addresses.size(); ++j) {
            bool linked = false;
            for (const auto* a : per_address[i]) {
                for (const auto* b : per_address[j]) {
                    if (fingerprints_match(*a, *b, key) == MatchResult::match) {
                        linked = true;
                        break;
                    }
                }
                if (linked) break;
            }
            if (linked) uf.unite(i, j);
        }
    }

    std::unordered_map<size_t, std::vector<size_t>> groups;
    for (size_t i = 0; i < addresses.size(); ++i) groups[uf.find(i)].push_back(i);

    std::vector<AliasCluster> clusters;
    clusters.reserve(groups.size());
    for (auto& [root, ids] : groups) {
        AliasCluster c;
        for (size_t id : ids) {
            c.members.push_back(addresses[id]);
            for (const auto* fp : per_address[id])
                if (fp->stratum == 1) c.contains_stratum1 = true;
        }
        std::sort(c.members.begin(), c.members.end());
        std::vector<IpAddress> v4s, v6s;
        for (const auto& m : c.members) (m.is_v4() ? v4s : v6s).push_back(m);
        if (!v4s.empty()) c.covering_prefix_v4 = covering_prefix(v4s);
        if (!v6s.empty()) c.covering_prefix_v6 = covering_prefix(v6s);
        c.mixed_family = !v4s.empty() && !v6s.empty();
        clusters.push_back(std::move(c));
    }
    std::sort(clusters.begin(), clusters.end(),
              [](const AliasCluster& a, const AliasCluster& b) {
                  return a.members.front() < b.members.front();
              });
    return clusters;
}

// ---------------------------------------------------------------------------
// Cluster consistency against ownership maps

struct ConsistencyTally {
    size_t multi_member = 0;     // clusters of size >= 2 examined
    size_t account_and_asn = 0;  // both dimensions known and uniform
    size_t account_only = 0;     // accounts uniform, ASNs split
    size_t asn_only = 0;         // ASNs uniform, accounts split
    size_t neither = 0;          // both known and both split
    size_t undeterminable = 0;   // an account or ASN missing somewhere
};

inline ConsistencyTally cluster_consistency(const std::vector<AliasCluster>& clusters,
                                            const independence::AccountMap& accounts,
                                            const independence::AsnLookup& asn_of) {
    ConsistencyTally tally;
    for (const auto& c : clusters) {
        if (c.members.size() < 2) continue;
        ++tally.multi_member;

        bool account_known = true, asn_known = true;
        bool account_uniform = true, asn_uniform = true;
        std::optional<std::string> account;
        std::optional<uint32_t> asn;
        for (const auto& m : c.members) {
            auto it = accounts.find(m);
            if (it == accounts.end()) {
                account_known = false;
            } else if (!account) {
                account = it->second;
            } else if (*account != it->second) {
                account_uniform = false;
            }
            auto a = asn_of(m);
            if (!a) {
                asn_known = false;
            } else if (!asn) {
                asn = *a;
            } else if (*asn != *a) {
                asn_uniform = false;
            }
        }
        // A split observed on known values is decisive even if another
        // member's value is missing; only unresolved dimensions are
        // undeterminable.
        bool account_decided = !account_uniform || account_known;
        bool asn_decided = !asn_uniform || asn_known;
        if (!account_decided || !asn_decided) {
            ++tally.undeterminable;
        } else if (account_uniform && asn_uniform) {
            ++tally.account_and_asn;
        } else if (account_uniform) {
            ++tally.account_only;
        } else if (asn_uniform) {
            ++tally.asn_only;
        } else {
            ++tally.neither;
        }
    }
    return tally;
}

// ---------------------------------------------------------------------------
// Campaign bookkeeping

struct CampaignSummary {
    size_t targets = 0;
    size_t responsive = 0;

    double responsiveness() const {
        if (targets == 0) return 0.0;
        return static_cast<double>(responsive) / static_cast<double>(targets);
    }
};

inline CampaignSummary summarize_campaign(size_t targets,
                                          const std::vector<Fingerprint>& fps) {
    std::unordered_map<IpAddress, bool, IpAddressHash> seen;
    for (const auto& fp : fps) seen.emplace(fp.address, true);
    if (seen.size() > targets)
        throw ValidationError("more responsive addresses than targets");
    return CampaignSummary{targets, seen.size()};
}

// ---------------------------------------------------------------------------
// Line-delimited serialization

inline std::string timestamp_hex(const wire::NtpTimestamp& ts) {
    static const char* digits = "0123456789abcdef";
    uint64_t v = (static_cast<uint64_t>(ts.seconds) << 32) | ts.fraction;
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i, v >>= 4) out[i] = digits[v & 0xF];
    return out;
}

inline std::string short_hex(const wire::NtpShort& s) {
    static const char* digits = "0123456789abcdef";
    uint32_t v = (static_cast<uint32_t>(s.seconds) << 16) | s.fraction;
    std::string out(8, '0');
    for (int i = 7; i >= 0; --i, v >>= 4) out[i] = digits[v & 0xF];
    return out;
}

namespace detail {

inline uint64_t parse_hex(const std::string& text, size_t digits) {
    if (text.size() != digits)
        throw ParseError("hex field must be " + std::to_string(digits) + " digits");
    uint64_t v = 0;
    for (char c : text) {
        int nibble;
        if (c >= '0' && c <= '9') nibble = c - '0';
        else if (c >= 'a' && c <= 'f') nibble = c - 'a' + 10;
        else if (c >= 'A' && c <= 'F') nibble = c - 'A' + 10;
        else throw ParseError("bad hex digit in '" + text + "'");
        v = (v << 4) | static_cast<uint64_t>(nibble);
    }
    return v;
}

}  // namespace detail

inline nlohmann::json to_json(const Fingerprint& fp) {
    nlohmann::json j = {
        {"address", fp.address.to_string()},
        {"collected_at", fp.collected_at_ms},
        {"version", fp.version},
        {"stratum", fp.stratum},
        {"refid_hex", wire::refid_hex(fp.refid)},
        {"precision", fp.precision},
        {"poll", fp.poll},
        {"reference_ts_hex", timestamp_hex(fp.reference_ts)},
        {"root_dispersion_hex", short_hex(fp.root_dispersion)},
    };
    if (fp.weak_hints) {
        j["ttl_or_hoplimit"] = fp.weak_hints->ttl_or_hoplimit;
        j["dscp_or_trafficclass"] = fp.weak_hints->dscp_or_trafficclass;
    }
    return j;
}

inline Fingerprint fingerprint_from_json(const nlohmann::json& j) {
    Fingerprint fp;
    fp.address = IpAddress::parse_or_throw(j.at("address").get<std::string>());
    fp.collected_at_ms = j.at("collected_at").get<int64_t>();
    fp.version = j.at("version").get<uint8_t>();
    fp.stratum = j.at("stratum").get<uint8_t>();
    uint64_t refid = detail::parse_hex(j.at("refid_hex").get<std::string>(), 8);
    for (int i = 0; i < 4; ++i)
        fp.refid[i] = static_cast<uint8_t>(refid >> (8 * (3 - i)));
    fp.precision = static_cast<int8_t>(j.at("precision").get<int>());
    fp.poll = static_cast<int8_t>(j.at("poll").get<int>());
    uint64_t ts = detail::parse_hex(j.at("reference_ts_hex").get<std::string>(), 16);
    fp.reference_ts = {static_cast<uint32_t>(ts >> 32), static_cast<uint32_t>(ts)};
    uint64_t rd = detail::parse_hex(j.at("root_dispersion_hex").get<std::string>(), 8);
    fp.root_dispersion = {static_cast<uint16_t>(rd >> 16), static_cast<uint16_t>(rd)};
    if (j.contains("ttl_or_hoplimit") || j.contains("dscp_or_trafficclass")) {
        WeakHints hints;
        hints.ttl_or_hoplimit = j.value("ttl_or_hoplimit", 0);
        hints.dscp_or_trafficclass = j.value("dscp_or_trafficclass", 0);
        fp.weak_hints = hints;
    }
    return fp;
}

inline void write_fingerprints(std::ostream& out, const std::vector<Fingerprint>& fps) {
    for (const auto& fp : fps) out << to_json(fp).dump() << '\n';
}

inline std::vector<Fingerprint> read_fingerprints(std::istream& in) {
    std::vector<Fingerprint> out;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            out.push_back(fingerprint_from_json(nlohmann::json::parse(line)));
        } catch (const ParseError&) {
            throw;
        } catch (const std::exception& e) {
            throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

inline nlohmann::json cluster_to_json(const AliasCluster& c, size_t cluster_id) {
    nlohmann::json members = nlohmann::json::array();
    for (const auto& m : c.members) members.push_back(m.to_string());
    return {
        {"cluster_id", cluster_id},
        {"members", std::move(members)},
        {"contains_stratum1", c.contains_stratum1},
        {"covering_prefix_v4",
         c.covering_prefix_v4 ? nlohmann::json(c.covering_prefix_v4->to_string())
                              : nlohmann::json(nullptr)},
        {"covering_prefix_v6",
         c.covering_prefix_v6 ? nlohmann::json(c.covering_prefix_v6->to_string())
                              : nlohmann::json(nullptr)},
        {"mixed_family", c.mixed_family},
    };
}

inline void write_clusters(std::ostream& out, const std::vector<AliasCluster>& clusters) {
    for (size_t i = 0; i < clusters.size(); ++i)
        out << cluster_to_json(clusters[i], i).dump() << '\n';
}

}  // namespace ntpool::fingerprint
