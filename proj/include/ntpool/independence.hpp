#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "ntpool/errors.hpp"
#include "ntpool/ip.hpp"

// Server-independence analytics: the dealias -> account -> ASN reduction
// funnel, IPv6 interface-identifier classification, score-series lifetime and
// availability, and multi-continent anycast candidate flagging.

namespace ntpool::independence {

// ---------------------------------------------------------------------------
// Independence funnel

struct FunnelReport {
    size_t total_active = 0;
    size_t after_dealias = 0;
    size_t after_account = 0;
    size_t after_asn = 0;
    double independent_fraction = 0.0;
};

using AccountMap = std::unordered_map<IpAddress, std::string, IpAddressHash>;
using AsnLookup = std::function<std::optional<uint32_t>(const IpAddress&)>;

// Collapses active servers in three stages: alias clusters to one
// representative each (the lowest member address), then representatives
// sharing a known account, then representatives sharing an ASN. Servers not
// covered by any cluster pass through stage 1 as themselves. Anonymous
// servers (absent from account_map) never merge in stage 2, and addresses
// with no known ASN never merge in stage 3, so the result is a lower bound
// on the reduction.
inline FunnelReport funnel(const std::vector<IpAddress>& active_servers,
                           const std::vector<std::vector<IpAddress>>& clusters,
                           const AccountMap& account_map, const AsnLookup& asn_of) {
    std::unordered_set<IpAddress, IpAddressHash> server_set(active_servers.begin(),
                                                            active_servers.end());
    FunnelReport report;
    report.total_active = server_set.size();
    if (server_set.empty()) return report;

    // Stage 1: each address maps to its cluster representative.
    std::unordered_map<IpAddress, IpAddress, IpAddressHash> rep_of;
    std::unordered_set<IpAddress, IpAddressHash> clustered;
    for (const auto& members : clusters) {
        if (members.empty())
            throw ValidationError("empty alias cluster");
        IpAddress rep = *std::min_element(members.begin(), members.end());
        for (const auto& m : members) {
            if (!server_set.count(m))
                throw ValidationError("cluster member " + m.to_string() +
                                      " is not an active server");
            if (!clustered.insert(m).second)
                throw ValidationError("address " + m.to_string() +
                                      " appears in more than one cluster");
            rep_of.emplace(m, rep);
        }
    }
    std::set<IpAddress> entities;  // ordered: deterministic downstream reps
    for (const auto& s : server_set)
        entities.insert(rep_of.count(s) ? rep_of.at(s) : s);
    report.after_dealias = entities.size();

    // Stage 2: merge entities whose representative has the same known account.
    std::map<std::string, IpAddress> by_account;  // account -> lowest rep
    std::set<IpAddress> merged;
    for (const auto& e : entities) {
        auto it = account_map.find(e);
        if (it == account_map.end()) {
            merged.insert(e);
            continue;
        }
        auto [slot, fresh] = by_account.emplace(it->second, e);
        if (!fresh && e < slot->second) slot->second = e;
    }
    for (const auto& [account, rep] : by_account) merged.insert(rep);
    report.after_account = merged.size();

    // Stage 3: merge entities whose representative address shares an ASN.
    std::set<IpAddress> final_set;
    std::map<uint32_t, IpAddress> by_asn;
    for (const auto& e : merged) {
        auto asn = asn_of(e);
        if (!asn) {
            final_set.insert(e);
            continue;
        }
        auto [slot, fresh] = by_asn.emplace(*asn, e);
        if (!fresh && e < slot->second) slot->second = e;
    }
    for (const auto& [asn, rep] : by_asn) final_set.insert(rep);
    report.after_asn = final_set.size();

    report.independent_fraction = static_cast<double>(report.after_asn) /
                                  static_cast<double>(report.total_active);
    return report;
}

// ---------------------------------------------------------------------------
// IPv6 interface-identifier classification

enum class IidClass { LowByte, EmbedIPv4, EmbedPort, EUI64, Privacy, Other };

inline const char* to_string(IidClass c) {
    switch (c) {
        case IidClass::LowByte: return "low-byte";
        case IidClass::EmbedIPv4: return "embed-ipv4";
        case IidClass::EmbedPort: return "embed-port";
        case IidClass::EUI64: return "eui64";
        case IidClass::Privacy: return "privacy";
        case IidClass::Other: return "other";
    }
    return "other";
}

namespace detail {

// Hex rendering of a 16-bit group reads as a decimal octet (0..255). The
// nibble-encoded form arises when an operator types a v4 address straight
// into the hex groups, e.g. ...::192:168:1:1.
inline std::optional<int> group_as_decimal_octet(uint16_t group) {
    int value = 0;
    bool started = false;
    for (int shift = 12; shift >= 0; shift -= 4) {
        int nibble = (group >> shift) & 0xF;
        if (!started && nibble == 0 && shift > 0) continue;
        started = true;
        if (nibble > 9) return std::nullopt;
        value = value * 10 + nibble;
    }
    return value <= 255 ? std::optional<int>(value) : std::nullopt;
}

}  // namespace detail

// Classifies the low 64 bits of an IPv6 address. Categories are checked in a
// fixed priority order, so structural forms win over the entropy heuristic:
// EUI64 -> EmbedIPv4 -> EmbedPort -> LowByte -> Privacy -> Other. The privacy
// threshold (minimum set bits out of 64) is a tunable heuristic.
inline IidClass classify_iid(const IpAddress& address, int privacy_min_bits = 28) {
    if (!address.is_v6())
        throw ValidationError("IID classification requires an IPv6 address");
    auto b = address.bytes();
    std::array<uint8_t, 8> iid;
    std::copy(b.begin() + 8, b.end(), iid.begin());

    uint64_t iid64 = 0;
    for (uint8_t byte : iid) iid64 = (iid64 << 8) | byte;

    // EUI-64 expansion puts 0xFFFE in the middle of the MAC address.
    if (iid[3] == 0xFF && iid[4] == 0xFE) return IidClass::EUI64;

    // Embedded IPv4, literal form: high 32 bits zero, low 32 bits a
    // dotted-quad with a nonzero first octet.
    bool high32_zero = iid[0] == 0 && iid[1] == 0 && iid[2] == 0 && iid[3] == 0;
    if (high32_zero && iid[4] >= 1) return IidClass::EmbedIPv4;

    // Embedded IPv4, nibble form: all four groups read as decimal octets.
    {
        std::array<std::optional<int>, 4> octets;
        for (int g = 0; g < 4; ++g) {
            uint16_t group = static_cast<uint16_t>((iid[g * 2] << 8) | iid[g * 2 + 1]);
            octets[g] = detail::group_as_decimal_octet(group);
        }
        if (octets[0] && *octets[0] >= 1 && octets[1] && octets[2] && octets[3])
            return IidClass::EmbedIPv4;
    }

    // NTP port embedded in the low 16 bits, rest near-empty.
    uint64_t high48 = iid64 >> 16;
    if ((iid64 & 0xFFFF) == 123 && std::popcount(high48) <= 8)
        return IidClass::EmbedPort;

    if (high48 == 0) return IidClass::LowByte;

    if (std::popcount(iid64) >= privacy_min_bits) return IidClass::Privacy;

    return IidClass::Other;
}

// ---------------------------------------------------------------------------
// Score-series analytics

struct ScoreSample {
    int64_t ts = 0;  // epoch seconds
    double score = 0.0;
};

struct ScoreSeries {
    int64_t server_id = 0;
    std::vector<ScoreSample> samples;  // strictly increasing ts
};

// Reads "server_id,ts,score" rows (header row and #-comments skipped),
// grouping by server id in first-seen order. Timestamps must be strictly
// increasing within each series.
inline std::vector<ScoreSeries> parse_score_rows(std::istream& in) {
    std::vector<ScoreSeries> out;
    std::unordered_map<int64_t, size_t> index;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        size_t start = line.find_first_not_of(" \t");
        if (start == std::string::npos || line[start] == '#') continue;
        if (line.rfind("server_id", start) == start) continue;
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream fields(line);
        int64_t id = 0, ts = 0;
        double score = 0;
        if (!(fields >> id >> ts >> score))
            throw ParseError("line " + std::to_string(line_no) +
                             ": expected server_id,ts,score");
        std::string extra;
        if (fields >> extra)
            throw ParseError("line " + std::to_string(line_no) + ": trailing fields");
        auto [it, fresh] = index.emplace(id, out.size());
        if (fresh) out.push_back(ScoreSeries{id, {}});
        auto& series = out[it->second];
        if (!series.samples.empty() && ts <= series.samples.back().ts)
            throw ParseError("line " + std::to_string(line_no) +
                             ": timestamps must be strictly increasing per server");
        series.samples.push_back({ts, score});
    }
    return out;
}

// Span between first and last samples, seconds.
inline int64_t lifetime(const ScoreSeries& series) {
    if (series.samples.empty())
        throw ValidationError("lifetime requires at least one sample");
    return series.samples.back().ts - series.samples.front().ts;
}

// Time-weighted fraction of the lifetime spent at or above the activation
// threshold; each sample's score holds until the next sample (step
// interpolation). A single sample reports 1 or 0 from that sample alone.
inline double availability(const ScoreSeries& series, double threshold = 10.0) {
    if (series.samples.empty())
        throw ValidationError("availability requires at least one sample");
    if (series.samples.size() == 1)
        return series.samples.front().score >= threshold ? 1.0 : 0.0;
    int64_t total = lifetime(series);
    if (total == 0) return series.samples.front().score >= threshold ? 1.0 : 0.0;
    int64_t above = 0;
    for (size_t i = 0; i + 1 < series.samples.size(); ++i) {
        if (series.samples[i].score >= threshold)
            above += series.samples[i + 1].ts - series.samples[i].ts;
    }
    return static_cast<double>(above) / static_cast<double>(total);
}

// Fraction of series whose lifetime is strictly shorter than the cutoff.
inline double fraction_shorter_than(const std::vector<ScoreSeries>& cohort,
                                    int64_t cutoff_seconds) {
    if (cohort.empty()) throw ValidationError("empty cohort");
    size_t short_lived = 0;
    for (const auto& s : cohort)
        if (lifetime(s) < cutoff_seconds) ++short_lived;
    return static_cast<double>(short_lived) / static_cast<double>(cohort.size());
}

// ---------------------------------------------------------------------------
// Anycast candidates

inline const std::set<std::string>& continent_zones() {
    static const std::set<std::string> zones = {
        "africa", "antarctica",    "asia",    "europe",
        "north-america", "oceania", "south-america",
    };
    return zones;
}

struct ZonedServer {
    IpAddress address;
    std::vector<std::string> zones;
};

// Addresses registered in two or more distinct continent zones; candidates
// only, pending external confirmation.
inline std::vector<IpAddress> anycast_candidates(const std::vector<ZonedServer>& servers) {
    std::vector<IpAddress> out;
    for (const auto& s : servers) {
        std::set<std::string> continents;
        for (const auto& z : s.zones)
            if (continent_zones().count(z)) continents.insert(z);
        if (continents.size() >= 2) out.push_back(s.address);
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

}  // namespace ntpool::independence
