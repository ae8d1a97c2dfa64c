#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ntpool/errors.hpp"

// Netspeed apportionment model: expected DNS-answer shares for a zone, the
// monopoly-attack planner S = ceil(n*f / (m*(1-f))), per-zone robustness
// sweeps, and the global query-rate estimate.

namespace ntpool::apportion {

// The discrete netspeed menu offered by the pool's management interface,
// in kbps. 0 means monitor-only: scored but never returned in DNS answers.
inline constexpr std::array<int64_t, 15> kNetspeedMenu = {
    0,      512,    1536,    3072,    6144,    12288,   25600,  51200,
    102400, 256000, 512000, 1024000, 1536000, 2048000, 3072000,
};

// The planner's per-server maximum. The menu's top entry is 3,072,000 but the
// attack arithmetic is quoted against a round 3 Gbps, so the planner exposes
// that constant separately.
inline constexpr int64_t kPlannerMaxNetspeed = 3'000'000;

struct NetSpeed {
    int64_t kbps = 0;

    static bool in_menu(int64_t kbps) {
        return std::find(kNetspeedMenu.begin(), kNetspeedMenu.end(), kbps) !=
               kNetspeedMenu.end();
    }

    static NetSpeed validated(int64_t kbps) {
        if (!in_menu(kbps))
            throw ValidationError("netspeed " + std::to_string(kbps) +
                                  " kbps is not on the menu");
        return NetSpeed{kbps};
    }

    bool monitor_only() const { return kbps == 0; }
};

// Exact rational in lowest terms. Planner fractions are parsed from decimal
// text so the sizing ceiling never depends on binary floating rounding.
struct Fraction {
    int64_t num = 0;
    int64_t den = 1;

    static Fraction reduce(int64_t num, int64_t den) {
        if (den <= 0) throw ValidationError("fraction denominator must be positive");
        int64_t g = std::gcd(num < 0 ? -num : num, den);
        if (g == 0) g = 1;
        return Fraction{num / g, den / g};
    }

    // Accepts plain decimals: "0.5", ".25", "1", "0.970". At most 18
    // fractional digits so the denominator fits an int64.
    static Fraction parse(std::string_view text) {
        if (text.empty()) throw ParseError("empty fraction");
        size_t dot = text.find('.');
        std::string_view whole = text.substr(0, dot);
        std::string_view frac =
            dot == std::string_view::npos ? std::string_view{} : text.substr(dot + 1);
        if (whole.empty() && frac.empty())
            throw ParseError("malformed fraction: '" + std::string(text) + "'");
        if (frac.size() > 18)
            throw ParseError("fraction has more than 18 decimal digits");
        int64_t num = 0;
        for (char c : whole) {
            if (c < '0' || c > '9')
                throw ParseError("malformed fraction: '" + std::string(text) + "'");
            if (num > (INT64_MAX - (c - '0')) / 10) throw ParseError("fraction overflows");
            num = num * 10 + (c - '0');
        }
        int64_t den = 1;
        for (char c : frac) {
            if (c < '0' || c > '9')
                throw ParseError("malformed fraction: '" + std::string(text) + "'");
            if (num > (INT64_MAX - (c - '0')) / 10) throw ParseError("fraction overflows");
            num = num * 10 + (c - '0');
            den *= 10;
        }
        return reduce(num, den);
    }

    double value() const { return static_cast<double>(num) / static_cast<double>(den); }

    friend bool operator==(const Fraction&, const Fraction&) = default;
};

struct ZoneServer {
    std::string address;
    int64_t netspeed_kbps = 0;
    bool active = true;
};

// A zone's registered servers. Aggregate netspeed n counts only servers that
// are active (score-qualified); inactive and monitor-only entries add 0.
struct ZoneState {
    std::string zone;
    std::vector<ZoneServer> servers;

    int64_t aggregate() const {
        int64_t n = 0;
        for (const auto& s : servers)
            if (s.active) n += s.netspeed_kbps;
        return n;
    }
};

// Share of DNS answers a server of the given netspeed can expect in a zone:
// its netspeed relative to the zone aggregate.
inline double expected_share(int64_t speed_kbps, const ZoneState& zone) {
    if (speed_kbps <= 0)
        throw ValidationError("expected_share requires a positive netspeed");
    int64_t n = zone.aggregate();
    if (n == 0)
        throw ValidationError("share undefined: zone '" + zone.zone +
                              "' has zero aggregate netspeed");
    return static_cast<double>(speed_kbps) / static_cast<double>(n);
}

namespace detail {

// Exact test of S*m/(n + S*m) >= f via cross-multiplication.
inline bool achieves(int64_t n, int64_t m, int64_t s, const Fraction& f) {
    __int128 lhs = static_cast<__int128>(s) * m * f.den;
    __int128 rhs = (static_cast<__int128>(n) + static_cast<__int128>(s) * m) * f.num;
    return lhs >= rhs;
}

}  // namespace detail

// Attack servers needed to capture at least fraction f of a zone whose
// incumbent aggregate is n, with each attack server registered at netspeed m:
//   S = ceil(n*f / (m*(1-f)))
// evaluated exactly. An empty zone (formula yields 0) still needs one server
// to capture anything, so S is floored at 1.
inline int64_t attack_servers_required(int64_t n, int64_t m, const Fraction& f) {
    if (n < 0) throw ValidationError("aggregate netspeed must be >= 0");
    if (m <= 0) throw ValidationError("attack netspeed must be > 0");
    if (f.num <= 0 || f.num >= f.den)
        throw ValidationError("target fraction must lie strictly between 0 and 1");
    __int128 num = static_cast<__int128>(n) * f.num;
    __int128 den = static_cast<__int128>(m) * (f.den - f.num);
    __int128 s = (num + den - 1) / den;
    if (s < 1) s = 1;
    return static_cast<int64_t>(s);
}

// Fraction of the post-attack zone held by S servers of netspeed m.
inline double achieved_fraction(int64_t n, int64_t m, int64_t s) {
    if (m <= 0) throw ValidationError("attack netspeed must be > 0");
    if (s < 0) throw ValidationError("server count must be >= 0");
    double total = static_cast<double>(n) + static_cast<double>(s) * static_cast<double>(m);
    if (total == 0) return 0.0;
    return static_cast<double>(s) * static_cast<double>(m) / total;
}

struct AttackPlan {
    std::string zone;
    int64_t n = 0;          // incumbent aggregate, kbps
    int64_t m = 0;          // per-attack-server netspeed, kbps
    Fraction f;             // target fraction
    int64_t s = 0;          // required server count
    double achieved = 0.0;  // S*m / (n + S*m)
};

inline AttackPlan plan_zone(const ZoneState& zone, int64_t m, const Fraction& f) {
    AttackPlan plan;
    plan.zone = zone.zone;
    plan.n = zone.aggregate();
    plan.m = m;
    plan.f = f;
    plan.s = attack_servers_required(plan.n, m, f);
    plan.achieved = achieved_fraction(plan.n, m, plan.s);
    return plan;
}

// Distribution of required server counts across a sweep of zones.
struct SweepSummary {
    std::vector<int64_t> s_sorted;  // ascending

    int64_t min() const { return s_sorted.front(); }
    int64_t max() const { return s_sorted.back(); }

    double mean() const {
        double sum = 0;
        for (int64_t s : s_sorted) sum += static_cast<double>(s);
        return sum / static_cast<double>(s_sorted.size());
    }

    // Nearest-rank percentile, p in (0, 100].
    int64_t percentile(double p) const {
        if (p <= 0.0 || p > 100.0)
            throw ValidationError("percentile must lie in (0, 100]");
        size_t rank = static_cast<size_t>(
            std::ceil(p / 100.0 * static_cast<double>(s_sorted.size())));
        if (rank == 0) rank = 1;
        return s_sorted[rank - 1];
    }

    // Fraction of zones needing at most k attack servers (CDF at k).
    double fraction_le(int64_t k) const {
        auto it = std::upper_bound(s_sorted.begin(), s_sorted.end(), k);
        return static_cast<double>(it - s_sorted.begin()) /
               static_cast<double>(s_sorted.size());
    }
};

struct SweepResult {
    std::vector<AttackPlan> plans;  // one per zone, input order
    SweepSummary summary;
};

inline SweepResult robustness_sweep(std::span<const ZoneState> zones, int64_t m,
                                    const Fraction& f) {
    if (zones.empty()) throw ValidationError("sweep requires at least one zone");
    SweepResult result;
    result.plans.reserve(zones.size());
    for (const auto& z : zones) result.plans.push_back(plan_zone(z, m, f));
    result.summary.s_sorted.reserve(zones.size());
    for (const auto& p : result.plans) result.summary.s_sorted.push_back(p.s);
    std::sort(result.summary.s_sorted.begin(), result.summary.s_sorted.end());
    return result;
}

// Per-zone DNS answer rates, servers returned per second by family.
struct ZoneAnswerRate {
    std::string zone;
    double v4_per_sec = 0.0;
    double v6_per_sec = 0.0;
};

// Lower-bound pool-wide query rate implied by answer rates: every query is
// answered with up to four server addresses.
inline double global_query_rate(double v4_total, double v6_total) {
    if (v4_total < 0 || v6_total < 0)
        throw ValidationError("answer rates must be >= 0");
    return (v4_total + v6_total) / 4.0;
}

inline double global_query_rate(std::span<const ZoneAnswerRate> rates) {
    double v4 = 0, v6 = 0;
    for (const auto& r : rates) {
        if (r.v4_per_sec < 0 || r.v6_per_sec < 0)
            throw ValidationError("answer rates must be >= 0 (zone '" + r.zone + "')");
        v4 += r.v4_per_sec;
        v6 += r.v6_per_sec;
    }
    return global_query_rate(v4, v6);
}

namespace detail {

inline std::vector<std::string> split_fields(std::string_view line, char sep) {
    std::vector<std::string> out;
    size_t start = 0;
    while (true) {
        size_t pos = line.find(sep, start);
        if (pos == std::string_view::npos) {
            out.emplace_back(line.substr(start));
            break;
        }
        out.emplace_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    for (auto& f : out) {
        while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) f.erase(f.begin());
        while (!f.empty() && (f.back() == ' ' || f.back() == '\t' || f.back() == '\r'))
            f.pop_back();
    }
    return out;
}

inline bool parse_bool_field(const std::string& text, size_t line_no) {
    if (text == "1" || text == "true") return true;
    if (text == "0" || text == "false") return false;
    throw ParseError("line " + std::to_string(line_no) +
                     ": active must be 0/1/true/false, got '" + text + "'");
}

}  // namespace detail

// Reads a zone fixture: one "zone,address,netspeed_kbps,active" record per
// line. Blank lines and #-comments are skipped; a leading header row whose
// first field is "zone" is skipped. Zones are grouped in first-seen order.
inline std::vector<ZoneState> parse_zone_fixture(std::istream& in) {
    std::vector<ZoneState> zones;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string_view sv = line;
        while (!sv.empty() && (sv.front() == ' ' || sv.front() == '\t')) sv.remove_prefix(1);
        if (sv.empty() || sv.front() == '#') continue;
        auto fields = detail::split_fields(sv, ',');
        if (fields.size() == 1 && fields[0].empty()) continue;
        if (fields[0] == "zone" && line_no == 1) continue;
        if (fields.size() != 4)
            throw ParseError("line " + std::to_string(line_no) +
                             ": expected 4 fields (zone,address,netspeed_kbps,active), got " +
                             std::to_string(fields.size()));
        ZoneServer server;
        server.address = fields[1];
        try {
            size_t used = 0;
            server.netspeed_kbps = std::stoll(fields[2], &used);
            if (used != fields[2].size()) throw std::invalid_argument("trailing junk");
        } catch (const std::exception&) {
            throw ParseError("line " + std::to_string(line_no) +
                             ": bad netspeed '" + fields[2] + "'");
        }
        if (server.netspeed_kbps < 0)
            throw ParseError("line " + std::to_string(line_no) + ": netspeed must be >= 0");
        server.active = detail::parse_bool_field(fields[3], line_no);

        auto it = std::find_if(zones.begin(), zones.end(),
                               [&](const ZoneState& z) { return z.zone == fields[0]; });
        if (it == zones.end()) {
            zones.push_back(ZoneState{fields[0], {}});
            it = std::prev(zones.end());
        }
        it->servers.push_back(std::move(server));
    }
    return zones;
}

}  // namespace ntpool::apportion
