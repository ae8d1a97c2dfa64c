#pragma once

#include <algorithm>
#include <vector>

#include "ntpool/ip.hpp"

// Brute-force reference implementations used to pin down the fast paths.

namespace testsupport {

// Longest covering prefix by scanning lengths downward and masking.
inline ntpool::IpPrefix oracle_covering_prefix(
    const std::vector<ntpool::IpAddress>& members) {
    const auto& first = members.front();
    for (int len = first.bit_length(); len >= 0; --len) {
        ntpool::IpPrefix candidate(first, len);
        bool covers = std::all_of(
            members.begin(), members.end(),
            [&](const ntpool::IpAddress& m) { return candidate.contains(m); });
        if (covers) return candidate;
    }
    return ntpool::IpPrefix(first, 0);
}

// Reference iteration of s' = clamp(0.95 s + delta) from s0.
inline double oracle_score_after(double s0, double delta, int steps) {
    double s = s0;
    for (int i = 0; i < steps; ++i) {
        s = 0.95 * s + delta;
        if (s > 20.0) s = 20.0;
        if (s < -100.0) s = -100.0;
    }
    return s;
}

}  // namespace testsupport
