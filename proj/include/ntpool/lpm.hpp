#pragma once

#include <cstdint>
#include <istream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ntpool/errors.hpp"
#include "ntpool/ip.hpp"

// Longest-prefix-match table mapping address prefixes to origin ASNs, one
// binary trie per address family.

namespace ntpool::lpm {

class PrefixTable {
public:
    PrefixTable() : v4_(1), v6_(1) {}

    // Positive ASN required; duplicate (prefix, length) pairs rejected.
    void insert(const IpPrefix& prefix, uint32_t asn) {
        if (asn == 0) throw ValidationError("ASN must be positive");
        auto& nodes = prefix.base().is_v4() ? v4_ : v6_;
        int32_t at = 0;
        for (int i = 0; i < prefix.length(); ++i) {
            int b = prefix.base().bit(i) ? 1 : 0;
            if (nodes[at].child[b] < 0) {
                nodes[at].child[b] = static_cast<int32_t>(nodes.size());
                nodes.emplace_back();
            }
            at = nodes[at].child[b];
        }
        if (nodes[at].terminal)
            throw ValidationError("duplicate prefix " + prefix.to_string());
        nodes[at].terminal = true;
        nodes[at].asn = asn;
        ++size_;
    }

    // ASN of the most-specific covering prefix, or nullopt when unrouted.
    std::optional<uint32_t> lookup(const IpAddress& addr) const {
        const auto& nodes = addr.is_v4() ? v4_ : v6_;
        std::optional<uint32_t> best;
        int32_t at = 0;
        if (nodes[at].terminal) best = nodes[at].asn;  // default route
        for (int i = 0; i < addr.bit_length(); ++i) {
            at = nodes[at].child[addr.bit(i) ? 1 : 0];
            if (at < 0) break;
            if (nodes[at].terminal) best = nodes[at].asn;
        }
        return best;
    }

    size_t size() const { return size_; }

    // Reads "prefix/length ASN" lines, v4 and v6 mixed; blank lines and
    // #-comments skipped.
    static PrefixTable parse(std::istream& in) {
        PrefixTable table;
        std::string line;
        size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            size_t start = line.find_first_not_of(" \t");
            if (start == std::string::npos || line[start] == '#') continue;
            std::istringstream fields(line);
            std::string prefix_text, asn_text, extra;
            if (!(fields >> prefix_text >> asn_text) || (fields >> extra))
                throw ParseError("line " + std::to_string(line_no) +
                                 ": expected 'prefix/length ASN'");
            auto prefix = IpPrefix::parse(prefix_text);
            if (!prefix)
                throw ParseError("line " + std::to_string(line_no) +
                                 ": bad prefix '" + prefix_text + "'");
            uint32_t asn = 0;
            try {
                size_t used = 0;
                unsigned long v = std::stoul(asn_text, &used);
                if (used != asn_text.size() || v == 0 || v > UINT32_MAX)
                    throw std::invalid_argument("range");
                asn = static_cast<uint32_t>(v);
            } catch (const std::exception&) {
                throw ParseError("line " + std::to_string(line_no) +
                                 ": bad ASN '" + asn_text + "'");
            }
            table.insert(*prefix, asn);
        }
        return table;
    }

private:
    struct Node {
        int32_t child[2] = {-1, -1};
        uint32_t asn = 0;
        bool terminal = false;
    };
    std::vector<Node> v4_, v6_;
    size_t size_ = 0;
};

}  // namespace ntpool::lpm
