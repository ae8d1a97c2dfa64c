#pragma once

#include <arpa/inet.h>

#include <array>
#include <compare>
#include <cstdint>
#include <cstring>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "ntpool/errors.hpp"

namespace ntpool {

enum class Family : uint8_t { v4 = 0, v6 = 1 };

// An IPv4 or IPv6 address. IPv4 occupies the first 4 bytes; the tail is
// zeroed so that ordering and hashing can treat the storage uniformly.
class IpAddress {
public:
    IpAddress() = default;

    static std::optional<IpAddress> parse(std::string_view text) {
        std::string buf(text);
        IpAddress out;
        if (inet_pton(AF_INET, buf.c_str(), out.bytes_.data()) == 1) {
            out.family_ = Family::v4;
            return out;
        }
        out.bytes_.fill(0);
        if (inet_pton(AF_INET6, buf.c_str(), out.bytes_.data()) == 1) {
            out.family_ = Family::v6;
            return out;
        }
        return std::nullopt;
    }

    // Throwing variant for inputs that are required to be addresses.
    static IpAddress parse_or_throw(std::string_view text) {
        auto a = parse(text);
        if (!a) throw ParseError("invalid IP address: " + std::string(text));
        return *a;
    }

    static IpAddress from_bytes(Family family, std::span<const uint8_t> raw) {
        IpAddress out;
        out.family_ = family;
        out.bytes_.fill(0);
        size_t n = family == Family::v4 ? 4 : 16;
        if (raw.size() != n) throw ValidationError("address byte count does not match family");
        std::memcpy(out.bytes_.data(), raw.data(), n);
        return out;
    }

    Family family() const { return family_; }
    bool is_v4() const { return family_ == Family::v4; }
    bool is_v6() const { return family_ == Family::v6; }
    int bit_length() const { return is_v4() ? 32 : 128; }

    std::span<const uint8_t> bytes() const {
        return {bytes_.data(), is_v4() ? size_t{4} : size_t{16}};
    }

    // Bit 0 is the most significant bit of the address.
    bool bit(int index) const {
        return (bytes_[static_cast<size_t>(index) / 8] >> (7 - index % 8)) & 1;
    }

    std::string to_string() const {
        char buf[INET6_ADDRSTRLEN] = {};
        inet_ntop(is_v4() ? AF_INET : AF_INET6, bytes_.data(), buf, sizeof(buf));
        return buf;
    }

    friend auto operator<=>(const IpAddress&, const IpAddress&) = default;
    friend bool operator==(const IpAddress&, const IpAddress&) = default;

private:
    Family family_ = Family::v4;
    std::array<uint8_t, 16> bytes_{};
};

struct IpAddressHash {
    size_t operator()(const IpAddress& a) const {
        uint64_t h = 1469598103934665603ull;
        auto mix = [&](uint8_t b) { h = (h ^ b) * 1099511628211ull; };
        mix(static_cast<uint8_t>(a.family()));
        for (uint8_t b : a.bytes()) mix(b);
        return static_cast<size_t>(h);
    }
};

// Number of leading bits shared by two same-family addresses.
inline int common_prefix_length(const IpAddress& a, const IpAddress& b) {
    if (a.family() != b.family())
        throw ValidationError("common prefix requires a single address family");
    auto ab = a.bytes();
    auto bb = b.bytes();
    int len = 0;
    for (size_t i = 0; i < ab.size(); ++i) {
        uint8_t diff = static_cast<uint8_t>(ab[i] ^ bb[i]);
        if (diff == 0) {
            len += 8;
            continue;
        }
        for (int bit = 7; bit >= 0; --bit) {
            if ((diff >> bit) & 1) return len + (7 - bit);
        }
    }
    return len;
}

// A network prefix; the base address is stored with host bits cleared.
class IpPrefix {
public:
    IpPrefix() = default;

    IpPrefix(const IpAddress& base, int length) : length_(length) {
        if (length < 0 || length > base.bit_length())
            throw ValidationError("prefix length out of range");
        base_ = mask(base, length);
    }

    static std::optional<IpPrefix> parse(std::string_view text) {
        auto slash = text.rfind('/');
        if (slash == std::string_view::npos) return std::nullopt;
        auto addr = IpAddress::parse(text.substr(0, slash));
        if (!addr) return std::nullopt;
        int len = 0;
        auto tail = text.substr(slash + 1);
        if (tail.empty() || tail.size() > 3) return std::nullopt;
        for (char c : tail) {
            if (c < '0' || c > '9') return std::nullopt;
            len = len * 10 + (c - '0');
        }
        if (len > addr->bit_length()) return std::nullopt;
        return IpPrefix(*addr, len);
    }

    const IpAddress& base() const { return base_; }
    int length() const { return length_; }
    Family family() const { return base_.family(); }

    bool contains(const IpAddress& addr) const {
        if (addr.family() != base_.family()) return false;
        return length_ == 0 || common_prefix_length(addr, base_) >= length_;
    }

    std::string to_string() const {
        return base_.to_string() + "/" + std::to_string(length_);
    }

    static IpAddress mask(const IpAddress& addr, int length) {
        std::array<uint8_t, 16> out{};
        auto src = addr.bytes();
        for (size_t i = 0; i < src.size(); ++i) {
            int keep = length - static_cast<int>(i) * 8;
            if (keep >= 8) {
                out[i] = src[i];
            } else if (keep > 0) {
                out[i] = static_cast<uint8_t>(src[i] & (0xFF << (8 - keep)));
            }
        }
        return IpAddress::from_bytes(addr.family(), {out.data(), src.size()});
    }

    friend auto operator<=>(const IpPrefix&, const IpPrefix&) = default;
    friend bool operator==(const IpPrefix&, const IpPrefix&) = default;

private:
    IpAddress base_;
    int length_ = 0;
};

} // namespace ntpool
