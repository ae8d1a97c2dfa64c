#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <span>
#include <string>

#include "ntpool/errors.hpp"

// 48-byte NTP header codec and timestamp arithmetic (era 0 only).
namespace ntpool::wire {

inline constexpr size_t kPacketSize = 48;

// Seconds between 1900-01-01 and 1970-01-01 (25,567 days).
inline constexpr int64_t kUnixEpochOffset = 2'208'988'800LL;

// 64-bit NTP timestamp: seconds since 1900-01-01 plus a binary fraction.
struct NtpTimestamp {
    uint32_t seconds = 0;
    uint32_t fraction = 0;

    friend auto operator<=>(const NtpTimestamp&, const NtpTimestamp&) = default;
};

// 16.16 fixed point, used for root delay and root dispersion.
struct NtpShort {
    uint16_t seconds = 0;
    uint16_t fraction = 0;

    friend auto operator<=>(const NtpShort&, const NtpShort&) = default;
};

struct NtpPacket {
    uint8_t leap = 0;      // 2 bits
    uint8_t version = 4;   // 3 bits
    uint8_t mode = 3;      // 3 bits; 3=client, 4=server
    uint8_t stratum = 0;
    int8_t poll = 0;       // log2 seconds
    int8_t precision = 0;  // log2 seconds
    NtpShort root_delay;
    NtpShort root_dispersion;
    std::array<uint8_t, 4> refid{};
    NtpTimestamp reference_ts;
    NtpTimestamp origin_ts;
    NtpTimestamp receive_ts;
    NtpTimestamp transmit_ts;

    friend bool operator==(const NtpPacket&, const NtpPacket&) = default;
};

namespace detail {

inline void put_u32(std::span<uint8_t> out, size_t at, uint32_t v) {
    out[at] = static_cast<uint8_t>(v >> 24);
    out[at + 1] = static_cast<uint8_t>(v >> 16);
    out[at + 2] = static_cast<uint8_t>(v >> 8);
    out[at + 3] = static_cast<uint8_t>(v);
}

inline uint32_t get_u32(std::span<const uint8_t> in, size_t at) {
    return (uint32_t{in[at]} << 24) | (uint32_t{in[at + 1]} << 16) |
           (uint32_t{in[at + 2]} << 8) | uint32_t{in[at + 3]};
}

inline void put_ts(std::span<uint8_t> out, size_t at, const NtpTimestamp& ts) {
    put_u32(out, at, ts.seconds);
    put_u32(out, at + 4, ts.fraction);
}

inline NtpTimestamp get_ts(std::span<const uint8_t> in, size_t at) {
    return {get_u32(in, at), get_u32(in, at + 4)};
}

inline void put_short(std::span<uint8_t> out, size_t at, const NtpShort& s) {
    out[at] = static_cast<uint8_t>(s.seconds >> 8);
    out[at + 1] = static_cast<uint8_t>(s.seconds);
    out[at + 2] = static_cast<uint8_t>(s.fraction >> 8);
    out[at + 3] = static_cast<uint8_t>(s.fraction);
}

inline NtpShort get_short(std::span<const uint8_t> in, size_t at) {
    return {static_cast<uint16_t>((uint16_t{in[at]} << 8) | in[at + 1]),
            static_cast<uint16_t>((uint16_t{in[at + 2]} << 8) | in[at + 3])};
}

} // namespace detail

// Field validation is bit-width only; packets we originate carry version 4
// via the NtpPacket defaults, and protocol-level version checks belong to the
// prober, which discards responses outside versions 1..4.
inline std::array<uint8_t, kPacketSize> encode_packet(const NtpPacket& p) {
    if (p.leap > 3) throw WireError("leap indicator out of range");
    if (p.version > 7) throw WireError("version out of range");
    if (p.mode > 7) throw WireError("mode out of range");
    std::array<uint8_t, kPacketSize> out{};
    out[0] = static_cast<uint8_t>((p.leap << 6) | (p.version << 3) | p.mode);
    out[1] = p.stratum;
    out[2] = static_cast<uint8_t>(p.poll);
    out[3] = static_cast<uint8_t>(p.precision);
    detail::put_short(out, 4, p.root_delay);
    detail::put_short(out, 8, p.root_dispersion);
    std::copy(p.refid.begin(), p.refid.end(), out.begin() + 12);
    detail::put_ts(out, 16, p.reference_ts);
    detail::put_ts(out, 24, p.origin_ts);
    detail::put_ts(out, 32, p.receive_ts);
    detail::put_ts(out, 40, p.transmit_ts);
    return out;
}

// Inverse of encode_packet on the first 48 bytes; trailing extension fields
// and MACs are ignored. Stratum and refid are taken verbatim so in-the-wild
// values survive into fingerprints.
inline NtpPacket decode_packet(std::span<const uint8_t> bytes) {
    if (bytes.size() < kPacketSize) throw WireError("truncated packet: need 48 bytes");
    NtpPacket p;
    p.leap = static_cast<uint8_t>(bytes[0] >> 6);
    p.version = static_cast<uint8_t>((bytes[0] >> 3) & 0x7);
    p.mode = static_cast<uint8_t>(bytes[0] & 0x7);
    p.stratum = bytes[1];
    p.poll = static_cast<int8_t>(bytes[2]);
    p.precision = static_cast<int8_t>(bytes[3]);
    p.root_delay = detail::get_short(bytes, 4);
    p.root_dispersion = detail::get_short(bytes, 8);
    std::copy(bytes.begin() + 12, bytes.begin() + 16, p.refid.begin());
    p.reference_ts = detail::get_ts(bytes, 16);
    p.origin_ts = detail::get_ts(bytes, 24);
    p.receive_ts = detail::get_ts(bytes, 32);
    p.transmit_ts = detail::get_ts(bytes, 40);
    return p;
}

// How a refid should be read, which depends on stratum.
struct RefidInfo {
    enum class Kind {
        clock_label,  // stratum <= 1: ASCII clock-source name
        nonstandard,  // stratum <= 1 but not printable; rendered as hex
        peer_hint,    // stratum >= 2: IPv4 peer or IPv6 hash, opaque
    };
    Kind kind = Kind::peer_hint;
    std::string text; // label, or hex for nonstandard; empty for peer hints
};

inline std::string refid_hex(const std::array<uint8_t, 4>& refid) {
    static const char* digits = "0123456789abcdef";
    std::string out;
    for (uint8_t b : refid) {
        out.push_back(digits[b >> 4]);
        out.push_back(digits[b & 0xF]);
    }
    return out;
}

inline RefidInfo refid_label(uint8_t stratum, const std::array<uint8_t, 4>& refid) {
    if (stratum >= 2) return {RefidInfo::Kind::peer_hint, ""};
    size_t end = 4;
    while (end > 0 && refid[end - 1] == 0) --end;
    std::string label;
    for (size_t i = 0; i < end; ++i) {
        if (refid[i] < 0x20 || refid[i] > 0x7E)
            return {RefidInfo::Kind::nonstandard, refid_hex(refid)};
        label.push_back(static_cast<char>(refid[i]));
    }
    return {RefidInfo::Kind::clock_label, label};
}

inline NtpTimestamp unix_to_ntp(int64_t unix_seconds) {
    int64_t ntp = unix_seconds + kUnixEpochOffset;
    if (ntp < 0 || ntp > 0xFFFFFFFFLL)
        throw WireError("time outside NTP era 0");
    return {static_cast<uint32_t>(ntp), 0};
}

inline int64_t ntp_to_unix(const NtpTimestamp& ts) {
    return static_cast<int64_t>(ts.seconds) - kUnixEpochOffset;
}

} // namespace ntpool::wire
