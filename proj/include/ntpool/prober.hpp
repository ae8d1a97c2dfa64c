#pragma once

#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <mutex>
#include <optional>
#include <random>
#include <thread>
#include <vector>

#include "ntpool/errors.hpp"
#include "ntpool/fingerprint.hpp"
#include "ntpool/ip.hpp"
#include "ntpool/rate_limiter.hpp"
#include "ntpool/wire.hpp"

// Active prober: sends minimal mode-3 client packets and turns valid mode-4
// responses into fingerprints. The randomized transmit timestamp is the
// correlation token; a response counts only if it echoes it in origin_ts.

namespace ntpool::probe {

struct ProbePlan {
    std::vector<IpAddress> targets;
    int probes_per_target = 2;
    int64_t window_ms = 60'000;  // rounds are spaced window / probes apart
    int64_t timeout_ms = 3'000;
    int retries = 2;  // extra attempts per round after a timeout
    uint16_t port = 123;
    int max_pps = 100;  // global send cap across all workers
    int workers = 8;
    bool collect_weak_hints = true;

    void validate() const {
        if (probes_per_target < 1) throw ValidationError("probes_per_target must be >= 1");
        if (window_ms < 0) throw ValidationError("window must be >= 0");
        if (timeout_ms <= 0) throw ValidationError("timeout must be positive");
        if (retries < 0) throw ValidationError("retries must be >= 0");
        if (max_pps < 1) throw ValidationError("max_pps must be >= 1");
        if (workers < 1) throw ValidationError("workers must be >= 1");
        int64_t spacing = window_ms / probes_per_target;
        if (probes_per_target > 1 && spacing * probes_per_target > window_ms)
            throw ValidationError("window shorter than the probe spacing allows");
    }
};

struct ProbeOutcome {
    std::vector<fingerprint::Fingerprint> fingerprints;  // one per valid response
    std::vector<IpAddress> unresponsive;                 // sorted
    int64_t probes_sent = 0;
    int64_t discarded = 0;  // malformed, wrong mode/version, or uncorrelated
};

namespace detail {

inline int64_t wall_ms() {
    auto since = std::chrono::system_clock::now().time_since_epoch();
    return std::chrono::duration_cast<std::chrono::milliseconds>(since).count();
}

struct Sockaddr {
    sockaddr_storage storage{};
    socklen_t len = 0;
};

inline Sockaddr to_sockaddr(const IpAddress& address, uint16_t port) {
    Sockaddr out;
    if (address.is_v4()) {
        auto* sin = reinterpret_cast<sockaddr_in*>(&out.storage);
        sin->sin_family = AF_INET;
        sin->sin_port = htons(port);
        std::memcpy(&sin->sin_addr, address.bytes().data(), 4);
        out.len = sizeof(sockaddr_in);
    } else {
        auto* sin6 = reinterpret_cast<sockaddr_in6*>(&out.storage);
        sin6->sin6_family = AF_INET6;
        sin6->sin6_port = htons(port);
        std::memcpy(&sin6->sin6_addr, address.bytes().data(), 16);
        out.len = sizeof(sockaddr_in6);
    }
    return out;
}

class ProbeSocket {
public:
    ProbeSocket(const IpAddress& target, uint16_t port, bool weak_hints) {
        int family = target.is_v4() ? AF_INET : AF_INET6;
        fd_ = ::socket(family, SOCK_DGRAM | SOCK_CLOEXEC, 0);
        if (fd_ < 0) throw NetworkError("socket() failed");
        if (weak_hints) {
            int on = 1;
            if (target.is_v4()) {
                ::setsockopt(fd_, IPPROTO_IP, IP_RECVTTL, &on, sizeof on);
                ::setsockopt(fd_, IPPROTO_IP, IP_RECVTOS, &on, sizeof on);
            } else {
                ::setsockopt(fd_, IPPROTO_IPV6, IPV6_RECVHOPLIMIT, &on, sizeof on);
                ::setsockopt(fd_, IPPROTO_IPV6, IPV6_RECVTCLASS, &on, sizeof on);
            }
        }
        auto peer = to_sockaddr(target, port);
        if (::connect(fd_, reinterpret_cast<sockaddr*>(&peer.storage), peer.len) < 0) {
            ::close(fd_);
            throw NetworkError("connect() failed for " + target.to_string());
        }
    }

    ~ProbeSocket() {
        if (fd_ >= 0) ::close(fd_);
    }

    ProbeSocket(const ProbeSocket&) = delete;
    ProbeSocket& operator=(const ProbeSocket&) = delete;

    bool send(const std::array<uint8_t, wire::kPacketSize>& packet) {
        return ::send(fd_, packet.data(), packet.size(), 0) ==
               static_cast<ssize_t>(packet.size());
    }

    struct Received {
        std::vector<uint8_t> bytes;
        std::optional<uint8_t> ttl;
        std::optional<uint8_t> tos;
    };

    // Waits up to timeout_ms for one datagram; nullopt on timeout.
    std::optional<Received> recv(int64_t timeout_ms) {
        pollfd pfd{fd_, POLLIN, 0};
        int ready = ::poll(&pfd, 1, static_cast<int>(timeout_ms));
        if (ready <= 0) return std::nullopt;

        uint8_t buffer[512];
        uint8_t control[256];
        iovec iov{buffer, sizeof buffer};
        msghdr msg{};
        msg.msg_iov = &iov;
        msg.msg_iovlen = 1;
        msg.msg_control = control;
        msg.msg_controllen = sizeof control;
        ssize_t got = ::recvmsg(fd_, &msg, 0);
        if (got < 0) return std::nullopt;

        Received received;
        received.bytes.assign(buffer, buffer + got);
        for (cmsghdr* c = CMSG_FIRSTHDR(&msg); c; c = CMSG_NXTHDR(&msg, c)) {
            if (c->cmsg_level == IPPROTO_IP && c->cmsg_type == IP_TTL)
                received.ttl = static_cast<uint8_t>(*reinterpret_cast<int*>(CMSG_DATA(c)));
            else if (c->cmsg_level == IPPROTO_IP && c->cmsg_type == IP_TOS)
                received.tos = *CMSG_DATA(c);
            else if (c->cmsg_level == IPPROTO_IPV6 && c->cmsg_type == IPV6_HOPLIMIT)
                received.ttl = static_cast<uint8_t>(*reinterpret_cast<int*>(CMSG_DATA(c)));
            else if (c->cmsg_level == IPPROTO_IPV6 && c->cmsg_type == IPV6_TCLASS)
                received.tos = static_cast<uint8_t>(*reinterpret_cast<int*>(CMSG_DATA(c)));
        }
        return received;
    }

private:
    int fd_ = -1;
};

// Mode 4, version within the protocol's range, and the echoed transmit
// timestamp are what make a response attributable to our probe.
inline bool acceptable_response(const wire::NtpPacket& packet,
                                const wire::NtpTimestamp& token) {
    if (packet.mode != 4) return false;
    if (packet.version < 1 || packet.version > 4) return false;
    return packet.origin_ts == token;
}

}  // namespace detail

inline ProbeOutcome run_probes(const ProbePlan& plan, uint64_t seed = 0) {
    plan.validate();
    ProbeOutcome outcome;
    if (plan.targets.empty()) return outcome;

    SystemClock clock;
    RateLimiter limiter(clock, std::max<int64_t>(1, 1'000 / plan.max_pps), seed);
    std::mutex collect_mutex;
    std::atomic<size_t> cursor{0};
    std::atomic<int64_t> sent{0}, discarded{0};
    int64_t spacing_ms =
        plan.probes_per_target > 1 ? plan.window_ms / plan.probes_per_target : 0;

    auto worker = [&](uint64_t worker_seed) {
        std::mt19937_64 rng(worker_seed);
        for (size_t i = cursor.fetch_add(1); i < plan.targets.size();
             i = cursor.fetch_add(1)) {
            const auto& target = plan.targets[i];
            std::vector<fingerprint::Fingerprint> collected;
            try {
                detail::ProbeSocket socket(target, plan.port, plan.collect_weak_hints);
                for (int round = 0; round < plan.probes_per_target; ++round) {
                    if (round > 0 && spacing_ms > 0)
                        std::this_thread::sleep_for(
                            std::chrono::milliseconds(spacing_ms));
                    for (int attempt = 0; attempt <= plan.retries; ++attempt) {
                        wire::NtpPacket request;  // mode 3, version 4 defaults
                        wire::NtpTimestamp token{static_cast<uint32_t>(rng()),
                                                 static_cast<uint32_t>(rng())};
                        request.transmit_ts = token;
                        limiter.acquire();
                        if (!socket.send(wire::encode_packet(request))) break;
                        sent.fetch_add(1);

                        auto deadline = std::chrono::steady_clock::now() +
                                        std::chrono::milliseconds(plan.timeout_ms);
                        bool matched = false;
                        while (!matched) {
                            auto remaining =
                                std::chrono::duration_cast<std::chrono::milliseconds>(
                                    deadline - std::chrono::steady_clock::now())
                                    .count();
                            if (remaining <= 0) break;
                            auto received = socket.recv(remaining);
                            if (!received) break;
                            wire::NtpPacket response;
                            try {
                                response = wire::decode_packet(received->bytes);
                            } catch (const WireError&) {
                                discarded.fetch_add(1);
                                continue;
                            }
                            if (!detail::acceptable_response(response, token)) {
                                discarded.fetch_add(1);
                                continue;
                            }
                            fingerprint::Fingerprint fp;
                            fp.address = target;
                            fp.collected_at_ms = detail::wall_ms();
                            fp.version = response.version;
                            fp.stratum = response.stratum;
                            fp.refid = response.refid;
                            fp.precision = response.precision;
                            fp.poll = response.poll;
                            fp.reference_ts = response.reference_ts;
                            fp.root_dispersion = response.root_dispersion;
                            if (plan.collect_weak_hints &&
                                (received->ttl || received->tos))
                                fp.weak_hints = fingerprint::WeakHints{
                                    received->ttl.value_or(0),
                                    received->tos.value_or(0)};
                            collected.push_back(std::move(fp));
                            matched = true;
                        }
                        if (matched) break;
                    }
                }
            } catch (const NetworkError&) {
                // Socket setup failed: the target is recorded as unresponsive.
            }
            std::lock_guard<std::mutex> hold(collect_mutex);
            if (collected.empty()) {
                outcome.unresponsive.push_back(target);
            } else {
                for (auto& fp : collected) outcome.fingerprints.push_back(std::move(fp));
            }
        }
    };

    size_t thread_count =
        std::min(static_cast<size_t>(plan.workers), plan.targets.size());
    std::vector<std::thread> threads;
    std::mt19937_64 seeder(seed + 1);
    for (size_t t = 0; t < thread_count; ++t) threads.emplace_back(worker, seeder());
    for (auto& t : threads) t.join();

    outcome.probes_sent = sent.load();
    outcome.discarded = discarded.load();
    std::sort(outcome.unresponsive.begin(), outcome.unresponsive.end());
    std::sort(outcome.fingerprints.begin(), outcome.fingerprints.end(),
              [](const auto& a, const auto& b) {
                  return a.address != b.address ? a.address < b.address
                                                : a.collected_at_ms < b.collected_at_ms;
              });
    return outcome;
}

}  // namespace ntpool::probe
