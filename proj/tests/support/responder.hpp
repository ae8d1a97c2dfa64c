#pragma once

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cstring>
#include <stdexcept>
#include <string>
#include <thread>

#include "ntpool/wire.hpp"

// Scriptable loopback NTP server for prober tests. Binds one UDP socket and
// answers each request according to its behavior knobs.

namespace testsupport {

class UdpResponder {
public:
    struct Behavior {
        uint8_t version = 4;
        uint8_t mode = 4;
        uint8_t stratum = 2;
        std::array<uint8_t, 4> refid = {10, 0, 0, 1};
        int8_t precision = -20;
        int8_t poll = 6;
        ntpool::wire::NtpTimestamp reference_ts{3'900'000'000u, 0};
        ntpool::wire::NtpShort root_dispersion{0, 512};
        bool echo_origin = true;  // copy the request's transmit_ts into origin_ts
        bool respond = true;
        int drop_first = 0;     // swallow this many requests before answering
        bool malformed = false; // reply with a runt packet instead
    };

    // bind_address may be any loopback alias (127.0.0.1, 127.0.0.2, ::1).
    // port 0 picks an ephemeral port, readable via port().
    UdpResponder(const std::string& bind_address, Behavior behavior, uint16_t port = 0)
        : behavior_(behavior) {
        v6_ = bind_address.find(':') != std::string::npos;
        fd_ = ::socket(v6_ ? AF_INET6 : AF_INET, SOCK_DGRAM | SOCK_CLOEXEC, 0);
        if (fd_ < 0) throw std::runtime_error("responder socket() failed");

        sockaddr_storage local{};
        socklen_t len = 0;
        if (v6_) {
            auto* sin6 = reinterpret_cast<sockaddr_in6*>(&local);
            sin6->sin6_family = AF_INET6;
            sin6->sin6_port = htons(port);
            if (inet_pton(AF_INET6, bind_address.c_str(), &sin6->sin6_addr) != 1)
                throw std::runtime_error("bad responder address");
            len = sizeof(sockaddr_in6);
        } else {
            auto* sin = reinterpret_cast<sockaddr_in*>(&local);
            sin->sin_family = AF_INET;
            sin->sin_port = htons(port);
            if (inet_pton(AF_INET, bind_address.c_str(), &sin->sin_addr) != 1)
                throw std::runtime_error("bad responder address");
            len = sizeof(sockaddr_in);
        }
        if (::bind(fd_, reinterpret_cast<sockaddr*>(&local), len) < 0) {
            ::close(fd_);
            throw std::runtime_error("responder bind failed on " + bind_address);
        }
        sockaddr_storage bound{};
        socklen_t bound_len = sizeof bound;
        ::getsockname(fd_, reinterpret_cast<sockaddr*>(&bound), &bound_len);
        port_ = ntohs(v6_ ? reinterpret_cast<sockaddr_in6*>(&bound)->sin6_port
                          : reinterpret_cast<sockaddr_in*>(&bound)->sin_port);

        thread_ = std::thread([this] { serve(); });
    }

    ~UdpResponder() {
        stop_.store(true);
        if (thread_.joinable()) thread_.join();
        if (fd_ >= 0) ::close(fd_);
    }

    UdpResponder(const UdpResponder&) = delete;
    UdpResponder& operator=(const UdpResponder&) = delete;

    uint16_t port() const { return port_; }
    int requests_seen() const { return requests_.load(); }

private:
    void serve() {
        while (!stop_.load()) {
            pollfd pfd{fd_, POLLIN, 0};
            if (::poll(&pfd, 1, 20) <= 0) continue;

            uint8_t buffer[512];
            sockaddr_storage peer{};
            socklen_t peer_len = sizeof peer;
            ssize_t got = ::recvfrom(fd_, buffer, sizeof buffer, 0,
                                     reinterpret_cast<sockaddr*>(&peer), &peer_len);
            if (got < 0) continue;
            int seen = requests_.fetch_add(1) + 1;
            if (!behavior_.respond || seen <= behavior_.drop_first) continue;

            if (behavior_.malformed) {
                uint8_t runt[20] = {0xde, 0xad};
                ::sendto(fd_, runt, sizeof runt, 0,
                         reinterpret_cast<sockaddr*>(&peer), peer_len);
                continue;
            }

            ntpool::wire::NtpPacket request;
            try {
                request = ntpool::wire::decode_packet(
                    std::span<const uint8_t>(buffer, static_cast<size_t>(got)));
            } catch (const ntpool::WireError&) {
                continue;
            }

            ntpool::wire::NtpPacket reply;
            reply.leap = 0;
            reply.version = behavior_.version;
            reply.mode = behavior_.mode;
            reply.stratum = behavior_.stratum;
            reply.poll = behavior_.poll;
            reply.precision = behavior_.precision;
            reply.refid = behavior_.refid;
            reply.root_dispersion = behavior_.root_dispersion;
            reply.reference_ts = behavior_.reference_ts;
            if (behavior_.echo_origin) reply.origin_ts = request.transmit_ts;
            reply.receive_ts = {behavior_.reference_ts.seconds + 5, 1};
            reply.transmit_ts = {behavior_.reference_ts.seconds + 5, 2};

            auto bytes = ntpool::wire::encode_packet(reply);
            ::sendto(fd_, bytes.data(), bytes.size(), 0,
                     reinterpret_cast<sockaddr*>(&peer), peer_len);
        }
    }

    Behavior behavior_;
    bool v6_ = false;
    int fd_ = -1;
    uint16_t port_ = 0;
    std::thread thread_;
    std::atomic<int> requests_{0};
    std::atomic<bool> stop_{false};
};

}  // namespace testsupport
