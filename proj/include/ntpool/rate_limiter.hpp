#pragma once

#include <chrono>
#include <cstdint>
#include <mutex>
#include <random>
#include <thread>

#include "ntpool/errors.hpp"

// Politeness throttle for outbound requests. A token bucket of capacity two
// refills one token per jittered interval, so pairs of requests may go
// back-to-back but the long-run rate never exceeds one per mean interval.
// The clock is injected so tests can run minutes of schedule instantly.

namespace ntpool {

class Clock {
public:
    virtual ~Clock() = default;
    virtual int64_t now_ms() = 0;
    virtual void sleep_ms(int64_t duration_ms) = 0;
};

class SystemClock : public Clock {
public:
    int64_t now_ms() override {
        auto since = std::chrono::steady_clock::now().time_since_epoch();
        return std::chrono::duration_cast<std::chrono::milliseconds>(since).count();
    }
    void sleep_ms(int64_t duration_ms) override {
        if (duration_ms > 0)
            std::this_thread::sleep_for(std::chrono::milliseconds(duration_ms));
    }
};

// Single-threaded test clock: sleeping just advances the reading.
class VirtualClock : public Clock {
public:
    explicit VirtualClock(int64_t start_ms = 0) : now_ms_(start_ms) {}
    int64_t now_ms() override { return now_ms_; }
    void sleep_ms(int64_t duration_ms) override {
        if (duration_ms > 0) now_ms_ += duration_ms;
    }
    void advance_ms(int64_t duration_ms) { now_ms_ += duration_ms; }

private:
    int64_t now_ms_;
};

class RateLimiter {
public:
    RateLimiter(Clock& clock, int64_t mean_interval_ms, uint64_t seed = 0,
                int capacity = 2)
        : clock_(clock),
          mean_interval_ms_(mean_interval_ms),
          rng_(seed),
          capacity_(capacity),
          tokens_(capacity) {
        if (mean_interval_ms <= 0)
            throw ValidationError("rate limiter interval must be positive");
        if (capacity < 1) throw ValidationError("rate limiter capacity must be >= 1");
        next_arrival_ms_ = clock_.now_ms() + jittered_interval();
    }

    // Blocks (via the clock) until a token is available, then consumes it.
    // Returns the emission time.
    int64_t acquire() {
        std::lock_guard<std::mutex> hold(mutex_);
        refill(clock_.now_ms());
        while (tokens_ == 0) {
            int64_t now = clock_.now_ms();
            if (next_arrival_ms_ > now) clock_.sleep_ms(next_arrival_ms_ - now);
            refill(clock_.now_ms());
        }
        // A full bucket means the limiter was idle; restart the refill cycle
        // from this burst so the third request always waits a full interval.
        if (tokens_ == capacity_)
            next_arrival_ms_ = clock_.now_ms() + jittered_interval();
        --tokens_;
        return clock_.now_ms();
    }

    int64_t mean_interval_ms() const { return mean_interval_ms_; }

private:
    int64_t jittered_interval() {
        // Uniform on [0.5, 1.5] of the mean keeps the long-run average at the
        // mean while avoiding a detectable fixed cadence.
        double u = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
        double factor = 0.5 + u;
        auto interval = static_cast<int64_t>(factor * static_cast<double>(mean_interval_ms_));
        return interval > 0 ? interval : 1;
    }

    void refill(int64_t now) {
        // Idle time never banks more than the bucket holds.
        while (tokens_ < capacity_ && now >= next_arrival_ms_) {
            ++tokens_;
            next_arrival_ms_ += jittered_interval();
        }
    }

    Clock& clock_;
    int64_t mean_interval_ms_;
    std::mt19937_64 rng_;
    int capacity_;
    int tokens_;
    int64_t next_arrival_ms_ = 0;
    std::mutex mutex_;
};

}  // namespace ntpool
