#include "ntpool/store.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <unistd.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

using namespace ntpool;
using namespace ntpool::pool;

namespace {

std::filesystem::path fresh_dir() {
    static int counter = 0;
    auto dir = std::filesystem::temp_directory_path() /
               ("ntpool-store-" + std::to_string(::getpid()) + "-" +
                std::to_string(counter++));
    std::filesystem::remove_all(dir);
    return dir;
}

ServerRecord record(int64_t id, const std::string& address, double score,
                    int64_t netspeed, int64_t seen_ms) {
    ServerRecord r;
    r.server_id = id;
    r.address = address;
    r.zones = {"hu", "europe", "@"};
    r.score = score;
    r.netspeed_kbps = netspeed;
    r.first_seen_ms = seen_ms;
    r.last_seen_ms = seen_ms;
    return r;
}

std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

size_t line_count(const std::filesystem::path& p) {
    auto text = read_file(p);
    return static_cast<size_t>(std::count(text.begin(), text.end(), '\n'));
}

}  // namespace

TEST_CASE("server events: only changes append, last_seen is monotone") {
    auto dir = fresh_dir();
    ScrapeStore store(dir);

    auto r = record(7, "192.0.2.7", 17.5, 1'000'000, 1'000);
    CHECK(store.record_server(r, 1'000));
    CHECK(line_count(store.events_path()) == 1);

    // Same observation again: nothing new to log.
    CHECK_FALSE(store.record_server(r, 1'500));
    CHECK(line_count(store.events_path()) == 1);

    // A later sighting with the same fields differs only in last_seen.
    auto later = r;
    later.last_seen_ms = 2'000;
    CHECK(store.record_server(later, 2'000));
    CHECK(line_count(store.events_path()) == 2);
    CHECK(store.snapshot().servers.at(7).last_seen_ms == 2'000);
    CHECK(store.snapshot().servers.at(7).first_seen_ms == 1'000);

    // A stale write cannot move last_seen backward or detach first_seen.
    auto stale = r;
    stale.first_seen_ms = 50;
    stale.last_seen_ms = 500;
    stale.score = 12.0;
    CHECK(store.record_server(stale, 2'500));
    const auto& stored = store.snapshot().servers.at(7);
    CHECK(stored.score == 12.0);
    CHECK(stored.last_seen_ms == 2'000);
    CHECK(stored.first_seen_ms == 1'000);

    // Zones are kept sorted so field comparison is order-insensitive.
    auto shuffled = stored;
    shuffled.zones = {"europe", "@", "hu"};
    CHECK_FALSE(store.record_server(shuffled, 3'000));

    auto bad = r;
    bad.score = 30.0;
    CHECK_THROWS_AS(store.record_server(bad, 3'100), ValidationError);
}

TEST_CASE("answer counters: resets are flagged and segment a new monotone run") {
    auto dir = fresh_dir();
    ScrapeStore store(dir);

    auto first = store.record_answer({"192.0.2.7", "@", 1'000, 10});
    CHECK_FALSE(first.reset);
    CHECK(first.segment == 0);

    auto second = store.record_answer({"192.0.2.7", "@", 1'500, 20});
    CHECK_FALSE(second.reset);
    CHECK(second.segment == 0);

    // Upstream counter went backward: new segment.
    auto third = store.record_answer({"192.0.2.7", "@", 40, 30});
    CHECK(third.reset);
    CHECK(third.segment == 1);

    auto fourth = store.record_answer({"192.0.2.7", "@", 90, 40});
    CHECK_FALSE(fourth.reset);
    CHECK(fourth.segment == 1);

    // Equal counts are not a reset.
    auto flat = store.record_answer({"192.0.2.7", "@", 90, 50});
    CHECK_FALSE(flat.reset);

    // Distinct zones track independently.
    auto other = store.record_answer({"192.0.2.7", "us", 5, 60});
    CHECK_FALSE(other.reset);

    const auto& state = store.snapshot().answers.at("192.0.2.7").at("@");
    CHECK(state.last_count == 90);
    CHECK(state.segment == 1);
    CHECK(state.resets == 1);
    CHECK(state.fetched_at_ms == 50);
}

TEST_CASE("zone counts and checkpoints land in the snapshot") {
    auto dir = fresh_dir();
    ScrapeStore store(dir);

    ZoneCounts hu{"hu", 6, 2, 4'101'000, 99};
    store.record_zone_counts(hu);
    CHECK(store.snapshot().zones.at("hu") == hu);

    store.set_checkpoint(5, 6, 1'000'000, 100);
    CHECK(store.snapshot().high_water == 5);
    CHECK(store.snapshot().poll_id == 6);
    CHECK(store.snapshot().next_poll_at_ms == 1'000'000);

    ZoneCounts bad{"xx", -1, 0, 0, 0};
    CHECK_THROWS_AS(store.record_zone_counts(bad), ValidationError);
}

TEST_CASE("replaying the log reconstructs the exact snapshot") {
    auto dir = fresh_dir();

    std::mt19937_64 rng(11);
    {
        ScrapeStore store(dir);
        for (int i = 0; i < 400; ++i) {
            switch (rng() % 4) {
                case 0: {
                    auto r = record(1 + static_cast<int64_t>(rng() % 20),
                                    "192.0.2." + std::to_string(rng() % 20),
                                    static_cast<double>(rng() % 120) - 100.0,
                                    static_cast<int64_t>(rng() % 5) * 512,
                                    static_cast<int64_t>(i));
                    store.record_server(r, i);
                    break;
                }
                case 1:
                    store.record_answer({"192.0.2." + std::to_string(rng() % 5),
                                         rng() % 2 ? "@" : "us",
                                         static_cast<int64_t>(rng() % 1'000),
                                         static_cast<int64_t>(i)});
                    break;
                case 2:
                    store.record_zone_counts({"zone" + std::to_string(rng() % 3),
                                              static_cast<int64_t>(rng() % 100),
                                              static_cast<int64_t>(rng() % 100),
                                              static_cast<int64_t>(rng() % 1'000'000),
                                              static_cast<int64_t>(i)});
                    break;
                default:
                    store.set_checkpoint(static_cast<int64_t>(rng() % 50),
                                         static_cast<int64_t>(rng() % 50) + 1,
                                         static_cast<int64_t>(i) + 1'000,
                                         static_cast<int64_t>(i));
            }
        }
        store.write_snapshot();

        // The live snapshot, a replay of the log, and the exported snapshot
        // file all agree.
        std::ifstream events(store.events_path());
        CHECK(ScrapeStore::replay(events) == store.snapshot());

        std::ifstream snap_in(store.snapshot_path());
        auto exported = ScrapeStore::snapshot_from_json(nlohmann::json::parse(snap_in));
        CHECK(exported == store.snapshot());

        // JSON round-trip of the snapshot is lossless.
        auto round =
            ScrapeStore::snapshot_from_json(ScrapeStore::snapshot_to_json(store.snapshot()));
        CHECK(round == store.snapshot());
    }

    // Reopening the directory replays the log too.
    ScrapeStore reopened(dir);
    std::ifstream events(reopened.events_path());
    CHECK(ScrapeStore::replay(events) == reopened.snapshot());
}

TEST_CASE("a torn final line is tolerated, earlier corruption is not") {
    auto dir = fresh_dir();
    {
        ScrapeStore store(dir);
        store.set_checkpoint(3, 4, 100, 1);
        store.record_answer({"192.0.2.1", "@", 10, 2});
    }
    auto events = dir / "events.jsonl";

    auto intact = read_file(events);
    {
        std::ofstream out(events, std::ios::app);
        out << R"({"format_version":1,"ts_ms":3,"kind":"answer","address")";  // torn
    }
    {
        ScrapeStore recovered(dir);
        CHECK(recovered.snapshot().high_water == 3);
        CHECK(recovered.snapshot().answers.at("192.0.2.1").at("@").last_count == 10);
        // The torn tail was truncated away, and appends keep working.
        CHECK(read_file(events) == intact);
        recovered.record_answer({"192.0.2.1", "@", 20, 4});
    }
    {
        ScrapeStore clean(dir);
        CHECK(clean.snapshot().answers.at("192.0.2.1").at("@").last_count == 20);
    }

    // Corruption before the final line is a hard error.
    auto text = read_file(events);
    {
        std::ofstream out(events, std::ios::trunc);
        out << "not json at all\n" << text;
    }
    CHECK_THROWS_AS(ScrapeStore(dir), ParseError);
}

TEST_CASE("unknown kinds and foreign format versions are rejected") {
    std::istringstream unknown(
        R"({"format_version":1,"ts_ms":1,"kind":"mystery"})" "\n"
        R"({"format_version":1,"ts_ms":2,"kind":"checkpoint","high_water":1,"poll_id":2,"next_poll_at_ms":3})" "\n");
    CHECK_THROWS_AS(ScrapeStore::replay(unknown), ParseError);

    std::istringstream future(
        R"({"format_version":9,"ts_ms":1,"kind":"checkpoint","high_water":1,"poll_id":2,"next_poll_at_ms":3})" "\n"
        R"({"format_version":1,"ts_ms":2,"kind":"checkpoint","high_water":1,"poll_id":2,"next_poll_at_ms":3})" "\n");
    CHECK_THROWS_AS(ScrapeStore::replay(future), ParseError);
}
