#include "ntpool/fingerprint.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <sstream>

#include "support/oracles.hpp"
#include "support/synthetic.hpp"

using namespace ntpool;
using namespace ntpool::fingerprint;

namespace {

Fingerprint fp_at(const char* addr, int64_t at_ms, uint32_t ref_seconds) {
    Fingerprint fp;
    fp.address = IpAddress::parse_or_throw(addr);
    fp.collected_at_ms = at_ms;
    fp.version = 4;
    fp.stratum = 2;
    fp.refid = {10, 0, 0, 1};
    fp.precision = -20;
    fp.poll = 6;
    fp.reference_ts = {ref_seconds, 0};
    fp.root_dispersion = {0, 512};
    return fp;
}

}  // namespace

TEST_CASE("matching: identical tuples in the same window") {
    auto a = fp_at("192.0.2.1", 1'000, 3'900'000'000u);
    auto b = fp_at("192.0.2.2", 31'000, 3'900'000'000u);
    CHECK(fingerprints_match(a, b) == MatchResult::match);
    CHECK(fingerprints_match(a, a) == MatchResult::match);
    CHECK(fingerprints_match(b, a) == MatchResult::match);
}

TEST_CASE("matching: resynchronized reference timestamp is a non-match") {
    auto a = fp_at("192.0.2.1", 1'000, 3'900'000'000u);
    auto b = fp_at("192.0.2.1", 31'000, 3'900'000'777u);
    CHECK(fingerprints_match(a, b) == MatchResult::no_match);
}

TEST_CASE("matching: probes outside the window are incomparable") {
    auto a = fp_at("192.0.2.1", 0, 3'900'000'000u);
    auto b = fp_at("192.0.2.2", 61'000, 3'900'000'000u);
    CHECK(fingerprints_match(a, b) == MatchResult::incomparable);

    MatchKey wide;
    wide.window_ms = 120'000;
    CHECK(fingerprints_match(a, b, wide) == MatchResult::match);
}

TEST_CASE("matching: two stratum-2 servers sharing an upstream still differ") {
    // Same refid (the shared upstream peer) but distinct reference timestamps.
    auto a = fp_at("192.0.2.1", 1'000, 3'900'000'100u);
    auto b = fp_at("198.51.100.1", 2'000, 3'900'000'200u);
    CHECK(a.refid == b.refid);
    CHECK(fingerprints_match(a, b) == MatchResult::no_match);
}

TEST_CASE("matching: weak fields only participate when enabled") {
    auto a = fp_at("192.0.2.1", 1'000, 3'900'000'000u);
    auto b = fp_at("192.0.2.2", 2'000, 3'900'000'000u);
    b.poll = 10;
    CHECK(fingerprints_match(a, b) == MatchResult::match);

    MatchKey with_poll;
    with_poll.poll = true;
    CHECK(fingerprints_match(a, b, with_poll) == MatchResult::no_match);

    b.poll = a.poll;
    a.weak_hints = WeakHints{64, 0};
    MatchKey with_ttl;
    with_ttl.ttl = true;
    CHECK(fingerprints_match(a, b, with_ttl) == MatchResult::no_match);  // one missing
    b.weak_hints = WeakHints{64, 46};
    CHECK(fingerprints_match(a, b, with_ttl) == MatchResult::match);
    MatchKey with_dscp;
    with_dscp.dscp = true;
    CHECK(fingerprints_match(a, b, with_dscp) == MatchResult::no_match);
}

TEST_CASE("matching is an equivalence relation within a window") {
    std::mt19937_64 rng(0xFEEDull);
    std::vector<Fingerprint> fps;
    for (int i = 0; i < 60; ++i) {
        auto fp = fp_at("192.0.2.1", 1'000, 3'900'000'000u + rng() % 3);
        fp.stratum = static_cast<uint8_t>(2 + rng() % 2);
        fps.push_back(fp);
    }
    for (const auto& a : fps) {
        REQUIRE(fingerprints_match(a, a) == MatchResult::match);
        for (const auto& b : fps) {
            REQUIRE(fingerprints_match(a, b) == fingerprints_match(b, a));
            for (const auto& c : fps) {
                if (fingerprints_match(a, b) == MatchResult::match &&
                    fingerprints_match(b, c) == MatchResult::match)
                    REQUIRE(fingerprints_match(a, c) == MatchResult::match);
            }
        }
    }
}

TEST_CASE("covering prefix of the documented address set") {
    std::vector<IpAddress> members = {
        IpAddress::parse_or_throw("1.2.1.10"),
        IpAddress::parse_or_throw("1.2.3.200"),
        IpAddress::parse_or_throw("1.2.14.30"),
    };
    auto p = covering_prefix(members);
    CHECK(p.to_string() == "1.2.0.0/20");
}

TEST_CASE("covering prefix edges") {
    std::vector<IpAddress> one = {IpAddress::parse_or_throw("203.0.113.9")};
    CHECK(covering_prefix(one).to_string() == "203.0.113.9/32");

    std::vector<IpAddress> v6 = {
        IpAddress::parse_or_throw("2001:db8:1:2:aaaa::1"),
        IpAddress::parse_or_throw("2001:db8:1:2::99"),
    };
    CHECK(covering_prefix(v6).length() >= 64);

    std::vector<IpAddress> one6 = {IpAddress::parse_or_throw("2001:db8::5")};
    CHECK(covering_prefix(one6).length() == 128);

    std::vector<IpAddress> mixed = {IpAddress::parse_or_throw("1.2.3.4"),
                                    IpAddress::parse_or_throw("2001:db8::1")};
    CHECK_THROWS_AS(covering_prefix(mixed), ValidationError);
    CHECK_THROWS_AS(covering_prefix({}), ValidationError);
}

TEST_CASE("covering prefix agrees with the masking oracle") {
    std::mt19937_64 rng(0xCAFEull);
    for (int trial = 0; trial < 10'000; ++trial) {
        bool v6 = rng() & 1;
        // Members share a random-length high prefix.
        int shared = static_cast<int>(rng() % (v6 ? 129 : 33));
        std::array<uint8_t, 16> base{};
        for (auto& b : base) b = static_cast<uint8_t>(rng());
        size_t total = v6 ? 16 : 4;
        std::vector<IpAddress> members;
        size_t count = 1 + rng() % 5;
        for (size_t i = 0; i < count; ++i) {
            std::array<uint8_t, 16> raw{};
            for (size_t b = 0; b < total; ++b) {
                uint8_t noise = static_cast<uint8_t>(rng());
                int bits_kept = std::clamp(shared - static_cast<int>(b) * 8, 0, 8);
                uint8_t mask = bits_kept == 0
                                   ? 0
                                   : static_cast<uint8_t>(0xFF << (8 - bits_kept));
                raw[b] = static_cast<uint8_t>((base[b] & mask) | (noise & ~mask));
            }
            members.push_back(IpAddress::from_bytes(v6 ? Family::v6 : Family::v4,
                                                    std::span<const uint8_t>(raw.data(), total)));
        }
        auto got = covering_prefix(members);
        auto want = testsupport::oracle_covering_prefix(members);
        REQUIRE(got.length() == want.length());
        REQUIRE(got.to_string() == want.to_string());
        REQUIRE(got.length() >= shared);
    }
}

TEST_CASE("clusters: ten addresses of one interface form one cluster") {
    std::vector<Fingerprint> fps;
    for (int i = 0; i < 10; ++i) {
        auto fp = fp_at("192.0.2.1", 1'000 + i, 3'900'000'000u);
        fp.address = IpAddress::parse_or_throw("2001:db8::" + std::to_string(i + 1));
        fps.push_back(fp);
    }
    auto clusters = build_clusters(fps);
    REQUIRE(clusters.size() == 1);
    CHECK(clusters[0].members.size() == 10);
    CHECK_FALSE(clusters[0].contains_stratum1);
    CHECK_FALSE(clusters[0].mixed_family);
    REQUIRE(clusters[0].covering_prefix_v6.has_value());
    CHECK_FALSE(clusters[0].covering_prefix_v4.has_value());
}

TEST_CASE("clusters: two daemons on one host split two-and-one") {
    std::vector<Fingerprint> fps = {
        fp_at("192.0.2.1", 1'000, 3'900'000'000u),
        fp_at("192.0.2.2", 2'000, 3'900'000'000u),
        fp_at("192.0.2.3", 3'000, 3'900'777'000u),  // second daemon
    };
    auto clusters = build_clusters(fps);
    REQUIRE(clusters.size() == 2);
    CHECK(clusters[0].members.size() == 2);
    CHECK(clusters[1].members.size() == 1);
}

TEST_CASE("clusters: output is a deterministic partition") {
    std::mt19937_64 rng(0xBEEFull);
    auto pop = testsupport::generate_population(rng, 40, 5, 2, 0.0);
    auto clusters = build_clusters(pop.fingerprints);

    size_t member_total = 0;
    std::unordered_map<IpAddress, int, IpAddressHash> seen;
    for (const auto& c : clusters) {
        member_total += c.members.size();
        for (const auto& m : c.members) seen[m]++;
        REQUIRE(std::is_sorted(c.members.begin(), c.members.end()));
    }
    size_t distinct_addresses = 0;
    for (const auto& h : pop.hosts) distinct_addresses += h.size();
    CHECK(member_total == distinct_addresses);
    for (const auto& [addr, count] : seen) REQUIRE(count == 1);
    for (size_t i = 1; i < clusters.size(); ++i)
        REQUIRE(clusters[i - 1].members.front() < clusters[i].members.front());

    // Same inputs, permuted, give byte-identical reports.
    std::shuffle(pop.fingerprints.begin(), pop.fingerprints.end(), rng);
    auto again = build_clusters(pop.fingerprints);
    std::ostringstream first_report, second_report;
    write_clusters(first_report, clusters);
    write_clusters(second_report, again);
    CHECK(first_report.str() == second_report.str());
}

TEST_CASE("clusters: synthetic hosts recovered exactly without drift") {
    std::mt19937_64 rng(7);
    auto pop = testsupport::generate_population(rng, 50, 13, 2, 0.0);
    auto clusters = build_clusters(pop.fingerprints);
    CHECK(clusters.size() == pop.hosts.size());
    auto score = testsupport::score_clusters(clusters, pop, false);
    CHECK(score.precision == 1.0);
    CHECK(score.recall == 1.0);
}

TEST_CASE("clusters: five percent drift keeps precision at one, recall high") {
    std::mt19937_64 rng(11);
    auto pop = testsupport::generate_population(rng, 200, 13, 2, 0.05);
    auto clusters = build_clusters(pop.fingerprints);
    auto score = testsupport::score_clusters(clusters, pop, false);
    CHECK(score.precision == 1.0);
    CHECK(score.recall >= 0.95);
}

TEST_CASE("clusters: stratum-1 members flag the whole cluster") {
    std::vector<Fingerprint> fps = {
        fp_at("192.0.2.1", 1'000, 3'900'000'000u),
        fp_at("192.0.2.2", 2'000, 3'900'000'000u),
        fp_at("198.51.100.7", 3'000, 3'901'000'000u),
    };
    fps[1].stratum = 1;  // one member of the pair is a primary server
    fps[1].refid = {'G', 'P', 'S', 0};
    auto key = MatchKey{};
    key.stratum = false;  // keep the pair linked despite the stratum change
    key.refid = false;
    auto clusters = build_clusters(fps, key);
    REQUIRE(clusters.size() == 2);
    CHECK(clusters[0].contains_stratum1);
    CHECK(clusters[0].members.size() == 2);
    CHECK_FALSE(clusters[1].contains_stratum1);
}

TEST_CASE("clusters: mixed-family cluster carries both covering prefixes") {
    std::vector<Fingerprint> fps = {
        fp_at("192.0.2.1", 1'000, 3'900'000'000u),
        fp_at("192.0.2.14", 2'000, 3'900'000'000u),
    };
    Fingerprint v6 = fps[0];
    v6.address = IpAddress::parse_or_throw("2001:db8::123");
    v6.collected_at_ms = 3'000;
    fps.push_back(v6);

    auto clusters = build_clusters(fps);
    REQUIRE(clusters.size() == 1);
    CHECK(clusters[0].mixed_family);
    REQUIRE(clusters[0].covering_prefix_v4.has_value());
    REQUIRE(clusters[0].covering_prefix_v6.has_value());
    CHECK(clusters[0].covering_prefix_v4->to_string() == "192.0.2.0/28");
    CHECK(clusters[0].covering_prefix_v6->length() == 128);
}

TEST_CASE("clusters: probes outside the window never link addresses") {
    std::vector<Fingerprint> fps = {
        fp_at("192.0.2.1", 0, 3'900'000'000u),
        fp_at("192.0.2.2", 120'000, 3'900'000'000u),
    };
    auto clusters = build_clusters(fps);
    CHECK(clusters.size() == 2);
}

TEST_CASE("consistency tally over a known composition") {
    auto cluster_of = [](std::vector<const char*> addrs) {
        AliasCluster c;
        for (const char* a : addrs)
            c.members.push_back(IpAddress::parse_or_throw(a));
        return c;
    };
    std::vector<AliasCluster> clusters = {
        cluster_of({"10.0.0.1", "10.0.0.2"}),   // same account, same ASN
        cluster_of({"10.0.1.1", "10.0.1.2"}),   // same account, ASNs split (v4/v6 provider)
        cluster_of({"10.0.2.1", "10.0.2.2"}),   // accounts split, same ASN
        cluster_of({"10.0.3.1", "10.0.3.2"}),   // both split
        cluster_of({"10.0.4.1", "10.0.4.2"}),   // account missing on one member
        cluster_of({"10.0.5.1"}),               // singleton: not examined
    };
    independence::AccountMap accounts;
    std::unordered_map<IpAddress, uint32_t, IpAddressHash> asns;
    auto set = [&](const char* a, const char* acct, uint32_t asn) {
        auto addr = IpAddress::parse_or_throw(a);
        if (acct) accounts[addr] = acct;
        if (asn) asns[addr] = asn;
    };
    set("10.0.0.1", "alpha", 100);
    set("10.0.0.2", "alpha", 100);
    set("10.0.1.1", "beta", 200);
    set("10.0.1.2", "beta", 201);
    set("10.0.2.1", "gamma", 300);
    set("10.0.2.2", "delta", 300);
    set("10.0.3.1", "eps", 400);
    set("10.0.3.2", "zeta", 401);
    set("10.0.4.1", "eta", 500);
    set("10.0.4.2", nullptr, 500);
    set("10.0.5.1", "theta", 600);

    auto asn_of = [&](const IpAddress& a) -> std::optional<uint32_t> {
        auto it = asns.find(a);
        if (it == asns.end()) return std::nullopt;
        return it->second;
    };
    auto tally = cluster_consistency(clusters, accounts, asn_of);
    CHECK(tally.multi_member == 5);
    CHECK(tally.account_and_asn == 1);
    CHECK(tally.account_only == 1);
    CHECK(tally.asn_only == 1);
    CHECK(tally.neither == 1);
    CHECK(tally.undeterminable == 1);
}

TEST_CASE("campaign summary reproduces the population responsiveness") {
    std::vector<Fingerprint> fps;
    for (uint32_t i = 0; i < 5'687; ++i) {
        Fingerprint fp = fp_at("192.0.2.1", 1'000, 3'900'000'000u + i);
        std::array<uint8_t, 4> raw = {10, static_cast<uint8_t>(i >> 16),
                                      static_cast<uint8_t>(i >> 8),
                                      static_cast<uint8_t>(i)};
        fp.address = IpAddress::from_bytes(Family::v4, raw);
        fps.push_back(fp);
        fps.push_back(fp);  // second probe round; must not double-count
    }
    auto summary = summarize_campaign(6'242, fps);
    CHECK(summary.targets == 6'242);
    CHECK(summary.responsive == 5'687);
    CHECK(summary.responsiveness() == Catch::Approx(0.911).margin(0.0005));
    CHECK_THROWS_AS(summarize_campaign(2, fps), ValidationError);
    CHECK(CampaignSummary{}.responsiveness() == 0.0);
}

TEST_CASE("fingerprints round-trip through the line format") {
    std::mt19937_64 rng(0x717171ull);
    auto pop = testsupport::generate_population(rng, 30, 4, 2, 0.1);
    pop.fingerprints[0].weak_hints = WeakHints{64, 46};

    std::ostringstream out;
    write_fingerprints(out, pop.fingerprints);
    std::istringstream in(out.str());
    auto back = read_fingerprints(in);
    REQUIRE(back.size() == pop.fingerprints.size());
    for (size_t i = 0; i < back.size(); ++i) REQUIRE(back[i] == pop.fingerprints[i]);
}

TEST_CASE("fingerprint records use the documented field names") {
    auto fp = fp_at("192.0.2.1", 1'234, 0xDEADBEEFu);
    auto j = to_json(fp);
    for (const char* field :
         {"address", "collected_at", "version", "stratum", "refid_hex", "precision",
          "poll", "reference_ts_hex", "root_dispersion_hex"})
        REQUIRE(j.contains(field));
    CHECK(j["reference_ts_hex"] == "deadbeef00000000");
    CHECK(j["refid_hex"] == "0a000001");
    CHECK(j["root_dispersion_hex"] == "00000200");
    CHECK_FALSE(j.contains("ttl_or_hoplimit"));
}

TEST_CASE("cluster records use the documented field names") {
    std::vector<Fingerprint> fps = {
        fp_at("192.0.2.1", 1'000, 3'900'000'000u),
        fp_at("192.0.2.2", 2'000, 3'900'000'000u),
        fp_at("198.51.100.9", 3'000, 3'901'000'000u),
    };
    auto clusters = build_clusters(fps);
    std::ostringstream out;
    write_clusters(out, clusters);
    std::istringstream lines(out.str());
    std::string line;
    size_t id = 0;
    while (std::getline(lines, line)) {
        auto j = nlohmann::json::parse(line);
        CHECK(j["cluster_id"] == id++);
        for (const char* field : {"members", "contains_stratum1", "covering_prefix_v4",
                                  "covering_prefix_v6", "mixed_family"})
            REQUIRE(j.contains(field));
        CHECK(j["covering_prefix_v6"].is_null());
    }
    CHECK(id == 2);
}

TEST_CASE("malformed fingerprint lines report their line number") {
    std::istringstream bad("{\"address\": \"192.0.2.1\"}\n");
    CHECK_THROWS_WITH(read_fingerprints(bad),
                      Catch::Matchers::ContainsSubstring("line 1"));

    std::istringstream junk("not json\n");
    CHECK_THROWS_AS(read_fingerprints(junk), ParseError);
}
