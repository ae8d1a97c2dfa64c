// ntpool: one binary wiring the library into file-based subcommands.
//
// Every run writes its artifacts into an output directory (scrape and
// answers use the state directory) together with a manifest.json recording
// the subcommand, input digests, resolved configuration, and seed, so any
// result can be traced back to exactly what produced it.
//
// Exit codes: 0 ok, 2 usage, 3 input validation, 4 network, 5 internal.
// Nonzero exits print one {"error":{...}} object to stderr.

#include <openssl/evp.h>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ntpool/apportion.hpp"
#include "ntpool/errors.hpp"
#include "ntpool/fingerprint.hpp"
#include "ntpool/independence.hpp"
#include "ntpool/ip.hpp"
#include "ntpool/lpm.hpp"
#include "ntpool/pool_client.hpp"
#include "ntpool/poolsim.hpp"
#include "ntpool/prober.hpp"
#include "ntpool/rate_limiter.hpp"
#include "ntpool/store.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ntpool;

namespace {

constexpr const char* kToolVersion = "0.1.0";

int64_t wall_ms() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
}

std::string sha256_hex(const void* data, size_t len) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int dlen = 0;
    if (EVP_Digest(data, len, digest, &dlen, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("sha256 digest failed");
    static const char* hexd = "0123456789abcdef";
    std::string out;
    out.reserve(dlen * 2);
    for (unsigned int i = 0; i < dlen; ++i) {
        out.push_back(hexd[digest[i] >> 4]);
        out.push_back(hexd[digest[i] & 0xf]);
    }
    return out;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot read " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::string sha256_file(const fs::path& path) {
    auto bytes = slurp(path);
    return sha256_hex(bytes.data(), bytes.size());
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot write " + path.string());
    out << text;
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

// Non-blank, non-comment lines with surrounding whitespace stripped.
std::vector<std::string> read_lines(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot read " + path.string());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        size_t a = line.find_first_not_of(" \t\r");
        if (a == std::string::npos) continue;
        size_t b = line.find_last_not_of(" \t\r");
        std::string t = line.substr(a, b - a + 1);
        if (t.empty() || t[0] == '#') continue;
        lines.push_back(std::move(t));
    }
    return lines;
}

std::vector<IpAddress> read_address_list(const fs::path& path) {
    std::vector<IpAddress> out;
    size_t n = 0;
    for (const auto& line : read_lines(path)) {
        ++n;
        auto addr = IpAddress::parse(line);
        if (!addr)
            throw ParseError(path.string() + ": entry " + std::to_string(n) +
                             ": bad address '" + line + "'");
        out.push_back(*addr);
    }
    return out;
}

independence::AccountMap read_account_map(const fs::path& path) {
    independence::AccountMap map;
    size_t n = 0;
    for (const auto& line : read_lines(path)) {
        ++n;
        std::istringstream fields(line);
        std::string addr_text, account, extra;
        if (!(fields >> addr_text >> account) || (fields >> extra))
            throw ParseError(path.string() + ": entry " + std::to_string(n) +
                             ": expected 'address account_id'");
        auto addr = IpAddress::parse(addr_text);
        if (!addr)
            throw ParseError(path.string() + ": entry " + std::to_string(n) +
                             ": bad address '" + addr_text + "'");
        map[*addr] = account;
    }
    return map;
}

lpm::PrefixTable read_prefix_table(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot read " + path.string());
    return lpm::PrefixTable::parse(in);
}

std::vector<std::vector<IpAddress>> read_cluster_members(const fs::path& path) {
    std::vector<std::vector<IpAddress>> clusters;
    size_t n = 0;
    for (const auto& line : read_lines(path)) {
        ++n;
        json j;
        try {
            j = json::parse(line);
        } catch (const std::exception& e) {
            throw ParseError(path.string() + ": entry " + std::to_string(n) + ": " +
                             e.what());
        }
        if (!j.contains("members") || !j["members"].is_array())
            throw ParseError(path.string() + ": entry " + std::to_string(n) +
                             ": missing members array");
        std::vector<IpAddress> members;
        for (const auto& m : j["members"])
            members.push_back(IpAddress::parse_or_throw(m.get<std::string>()));
        clusters.push_back(std::move(members));
    }
    return clusters;
}

// Doubles rendered through the JSON serializer so CSV and JSON artifacts
// agree byte-for-byte on the same value.
std::string num(double v) { return json(v).dump(); }

struct Manifest {
    std::string subcommand;
    std::vector<fs::path> inputs;
    json config = json::object();
    uint64_t seed = 0;
    int64_t started_ms = 0;
};

void write_manifest(const fs::path& dir, const Manifest& m) {
    json inputs = json::array();
    for (const auto& p : m.inputs)
        inputs.push_back({{"path", p.string()}, {"sha256", sha256_file(p)}});
    json doc = {
        {"format_version", 1},
        {"tool_version", kToolVersion},
        {"subcommand", m.subcommand},
        {"inputs", std::move(inputs)},
        {"config", m.config},
        {"config_digest", sha256_hex(m.config.dump().data(), m.config.dump().size())},
        {"seed", m.seed},
        {"started_ms", m.started_ms},
        {"finished_ms", wall_ms()},
    };
    write_text(dir / "manifest.json", doc.dump(2) + "\n");
}

void emit(const json& j) { std::cout << j.dump() << "\n"; }

// ---------------------------------------------------------------------------
// scrape / answers

struct ScrapeOpts {
    std::string base_url;
    std::string state_dir;
    std::optional<int64_t> start_id;
    uint64_t max_records = 0;  // 0 = unlimited
    int64_t mean_interval_ms = 5000;
    int retries = 2;
};

void run_scrape(const ScrapeOpts& o) {
    int64_t started = wall_ms();
    pool::DirectoryLock lock(o.state_dir);
    pool::ScrapeStore store(o.state_dir);
    SystemClock clock;
    RateLimiter limiter(clock, o.mean_interval_ms, static_cast<uint64_t>(started));
    pool::RatePolicy policy;
    policy.mean_inter_request_ms = o.mean_interval_ms;
    pool::PoolClient client(o.base_url, limiter, clock, policy, o.retries);

    int64_t start = o.start_id.value_or(std::max<int64_t>(1, store.snapshot().poll_id));
    size_t cap = o.max_records == 0 ? std::numeric_limits<size_t>::max()
                                    : static_cast<size_t>(o.max_records);
    auto result = client.enumerate(start, &store, cap);
    store.write_snapshot();

    Manifest m;
    m.subcommand = "scrape";
    m.config = {{"base_url", o.base_url},      {"state_dir", o.state_dir},
                {"start_id", start},           {"max_records", o.max_records},
                {"mean_interval_ms", o.mean_interval_ms}, {"retries", o.retries}};
    m.started_ms = started;
    write_manifest(o.state_dir, m);

    emit({{"records", result.records.size()},
          {"next_id", result.next_id},
          {"high_water", store.snapshot().high_water}});
}

struct AnswersOpts {
    std::string base_url;
    std::string state_dir;
    std::vector<std::string> addresses;
    int64_t mean_interval_ms = 5000;
    int retries = 2;
};

void run_answers(const AnswersOpts& o) {
    int64_t started = wall_ms();
    pool::DirectoryLock lock(o.state_dir);
    pool::ScrapeStore store(o.state_dir);
    SystemClock clock;
    RateLimiter limiter(clock, o.mean_interval_ms, static_cast<uint64_t>(started));
    pool::RatePolicy policy;
    policy.mean_inter_request_ms = o.mean_interval_ms;
    pool::PoolClient client(o.base_url, limiter, clock, policy, o.retries);

    std::vector<std::string> addrs = o.addresses;
    if (addrs.empty()) {
        for (const auto& [id, rec] : store.snapshot().servers)
            if (!rec.deleted) addrs.push_back(rec.address);
    }
    if (addrs.empty())
        throw ValidationError("no addresses: pass --address or scrape first");

    size_t samples = 0, resets = 0;
    for (const auto& addr : addrs) {
        for (const auto& sample : client.fetch_answers(addr)) {
            auto rec = store.record_answer(sample);
            ++samples;
            resets += rec.reset ? 1 : 0;
        }
    }
    store.write_snapshot();

    Manifest m;
    m.subcommand = "answers";
    m.config = {{"base_url", o.base_url},
                {"state_dir", o.state_dir},
                {"addresses", addrs},
                {"mean_interval_ms", o.mean_interval_ms},
                {"retries", o.retries}};
    m.started_ms = started;
    write_manifest(o.state_dir, m);

    emit({{"addresses", addrs.size()}, {"samples", samples}, {"resets", resets}});
}

// ---------------------------------------------------------------------------
// fingerprint / dealias

struct FingerprintOpts {
    std::string targets;
    std::string out_dir;
    uint16_t port = 123;
    int probes = 2;
    int64_t window_ms = 60'000;
    int64_t timeout_ms = 3000;
    int retries = 2;
    int max_pps = 100;
    int workers = 8;
    uint64_t seed = 0;
    bool no_weak_hints = false;
};

void run_fingerprint(const FingerprintOpts& o) {
    int64_t started = wall_ms();
    probe::ProbePlan plan;
    plan.targets = read_address_list(o.targets);
    plan.port = o.port;
    plan.probes_per_target = o.probes;
    plan.window_ms = o.window_ms;
    plan.timeout_ms = o.timeout_ms;
    plan.retries = o.retries;
    plan.max_pps = o.max_pps;
    plan.workers = o.workers;
    plan.collect_weak_hints = !o.no_weak_hints;

    auto outcome = probe::run_probes(plan, o.seed);

    fs::create_directories(o.out_dir);
    std::ostringstream fps;
    fingerprint::write_fingerprints(fps, outcome.fingerprints);
    write_text(fs::path(o.out_dir) / "fingerprints.jsonl", fps.str());

    auto summary = fingerprint::summarize_campaign(plan.targets.size(),
                                                   outcome.fingerprints);
    json unresponsive = json::array();
    for (const auto& a : outcome.unresponsive) unresponsive.push_back(a.to_string());
    json campaign = {
        {"targets", summary.targets},
        {"responsive", summary.responsive},
        {"responsiveness", summary.responsiveness()},
        {"probes_sent", outcome.probes_sent},
        {"discarded", outcome.discarded},
        {"unresponsive", std::move(unresponsive)},
    };
    write_text(fs::path(o.out_dir) / "campaign.json", campaign.dump(2) + "\n");

    Manifest m;
    m.subcommand = "fingerprint";
    m.inputs = {o.targets};
    m.config = {{"targets", o.targets},     {"port", o.port},
                {"probes", o.probes},       {"window_ms", o.window_ms},
                {"timeout_ms", o.timeout_ms}, {"retries", o.retries},
                {"max_pps", o.max_pps},     {"workers", o.workers},
                {"weak_hints", !o.no_weak_hints}};
    m.seed = o.seed;
    m.started_ms = started;
    write_manifest(o.out_dir, m);

    emit(campaign);
}

struct DealiasOpts {
    std::string fingerprints;
    std::string out_dir;
    int64_t window_ms = 60'000;
    std::string accounts;  // optional, enables consistency tally
    std::string prefixes;  // optional, enables consistency tally
};

void run_dealias(const DealiasOpts& o) {
    int64_t started = wall_ms();
    std::ifstream in(o.fingerprints);
    if (!in) throw ValidationError("cannot read " + o.fingerprints);
    auto fps = fingerprint::read_fingerprints(in);

    fingerprint::MatchKey key;
    key.window_ms = o.window_ms;
    auto clusters = fingerprint::build_clusters(fps, key);

    fs::create_directories(o.out_dir);
    std::ostringstream cl;
    fingerprint::write_clusters(cl, clusters);
    write_text(fs::path(o.out_dir) / "clusters.jsonl", cl.str());

    size_t addresses = 0, stratum1 = 0, multi = 0;
    for (const auto& c : clusters) {
        addresses += c.members.size();
        stratum1 += c.contains_stratum1 ? 1 : 0;
        multi += c.members.size() >= 2 ? 1 : 0;
    }
    json d = {{"clusters", clusters.size()},
              {"addresses", addresses},
              {"stratum1_clusters", stratum1},
              {"multi_member", multi}};

    Manifest m;
    m.subcommand = "dealias";
    m.inputs = {o.fingerprints};
    if (!o.accounts.empty() && !o.prefixes.empty()) {
        auto account_map = read_account_map(o.accounts);
        auto table = read_prefix_table(o.prefixes);
        auto tally = fingerprint::cluster_consistency(
            clusters, account_map,
            [&table](const IpAddress& a) { return table.lookup(a); });
        d["consistency"] = {{"multi_member", tally.multi_member},
                            {"account_and_asn", tally.account_and_asn},
                            {"account_only", tally.account_only},
                            {"asn_only", tally.asn_only},
                            {"neither", tally.neither},
                            {"undeterminable", tally.undeterminable}};
        m.inputs.push_back(o.accounts);
        m.inputs.push_back(o.prefixes);
    }
    write_text(fs::path(o.out_dir) / "dealias.json", d.dump(2) + "\n");

    m.config = {{"fingerprints", o.fingerprints},
                {"window_ms", o.window_ms},
                {"accounts", o.accounts},
                {"prefixes", o.prefixes}};
    m.started_ms = started;
    write_manifest(o.out_dir, m);

    emit(d);
}

// ---------------------------------------------------------------------------
// analyze

struct FunnelOpts {
    std::string servers;
    std::string clusters;
    std::string accounts;
    std::string prefixes;
    std::string out_dir;
};

void run_funnel(const FunnelOpts& o) {
    int64_t started = wall_ms();
    auto servers = read_address_list(o.servers);
    auto clusters = read_cluster_members(o.clusters);
    auto account_map = read_account_map(o.accounts);
    auto table = read_prefix_table(o.prefixes);

    auto report = independence::funnel(
        servers, clusters, account_map,
        [&table](const IpAddress& a) { return table.lookup(a); });

    json j = {{"total_active", report.total_active},
              {"after_dealias", report.after_dealias},
              {"after_account", report.after_account},
              {"after_asn", report.after_asn},
              {"independent_fraction", report.independent_fraction}};

    std::ostringstream csv;
    csv << "metric,value\n";
    csv << "total_active," << report.total_active << "\n";
    csv << "after_dealias," << report.after_dealias << "\n";
    csv << "after_account," << report.after_account << "\n";
    csv << "after_asn," << report.after_asn << "\n";
    csv << "independent_fraction," << num(report.independent_fraction) << "\n";

    fs::create_directories(o.out_dir);
    write_text(fs::path(o.out_dir) / "funnel.csv", csv.str());
    write_text(fs::path(o.out_dir) / "funnel.jsonl", j.dump() + "\n");

    Manifest m;
    m.subcommand = "analyze funnel";
    m.inputs = {o.servers, o.clusters, o.accounts, o.prefixes};
    m.config = {{"servers", o.servers},
                {"clusters", o.clusters},
                {"accounts", o.accounts},
                {"prefixes", o.prefixes}};
    m.started_ms = started;
    write_manifest(o.out_dir, m);

    emit(j);
}

struct IidOpts {
    std::string addresses;
    std::string out_dir;
    int privacy_min_bits = 28;
};

void run_iid(const IidOpts& o) {
    int64_t started = wall_ms();
    auto addrs = read_address_list(o.addresses);

    std::ostringstream csv, jsonl;
    csv << "address,class\n";
    std::map<std::string, size_t> counts;
    for (const auto& a : addrs) {
        if (!a.is_v6())
            throw ValidationError(a.to_string() +
                                  ": IID classification requires IPv6 addresses");
        const char* cls =
            independence::to_string(independence::classify_iid(a, o.privacy_min_bits));
        csv << a.to_string() << ',' << cls << "\n";
        jsonl << json{{"address", a.to_string()}, {"class", cls}}.dump() << "\n";
        ++counts[cls];
    }

    fs::create_directories(o.out_dir);
    write_text(fs::path(o.out_dir) / "iid.csv", csv.str());
    write_text(fs::path(o.out_dir) / "iid.jsonl", jsonl.str());

    Manifest m;
    m.subcommand = "analyze iid";
    m.inputs = {o.addresses};
    m.config = {{"addresses", o.addresses}, {"privacy_min_bits", o.privacy_min_bits}};
    m.started_ms = started;
    write_manifest(o.out_dir, m);

    emit({{"addresses", addrs.size()}, {"counts", counts}});
}

struct LifetimesOpts {
    std::string scores;
    std::string out_dir;
    double threshold = 10.0;
};

void run_lifetimes(const LifetimesOpts& o) {
    int64_t started = wall_ms();
    std::ifstream in(o.scores);
    if (!in) throw ValidationError("cannot read " + o.scores);
    auto cohort = independence::parse_score_rows(in);

    std::ostringstream csv, jsonl;
    csv << "server_id,lifetime_s,availability\n";
    for (const auto& series : cohort) {
        int64_t life = independence::lifetime(series);
        double avail = independence::availability(series, o.threshold);
        csv << series.server_id << ',' << life << ',' << num(avail) << "\n";
        jsonl << json{{"server_id", series.server_id},
                      {"lifetime_s", life},
                      {"availability", avail}}
                     .dump()
              << "\n";
    }

    fs::create_directories(o.out_dir);
    write_text(fs::path(o.out_dir) / "lifetimes.csv", csv.str());
    write_text(fs::path(o.out_dir) / "lifetimes.jsonl", jsonl.str());

    Manifest m;
    m.subcommand = "analyze lifetimes";
    m.inputs = {o.scores};
    m.config = {{"scores", o.scores}, {"threshold", o.threshold}};
    m.started_ms = started;
    write_manifest(o.out_dir, m);

    emit({{"series", cohort.size()}});
}

struct AnycastOpts {
    std::string zones;
    std::string out_dir;
};

void run_anycast(const AnycastOpts& o) {
    int64_t started = wall_ms();
    std::ifstream in(o.zones);
    if (!in) throw ValidationError("cannot read " + o.zones);
    auto zones = apportion::parse_zone_fixture(in);

    // Regroup the per-zone rosters into per-address zone memberships.
    std::map<std::string, std::set<std::string>> by_address;
    for (const auto& z : zones)
        for (const auto& s : z.servers) by_address[s.address].insert(z.zone);

    std::vector<independence::ZonedServer> servers;
    for (const auto& [address, memberships] : by_address) {
        independence::ZonedServer zs;
        zs.address = IpAddress::parse_or_throw(address);
        zs.zones.assign(memberships.begin(), memberships.end());
        servers.push_back(std::move(zs));
    }
    auto candidates = independence::anycast_candidates(servers);

    std::ostringstream txt;
    for (const auto& a : candidates) txt << a.to_string() << "\n";
    fs::create_directories(o.out_dir);
    write_text(fs::path(o.out_dir) / "anycast.txt", txt.str());

    Manifest m;
    m.subcommand = "analyze anycast";
    m.inputs = {o.zones};
    m.config = {{"zones", o.zones}};
    m.started_ms = started;
    write_manifest(o.out_dir, m);

    emit({{"servers", servers.size()}, {"candidates", candidates.size()}});
}

// ---------------------------------------------------------------------------
// plan

struct PlanOpts {
    std::string zones;
    std::string f_text;
    int64_t m_kbps = 0;
    std::string rates;
    std::string out_dir;
};

std::vector<apportion::ZoneAnswerRate> read_rates(const fs::path& path) {
    std::vector<apportion::ZoneAnswerRate> rates;
    size_t n = 0;
    for (const auto& line : read_lines(path)) {
        ++n;
        auto fields = apportion::detail::split_fields(line, ',');
        if (n == 1 && !fields.empty() && fields[0] == "zone") continue;
        if (fields.size() != 3)
            throw ParseError(path.string() + ": entry " + std::to_string(n) +
                             ": expected 'zone,v4_per_sec,v6_per_sec'");
        apportion::ZoneAnswerRate r;
        r.zone = fields[0];
        try {
            size_t used = 0;
            r.v4_per_sec = std::stod(fields[1], &used);
            if (used != fields[1].size()) throw std::invalid_argument("junk");
            r.v6_per_sec = std::stod(fields[2], &used);
            if (used != fields[2].size()) throw std::invalid_argument("junk");
        } catch (const std::exception&) {
            throw ParseError(path.string() + ": entry " + std::to_string(n) +
                             ": bad rate value");
        }
        rates.push_back(std::move(r));
    }
    return rates;
}

void run_plan(const PlanOpts& o) {
    int64_t started = wall_ms();
    bool zone_mode = !o.zones.empty();
    bool rate_mode = !o.rates.empty();
    if (zone_mode == rate_mode)
        throw ValidationError("pass either --zones with --f and --m, or --rates");

    fs::create_directories(o.out_dir);
    Manifest m;
    m.subcommand = "plan";
    m.started_ms = started;

    if (rate_mode) {
        auto rates = read_rates(o.rates);
        double v4 = 0, v6 = 0;
        for (const auto& r : rates) {
            v4 += r.v4_per_sec;
            v6 += r.v6_per_sec;
        }
        double rate = apportion::global_query_rate(
            std::span<const apportion::ZoneAnswerRate>(rates));
        json j = {{"zones", rates.size()},
                  {"v4_per_sec", v4},
                  {"v6_per_sec", v6},
                  {"global_queries_per_sec", rate}};
        write_text(fs::path(o.out_dir) / "rate.json", j.dump(2) + "\n");
        m.inputs = {o.rates};
        m.config = {{"rates", o.rates}};
        write_manifest(o.out_dir, m);
        emit(j);
        return;
    }

    if (o.f_text.empty() || o.m_kbps <= 0)
        throw ValidationError("--zones requires --f and a positive --m");
    std::ifstream in(o.zones);
    if (!in) throw ValidationError("cannot read " + o.zones);
    auto zones = apportion::parse_zone_fixture(in);
    auto f = apportion::Fraction::parse(o.f_text);
    auto sweep = apportion::robustness_sweep(
        std::span<const apportion::ZoneState>(zones), o.m_kbps, f);

    std::ostringstream csv;
    csv << "zone,n_kbps,m_kbps,f,s_required,achieved_fraction\n";
    for (const auto& p : sweep.plans)
        csv << p.zone << ',' << p.n << ',' << p.m << ',' << num(p.f.value()) << ','
            << p.s << ',' << num(p.achieved) << "\n";
    write_text(fs::path(o.out_dir) / "plan.csv", csv.str());

    json cdf = json::array();
    int64_t last = -1;
    for (int64_t s : sweep.summary.s_sorted) {
        if (s == last) continue;
        last = s;
        cdf.push_back({{"s", s}, {"fraction_le", sweep.summary.fraction_le(s)}});
    }
    json j = {{"zones", zones.size()},
              {"m_kbps", o.m_kbps},
              {"f", f.value()},
              {"s", {{"min", sweep.summary.min()},
                     {"median", sweep.summary.percentile(50)},
                     {"p90", sweep.summary.percentile(90)},
                     {"max", sweep.summary.max()},
                     {"mean", sweep.summary.mean()}}},
              {"cdf", std::move(cdf)}};
    write_text(fs::path(o.out_dir) / "summary.json", j.dump(2) + "\n");

    m.inputs = {o.zones};
    m.config = {{"zones", o.zones}, {"f", o.f_text}, {"m_kbps", o.m_kbps}};
    write_manifest(o.out_dir, m);
    emit(j);
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateOpts {
    std::string scenario;
    std::optional<uint64_t> seed;
    std::string zone;
    std::string out_dir;
};

void run_simulate(const SimulateOpts& o) {
    int64_t started = wall_ms();
    std::ifstream in(o.scenario);
    if (!in) throw ValidationError("cannot read " + o.scenario);
    auto config = poolsim::parse_scenario(in);
    if (o.seed) config.seed = *o.seed;

    std::string zone = o.zone;
    if (zone.empty()) {
        if (config.attack && !config.attack->zones.empty())
            zone = config.attack->zones.front();
        else if (!config.servers.empty() && !config.servers.front().zones.empty())
            zone = config.servers.front().zones.front();
        else
            throw ValidationError("no zone to summarize; pass --zone");
    }

    poolsim::Simulation sim(config);
    auto report = sim.run();

    fs::create_directories(o.out_dir);
    std::ostringstream csv;
    poolsim::write_windows_csv(csv, report);
    write_text(fs::path(o.out_dir) / "windows.csv", csv.str());

    auto summary = poolsim::summary_json(report, config, zone);
    write_text(fs::path(o.out_dir) / "summary.json", summary.dump(2) + "\n");

    Manifest m;
    m.subcommand = "simulate";
    m.inputs = {o.scenario};
    m.config = {{"scenario", o.scenario}, {"zone", zone}};
    m.seed = config.seed;
    m.started_ms = started;
    write_manifest(o.out_dir, m);

    emit(summary);
}

// ---------------------------------------------------------------------------
// report

struct ReportOpts {
    std::string input;
    std::string out_dir;
};

struct Rendered {
    std::string kind;
    std::string csv;
    size_t rows = 0;
};

Rendered render_sim_summary(const json& j) {
    Rendered r;
    r.kind = "sim-summary";
    std::set<std::string> attackers;
    if (j.contains("attackers"))
        for (const auto& a : j["attackers"]) attackers.insert(a.get<std::string>());
    std::ostringstream csv;
    csv << "address,share,attacker\n";
    for (const auto& [address, share] : j.at("share").items()) {
        csv << address << ',' << num(share.get<double>()) << ','
            << (attackers.count(address) ? 1 : 0) << "\n";
        ++r.rows;
    }
    r.csv = csv.str();
    return r;
}

Rendered render_snapshot(const json& j) {
    Rendered r;
    r.kind = "store-snapshot";
    struct ZoneAgg {
        size_t servers = 0;
        int64_t aggregate = 0;
        size_t monitor_only = 0;
    };
    std::map<std::string, ZoneAgg> per_zone;
    for (const auto& [id, server] : j.at("servers").items()) {
        if (server.value("deleted", false)) continue;
        int64_t speed = server.at("netspeed_kbps").get<int64_t>();
        for (const auto& z : server.at("zones")) {
            auto& agg = per_zone[z.get<std::string>()];
            ++agg.servers;
            agg.aggregate += speed;
            agg.monitor_only += speed == 0 ? 1 : 0;
        }
    }
    std::ostringstream csv;
    csv << "zone,servers,aggregate_netspeed_kbps,monitor_only\n";
    for (const auto& [zone, agg] : per_zone) {
        csv << zone << ',' << agg.servers << ',' << agg.aggregate << ','
            << agg.monitor_only << "\n";
        ++r.rows;
    }
    r.csv = csv.str();
    return r;
}

Rendered render_funnel(const json& j) {
    Rendered r;
    r.kind = "funnel";
    std::ostringstream csv;
    csv << "metric,value\n";
    for (const char* key : {"total_active", "after_dealias", "after_account", "after_asn"}) {
        csv << key << ',' << j.at(key).get<int64_t>() << "\n";
        ++r.rows;
    }
    csv << "independent_fraction," << num(j.at("independent_fraction").get<double>())
        << "\n";
    ++r.rows;
    r.csv = csv.str();
    return r;
}

Rendered render_fingerprints(const std::vector<std::string>& lines) {
    Rendered r;
    r.kind = "fingerprints";
    std::map<std::pair<int, int>, size_t> counts;  // (version, stratum) -> n
    for (const auto& line : lines) {
        json j = json::parse(line);
        ++counts[{j.at("version").get<int>(), j.at("stratum").get<int>()}];
    }
    std::ostringstream csv;
    csv << "version,stratum,count\n";
    for (const auto& [key, n] : counts) {
        csv << key.first << ',' << key.second << ',' << n << "\n";
        ++r.rows;
    }
    r.csv = csv.str();
    return r;
}

Rendered render_clusters(const std::vector<std::string>& lines) {
    Rendered r;
    r.kind = "clusters";
    std::ostringstream csv;
    csv << "cluster_id,size,contains_stratum1,covering_prefix_v4,covering_prefix_v6\n";
    for (const auto& line : lines) {
        json j = json::parse(line);
        auto prefix = [&j](const char* key) -> std::string {
            if (!j.contains(key) || j[key].is_null()) return "";
            return j[key].get<std::string>();
        };
        csv << j.at("cluster_id").get<int64_t>() << ',' << j.at("members").size() << ','
            << (j.value("contains_stratum1", false) ? 1 : 0) << ','
            << prefix("covering_prefix_v4") << ',' << prefix("covering_prefix_v6")
            << "\n";
        ++r.rows;
    }
    r.csv = csv.str();
    return r;
}

Rendered render_windows(const std::vector<std::string>& lines) {
    Rendered r;
    r.kind = "sim-windows";
    std::map<int64_t, std::pair<int64_t, int64_t>> per_window;  // start -> (dns, ntp)
    for (size_t i = 1; i < lines.size(); ++i) {
        auto fields = apportion::detail::split_fields(lines[i], ',');
        if (fields.size() != 5)
            throw ParseError("windows row " + std::to_string(i + 1) +
                             ": expected 5 fields");
        int64_t start = std::stoll(fields[0]);
        int64_t count = std::stoll(fields[4]);
        auto& agg = per_window[start];
        if (fields[1] == "dns_first")
            agg.first += count;
        else
            agg.second += count;
    }
    std::ostringstream csv;
    csv << "window_start_s,dns_first_total,ntp_total\n";
    for (const auto& [start, agg] : per_window) {
        csv << start << ',' << agg.first << ',' << agg.second << "\n";
        ++r.rows;
    }
    r.csv = csv.str();
    return r;
}

void run_report(const ReportOpts& o) {
    int64_t started = wall_ms();
    auto bytes = slurp(o.input);

    std::vector<std::string> lines;
    {
        std::istringstream in(bytes);
        std::string line;
        while (std::getline(in, line))
            if (!line.empty()) lines.push_back(line);
    }
    if (lines.empty()) throw ParseError("empty report input: " + o.input);

    // Line-oriented artifacts are recognized by their first object's keys;
    // pretty-printed JSON artifacts fall through to a whole-file parse.
    auto dispatch = [&lines](const json& j) -> std::optional<Rendered> {
        if (!j.is_object()) return std::nullopt;
        if (j.contains("refid_hex")) return render_fingerprints(lines);
        if (j.contains("members")) return render_clusters(lines);
        if (j.contains("attacker_share")) return render_sim_summary(j);
        if (j.contains("servers") && j.contains("format_version"))
            return render_snapshot(j);
        if (j.contains("total_active")) return render_funnel(j);
        return std::nullopt;
    };

    Rendered rendered;
    std::optional<Rendered> hit = dispatch(json::parse(lines[0], nullptr, false));
    if (!hit) hit = dispatch(json::parse(bytes, nullptr, false));
    if (hit)
        rendered = std::move(*hit);
    else if (lines[0] == "window_start_s,record,zone,address,count")
        rendered = render_windows(lines);
    else
        throw ParseError("unrecognized report input: " + o.input);

    fs::create_directories(o.out_dir);
    write_text(fs::path(o.out_dir) / "report.csv", rendered.csv);

    Manifest m;
    m.subcommand = "report";
    m.inputs = {o.input};
    m.config = {{"input", o.input}, {"kind", rendered.kind}};
    m.started_ms = started;
    write_manifest(o.out_dir, m);

    emit({{"kind", rendered.kind}, {"rows", rendered.rows}});
}

void emit_error(const std::string& type, const std::string& message) {
    json e = {{"error", {{"type", type}, {"message", message}}}};
    std::cerr << e.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"NTP pool measurement and stress toolkit"};
    app.set_version_flag("--version", std::string(kToolVersion));
    app.require_subcommand(1);

    ScrapeOpts scrape_opts;
    auto* scrape = app.add_subcommand("scrape", "Enumerate pool servers into a state directory");
    scrape->add_option("--base-url", scrape_opts.base_url, "Pool website base URL")->required();
    scrape->add_option("--state-dir", scrape_opts.state_dir, "State directory")->required();
    scrape->add_option("--start-id", scrape_opts.start_id, "First server id to poll (default: resume)");
    scrape->add_option("--max-records", scrape_opts.max_records, "Stop after this many records (0 = all)");
    scrape->add_option("--mean-interval-ms", scrape_opts.mean_interval_ms, "Mean inter-request interval");
    scrape->add_option("--retries", scrape_opts.retries, "HTTP retries per request");

    AnswersOpts answers_opts;
    auto* answers = app.add_subcommand("answers", "Poll DNS answer counters for known servers");
    answers->add_option("--base-url", answers_opts.base_url, "Pool website base URL")->required();
    answers->add_option("--state-dir", answers_opts.state_dir, "State directory")->required();
    answers->add_option("--address", answers_opts.addresses, "Only these addresses (repeatable)");
    answers->add_option("--mean-interval-ms", answers_opts.mean_interval_ms, "Mean inter-request interval");
    answers->add_option("--retries", answers_opts.retries, "HTTP retries per request");

    FingerprintOpts fp_opts;
    auto* fp = app.add_subcommand("fingerprint", "Probe targets and record fingerprints");
    fp->add_option("--targets", fp_opts.targets, "File of addresses, one per line")->required();
    fp->add_option("--out-dir", fp_opts.out_dir, "Output directory")->required();
    fp->add_option("--port", fp_opts.port, "Target UDP port");
    fp->add_option("--probes", fp_opts.probes, "Probes per target");
    fp->add_option("--window-ms", fp_opts.window_ms, "Spread probes across this window");
    fp->add_option("--timeout-ms", fp_opts.timeout_ms, "Per-probe response timeout");
    fp->add_option("--retries", fp_opts.retries, "Retries per unanswered probe");
    fp->add_option("--max-pps", fp_opts.max_pps, "Global probe rate cap");
    fp->add_option("--workers", fp_opts.workers, "Concurrent probe workers");
    fp->add_option("--seed", fp_opts.seed, "Seed for probe tokens and jitter");
    fp->add_flag("--no-weak-hints", fp_opts.no_weak_hints, "Skip TTL/TOS collection");

    DealiasOpts dealias_opts;
    auto* dealias = app.add_subcommand("dealias", "Cluster fingerprints into alias groups");
    dealias->add_option("--fingerprints", dealias_opts.fingerprints, "fingerprints.jsonl")->required();
    dealias->add_option("--out-dir", dealias_opts.out_dir, "Output directory")->required();
    dealias->add_option("--window-ms", dealias_opts.window_ms, "Comparability window");
    dealias->add_option("--accounts", dealias_opts.accounts, "Account map for consistency tally");
    dealias->add_option("--prefixes", dealias_opts.prefixes, "Prefix table for consistency tally");

    auto* analyze = app.add_subcommand("analyze", "Offline independence analytics");
    analyze->require_subcommand(1);

    FunnelOpts funnel_opts;
    auto* funnel = analyze->add_subcommand("funnel", "Dealias, account, and ASN collapse");
    funnel->add_option("--servers", funnel_opts.servers, "Active server addresses, one per line")->required();
    funnel->add_option("--clusters", funnel_opts.clusters, "clusters.jsonl")->required();
    funnel->add_option("--accounts", funnel_opts.accounts, "'address account_id' lines")->required();
    funnel->add_option("--prefixes", funnel_opts.prefixes, "'prefix/length ASN' lines")->required();
    funnel->add_option("--out-dir", funnel_opts.out_dir, "Output directory")->required();

    IidOpts iid_opts;
    auto* iid = analyze->add_subcommand("iid", "Classify IPv6 interface identifiers");
    iid->add_option("--addresses", iid_opts.addresses, "IPv6 addresses, one per line")->required();
    iid->add_option("--out-dir", iid_opts.out_dir, "Output directory")->required();
    iid->add_option("--privacy-min-bits", iid_opts.privacy_min_bits, "Entropy bits to call an IID random");

    LifetimesOpts life_opts;
    auto* lifetimes = analyze->add_subcommand("lifetimes", "Lifetime and availability from score rows");
    lifetimes->add_option("--scores", life_opts.scores, "'server_id,ts,score' rows")->required();
    lifetimes->add_option("--out-dir", life_opts.out_dir, "Output directory")->required();
    lifetimes->add_option("--threshold", life_opts.threshold, "Active-score threshold");

    AnycastOpts anycast_opts;
    auto* anycast = analyze->add_subcommand("anycast", "Flag multi-continent anycast candidates");
    anycast->add_option("--zones", anycast_opts.zones, "zone,address,netspeed_kbps,active rows")->required();
    anycast->add_option("--out-dir", anycast_opts.out_dir, "Output directory")->required();

    PlanOpts plan_opts;
    auto* plan = app.add_subcommand("plan", "Size zone monopoly attacks or estimate query rate");
    plan->add_option("--zones", plan_opts.zones, "zone,address,netspeed_kbps,active rows");
    plan->add_option("--f", plan_opts.f_text, "Target answer fraction, e.g. 0.5");
    plan->add_option("--m", plan_opts.m_kbps, "Per-attack-server netspeed, kbps");
    plan->add_option("--rates", plan_opts.rates, "zone,v4_per_sec,v6_per_sec rows");
    plan->add_option("--out-dir", plan_opts.out_dir, "Output directory")->required();

    SimulateOpts sim_opts;
    auto* simulate = app.add_subcommand("simulate", "Run a pool scenario");
    simulate->add_option("--scenario", sim_opts.scenario, "Scenario JSON file")->required();
    simulate->add_option("--seed", sim_opts.seed, "Override the scenario seed");
    simulate->add_option("--zone", sim_opts.zone, "Zone to summarize (default: attack zone)");
    simulate->add_option("--out-dir", sim_opts.out_dir, "Output directory")->required();

    ReportOpts report_opts;
    auto* report = app.add_subcommand("report", "Render a plot-ready table from any artifact");
    report->add_option("--input", report_opts.input, "Prior artifact (jsonl, json, or csv)")->required();
    report->add_option("--out-dir", report_opts.out_dir, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        emit_error("usage", e.what());
        return 2;
    }

    try {
        if (*scrape) run_scrape(scrape_opts);
        else if (*answers) run_answers(answers_opts);
        else if (*fp) run_fingerprint(fp_opts);
        else if (*dealias) run_dealias(dealias_opts);
        else if (*funnel) run_funnel(funnel_opts);
        else if (*iid) run_iid(iid_opts);
        else if (*lifetimes) run_lifetimes(life_opts);
        else if (*anycast) run_anycast(anycast_opts);
        else if (*plan) run_plan(plan_opts);
        else if (*simulate) run_simulate(sim_opts);
        else if (*report) run_report(report_opts);
    } catch (const ParseError& e) {
        emit_error("input", e.what());
        return 3;
    } catch (const ValidationError& e) {
        emit_error("input", e.what());
        return 3;
    } catch (const WireError& e) {
        emit_error("input", e.what());
        return 3;
    } catch (const NetworkError& e) {
        emit_error("network", e.what());
        return 4;
    } catch (const ProtocolError& e) {
        emit_error("network", e.what());
        return 4;
    } catch (const std::exception& e) {
        emit_error("internal", e.what());
        return 5;
    }
    return 0;
}
