#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "ntpool/errors.hpp"

// In-process stand-in for the pool website, serving the same paths the real
// site exposes. Tests configure fixtures, point the client at base_url(), and
// can inspect the request log afterwards. Never touches the real pool.

namespace ntpool::pool {

class MockPool {
public:
    struct Fixture {
        int64_t id = 0;
        std::string ip;
        std::vector<std::string> zones;
        double score = 0.0;
        int64_t netspeed_kbps = 0;
        std::optional<std::string> account;
        bool deleted = false;
    };

    MockPool() {
        server_.Get(R"(/scores/(\d+))", [this](const httplib::Request& req,
                                               httplib::Response& res) {
            int64_t id = std::stoll(req.matches[1]);
            std::lock_guard<std::mutex> hold(mutex_);
            auto it = servers_.find(id);
            if (it == servers_.end()) {
                res.status = 404;
                res.set_content("not found", "text/plain");
                return;
            }
            res.set_redirect("/scores/" + it->second.ip, 301);
        });
        server_.Get(R"(/scores/([^/]+)/json)", [this](const httplib::Request& req,
                                                      httplib::Response& res) {
            std::lock_guard<std::mutex> hold(mutex_);
            const Fixture* fixture = find_by_ip(req.matches[1]);
            if (!fixture) {
                res.status = 404;
                res.set_content("not found", "text/plain");
                return;
            }
            nlohmann::json server = {
                {"id", fixture->id},           {"ip", fixture->ip},
                {"zones", fixture->zones},     {"score", fixture->score},
                {"netspeed", fixture->netspeed_kbps},
                {"deleted", fixture->deleted},
            };
            if (fixture->account) server["account"] = *fixture->account;
            res.set_content(nlohmann::json{{"server", server}}.dump(), "application/json");
        });
        server_.Get(R"(/scores/([^/]+))", [this](const httplib::Request& req,
                                                 httplib::Response& res) {
            std::lock_guard<std::mutex> hold(mutex_);
            const Fixture* fixture = find_by_ip(req.matches[1]);
            if (!fixture) {
                res.status = 404;
                res.set_content("not found", "text/plain");
                return;
            }
            res.set_content("<html>scores page for " + fixture->ip + "</html>",
                            "text/html");
        });
        server_.Get(R"(/api/data/server/dns/answers/([^/]+))",
                    [this](const httplib::Request& req, httplib::Response& res) {
                        std::lock_guard<std::mutex> hold(mutex_);
                        auto it = answers_.find(req.matches[1]);
                        if (it == answers_.end()) {
                            res.status = 404;
                            res.set_content("not found", "text/plain");
                            return;
                        }
                        nlohmann::json body = nlohmann::json::object();
                        for (const auto& [zone, count] : it->second) body[zone] = count;
                        res.set_content(body.dump(), "application/json");
                    });
        server_.Get(R"(/api/data/zone/counts/([^/]+))",
                    [this](const httplib::Request& req, httplib::Response& res) {
                        std::lock_guard<std::mutex> hold(mutex_);
                        auto it = zone_counts_.find(req.matches[1]);
                        if (it == zone_counts_.end()) {
                            res.status = 404;
                            res.set_content("not found", "text/plain");
                            return;
                        }
                        res.set_content(it->second.dump(), "application/json");
                    });
        // Raw overrides win over every route, for malformed-response tests.
        server_.set_pre_routing_handler([this](const httplib::Request& req,
                                               httplib::Response& res) {
            std::lock_guard<std::mutex> hold(mutex_);
            requests_.push_back(req.method + " " + req.path);
            auto it = raw_overrides_.find(req.path);
            if (it == raw_overrides_.end())
                return httplib::Server::HandlerResponse::Unhandled;
            res.status = it->second.first;
            res.set_content(it->second.second, "text/html");
            return httplib::Server::HandlerResponse::Handled;
        });
    }

    ~MockPool() { stop(); }

    void add_server(Fixture fixture) {
        std::lock_guard<std::mutex> hold(mutex_);
        servers_[fixture.id] = std::move(fixture);
    }

    void set_answers(const std::string& ip, std::map<std::string, int64_t> counts) {
        std::lock_guard<std::mutex> hold(mutex_);
        answers_[ip] = std::move(counts);
    }

    void clear_answers(const std::string& ip) {
        std::lock_guard<std::mutex> hold(mutex_);
        answers_.erase(ip);
    }

    void set_zone_counts(const std::string& zone, int64_t v4, int64_t v6,
                         int64_t aggregate_netspeed_kbps) {
        std::lock_guard<std::mutex> hold(mutex_);
        zone_counts_[zone] = {
            {"zone", zone},
            {"servers_v4", v4},
            {"servers_v6", v6},
            {"aggregate_netspeed_kbps", aggregate_netspeed_kbps},
        };
    }

    void set_raw(const std::string& path, int status, std::string body) {
        std::lock_guard<std::mutex> hold(mutex_);
        raw_overrides_[path] = {status, std::move(body)};
    }

    std::string start() {
        port_ = server_.bind_to_any_port("127.0.0.1");
        if (port_ <= 0) throw NetworkError("mock pool failed to bind");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        for (int i = 0; i < 200 && !server_.is_running(); ++i)
            std::this_thread::sleep_for(std::chrono::milliseconds(5));
        if (!server_.is_running()) throw NetworkError("mock pool failed to start");
        return base_url();
    }

    void stop() {
        if (thread_.joinable()) {
            server_.stop();
            thread_.join();
        }
    }

    std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_); }

    std::vector<std::string> requests() const {
        std::lock_guard<std::mutex> hold(mutex_);
        return requests_;
    }

    size_t request_count() const {
        std::lock_guard<std::mutex> hold(mutex_);
        return requests_.size();
    }

    void clear_requests() {
        std::lock_guard<std::mutex> hold(mutex_);
        requests_.clear();
    }

private:
    const Fixture* find_by_ip(const std::string& ip) const {
        for (const auto& [id, fixture] : servers_)
            if (fixture.ip == ip) return &fixture;
        return nullptr;
    }

    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
    mutable std::mutex mutex_;
    std::map<int64_t, Fixture> servers_;
    std::map<std::string, std::map<std::string, int64_t>> answers_;
    std::map<std::string, nlohmann::json> zone_counts_;
    std::map<std::string, std::pair<int, std::string>> raw_overrides_;
    std::vector<std::string> requests_;
};

}  // namespace ntpool::pool
