#include <gtest/gtest.h>

#include <cstdlib>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "aspectcheck/backend.hpp"
#include "aspectcheck/error.hpp"
#include "test_support.hpp"

using namespace aspectcheck;

namespace {

class LocalServer {
public:
    explicit LocalServer(std::function<void(const httplib::Request&, httplib::Response&)> handler) {
        server_.Post("/v1/chat/completions", std::move(handler));
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~LocalServer() {
        server_.stop();
        thread_.join();
    }
    std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

private:
    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
};

std::string reply(const std::string& content) {
    return nlohmann::json{{"choices", {{{"message", {{"role", "assistant"}, {"content", content}}}}}}}.dump();
}

HttpBackendConfig config_for(const LocalServer& s) {
    HttpBackendConfig c;
    c.base_url = s.url();
    c.model = "test-model";
    c.api_key_env = "ASPECTCHECK_TEST_KEY";
    c.initial_backoff = std::chrono::milliseconds(1);
    c.timeout = std::chrono::seconds(5);
    return c;
}

}  // namespace

TEST(Sha256, KnownVector) {
    EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(HttpBackend, SendsChatCompletionShape) {
    ::setenv("ASPECTCHECK_TEST_KEY", "secret", 1);
    nlohmann::json seen;
    std::string auth;
    LocalServer server([&](const httplib::Request& req, httplib::Response& res) {
        seen = nlohmann::json::parse(req.body);
        auth = req.get_header_value("Authorization");
        res.set_content(reply("Rating: 4"), "application/json");
    });
    HttpBackend backend(config_for(server));
    EXPECT_EQ(backend.complete("PROMPT", 1.0, 3), "Rating: 4");
    EXPECT_EQ(seen["model"], "test-model");
    EXPECT_EQ(seen["temperature"], 1.0);
    EXPECT_EQ(seen["messages"][0]["role"], "system");
    EXPECT_EQ(seen["messages"][1]["content"], "PROMPT");
    EXPECT_EQ(auth, "Bearer secret");
    EXPECT_EQ(backend.identity(), "http:test-model@" + server.url());
}

TEST(HttpBackend, RetriesRateLimitThenSucceeds) {
    ::setenv("ASPECTCHECK_TEST_KEY", "secret", 1);
    std::atomic<int> hits{0};
    LocalServer server([&](const httplib::Request&, httplib::Response& res) {
        if (hits++ < 2) {
            res.status = hits == 1 ? 429 : 503;
            return;
        }
        res.set_content(reply("ok"), "application/json");
    });
    HttpBackend backend(config_for(server));
    EXPECT_EQ(backend.complete("p", 0.0, 0), "ok");
    EXPECT_EQ(hits.load(), 3);
}

TEST(HttpBackend, GivesUpAndFailsFastOnClientErrors) {
    ::setenv("ASPECTCHECK_TEST_KEY", "secret", 1);
    std::atomic<int> hits{0};
    LocalServer server([&](const httplib::Request& req, httplib::Response& res) {
        ++hits;
        res.status = req.body.find("bad") != std::string::npos ? 400 : 500;
    });
    auto cfg = config_for(server);
    cfg.max_retries = 2;
    HttpBackend backend(cfg);
    EXPECT_THROW(backend.complete("p", 0.0, 0), BackendError);
    EXPECT_EQ(hits.load(), 3);
    hits = 0;
    EXPECT_THROW(backend.complete("bad", 0.0, 0), BackendError);
    EXPECT_EQ(hits.load(), 1);
}

TEST(HttpBackend, MissingKeyAndMalformedBody) {
    ::unsetenv("ASPECTCHECK_TEST_KEY_MISSING");
    HttpBackendConfig cfg;
    cfg.api_key_env = "ASPECTCHECK_TEST_KEY_MISSING";
    EXPECT_THROW(HttpBackend{cfg}, BackendError);

    LocalServer server([](const httplib::Request&, httplib::Response& res) { res.set_content("{}", "application/json"); });
    auto c = config_for(server);
    c.api_key_env.clear();
    HttpBackend backend(c);
    EXPECT_THROW(backend.complete("p", 0.0, 0), BackendError);
}

TEST(CachingBackend, ReplaysWithoutInnerCalls) {
    test_support::TempDir dir;
    auto inner = std::make_shared<ScriptedBackend>(
        [](const std::string& p, double t, int i) { return p + "|" + std::to_string(t) + "|" + std::to_string(i); });
    CachingBackend cache("scripted", dir.path(), inner);
    auto a = cache.complete("hello", 1.0, 2);
    EXPECT_EQ(inner->calls(), 1u);
    EXPECT_EQ(cache.complete("hello", 1.0, 2), a);
    EXPECT_EQ(inner->calls(), 1u);
    EXPECT_EQ(cache.hits(), 1u);
    cache.complete("hello", 1.0, 3);
    cache.complete("hello", 0.5, 2);
    EXPECT_EQ(inner->calls(), 3u);

    CachingBackend offline("scripted", dir.path(), nullptr);
    EXPECT_EQ(offline.complete("hello", 1.0, 2), a);
    EXPECT_THROW(offline.complete("never seen", 1.0, 0), CacheMissError);

    CachingBackend other_identity("other", dir.path(), nullptr);
    EXPECT_THROW(other_identity.complete("hello", 1.0, 2), CacheMissError);
}

TEST(CachingBackend, KeyCoversEveryField) {
    auto k = CachingBackend::cache_key("id", "p", 1.0, 0);
    EXPECT_EQ(k.size(), 64u);
    EXPECT_NE(k, CachingBackend::cache_key("id2", "p", 1.0, 0));
    EXPECT_NE(k, CachingBackend::cache_key("id", "p2", 1.0, 0));
    EXPECT_NE(k, CachingBackend::cache_key("id", "p", 0.7, 0));
    EXPECT_NE(k, CachingBackend::cache_key("id", "p", 1.0, 1));
    // Field boundaries are unambiguous.
    EXPECT_NE(CachingBackend::cache_key("ab", "c", 1.0, 0), CachingBackend::cache_key("a", "bc", 1.0, 0));
}

TEST(CachingBackend, ConcurrentWriters) {
    test_support::TempDir dir;
    auto inner = std::make_shared<ScriptedBackend>([](const std::string& p, double, int i) { return p + std::to_string(i); });
    CachingBackend cache("s", dir.path(), inner);
    std::vector<std::jthread> threads;
    for (int t = 0; t < 8; ++t)
        threads.emplace_back([&] {
            for (int i = 0; i < 50; ++i) EXPECT_EQ(cache.complete("p", 1.0, i), "p" + std::to_string(i));
        });
    threads.clear();
    CachingBackend offline("s", dir.path(), nullptr);
    for (int i = 0; i < 50; ++i) EXPECT_EQ(offline.complete("p", 1.0, i), "p" + std::to_string(i));
}
