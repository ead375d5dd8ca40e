#include "narralyze/coherence.hpp"
#include "narralyze/evaluator.hpp"
#include "narralyze/http_transport.hpp"
#include "narralyze/providers.hpp"

#include <gtest/gtest.h>

#include <atomic>
#include <deque>
#include <filesystem>
#include <thread>

using namespace narralyze;
using namespace narralyze::providers;

namespace {

/// Replays scripted responses; a status of -1 simulates a transport failure.
class ScriptedTransport : public Transport {
public:
    explicit ScriptedTransport(std::deque<HttpResponse> script) : script_(std::move(script)) {}

    HttpResponse post(const std::string& path, const std::string& body,
                      const std::map<std::string, std::string>& headers) override {
        std::lock_guard lock(mutex_);
        ++calls;
        last_path = path;
        last_body = body;
        last_headers = headers;
        if (script_.empty()) return {200, R"({"ok":true})"};
        auto r = script_.front();
        script_.pop_front();
        if (r.status == -1) throw TransportError("connection reset");
        return r;
    }

    int calls = 0;
    std::string last_path, last_body;
    std::map<std::string, std::string> last_headers;

private:
    std::mutex mutex_;
    std::deque<HttpResponse> script_;
};

ProviderConfig config(std::filesystem::path cache = {}) {
    ProviderConfig c;
    c.model_id = "m";
    c.api_key_env = "";
    c.cache_dir = std::move(cache);
    c.retry.base_delay = std::chrono::milliseconds(100);
    return c;
}

struct Sleeps {
    std::vector<std::chrono::milliseconds> log;
    Sleeper fn() {
        return [this](std::chrono::milliseconds d) { log.push_back(d); };
    }
};

std::filesystem::path fresh_dir(const std::string& name) {
    auto d = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(d);
    return d;
}

} // namespace

TEST(Client, RetriesTransientFailuresWithGrowingBackoff) {
    auto t = std::make_shared<ScriptedTransport>(std::deque<HttpResponse>{{429, ""}, {-1, ""}, {503, ""}, {200, R"({"v":1})"}});
    Sleeps sleeps;
    Client c(config(), t, sleeps.fn());
    EXPECT_EQ(c.call("/x", {{"a", 1}})["v"], 1);
    EXPECT_EQ(t->calls, 4);
    ASSERT_EQ(sleeps.log.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) {
        const auto base = 100.0 * (1 << i);
        EXPECT_GE(sleeps.log[i].count(), 0.5 * base);
        EXPECT_LE(sleeps.log[i].count(), 1.5 * base);
    }
    EXPECT_EQ(c.stats().retries, 3u);
}

TEST(Client, GivesUpAfterMaxAttempts) {
    auto t = std::make_shared<ScriptedTransport>(std::deque<HttpResponse>(10, HttpResponse{500, ""}));
    Sleeps sleeps;
    Client c(config(), t, sleeps.fn());
    EXPECT_THROW(c.call("/x", {}), RetriesExhaustedError);
    EXPECT_EQ(t->calls, 4);
}

TEST(Client, AuthAndClientErrorsAreNotRetried) {
    auto t = std::make_shared<ScriptedTransport>(std::deque<HttpResponse>{{401, ""}, {400, "bad"}, {200, "not json"}});
    Sleeps sleeps;
    Client c(config(), t, sleeps.fn());
    EXPECT_THROW(c.call("/x", {{"k", 1}}), AuthError);
    EXPECT_THROW(c.call("/x", {{"k", 2}}), ProviderError);
    EXPECT_THROW(c.call("/x", {{"k", 3}}), ProtocolError);
    EXPECT_EQ(t->calls, 3);
    EXPECT_TRUE(sleeps.log.empty());
}

TEST(Client, CachesByContentAndServesOffline) {
    const auto dir = fresh_dir("narralyze_client_cache");
    auto t = std::make_shared<ScriptedTransport>(std::deque<HttpResponse>{{200, R"({"v":7})"}});
    {
        Client c(config(dir), t);
        EXPECT_EQ(c.call("/x", {{"q", "a"}})["v"], 7);
        EXPECT_EQ(c.call("/x", {{"q", "a"}})["v"], 7);
        EXPECT_EQ(t->calls, 1);
        const auto key = Client::request_key("/x", {{"q", "a"}});
        EXPECT_TRUE(std::filesystem::exists(dir / key.substr(0, 2) / (key + ".json")));
    }
    auto cfg = config(dir);
    cfg.offline = true;
    Client off(cfg, t);
    EXPECT_EQ(off.call("/x", {{"q", "a"}})["v"], 7);
    EXPECT_THROW(off.call("/x", {{"q", "b"}}), OfflineCacheMissError);
    EXPECT_EQ(t->calls, 1);
    std::filesystem::remove_all(dir);
}

TEST(Client, MissingApiKeyOnlyMattersOnCacheMiss) {
    const auto dir = fresh_dir("narralyze_client_key");
    auto t = std::make_shared<ScriptedTransport>(std::deque<HttpResponse>{});
    Client seed(config(dir), t);
    seed.call("/x", {{"q", 1}});
    auto cfg = config(dir);
    cfg.api_key_env = "NARRALYZE_TEST_UNSET_KEY";
    ::unsetenv("NARRALYZE_TEST_UNSET_KEY");
    Client c(cfg, t);
    EXPECT_NO_THROW(c.call("/x", {{"q", 1}}));
    EXPECT_THROW(c.call("/x", {{"q", 2}}), AuthError);
    ::setenv("NARRALYZE_TEST_UNSET_KEY", "sk-test", 1);
    c.call("/x", {{"q", 3}});
    EXPECT_EQ(t->last_headers.at("Authorization"), "Bearer sk-test");
    std::filesystem::remove_all(dir);
}

namespace {

class SlowTransport : public Transport {
public:
    HttpResponse post(const std::string&, const std::string&, const std::map<std::string, std::string>&) override {
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
        return {200, "{}"};
    }
};

} // namespace

TEST(Client, InFlightLimitIsRespected) {
    auto cfg = config();
    cfg.max_in_flight = 2;
    Client c(cfg, std::make_shared<SlowTransport>());
    std::vector<std::thread> threads;
    for (int i = 0; i < 8; ++i) threads.emplace_back([&, i] { c.call("/x", {{"i", i}}); });
    for (auto& th : threads) th.join();
    EXPECT_LE(c.limiter().peak(), 2);
    EXPECT_EQ(c.stats().network_calls, 8u);
}

TEST(RemoteEmbedder, ParsesAndChecksDimension) {
    auto t = std::make_shared<ScriptedTransport>(std::deque<HttpResponse>{
        {200, R"({"data":[{"index":1,"embedding":[0,1]},{"index":0,"embedding":[1,0]}]})"},
        {200, R"({"data":[{"index":0,"embedding":[1,0,0]}]})"}});
    auto client = std::make_shared<Client>(config(), t);
    coherence::RemoteEmbedder e(client, 2);
    const auto v = e.embed({"a", "b"});
    EXPECT_EQ(v[0], (coherence::Embedding{1, 0}));
    EXPECT_EQ(t->last_path, "/embeddings");
    EXPECT_EQ(nlohmann::json::parse(t->last_body)["input"].size(), 2u);
    try {
        e.embed({"c"});
        FAIL();
    } catch (const ProtocolError& err) {
        EXPECT_NE(std::string(err.what()).find("expected 2"), std::string::npos);
    }
}

TEST(HttpTransport, TalksToLocalServer) {
    httplib::Server server;
    std::atomic<int> hits{0};
    server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        ++hits;
        if (hits == 1) {
            res.status = 503;
            return;
        }
        const auto body = nlohmann::json::parse(req.body);
        nlohmann::json reply = {{"choices", {{{"message", {{"role", "assistant"}, {"content", body["model"]}}}}}}};
        res.set_content(reply.dump(), "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread th([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    auto cfg = config();
    cfg.base_url = "http://127.0.0.1:" + std::to_string(port) + "/v1";
    cfg.retry.base_delay = std::chrono::milliseconds(1);
    Client c(cfg, std::make_shared<HttpTransport>(cfg.base_url, std::chrono::seconds(5)));
    const auto r = c.call("/chat/completions", {{"model", "m"}});
    EXPECT_EQ(r["choices"][0]["message"]["content"], "m");
    EXPECT_EQ(hits, 2);

    server.stop();
    th.join();
    Client dead(cfg, std::make_shared<HttpTransport>(cfg.base_url, std::chrono::seconds(1)));
    EXPECT_THROW(dead.call("/chat/completions", {{"model", "x"}}), RetriesExhaustedError);
}
