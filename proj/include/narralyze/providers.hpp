#pragma once

// Remote-service client plumbing shared by the embedding and chat layers:
// bearer auth, bounded retries with jittered exponential backoff, an
// in-flight limit and a content-addressed persistent cache.

#include "narralyze/error.hpp"
#include "narralyze/hash.hpp"
#include "narralyze/random.hpp"

#include <json.hpp>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>

namespace narralyze::providers {

using json = nlohmann::json;

struct RetryPolicy {
    int max_attempts = 4;
    std::chrono::milliseconds base_delay{500};
};

struct ProviderConfig {
    std::string base_url = "https://api.openai.com/v1";
    std::string model_id;
    std::string api_key_env = "OPENAI_API_KEY";
    int max_in_flight = 4;
    RetryPolicy retry;
    std::filesystem::path cache_dir;  // empty = in-memory cache only
    bool offline = false;
    std::chrono::seconds timeout{60};

    void validate() const {
        if (retry.max_attempts < 1) throw ValidationError("retry.max_attempts must be >= 1");
        if (max_in_flight < 1) throw ValidationError("max_in_flight must be >= 1");
    }
};

struct HttpResponse {
    int status = 0;
    std::string body;
};

/// Raised by transports for connection failures and timeouts (retryable).
class TransportError : public ProviderError {
public:
    using ProviderError::ProviderError;
};

/// POSTs a JSON body to `path` relative to the provider's base URL.
class Transport {
public:
    virtual ~Transport() = default;
    virtual HttpResponse post(const std::string& path, const std::string& body,
                              const std::map<std::string, std::string>& headers) = 0;
};

/// Key/value store of JSON documents laid out as {dir}/{key[0:2]}/{key}.json.
/// Falls back to memory when no directory is configured. Writes are serialized.
class ContentStore {
public:
    explicit ContentStore(std::filesystem::path dir = {}) : dir_(std::move(dir)) {}

    std::filesystem::path path_for(const std::string& key) const {
        return dir_ / key.substr(0, 2) / (key + ".json");
    }

    std::optional<json> get(const std::string& key) const {
        std::lock_guard lock(mutex_);
        if (dir_.empty()) {
            auto it = memory_.find(key);
            if (it == memory_.end()) return std::nullopt;
            return it->second;
        }
        std::ifstream in(path_for(key), std::ios::binary);
        if (!in) return std::nullopt;
        try {
            return json::parse(in);
        } catch (const json::parse_error&) {
            return std::nullopt;  // torn or foreign file: treat as a miss
        }
    }

    void put(const std::string& key, const json& value) {
        std::lock_guard lock(mutex_);
        if (dir_.empty()) {
            memory_[key] = value;
            return;
        }
        const auto target = path_for(key);
        std::filesystem::create_directories(target.parent_path());
        auto tmp = target;
        tmp += ".tmp";
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            if (!out) throw Error("cannot write cache file: " + tmp.string());
            out << value.dump();
        }
        std::filesystem::rename(tmp, target);
    }

    const std::filesystem::path& dir() const { return dir_; }

private:
    std::filesystem::path dir_;
    mutable std::mutex mutex_;
    std::map<std::string, json> memory_;
};

/// Counting gate bounding concurrent requests.
class InFlightLimiter {
public:
    explicit InFlightLimiter(int limit) : limit_(limit) {}

    void acquire() {
        std::unique_lock lock(mutex_);
        cv_.wait(lock, [&] { return active_ < limit_; });
        ++active_;
        peak_ = std::max(peak_, active_);
    }
    void release() {
        {
            std::lock_guard lock(mutex_);
            --active_;
        }
        cv_.notify_one();
    }
    int peak() const {
        std::lock_guard lock(mutex_);
        return peak_;
    }

private:
    int limit_;
    int active_ = 0;
    int peak_ = 0;
    mutable std::mutex mutex_;
    std::condition_variable cv_;
};

struct ClientStats {
    std::atomic<std::size_t> network_calls{0};
    std::atomic<std::size_t> cache_hits{0};
    std::atomic<std::size_t> retries{0};
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;

/// Cached, retrying JSON-over-HTTP client. Shareable across threads.
class Client {
public:
    Client(ProviderConfig config, std::shared_ptr<Transport> transport, Sleeper sleeper = {})
        : config_(std::move(config)),
          transport_(std::move(transport)),
          cache_(config_.cache_dir),
          limiter_(config_.max_in_flight),
          sleeper_(sleeper ? std::move(sleeper)
                           : Sleeper([](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); })),
          jitter_(fnv1a64(config_.base_url + config_.model_id)) {
        config_.validate();
    }

    /// Content hash of a request: endpoint plus canonical body.
    static std::string request_key(const std::string& path, const json& body) {
        return sha256_hex(json{{"endpoint", path}, {"body", body}}.dump());
    }

    /// Cache lookup, then HTTP with retries on 429/5xx/transport failures, then cache write.
    json call(const std::string& path, const json& body) {
        const auto key = request_key(path, body);
        const json request = {{"endpoint", path}, {"body", body}};
        if (auto hit = cache_.get(key); hit && hit->contains("request") && (*hit)["request"] == request) {
            ++stats_.cache_hits;
            return (*hit)["response"];
        }
        if (config_.offline)
            throw OfflineCacheMissError("offline mode: no cached response for " + path + " (key " + key + ")");
        json response = fetch(path, body);
        cache_.put(key, json{{"request", request}, {"response", response}});
        return response;
    }

    const ClientStats& stats() const { return stats_; }
    const ProviderConfig& config() const { return config_; }
    const InFlightLimiter& limiter() const { return limiter_; }

private:
    std::map<std::string, std::string> headers() const {
        std::map<std::string, std::string> h{{"Content-Type", "application/json"}};
        if (!config_.api_key_env.empty()) {
            const char* key = std::getenv(config_.api_key_env.c_str());
            if (!key || !*key)
                throw AuthError("environment variable " + config_.api_key_env + " is not set");
            h["Authorization"] = std::string("Bearer ") + key;
        }
        return h;
    }

    std::chrono::milliseconds backoff(int attempt) {
        double u;
        {
            std::lock_guard lock(jitter_mutex_);
            u = jitter_.uniform();
        }
        const double scale = static_cast<double>(1u << std::min(attempt, 16)) * (0.5 + u);
        return std::chrono::milliseconds(
            static_cast<std::int64_t>(static_cast<double>(config_.retry.base_delay.count()) * scale));
    }

    json fetch(const std::string& path, const json& body) {
        const auto hdrs = headers();
        const auto payload = body.dump();
        std::string last_error;
        for (int attempt = 0; attempt < config_.retry.max_attempts; ++attempt) {
            if (attempt > 0) {
                ++stats_.retries;
                sleeper_(backoff(attempt - 1));
            }
            HttpResponse resp;
            limiter_.acquire();
            try {
                ++stats_.network_calls;
                resp = transport_->post(path, payload, hdrs);
            } catch (const TransportError& e) {
                limiter_.release();
                last_error = e.what();
                continue;
            } catch (...) {
                limiter_.release();
                throw;
            }
            limiter_.release();
            if (resp.status == 401 || resp.status == 403)
                throw AuthError(path + ": authentication failed (HTTP " + std::to_string(resp.status) + ")");
            if (resp.status == 429 || resp.status >= 500) {
                last_error = "HTTP " + std::to_string(resp.status);
                continue;
            }
            if (resp.status < 200 || resp.status >= 300)
                throw ProviderError(path + ": HTTP " + std::to_string(resp.status) + ": " + resp.body.substr(0, 200));
            try {
                return json::parse(resp.body);
            } catch (const json::parse_error&) {
                throw ProtocolError(path + ": response body is not JSON");
            }
        }
        throw RetriesExhaustedError(path + ": giving up after " + std::to_string(config_.retry.max_attempts) +
                                    " attempts (" + last_error + ")");
    }

    ProviderConfig config_;
    std::shared_ptr<Transport> transport_;
    ContentStore cache_;
    InFlightLimiter limiter_;
    Sleeper sleeper_;
    ClientStats stats_;
    std::mutex jitter_mutex_;
    Rng jitter_;
};

} // namespace narralyze::providers
