#pragma once

#include "narralyze/providers.hpp"

#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>

#include <memory>
#include <mutex>
#include <string>

namespace narralyze::providers {

/// Transport over cpp-httplib. `base_url` is "scheme://host[:port][/prefix]".
class HttpTransport : public Transport {
public:
    explicit HttpTransport(const std::string& base_url, std::chrono::seconds timeout = std::chrono::seconds(60))
        : timeout_(timeout) {
        const auto scheme_end = base_url.find("://");
        if (scheme_end == std::string::npos) throw ValidationError("base_url must include a scheme: " + base_url);
        const auto path_start = base_url.find('/', scheme_end + 3);
        origin_ = base_url.substr(0, path_start);
        prefix_ = path_start == std::string::npos ? "" : base_url.substr(path_start);
        while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
    }

    HttpResponse post(const std::string& path, const std::string& body,
                      const std::map<std::string, std::string>& headers) override {
        // httplib::Client is not safe for concurrent requests; one per call.
        httplib::Client client(origin_);
        client.set_connection_timeout(timeout_);
        client.set_read_timeout(timeout_);
        client.set_write_timeout(timeout_);
        httplib::Headers h;
        std::string content_type = "application/json";
        for (const auto& [k, v] : headers) {
            if (k == "Content-Type")
                content_type = v;
            else
                h.emplace(k, v);
        }
        auto res = client.Post(prefix_ + path, h, body, content_type);
        if (!res) throw TransportError("POST " + origin_ + prefix_ + path + " failed: " + httplib::to_string(res.error()));
        return {res->status, res->body};
    }

private:
    std::string origin_;
    std::string prefix_;
    std::chrono::seconds timeout_;
};

} // namespace narralyze::providers
