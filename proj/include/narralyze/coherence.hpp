#pragma once

// Layer 2: sentence splitting, embedding acquisition and the seven
// local/global semantic-coherence statistics.

#include "narralyze/error.hpp"
#include "narralyze/hash.hpp"
#include "narralyze/providers.hpp"
#include "narralyze/random.hpp"
#include "narralyze/unicode.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace narralyze::coherence {

using Embedding = std::vector<double>;

inline constexpr std::size_t kDefaultDimension = 1536;

namespace detail {

inline bool is_terminator(char32_t c) {
    return c == U'。' || c == U'！' || c == U'？' || c == U'；' || c == U'…';
}

inline bool is_closing(char32_t c) {
    switch (c) {
    case U'」': case U'』': case U'”': case U'’': case U'）': case U')': case U'】':
    case U'》': case U'〉': case U'"': case U'\'': case U']':
        return true;
    default:
        return false;
    }
}

inline std::string trim_ws(std::u32string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && unicode::is_whitespace(s[b])) ++b;
    while (e > b && unicode::is_whitespace(s[e - 1])) --e;
    return unicode::to_utf8(s.substr(b, e - b));
}

} // namespace detail

/// Splits on 。！？；… and newlines. Runs of terminators stay together and
/// closing quotes/brackets attach to the sentence they close. Fragments with
/// no letters or digits join the previous sentence, or are dropped.
inline std::vector<std::string> split_sentences(std::string_view text) {
    const auto cps = unicode::to_u32(unicode::nfc(text));
    std::vector<std::string> out;
    std::u32string current;
    auto flush = [&] {
        const bool content = std::any_of(current.begin(), current.end(), [](char32_t c) { return !unicode::is_separator(c); });
        auto s = detail::trim_ws(current);
        if (content)
            out.push_back(std::move(s));
        else if (!out.empty())
            out.back() += s;
        current.clear();
    };
    for (std::size_t i = 0; i < cps.size(); ++i) {
        const char32_t c = cps[i];
        if (c == U'\n' || c == U'\r') {
            flush();
            continue;
        }
        current.push_back(c);
        if (!detail::is_terminator(c)) continue;
        while (i + 1 < cps.size() && (detail::is_terminator(cps[i + 1]) || detail::is_closing(cps[i + 1])))
            current.push_back(cps[++i]);
        flush();
    }
    flush();
    if (out.empty()) throw DegenerateInputError("text contains no sentences");
    return out;
}

inline double norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

inline double cosine(std::span<const double> u, std::span<const double> v) {
    if (u.size() != v.size())
        throw DomainError("cosine: dimension mismatch (" + std::to_string(u.size()) + " vs " +
                          std::to_string(v.size()) + ")");
    const double nu = norm(u), nv = norm(v);
    if (nu == 0.0 || nv == 0.0) throw DomainError("cosine: zero-norm vector");
    double dot = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) dot += u[i] * v[i];
    return std::clamp(dot / (nu * nv), -1.0, 1.0);
}

struct CoherenceProfile {
    double s2s_mean = 0.0;
    double s2s_min = 0.0;
    double s2s_std = 0.0;
    double s2d_mean = 0.0;
    double s2d_std = 0.0;
    double s2d_max = 0.0;
    double s2d_min = 0.0;
    std::size_t n_sentences = 0;
    bool degenerate = false;  // fewer than two sentences: s2s_* are zero-filled

    static constexpr std::array<std::string_view, 7> kFeatureNames = {
        "s2s_mean", "s2s_min", "s2s_std", "s2d_mean", "s2d_std", "s2d_max", "s2d_min"};

    std::array<double, 7> values() const {
        return {s2s_mean, s2s_min, s2s_std, s2d_mean, s2d_std, s2d_max, s2d_min};
    }
};

namespace detail {

struct Summary {
    double mean, min, max, std;
};

/// Population statistics, two-pass for the variance.
inline Summary summarize(const std::vector<double>& xs) {
    Summary s{0.0, xs.front(), xs.front(), 0.0};
    for (double x : xs) {
        s.mean += x;
        s.min = std::min(s.min, x);
        s.max = std::max(s.max, x);
    }
    s.mean /= static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(xs.size()));
    // Rounding can push the mean a hair outside [min, max] for equal values.
    s.mean = std::clamp(s.mean, s.min, s.max);
    return s;
}

} // namespace detail

/// s2s statistics over adjacent-sentence cosines, s2d over sentence-to-document cosines.
inline CoherenceProfile coherence_profile(const std::vector<Embedding>& sentences, const Embedding& document) {
    if (sentences.empty()) throw DegenerateInputError("coherence profile needs at least one sentence");
    CoherenceProfile p;
    p.n_sentences = sentences.size();
    std::vector<double> s2d;
    s2d.reserve(sentences.size());
    for (const auto& s : sentences) s2d.push_back(cosine(s, document));
    const auto d = detail::summarize(s2d);
    p.s2d_mean = d.mean;
    p.s2d_std = d.std;
    p.s2d_max = d.max;
    p.s2d_min = d.min;
    if (sentences.size() < 2) {
        p.degenerate = true;
        return p;
    }
    std::vector<double> s2s;
    s2s.reserve(sentences.size() - 1);
    for (std::size_t i = 0; i + 1 < sentences.size(); ++i) s2s.push_back(cosine(sentences[i], sentences[i + 1]));
    const auto a = detail::summarize(s2s);
    p.s2s_mean = a.mean;
    p.s2s_min = a.min;
    p.s2s_std = a.std;
    return p;
}

// ---------------------------------------------------------------------------
// Embedding providers

class Embedder {
public:
    virtual ~Embedder() = default;
    virtual std::vector<Embedding> embed(const std::vector<std::string>& texts) = 0;
    virtual std::size_t dimension() const = 0;
    virtual std::string model_id() const = 0;
};

/// Offline, non-semantic embedder: hashed character 1- to 3-gram counts
/// projected through a seeded random sign matrix, then L2-normalized.
/// Pure function of the text; similarity tracks surface overlap only.
class MockEmbedder : public Embedder {
public:
    explicit MockEmbedder(std::size_t dimension = kDefaultDimension, std::uint64_t seed = 0x5eed,
                          std::size_t buckets = 4096)
        : dimension_(dimension), seed_(seed), buckets_(buckets), signs_(buckets * dimension) {
        if (dimension == 0 || buckets == 0) throw ValidationError("mock embedder: dimension and buckets must be > 0");
        for (std::size_t b = 0; b < buckets_; ++b) {
            Rng rng(seed_ ^ mix64(b + 1));
            for (std::size_t d = 0; d < dimension_; d += 64) {
                const auto bits = rng.next();
                for (std::size_t k = 0; k < 64 && d + k < dimension_; ++k)
                    signs_[b * dimension_ + d + k] = (bits >> k) & 1u ? 1 : -1;
            }
        }
    }

    Embedding embed_one(std::string_view text) const {
        const auto cps = unicode::to_u32(unicode::nfc(text));
        std::unordered_map<std::size_t, double> counts;
        for (std::size_t n = 1; n <= 3; ++n) {
            for (std::size_t i = 0; i + n <= cps.size(); ++i) {
                std::uint64_t h = seed_ ^ n;
                for (std::size_t k = 0; k < n; ++k) h = mix64(h ^ static_cast<std::uint64_t>(cps[i + k]));
                counts[static_cast<std::size_t>(h % buckets_)] += 1.0;
            }
        }
        // Accumulate in bucket order so the floating-point sum is reproducible.
        std::vector<std::pair<std::size_t, double>> ordered(counts.begin(), counts.end());
        std::sort(ordered.begin(), ordered.end());
        Embedding v(dimension_, 0.0);
        for (const auto& [bucket, count] : ordered) {
            const std::int8_t* row = &signs_[bucket * dimension_];
            for (std::size_t d = 0; d < dimension_; ++d) v[d] += count * static_cast<double>(row[d]);
        }
        double n2 = norm(v);
        if (n2 == 0.0) {
            v[static_cast<std::size_t>(mix64(seed_) % dimension_)] = 1.0;
            return v;
        }
        for (double& x : v) x /= n2;
        return v;
    }

    std::vector<Embedding> embed(const std::vector<std::string>& texts) override {
        std::vector<Embedding> out;
        out.reserve(texts.size());
        for (const auto& t : texts) out.push_back(embed_one(t));
        return out;
    }

    std::size_t dimension() const override { return dimension_; }
    std::string model_id() const override { return "mock-ngram-" + std::to_string(dimension_); }

private:
    std::size_t dimension_;
    std::uint64_t seed_;
    std::size_t buckets_;
    std::vector<std::int8_t> signs_;
};

/// OpenAI-compatible embeddings endpoint: POST /embeddings {"model", "input": [...]}.
class RemoteEmbedder : public Embedder {
public:
    RemoteEmbedder(std::shared_ptr<providers::Client> client, std::size_t dimension = kDefaultDimension)
        : client_(std::move(client)), dimension_(dimension) {}

    std::vector<Embedding> embed(const std::vector<std::string>& texts) override {
        if (texts.empty()) return {};
        const providers::json body = {{"model", client_->config().model_id}, {"input", texts}};
        const auto response = client_->call("/embeddings", body);
        if (!response.contains("data") || !response["data"].is_array())
            throw ProtocolError("embeddings response lacks a 'data' array");
        const auto& data = response["data"];
        if (data.size() != texts.size())
            throw ProtocolError("embeddings response: expected " + std::to_string(texts.size()) +
                                " vectors, got " + std::to_string(data.size()));
        std::vector<Embedding> out(texts.size());
        for (std::size_t i = 0; i < data.size(); ++i) {
            const auto& item = data[i];
            std::size_t slot = i;
            if (item.contains("index") && item["index"].is_number_unsigned()) slot = item["index"].get<std::size_t>();
            if (slot >= out.size() || !item.contains("embedding") || !item["embedding"].is_array())
                throw ProtocolError("embeddings response: malformed item " + std::to_string(i));
            Embedding v;
            v.reserve(item["embedding"].size());
            for (const auto& x : item["embedding"]) {
                if (!x.is_number()) throw ProtocolError("embeddings response: non-numeric component");
                v.push_back(x.get<double>());
            }
            if (v.size() != dimension_)
                throw ProtocolError("embedding dimension mismatch: expected " + std::to_string(dimension_) +
                                    ", got " + std::to_string(v.size()));
            if (!std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); }))
                throw ProtocolError("embeddings response: non-finite component");
            out[slot] = std::move(v);
        }
        return out;
    }

    std::size_t dimension() const override { return dimension_; }
    std::string model_id() const override { return client_->config().model_id; }

private:
    std::shared_ptr<providers::Client> client_;
    std::size_t dimension_;
};

/// Per-text vector cache keyed by SHA-256 of (model, text); only misses reach the inner embedder.
class CachedEmbedder : public Embedder {
public:
    CachedEmbedder(std::shared_ptr<Embedder> inner, std::filesystem::path cache_dir = {})
        : inner_(std::move(inner)), store_(std::move(cache_dir)) {}

    static std::string key(std::string_view model, std::string_view text) {
        std::string material(model);
        material.push_back('\0');
        material.append(text);
        return sha256_hex(material);
    }

    std::vector<Embedding> embed(const std::vector<std::string>& texts) override {
        std::vector<Embedding> out(texts.size());
        std::vector<std::string> missing;
        std::vector<std::size_t> slots;
        const auto model = inner_->model_id();
        for (std::size_t i = 0; i < texts.size(); ++i) {
            if (auto hit = store_.get(key(model, texts[i])); hit && hit->is_array() &&
                                                             hit->size() == inner_->dimension()) {
                out[i] = hit->get<Embedding>();
                ++hits_;
            } else {
                missing.push_back(texts[i]);
                slots.push_back(i);
            }
        }
        if (!missing.empty()) {
            auto fresh = inner_->embed(missing);
            for (std::size_t k = 0; k < fresh.size(); ++k) {
                store_.put(key(model, missing[k]), providers::json(fresh[k]));
                out[slots[k]] = std::move(fresh[k]);
            }
            misses_ += missing.size();
        }
        return out;
    }

    std::size_t dimension() const override { return inner_->dimension(); }
    std::string model_id() const override { return inner_->model_id(); }
    std::size_t hits() const { return hits_; }
    std::size_t misses() const { return misses_; }

private:
    std::shared_ptr<Embedder> inner_;
    providers::ContentStore store_;
    std::size_t hits_ = 0;
    std::size_t misses_ = 0;
};

struct DocumentEmbedding {
    std::vector<Embedding> sentences;
    Embedding document;
};

/// One embedding per sentence plus one for the full text, in a single batch.
inline DocumentEmbedding embed_document(std::string_view text, Embedder& embedder) {
    auto sentences = split_sentences(text);
    const std::size_t n = sentences.size();
    sentences.push_back(unicode::nfc(text));
    auto vectors = embedder.embed(sentences);
    if (vectors.size() != n + 1) throw ProtocolError("embedder returned the wrong number of vectors");
    DocumentEmbedding out;
    out.document = std::move(vectors.back());
    vectors.pop_back();
    out.sentences = std::move(vectors);
    return out;
}

/// Coherence features for one text, or nullopt when the provider failed.
inline std::optional<CoherenceProfile> coherence_features(std::string_view text, Embedder& embedder,
                                                          Warnings* warnings = nullptr) {
    try {
        const auto emb = embed_document(text, embedder);
        return coherence_profile(emb.sentences, emb.document);
    } catch (const ProviderError& e) {
        warn(warnings, std::string("embedding failed, L2 marked missing: ") + e.what());
        return std::nullopt;
    }
}

} // namespace narralyze::coherence
