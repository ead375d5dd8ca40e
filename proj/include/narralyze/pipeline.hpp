#pragma once

// Run configuration (TOML + overrides) and the batch commands behind the CLI.
// Every command reads its inputs from, and writes its artifacts to, the run's
// output directory:
//
//   corpus.jsonl, truth.jsonl      synth / ingest
//   lexical.jsonl, coherence.jsonl extract
//   l3.jsonl                       evaluate (or extract with L3 enabled)
//   features.csv (+ .schema.json)  extract / evaluate
//   cv_report.json, models/        train
//   shap/<task>.json               explain
//   table1.md, radar.json          report

#include "narralyze/coherence.hpp"
#include "narralyze/corpus.hpp"
#include "narralyze/error.hpp"
#include "narralyze/evaluator.hpp"
#include "narralyze/explain.hpp"
#include "narralyze/featureset.hpp"
#include "narralyze/http_transport.hpp"
#include "narralyze/lexicon.hpp"
#include "narralyze/models.hpp"
#include "narralyze/providers.hpp"
#include "narralyze/synthetic.hpp"

#include <json.hpp>
#include <toml.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace narralyze::pipeline {

namespace fs = std::filesystem;

struct EndpointConfig {
    std::string provider = "mock";  // mock | openai
    std::string base_url = "https://api.openai.com/v1";
    std::string model;
    std::string api_key_env = "OPENAI_API_KEY";
    std::int64_t max_in_flight = 4;
    std::int64_t max_attempts = 4;
    std::int64_t base_delay_ms = 500;
    std::int64_t timeout_s = 60;
};

struct RunConfig {
    std::uint64_t seed = 42;
    fs::path out = "run";
    bool offline = false;

    // paths
    fs::path corpus;      // input corpus for ingest
    fs::path dictionary;  // empty = built-in demo dictionary
    fs::path cache;       // empty = <out>/cache

    // synth
    synthetic::SynthConfig synth;

    // layers
    bool l1 = true;
    bool l2 = true;
    bool l3 = true;

    EndpointConfig embedding{"mock", "https://api.openai.com/v1", "text-embedding-3-small"};
    std::int64_t embedding_dimension = 1536;
    EndpointConfig chat{"mock", "https://api.openai.com/v1", "gpt-4o-mini"};

    SeverityConfig severity;

    // model
    models::Hyperparameters params = [] {
        models::Hyperparameters p;
        p.threads = 0;  // all cores
        return p;
    }();
    models::ModelKind classifier = models::ModelKind::extratrees_classifier;
    std::int64_t k_folds = 5;
    std::vector<std::string> tasks;   // empty = all five
    std::vector<std::string> combos;  // empty = all seven
    std::int64_t final_n_trees = 100;

    // explain
    std::int64_t explain_top_n = 15;
    std::int64_t explain_max_samples = 200;

    fs::path cache_dir() const { return cache.empty() ? out / "cache" : cache; }
};

// ---------------------------------------------------------------------------
// TOML mapping

namespace detail {

template <typename T>
void read(const toml::table& t, std::string_view path, T& field) {
    const auto node = t.at_path(path);
    if (!node) return;
    if constexpr (std::is_same_v<T, bool>) {
        if (!node.is_boolean()) throw ValidationError("config: " + std::string(path) + " must be a boolean");
        field = *node.value<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
        if (!node.is_string()) throw ValidationError("config: " + std::string(path) + " must be a string");
        field = *node.value<std::string>();
    } else if constexpr (std::is_same_v<T, fs::path>) {
        if (!node.is_string()) throw ValidationError("config: " + std::string(path) + " must be a string");
        field = *node.value<std::string>();
    } else if constexpr (std::is_same_v<T, double>) {
        if (!node.is_number()) throw ValidationError("config: " + std::string(path) + " must be a number");
        field = *node.value<double>();
    } else if constexpr (std::is_integral_v<T>) {
        if (!node.is_integer()) throw ValidationError("config: " + std::string(path) + " must be an integer");
        const auto v = *node.value<std::int64_t>();
        if constexpr (std::is_unsigned_v<T>)
            if (v < 0) throw ValidationError("config: " + std::string(path) + " must be non-negative");
        field = static_cast<T>(v);
    } else if constexpr (std::is_same_v<T, std::vector<double>> || std::is_same_v<T, std::vector<std::string>>) {
        const auto* arr = node.as_array();
        if (!arr) throw ValidationError("config: " + std::string(path) + " must be an array");
        T out;
        for (const auto& e : *arr) {
            auto v = e.template value<typename T::value_type>();
            if (!v) throw ValidationError("config: " + std::string(path) + " has an element of the wrong type");
            out.push_back(*v);
        }
        field = std::move(out);
    }
}

inline void read_endpoint(const toml::table& t, const std::string& section, EndpointConfig& e) {
    read(t, section + ".provider", e.provider);
    read(t, section + ".base_url", e.base_url);
    read(t, section + ".model", e.model);
    read(t, section + ".api_key_env", e.api_key_env);
    read(t, section + ".max_in_flight", e.max_in_flight);
    read(t, section + ".max_attempts", e.max_attempts);
    read(t, section + ".base_delay_ms", e.base_delay_ms);
    read(t, section + ".timeout_s", e.timeout_s);
    if (e.provider != "mock" && e.provider != "openai")
        throw ValidationError("config: " + section + ".provider must be \"mock\" or \"openai\"");
}

inline toml::table endpoint_table(const EndpointConfig& e) {
    return toml::table{{"provider", e.provider},         {"base_url", e.base_url},
                       {"model", e.model},               {"api_key_env", e.api_key_env},
                       {"max_in_flight", e.max_in_flight}, {"max_attempts", e.max_attempts},
                       {"base_delay_ms", e.base_delay_ms}, {"timeout_s", e.timeout_s}};
}

template <typename T>
toml::array to_array(const std::vector<T>& v) {
    toml::array a;
    for (const auto& x : v) a.push_back(x);
    return a;
}

inline std::int64_t i64(std::size_t v) { return static_cast<std::int64_t>(v); }

} // namespace detail

/// Overlays the keys present in `t` onto `cfg`.
inline void apply(RunConfig& cfg, const toml::table& t) {
    using detail::read;
    std::int64_t seed = static_cast<std::int64_t>(cfg.seed);
    read(t, "seed", seed);
    if (seed < 0) throw ValidationError("config: seed must be non-negative");
    cfg.seed = static_cast<std::uint64_t>(seed);
    read(t, "out", cfg.out);
    read(t, "offline", cfg.offline);

    read(t, "paths.corpus", cfg.corpus);
    read(t, "paths.dictionary", cfg.dictionary);
    read(t, "paths.cache", cfg.cache);

    read(t, "synth.n", cfg.synth.n);
    read(t, "synth.signal_strength", cfg.synth.signal_strength);
    read(t, "synth.noise_l1", cfg.synth.noise_l1);
    read(t, "synth.noise_l2", cfg.synth.noise_l2);
    read(t, "synth.noise_l3", cfg.synth.noise_l3);
    read(t, "synth.min_sentences", cfg.synth.min_sentences);
    read(t, "synth.max_sentences", cfg.synth.max_sentences);
    read(t, "synth.missing_age_rate", cfg.synth.missing_age_rate);
    read(t, "synth.mix", cfg.synth.mix);
    read(t, "synth.trauma_mix", cfg.synth.trauma_mix);

    read(t, "layers.l1", cfg.l1);
    read(t, "layers.l2", cfg.l2);
    read(t, "layers.l3", cfg.l3);

    detail::read_endpoint(t, "embedding", cfg.embedding);
    read(t, "embedding.dimension", cfg.embedding_dimension);
    detail::read_endpoint(t, "chat", cfg.chat);

    for (auto c : kConditions) {
        std::vector<double> cuts = cfg.severity[c].cuts();
        read(t, "severity." + std::string(to_string(c)), cuts);
        cfg.severity[c] = SeverityBins(cuts);
    }

    read(t, "model.n_trees", cfg.params.n_trees);
    read(t, "model.max_features", cfg.params.max_features);
    read(t, "model.min_samples_leaf", cfg.params.min_samples_leaf);
    read(t, "model.max_depth", cfg.params.max_depth);
    read(t, "model.gbdt_rounds", cfg.params.gbdt_rounds);
    read(t, "model.learning_rate", cfg.params.learning_rate);
    read(t, "model.gbdt_max_depth", cfg.params.gbdt_max_depth);
    read(t, "model.gbdt_min_samples_leaf", cfg.params.gbdt_min_samples_leaf);
    read(t, "model.threads", cfg.params.threads);
    std::string classifier(models::to_string(cfg.classifier));
    read(t, "model.classifier", classifier);
    if (classifier == "extratrees") classifier = "extratrees_classifier";
    if (classifier == "gbdt") classifier = "gbdt_classifier";
    cfg.classifier = models::parse_model_kind(classifier);
    if (cfg.classifier == models::ModelKind::extratrees_regressor)
        throw ValidationError("config: model.classifier must be extratrees or gbdt");
    read(t, "model.k_folds", cfg.k_folds);
    read(t, "model.tasks", cfg.tasks);
    read(t, "model.combos", cfg.combos);
    read(t, "model.final_n_trees", cfg.final_n_trees);

    read(t, "explain.top_n", cfg.explain_top_n);
    read(t, "explain.max_samples", cfg.explain_max_samples);
}

inline toml::table to_toml(const RunConfig& c) {
    using detail::i64;
    toml::table sev;
    for (auto cond : kConditions) sev.insert(std::string(to_string(cond)), detail::to_array(c.severity[cond].cuts()));
    auto emb = detail::endpoint_table(c.embedding);
    emb.insert("dimension", c.embedding_dimension);
    return toml::table{
        {"seed", static_cast<std::int64_t>(c.seed)},
        {"out", c.out.generic_string()},
        {"offline", c.offline},
        {"paths", toml::table{{"corpus", c.corpus.generic_string()},
                              {"dictionary", c.dictionary.generic_string()},
                              {"cache", c.cache.generic_string()}}},
        {"synth", toml::table{{"n", i64(c.synth.n)},
                              {"signal_strength", c.synth.signal_strength},
                              {"noise_l1", c.synth.noise_l1},
                              {"noise_l2", c.synth.noise_l2},
                              {"noise_l3", c.synth.noise_l3},
                              {"min_sentences", i64(c.synth.min_sentences)},
                              {"max_sentences", i64(c.synth.max_sentences)},
                              {"missing_age_rate", c.synth.missing_age_rate},
                              {"mix", detail::to_array(c.synth.mix)},
                              {"trauma_mix", detail::to_array(c.synth.trauma_mix)}}},
        {"layers", toml::table{{"l1", c.l1}, {"l2", c.l2}, {"l3", c.l3}}},
        {"embedding", emb},
        {"chat", detail::endpoint_table(c.chat)},
        {"severity", sev},
        {"model", toml::table{{"n_trees", i64(c.params.n_trees)},
                              {"max_features", i64(c.params.max_features)},
                              {"min_samples_leaf", i64(c.params.min_samples_leaf)},
                              {"max_depth", i64(c.params.max_depth)},
                              {"gbdt_rounds", i64(c.params.gbdt_rounds)},
                              {"learning_rate", c.params.learning_rate},
                              {"gbdt_max_depth", i64(c.params.gbdt_max_depth)},
                              {"gbdt_min_samples_leaf", i64(c.params.gbdt_min_samples_leaf)},
                              {"threads", i64(c.params.threads)},
                              {"classifier", std::string(models::to_string(c.classifier))},
                              {"k_folds", c.k_folds},
                              {"tasks", detail::to_array(c.tasks)},
                              {"combos", detail::to_array(c.combos)},
                              {"final_n_trees", c.final_n_trees}}},
        {"explain", toml::table{{"top_n", c.explain_top_n}, {"max_samples", c.explain_max_samples}}},
    };
}

inline toml::table parse_toml(std::string_view text, const std::string& origin) {
    try {
        return toml::parse(text, origin);
    } catch (const toml::parse_error& e) {
        std::ostringstream msg;
        msg << origin << ": " << e.description() << " (line " << e.source().begin.line << ")";
        throw ValidationError(msg.str());
    }
}

inline RunConfig load_config(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot read config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    RunConfig cfg;
    apply(cfg, parse_toml(ss.str(), path.string()));
    return cfg;
}

inline std::string toml_quote(const std::string& s) {
    std::ostringstream o;
    o << toml::value<std::string>(s);
    return o.str();
}

/// Applies a `section.key=value` override; the value is parsed as a TOML value.
inline void apply_override(RunConfig& cfg, std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos || eq == 0) throw ValidationError("override must look like key=value: " + std::string(assignment));
    const std::string key(assignment.substr(0, eq));
    const std::string value(assignment.substr(eq + 1));
    toml::table parsed;
    try {
        parsed = toml::parse("v = " + value);
    } catch (const toml::parse_error&) {
        parsed = toml::parse("v = " + toml_quote(value));
    }
    toml::table t;
    toml::table* at = &t;
    std::size_t start = 0;
    for (;;) {
        const auto dot = key.find('.', start);
        const auto part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (dot == std::string::npos) {
            at->insert(part, *parsed["v"].node());
            break;
        }
        at->insert(part, toml::table{});
        at = (*at)[part].as_table();
        start = dot + 1;
    }
    if (!to_toml(cfg).at_path(key)) throw ValidationError("unknown config key '" + key + "'");
    apply(cfg, t);
}

inline std::string dump_toml(const RunConfig& cfg) {
    std::ostringstream o;
    o << to_toml(cfg) << '\n';
    return o.str();
}

// ---------------------------------------------------------------------------
// Artifact I/O

inline void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw Error("cannot write " + path.string());
        out << text;
        if (!out) throw Error("write failed for " + path.string());
    }
    fs::rename(tmp, path);
}

inline std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot read " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_jsonl(const fs::path& path, const std::vector<nlohmann::ordered_json>& rows) {
    std::string text;
    for (const auto& r : rows) text += r.dump() + "\n";
    write_text(path, text);
}

inline std::vector<nlohmann::json> read_jsonl(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot read " + path.string());
    std::vector<nlohmann::json> out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(nlohmann::json::parse(line));
        } catch (const nlohmann::json::parse_error& e) {
            throw ValidationError(path.string() + ":" + std::to_string(n) + ": " + e.what());
        }
    }
    return out;
}

struct Artifacts {
    fs::path dir;
    fs::path corpus() const { return dir / "corpus.jsonl"; }
    fs::path truth() const { return dir / "truth.jsonl"; }
    fs::path lexical() const { return dir / "lexical.jsonl"; }
    fs::path coherence() const { return dir / "coherence.jsonl"; }
    fs::path l3() const { return dir / "l3.jsonl"; }
    fs::path features() const { return dir / "features.csv"; }
    fs::path cv_report() const { return dir / "cv_report.json"; }
    fs::path models() const { return dir / "models"; }
    fs::path shap() const { return dir / "shap"; }
    fs::path table() const { return dir / "table1.md"; }
    fs::path radar() const { return dir / "radar.json"; }
    fs::path snapshot(std::string_view command) const {
        return dir / ("resolved_config." + std::string(command) + ".toml");
    }
};

inline void require(const fs::path& p, std::string_view what, std::string_view producer) {
    if (!fs::exists(p))
        throw ValidationError("missing " + std::string(what) + " (" + p.string() + "); run `narralyze " +
                              std::string(producer) + "` first");
}

inline void write_snapshot(const RunConfig& cfg, std::string_view command) {
    const Artifacts a{cfg.out};
    write_text(a.snapshot(command), "# narralyze " + std::string(command) + "\n" + dump_toml(cfg));
}

inline std::size_t thread_count(const RunConfig& cfg) {
    if (cfg.params.threads > 0) return cfg.params.threads;
    return std::max(1u, std::thread::hardware_concurrency());
}

// Lexical profile rows.
inline nlohmann::ordered_json lexical_row(const std::string& id, const lexicon::LexicalProfile& p) {
    nlohmann::ordered_json hits = nlohmann::ordered_json::object(), freq = nlohmann::ordered_json::object();
    for (std::size_t k = 0; k < lexicon::kCategoryCount; ++k) {
        hits[std::string(lexicon::kCategoryNames[k])] = p.hits[k];
        freq[std::string(lexicon::kCategoryNames[k])] = p.frequency[k];
    }
    return {{"id", id}, {"token_count", p.token_count}, {"hits", hits}, {"frequency", freq}};
}

inline std::map<std::string, lexicon::LexicalProfile> read_lexical(const fs::path& path) {
    std::map<std::string, lexicon::LexicalProfile> out;
    for (const auto& j : read_jsonl(path)) {
        lexicon::LexicalProfile p;
        p.token_count = j.at("token_count");
        for (std::size_t k = 0; k < lexicon::kCategoryCount; ++k) {
            const std::string name(lexicon::kCategoryNames[k]);
            p.hits[k] = j.at("hits").at(name);
            p.frequency[k] = j.at("frequency").at(name);
        }
        out[j.at("id")] = p;
    }
    return out;
}

inline nlohmann::ordered_json coherence_row(const std::string& id, const std::optional<coherence::CoherenceProfile>& p,
                                            const std::string& error) {
    nlohmann::ordered_json j{{"id", id}};
    if (!p) {
        j["error"] = error;
        return j;
    }
    j["n_sentences"] = p->n_sentences;
    j["degenerate"] = p->degenerate;
    const auto v = p->values();
    for (std::size_t k = 0; k < v.size(); ++k) j[std::string(coherence::CoherenceProfile::kFeatureNames[k])] = v[k];
    return j;
}

inline std::map<std::string, std::optional<coherence::CoherenceProfile>> read_coherence(const fs::path& path) {
    std::map<std::string, std::optional<coherence::CoherenceProfile>> out;
    for (const auto& j : read_jsonl(path)) {
        const std::string id = j.at("id");
        if (j.contains("error")) {
            out[id] = std::nullopt;
            continue;
        }
        coherence::CoherenceProfile p;
        p.n_sentences = j.at("n_sentences");
        p.degenerate = j.at("degenerate");
        p.s2s_mean = j.at("s2s_mean");
        p.s2s_min = j.at("s2s_min");
        p.s2s_std = j.at("s2s_std");
        p.s2d_mean = j.at("s2d_mean");
        p.s2d_std = j.at("s2d_std");
        p.s2d_max = j.at("s2d_max");
        p.s2d_min = j.at("s2d_min");
        out[id] = p;
    }
    return out;
}

inline std::map<std::string, evaluator::L3Features> read_l3(const fs::path& path) {
    std::map<std::string, evaluator::L3Features> out;
    for (const auto& j : read_jsonl(path)) out[j.at("id")] = evaluator::flatten_l3(evaluator::result_from_json(j));
    return out;
}

// ---------------------------------------------------------------------------
// Providers

inline providers::ProviderConfig provider_config(const RunConfig& cfg, const EndpointConfig& e,
                                                 std::string_view cache_name) {
    providers::ProviderConfig p;
    p.base_url = e.base_url;
    p.model_id = e.model;
    p.api_key_env = e.api_key_env;
    p.max_in_flight = static_cast<int>(e.max_in_flight);
    p.retry.max_attempts = static_cast<int>(e.max_attempts);
    p.retry.base_delay = std::chrono::milliseconds(e.base_delay_ms);
    p.timeout = std::chrono::seconds(e.timeout_s);
    p.cache_dir = cfg.cache_dir() / cache_name;
    p.offline = cfg.offline;
    p.validate();
    return p;
}

inline std::shared_ptr<coherence::Embedder> make_embedder(const RunConfig& cfg) {
    if (cfg.embedding_dimension < 1) throw ValidationError("embedding.dimension must be positive");
    const auto dim = static_cast<std::size_t>(cfg.embedding_dimension);
    if (cfg.embedding.provider == "mock") return std::make_shared<coherence::MockEmbedder>(dim);
    const auto pc = provider_config(cfg, cfg.embedding, "http");
    auto client = std::make_shared<providers::Client>(
        pc, std::make_shared<providers::HttpTransport>(pc.base_url, pc.timeout));
    return std::make_shared<coherence::CachedEmbedder>(std::make_shared<coherence::RemoteEmbedder>(client, dim),
                                                       cfg.cache_dir() / "embeddings");
}

/// Mock answers come from the truth sidecar when one exists (synthetic
/// corpora); otherwise every text gets the neutral severity 0.5.
inline std::shared_ptr<evaluator::ChatClient> make_chat_client(const RunConfig& cfg, const Corpus& corpus,
                                                               Warnings* warnings) {
    if (cfg.chat.provider == "mock") {
        const Artifacts a{cfg.out};
        std::map<std::string, evaluator::PlantedSeverity> by_text;
        if (fs::exists(a.truth())) {
            const auto truth = synthetic::read_truth(a.truth());
            for (const auto& s : corpus)
                if (auto it = truth.find(s.id); it != truth.end()) by_text[s.text] = it->second;
        } else {
            warn(warnings, "mock evaluator: no truth.jsonl, using neutral severity 0.5");
        }
        return std::make_shared<evaluator::MockChatClient>([by_text = std::move(by_text)](std::string_view text) {
            auto it = by_text.find(std::string(text));
            return it == by_text.end() ? evaluator::PlantedSeverity{} : it->second;
        });
    }
    const auto pc = provider_config(cfg, cfg.chat, "http");
    auto client = std::make_shared<providers::Client>(
        pc, std::make_shared<providers::HttpTransport>(pc.base_url, pc.timeout));
    return std::make_shared<evaluator::RemoteChatClient>(client);
}

// ---------------------------------------------------------------------------
// Commands

struct CommandResult {
    std::vector<fs::path> written;
    Warnings warnings;
};

inline lexicon::Dictionary load_dictionary(const RunConfig& cfg, Warnings* warnings) {
    if (cfg.dictionary.empty()) return lexicon::Dictionary::demo();
    return lexicon::Dictionary::load(cfg.dictionary, warnings);
}

inline CommandResult cmd_synth(const RunConfig& cfg) {
    CommandResult r;
    const Artifacts a{cfg.out};
    auto sc = cfg.synth;
    sc.seed = cfg.seed;
    const auto syn = synthetic::generate_synthetic(sc);
    fs::create_directories(cfg.out);
    std::ostringstream corpus;
    emit(syn.corpus, corpus);
    write_text(a.corpus(), corpus.str());
    std::vector<nlohmann::ordered_json> truth;
    for (const auto& t : syn.truth) truth.push_back(synthetic::to_json(t));
    write_jsonl(a.truth(), truth);
    write_snapshot(cfg, "synth");
    r.written = {a.corpus(), a.truth()};
    return r;
}

/// Validates an external corpus and keeps the eligible samples (more than 100 words).
inline CommandResult cmd_ingest(const RunConfig& cfg) {
    CommandResult r;
    if (cfg.corpus.empty()) throw ValidationError("ingest needs an input corpus (--corpus or paths.corpus)");
    const Artifacts a{cfg.out};
    const auto dict = load_dictionary(cfg, &r.warnings);
    auto corpus = ingest(cfg.corpus, &r.warnings);
    Corpus kept;
    nlohmann::ordered_json excluded = nlohmann::ordered_json::array();
    for (auto& s : corpus) {
        for (auto c : kConditions) (void)outcome(s, c, cfg.severity);
        const auto words = word_count(s.text, dict);
        if (is_eligible(words)) {
            kept.push_back(std::move(s));
        } else {
            excluded.push_back({{"id", s.id}, {"words", words}});
            warn(&r.warnings, "excluded '" + s.id + "': " + std::to_string(words) + " words");
        }
    }
    if (kept.empty()) throw ValidationError("no eligible samples in " + cfg.corpus.string());
    fs::create_directories(cfg.out);
    std::ostringstream out;
    emit(kept, out);
    write_text(a.corpus(), out.str());
    nlohmann::ordered_json report{{"input", cfg.corpus.generic_string()},
                                  {"samples", corpus.size()},
                                  {"eligible", kept.size()},
                                  {"excluded", excluded}};
    write_text(cfg.out / "ingest_report.json", report.dump(2) + "\n");
    write_snapshot(cfg, "ingest");
    r.written = {a.corpus(), cfg.out / "ingest_report.json"};
    return r;
}

/// Rebuilds features.csv from whichever layer artifacts are present and enabled.
inline fs::path assemble_features(const RunConfig& cfg, const Corpus& corpus, Warnings* warnings) {
    const Artifacts a{cfg.out};
    features::LayerInputs in;
    if (cfg.l1 && fs::exists(a.lexical())) in.lexical = read_lexical(a.lexical());
    if (cfg.l2 && fs::exists(a.coherence())) in.coherence = read_coherence(a.coherence());
    if (cfg.l3 && fs::exists(a.l3())) in.l3 = read_l3(a.l3());
    features::AssembleOptions opt;
    opt.severity = cfg.severity;
    features::ZeroFillReport zf;
    const auto m = features::apply_zero_fill(features::assemble(corpus, in, opt), &zf);
    if (zf.l2_missing_fraction > 0)
        warn(warnings, "L2 missing or degenerate for " + models::format_fixed(100 * zf.l2_missing_fraction, 1) + "% of samples");
    if (zf.l3_missing_fraction > 0)
        warn(warnings, "L3 missing for " + models::format_fixed(100 * zf.l3_missing_fraction, 1) + "% of samples");
    features::save(m, a.features());
    return a.features();
}

inline Corpus load_corpus(const RunConfig& cfg, Warnings* warnings) {
    const Artifacts a{cfg.out};
    require(a.corpus(), "corpus", "synth` or `narralyze ingest");
    return ingest(a.corpus(), warnings);
}

inline void write_l3(const RunConfig& cfg, const Corpus& corpus, Warnings* warnings) {
    const Artifacts a{cfg.out};
    auto client = make_chat_client(cfg, corpus, warnings);
    std::vector<nlohmann::ordered_json> rows(corpus.size());
    std::vector<Warnings> per(corpus.size());
    const std::size_t workers =
        cfg.chat.provider == "mock" ? thread_count(cfg) : static_cast<std::size_t>(std::max<std::int64_t>(1, cfg.chat.max_in_flight));
    std::vector<std::uint8_t> failed(corpus.size(), 0);
    models::detail::parallel_for(corpus.size(), workers, [&](std::size_t i) {
        const auto res = evaluator::evaluate(corpus[i].text, *client, &per[i]);
        failed[i] = evaluator::flatten_l3(res).all_missing();
        nlohmann::ordered_json j{{"id", corpus[i].id}};
        const auto body = evaluator::to_json(res);
        for (auto& [k, v] : body.items()) j[k] = v;
        rows[i] = std::move(j);
    });
    if (!corpus.empty() && std::all_of(failed.begin(), failed.end(), [](auto f) { return f != 0; }))
        throw ProviderError("evaluation failed for every sample" + (per[0].empty() ? std::string() : ": " + per[0].front()));
    for (std::size_t i = 0; i < corpus.size(); ++i)
        for (auto& w : per[i]) warn(warnings, corpus[i].id + ": " + w);
    write_jsonl(a.l3(), rows);
}

inline CommandResult cmd_extract(const RunConfig& cfg) {
    CommandResult r;
    const Artifacts a{cfg.out};
    const auto corpus = load_corpus(cfg, &r.warnings);
    if (cfg.l1) {
        const auto dict = load_dictionary(cfg, &r.warnings);
        std::vector<nlohmann::ordered_json> rows;
        for (const auto& s : corpus) rows.push_back(lexical_row(s.id, lexicon::profile(s.text, dict)));
        write_jsonl(a.lexical(), rows);
        r.written.push_back(a.lexical());
    }
    if (cfg.l2) {
        auto embedder = make_embedder(cfg);
        std::vector<nlohmann::ordered_json> rows(corpus.size());
        std::vector<Warnings> per(corpus.size());
        const std::size_t workers = cfg.embedding.provider == "mock" ? thread_count(cfg) : 1;
        models::detail::parallel_for(corpus.size(), workers, [&](std::size_t i) {
            std::string error;
            std::optional<coherence::CoherenceProfile> p;
            try {
                const auto d = coherence::embed_document(corpus[i].text, *embedder);
                p = coherence::coherence_profile(d.sentences, d.document);
                if (p->degenerate) warn(&per[i], "degenerate document (fewer than two sentences)");
            } catch (const ProviderError& e) {
                error = e.what();
                warn(&per[i], std::string("embedding failed: ") + e.what());
            }
            rows[i] = coherence_row(corpus[i].id, p, error);
        });
        const auto failures = std::count_if(rows.begin(), rows.end(), [](const auto& row) { return row.contains("error"); });
        if (!corpus.empty() && static_cast<std::size_t>(failures) == corpus.size())
            throw ProviderError("embedding failed for every sample: " + rows[0]["error"].template get<std::string>());
        for (std::size_t i = 0; i < corpus.size(); ++i)
            for (auto& w : per[i]) warn(&r.warnings, corpus[i].id + ": " + w);
        write_jsonl(a.coherence(), rows);
        r.written.push_back(a.coherence());
    }
    if (cfg.l3) {
        write_l3(cfg, corpus, &r.warnings);
        r.written.push_back(a.l3());
    }
    r.written.push_back(assemble_features(cfg, corpus, &r.warnings));
    write_snapshot(cfg, "extract");
    return r;
}

inline CommandResult cmd_evaluate(const RunConfig& cfg) {
    CommandResult r;
    const Artifacts a{cfg.out};
    const auto corpus = load_corpus(cfg, &r.warnings);
    write_l3(cfg, corpus, &r.warnings);
    r.written.push_back(a.l3());
    if (fs::exists(a.lexical()) || fs::exists(a.coherence()) || cfg.l3)
        r.written.push_back(assemble_features(cfg, corpus, &r.warnings));
    write_snapshot(cfg, "evaluate");
    return r;
}

inline models::ExperimentConfig experiment_config(const RunConfig& cfg, const features::FeatureMatrix& m) {
    models::ExperimentConfig ec;
    ec.k = static_cast<int>(cfg.k_folds);
    ec.seed = cfg.seed;
    ec.params = cfg.params;
    ec.params.threads = thread_count(cfg);
    ec.classifier = cfg.classifier;
    if (!cfg.tasks.empty()) {
        ec.tasks.clear();
        for (const auto& t : cfg.tasks) {
            auto task = models::parse_task(t);
            if (!task) throw ValidationError("unknown task '" + t + "'");
            ec.tasks.push_back(*task);
        }
    }
    ec.combos.clear();
    if (!cfg.combos.empty()) {
        for (const auto& c : cfg.combos) {
            auto combo = features::parse_combo(c);
            if (!combo) throw ValidationError("unknown feature combination '" + c + "'");
            ec.combos.push_back(*combo);
        }
    } else {
        // All combinations whose layers are present in the matrix.
        for (auto c : features::kCombos) {
            bool ok = true;
            for (auto l : features::layers_of(c)) ok = ok && m.count(l) > 0;
            if (ok) ec.combos.push_back(c);
        }
    }
    return ec;
}

/// The widest combination available: the one explained by `explain`.
inline features::Combo widest_combo(const std::vector<features::Combo>& combos) {
    features::Combo best = combos.front();
    for (auto c : combos)
        if (features::layers_of(c).size() > features::layers_of(best).size()) best = c;
    return best;
}

inline CommandResult cmd_train(const RunConfig& cfg) {
    CommandResult r;
    const Artifacts a{cfg.out};
    require(a.features(), "feature matrix", "extract");
    const auto matrix = features::load(a.features());
    const auto ec = experiment_config(cfg, matrix);
    const auto report = models::run_experiment(matrix, ec);
    for (const auto& w : report.warnings) warn(&r.warnings, w);
    write_text(a.cv_report(), models::to_json(report).dump(2) + "\n");
    r.written.push_back(a.cv_report());

    // Final models on all samples for the widest combination.
    const auto combo = widest_combo(ec.combos);
    const auto sub = features::select_combo(matrix, combo);
    const auto x = models::to_matrix(sub);
    auto fc = ec;
    if (cfg.final_n_trees > 0) fc.params.n_trees = static_cast<std::size_t>(cfg.final_n_trees);
    fs::create_directories(a.models());
    for (const auto& task : ec.tasks) {
        const auto c = static_cast<std::size_t>(task.condition);
        std::vector<std::size_t> rows;
        for (std::size_t i = 0; i < sub.rows(); ++i)
            if (sub.targets.level[c][i] >= 0) rows.push_back(i);
        const auto model = models::train_for_task(task, x, sub.targets, rows, fc, mix64(cfg.seed ^ fnv1a64(task.name())),
                                                  &r.warnings);
        nlohmann::ordered_json j;
        j["task"] = task.name();
        j["combo"] = features::to_string(combo);
        auto cols = nlohmann::ordered_json::array();
        for (const auto& col : sub.columns) cols.push_back(col.name);
        j["columns"] = cols;
        j["model"] = models::to_json(model);
        const auto path = a.models() / (task.name() + ".json");
        write_text(path, j.dump() + "\n");
        r.written.push_back(path);
    }
    write_snapshot(cfg, "train");
    return r;
}

inline CommandResult cmd_explain(const RunConfig& cfg) {
    CommandResult r;
    const Artifacts a{cfg.out};
    require(a.features(), "feature matrix", "extract");
    require(a.models(), "trained models", "train");
    const auto matrix = features::load(a.features());
    std::vector<fs::path> model_files;
    for (const auto& e : fs::directory_iterator(a.models()))
        if (e.path().extension() == ".json") model_files.push_back(e.path());
    std::sort(model_files.begin(), model_files.end());
    if (model_files.empty()) throw ValidationError("no models in " + a.models().string() + "; run `narralyze train` first");
    for (const auto& path : model_files) {
        const auto j = nlohmann::json::parse(read_text(path));
        const auto combo = features::parse_combo(j.at("combo").get<std::string>());
        if (!combo) throw ValidationError(path.string() + ": unknown combo");
        const auto model = models::model_from_json(j.at("model"));
        const auto task = models::parse_task(j.at("task").get<std::string>());
        if (!task) throw ValidationError(path.string() + ": unknown task");
        auto sub = features::select_combo(matrix, *combo);
        if (sub.cols() != model.n_features)
            throw ValidationError(path.string() + ": model width does not match features.csv; re-run `narralyze train`");
        // Explained samples: those with a target, first max_samples in id order.
        const auto c = static_cast<std::size_t>(task->condition);
        features::FeatureMatrix rows;
        rows.columns = sub.columns;
        for (std::size_t i = 0; i < sub.rows(); ++i) {
            if (sub.targets.level[c][i] < 0) continue;
            if (cfg.explain_max_samples > 0 && rows.rows() >= static_cast<std::size_t>(cfg.explain_max_samples)) break;
            rows.sample_ids.push_back(sub.sample_ids[i]);
            const auto row = sub.row(i);
            rows.values.insert(rows.values.end(), row.begin(), row.end());
        }
        // Classifiers are explained on the most severe class's output.
        const std::size_t output = model.is_classifier() ? model.n_outputs() - 1 : 0;
        const auto e = explain::explain_rows(model, rows, output, thread_count(cfg));
        const double gap = explain::max_efficiency_gap(e);
        if (gap > 1e-6) warn(&r.warnings, task->name() + ": SHAP efficiency gap " + std::to_string(gap));
        nlohmann::ordered_json out;
        out["task"] = task->name();
        out["combo"] = features::to_string(*combo);
        out["output"] = model.is_classifier() ? nlohmann::ordered_json("class " + std::to_string(model.classes[output]))
                                              : nlohmann::ordered_json("score");
        out["samples"] = e.phi.rows;
        out["base_value_mean"] = std::accumulate(e.base_values.begin(), e.base_values.end(), 0.0) /
                                 static_cast<double>(std::max<std::size_t>(1, e.base_values.size()));
        out["features"] = explain::summary_json(e, static_cast<std::size_t>(cfg.explain_top_n));
        const auto dest = a.shap() / (task->name() + ".json");
        write_text(dest, out.dump(1) + "\n");
        r.written.push_back(dest);
    }
    write_snapshot(cfg, "explain");
    return r;
}

inline CommandResult cmd_report(const RunConfig& cfg) {
    CommandResult r;
    const Artifacts a{cfg.out};
    require(a.cv_report(), "CV report", "train");
    const auto report = models::cv_report_from_json(nlohmann::json::parse(read_text(a.cv_report())));
    write_text(a.table(), models::table_markdown(report));
    write_text(a.radar(), models::radar_json(report).dump(2) + "\n");
    write_snapshot(cfg, "report");
    r.written = {a.table(), a.radar()};
    return r;
}

} // namespace narralyze::pipeline
