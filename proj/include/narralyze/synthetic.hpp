#pragma once

// Synthetic corpus generator with planted, layer-specific signal.
//
// Each sample draws a general factor g and per-condition latents
// z_c = 0.6 g + 0.8 e_c. Outcomes are monotone in z_c. Every feature layer
// observes z_c through its own noise channel:
//   L1  category-word insertion rates in the text
//   L2  topic-switch probability between sentences
//   L3  planted severities consumed by the mock evaluator (truth sidecar)
// Demographics are independent of the latents. With signal_strength = 0
// nothing observable depends on the outcomes.

#include "narralyze/corpus.hpp"
#include "narralyze/evaluator.hpp"
#include "narralyze/lexicon.hpp"
#include "narralyze/random.hpp"

#include <json.hpp>

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

namespace narralyze::synthetic {

struct SynthConfig {
    std::size_t n = 800;
    double signal_strength = 0.8;
    std::uint64_t seed = 42;
    // Noise SD of each layer's view of the latent (signal enters with slope signal_strength).
    double noise_l1 = 1.0;
    double noise_l2 = 1.5;
    double noise_l3 = 0.25;
    std::size_t min_sentences = 24;
    std::size_t max_sentences = 36;
    double missing_age_rate = 0.05;
    // Severity-level mix per condition (lowest level first).
    std::vector<double> mix = {0.4, 0.3, 0.2, 0.1};
    std::vector<double> trauma_mix = {0.3, 0.25, 0.2, 0.15, 0.1};
};

struct Truth {
    std::string id;
    std::array<double, 3> latent{};
    evaluator::PlantedSeverity planted;
};

struct SyntheticCorpus {
    Corpus corpus;
    std::vector<Truth> truth;
};

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

struct Instrument {
    const char* id;
    double max;
};

inline constexpr std::array<Instrument, 3> kInstruments = {{{"PHQ-9", 27}, {"GAD-7", 21}, {"PCL-5", 80}}};

namespace detail {

// Topic vocabularies: two-character words sharing no entry with the demo dictionary.
inline const std::array<std::array<const char*, 8>, 6> kTopics = {{
    {"山川", "河流", "树木", "花草", "天空", "云朵", "湖水", "田野"},
    {"街道", "商店", "汽车", "地铁", "高楼", "公园", "广场", "路口"},
    {"公司", "会议", "项目", "报告", "电脑", "文件", "工资", "加班"},
    {"米饭", "面条", "水果", "蔬菜", "早餐", "午饭", "厨房", "汤锅"},
    {"课本", "考试", "作业", "图书", "学校", "黑板", "教室", "成绩"},
    {"火车", "机场", "酒店", "地图", "风景", "行李", "车票", "海边"},
}};

/// Level from a uniform draw by the cumulative mix, plus the position of u
/// inside that level's probability band.
inline std::pair<int, double> level_from_uniform(double u, const std::vector<double>& mix) {
    double acc = 0.0;
    for (std::size_t l = 0; l < mix.size(); ++l) {
        if (u < acc + mix[l] || l + 1 == mix.size()) return {static_cast<int>(l), std::clamp((u - acc) / mix[l], 0.0, 1.0)};
        acc += mix[l];
    }
    return {0, 0.0};
}

/// Normalized score spread inside the level's bin, kept off the cut points.
inline double score_in_bin(int level, double pos, const SeverityBins& bins) {
    const auto& cuts = bins.cuts();
    const double lo = level == 0 ? 0.0 : cuts[static_cast<std::size_t>(level - 1)];
    const double hi = static_cast<std::size_t>(level) < cuts.size() ? cuts[static_cast<std::size_t>(level)] : 1.0;
    return lo + (hi - lo) * (0.05 + 0.9 * pos);
}

/// Raw integer score whose normalization lands in the intended bin.
inline double raw_score(double normalized, double max, int level, const SeverityBins& bins) {
    double raw = std::round(normalized * max);
    while (raw > 0 && bins.level(raw / max) > level) raw -= 1;
    while (raw < max && bins.level(raw / max) < level) raw += 1;
    return raw;
}

/// One layer's noisy view of the latents mapped to (0, 1).
inline std::array<double, 3> observe(const std::array<double, 3>& z, double strength, double noise, Rng& rng) {
    std::array<double, 3> out{};
    const double scale = std::sqrt(strength * strength + noise * noise);
    for (std::size_t c = 0; c < 3; ++c)
        out[c] = normal_cdf(scale > 0 ? (strength * z[c] + noise * rng.normal()) / scale : 0.0);
    return out;
}

inline std::string pick(const std::vector<std::string>& words, Rng& rng) { return words[rng.index(words.size())]; }

/// Dictionary entries usable as literal words (wildcards contribute their stem).
inline std::vector<std::string> literal_entries(const lexicon::Dictionary& dict, lexicon::Category c) {
    std::vector<std::string> out;
    for (const auto& e : dict.entries(c)) out.push_back(e.stem);
    return out;
}

} // namespace detail

inline SyntheticCorpus generate_synthetic(const SynthConfig& cfg) {
    if (cfg.n == 0) throw ValidationError("synthetic corpus size must be positive");
    if (cfg.signal_strength < 0) throw ValidationError("signal_strength must be >= 0");
    if (cfg.min_sentences < 2 || cfg.max_sentences < cfg.min_sentences)
        throw ValidationError("sentence range must satisfy 2 <= min <= max");
    const SeverityConfig bins;
    const auto& dict = lexicon::Dictionary::demo();
    using lexicon::Category;
    std::array<std::vector<std::string>, lexicon::kCategoryCount> words;
    for (std::size_t c = 0; c < lexicon::kCategoryCount; ++c)
        words[c] = detail::literal_entries(dict, static_cast<Category>(c));
    auto cat_words = [&](Category c) -> const std::vector<std::string>& { return words[static_cast<std::size_t>(c)]; };

    SyntheticCorpus out;
    for (std::size_t i = 0; i < cfg.n; ++i) {
        Rng srng(mix64(cfg.seed ^ (0x51ull << 40) ^ i));
        WritingSample s;
        char id[32];
        std::snprintf(id, sizeof id, "syn-%05zu", i);
        s.id = id;
        s.cohort = "synthetic";

        const double g = srng.normal();
        std::array<double, 3> z{};
        for (auto& v : z) v = 0.6 * g + 0.8 * srng.normal();

        for (std::size_t c = 0; c < 3; ++c) {
            const auto cond = kConditions[c];
            const auto& mix = cond == Condition::trauma ? cfg.trauma_mix : cfg.mix;
            const auto [level, pos] = detail::level_from_uniform(normal_cdf(z[c]), mix);
            const double norm = detail::score_in_bin(level, pos, bins[cond]);
            s.scores.push_back({cond, kInstruments[c].id,
                                detail::raw_score(norm, kInstruments[c].max, level, bins[cond]), kInstruments[c].max});
        }

        if (!srng.bernoulli(cfg.missing_age_rate)) s.age = std::round(srng.uniform(18.0, 65.0));
        const double gu = srng.uniform();
        s.gender = gu < 0.55 ? Gender::female : gu < 0.95 ? Gender::male : Gender::unspecified;

        const auto l1 = detail::observe(z, cfg.signal_strength, cfg.noise_l1, srng);
        const auto l2 = detail::observe(z, cfg.signal_strength, cfg.noise_l2, srng);
        const auto l3 = detail::observe(z, cfg.signal_strength, cfg.noise_l3, srng);
        const double dep = l1[0], anx = l1[1], tra = l1[2];

        // Per-sentence insertion probabilities.
        const std::array<std::pair<Category, double>, 8> rates = {{
            {Category::i, 0.15 + 0.5 * dep},
            {Category::negemo, 0.05 + 0.25 * (dep + anx + tra)},
            {Category::certain, 0.1 + 0.5 * anx},
            {Category::discrep, 0.1 + 0.5 * anx},
            {Category::social, 0.6 - 0.45 * dep},
            {Category::focuspast, 0.1 + 0.4 * tra},
            {Category::death, 0.02 + 0.3 * tra},
            {Category::negate, 0.1 + 0.4 * dep},
        }};
        const double switch_p = 0.05 + 0.6 * (l2[0] + l2[1] + l2[2]) / 3.0;

        const std::size_t n_sent = cfg.min_sentences + srng.index(cfg.max_sentences - cfg.min_sentences + 1);
        std::size_t topic = srng.index(detail::kTopics.size());
        std::string text;
        for (std::size_t k = 0; k < n_sent; ++k) {
            if (k > 0 && srng.bernoulli(switch_p)) topic = (topic + 1 + srng.index(detail::kTopics.size() - 1)) % detail::kTopics.size();
            std::vector<std::string> sentence;
            const std::size_t n_words = 4 + srng.index(4);
            for (std::size_t w = 0; w < n_words; ++w)
                sentence.emplace_back(detail::kTopics[topic][srng.index(detail::kTopics[topic].size())]);
            for (const auto& [cat, p] : rates)
                if (srng.bernoulli(p)) {
                    const auto at = srng.index(sentence.size() + 1);
                    sentence.insert(sentence.begin() + static_cast<std::ptrdiff_t>(at), detail::pick(cat_words(cat), srng));
                }
            for (std::size_t w = 0; w < sentence.size(); ++w) {
                if (w > 0 && srng.bernoulli(0.15)) text += "，";
                text += sentence[w];
            }
            text += "。";
        }
        s.text = std::move(text);

        out.truth.push_back({s.id, z, {l3[0], l3[1], l3[2]}});
        out.corpus.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Truth sidecar

inline nlohmann::ordered_json to_json(const Truth& t) {
    return {{"id", t.id},
            {"latent", {{"depression", t.latent[0]}, {"anxiety", t.latent[1]}, {"trauma", t.latent[2]}}},
            {"planted",
             {{"depression", t.planted.depression}, {"anxiety", t.planted.anxiety}, {"trauma", t.planted.trauma}}}};
}

inline void write_truth(const std::vector<Truth>& truth, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    for (const auto& t : truth) out << to_json(t).dump() << '\n';
}

/// id -> planted severities.
inline std::map<std::string, evaluator::PlantedSeverity> read_truth(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot read truth file " + path.string());
    std::map<std::string, evaluator::PlantedSeverity> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            const auto& p = j.at("planted");
            out[j.at("id").get<std::string>()] = {p.at("depression"), p.at("anxiety"), p.at("trauma")};
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

} // namespace narralyze::synthetic
