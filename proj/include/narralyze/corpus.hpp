#pragma once

// Sample data model, JSONL corpus ingestion, score normalization and
// severity binning.

#include "narralyze/error.hpp"
#include "narralyze/lexicon.hpp"
#include "narralyze/unicode.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace narralyze {

enum class Condition { depression, anxiety, trauma };
inline constexpr std::array<Condition, 3> kConditions = {Condition::depression, Condition::anxiety,
                                                          Condition::trauma};

inline std::string_view to_string(Condition c) {
    switch (c) {
    case Condition::depression: return "depression";
    case Condition::anxiety: return "anxiety";
    case Condition::trauma: return "trauma";
    }
    return "?";
}

inline std::optional<Condition> parse_condition(std::string_view s) {
    for (auto c : kConditions)
        if (to_string(c) == s) return c;
    return std::nullopt;
}

enum class Gender { female, male, unspecified };

inline std::string_view to_string(Gender g) {
    switch (g) {
    case Gender::female: return "female";
    case Gender::male: return "male";
    case Gender::unspecified: return "unspecified";
    }
    return "?";
}

inline std::optional<Gender> parse_gender(std::string_view s) {
    for (auto g : {Gender::female, Gender::male, Gender::unspecified})
        if (to_string(g) == s) return g;
    return std::nullopt;
}

struct InstrumentScore {
    Condition condition = Condition::depression;
    std::string instrument_id;
    double raw = 0.0;
    double max = 1.0;
    friend bool operator==(const InstrumentScore&, const InstrumentScore&) = default;
};

struct WritingSample {
    std::string id;
    std::string text;
    std::optional<double> age;
    Gender gender = Gender::unspecified;
    std::string cohort;
    std::vector<InstrumentScore> scores;
    friend bool operator==(const WritingSample&, const WritingSample&) = default;
};

using Corpus = std::vector<WritingSample>;

/// raw / max, with 0 <= raw <= max and max > 0 enforced.
inline double normalize_score(double raw, double max) {
    if (!(max > 0.0) || !std::isfinite(max)) throw DomainError("instrument maximum must be > 0");
    if (!(raw >= 0.0) || raw > max) throw DomainError("raw score must lie in [0, max]");
    return raw / max;
}

/// Ascending cut points on the normalized score. A value equal to a cut point
/// belongs to the higher level.
class SeverityBins {
public:
    SeverityBins() = default;
    explicit SeverityBins(std::vector<double> cuts) : cuts_(std::move(cuts)) {
        for (std::size_t i = 0; i < cuts_.size(); ++i) {
            if (!(cuts_[i] > 0.0 && cuts_[i] <= 1.0))
                throw ValidationError("severity boundaries must lie in (0, 1]");
            if (i > 0 && !(cuts_[i] > cuts_[i - 1]))
                throw ValidationError("severity boundaries must be strictly increasing");
        }
    }

    /// Equal-width defaults: 4 levels for depression/anxiety, 5 for trauma.
    static SeverityBins defaults(Condition c) {
        if (c == Condition::trauma) return SeverityBins({0.20, 0.40, 0.60, 0.80});
        return SeverityBins({0.25, 0.50, 0.75});
    }

    int level(double normalized) const {
        if (!(normalized >= 0.0 && normalized <= 1.0))
            throw DomainError("normalized score must lie in [0, 1]");
        return static_cast<int>(std::upper_bound(cuts_.begin(), cuts_.end(), normalized) - cuts_.begin());
    }

    int level_count() const { return static_cast<int>(cuts_.size()) + 1; }
    const std::vector<double>& cuts() const { return cuts_; }

private:
    std::vector<double> cuts_;
};

struct SeverityConfig {
    SeverityBins depression = SeverityBins::defaults(Condition::depression);
    SeverityBins anxiety = SeverityBins::defaults(Condition::anxiety);
    SeverityBins trauma = SeverityBins::defaults(Condition::trauma);

    const SeverityBins& operator[](Condition c) const {
        switch (c) {
        case Condition::depression: return depression;
        case Condition::anxiety: return anxiety;
        case Condition::trauma: return trauma;
        }
        return depression;
    }
    SeverityBins& operator[](Condition c) {
        return const_cast<SeverityBins&>(std::as_const(*this)[c]);
    }
};

inline int bin_severity(double normalized, Condition c, const SeverityConfig& config = {}) {
    return config[c].level(normalized);
}

struct NormalizedOutcome {
    Condition condition = Condition::depression;
    double normalized = 0.0;
    int severity = 0;
};

/// Normalized outcome for one condition. Several instruments for the same
/// condition are averaged after normalization.
inline std::optional<NormalizedOutcome> outcome(const WritingSample& s, Condition c,
                                                const SeverityConfig& config = {}) {
    double sum = 0.0;
    int n = 0;
    for (const auto& sc : s.scores) {
        if (sc.condition != c) continue;
        sum += normalize_score(sc.raw, sc.max);
        ++n;
    }
    if (n == 0) return std::nullopt;
    const double v = sum / n;
    return NormalizedOutcome{c, v, bin_severity(v, c, config)};
}

inline constexpr std::size_t kMinEligibleWords = 100;

/// Number of segmented tokens (whitespace and punctuation excluded).
inline std::size_t word_count(std::string_view text,
                              const lexicon::Dictionary& dict = lexicon::Dictionary::demo()) {
    return lexicon::segment(text, dict).size();
}

/// Eligible samples have strictly more than 100 tokens.
inline bool is_eligible(std::size_t words) { return words > kMinEligibleWords; }

// ---------------------------------------------------------------------------
// JSONL exchange format

inline nlohmann::ordered_json to_json(const WritingSample& s) {
    nlohmann::ordered_json j;
    j["id"] = s.id;
    j["text"] = s.text;
    j["age"] = s.age ? nlohmann::ordered_json(*s.age) : nlohmann::ordered_json(nullptr);
    j["gender"] = to_string(s.gender);
    j["cohort"] = s.cohort;
    auto scores = nlohmann::ordered_json::array();
    for (const auto& sc : s.scores) {
        nlohmann::ordered_json o;
        o["condition"] = to_string(sc.condition);
        o["instrument"] = sc.instrument_id;
        o["raw"] = sc.raw;
        o["max"] = sc.max;
        scores.push_back(std::move(o));
    }
    j["scores"] = std::move(scores);
    return j;
}

namespace detail {

inline const nlohmann::json& require(const nlohmann::json& j, const char* key, const std::string& where) {
    auto it = j.find(key);
    if (it == j.end()) throw ValidationError(where + ": missing field '" + key + "'");
    return *it;
}

inline std::string require_string(const nlohmann::json& j, const char* key, const std::string& where) {
    const auto& v = require(j, key, where);
    if (!v.is_string()) throw ValidationError(where + ": field '" + key + "' must be a string");
    return v.get<std::string>();
}

inline double require_number(const nlohmann::json& j, const char* key, const std::string& where) {
    const auto& v = require(j, key, where);
    if (!v.is_number()) throw ValidationError(where + ": field '" + key + "' must be a number");
    return v.get<double>();
}

} // namespace detail

/// Parses and validates one corpus record. `where` prefixes diagnostics.
inline WritingSample sample_from_json(const nlohmann::json& j, const std::string& where) {
    using namespace detail;
    if (!j.is_object()) throw ValidationError(where + ": record must be a JSON object");
    WritingSample s;
    s.id = require_string(j, "id", where);
    if (s.id.empty()) throw ValidationError(where + ": field 'id' must be non-empty");
    s.text = unicode::nfc(require_string(j, "text", where));
    if (std::all_of(s.text.begin(), s.text.end(), [](unsigned char c) { return std::isspace(c); }))
        throw ValidationError(where + ": field 'text' must be non-empty");
    if (auto it = j.find("age"); it != j.end() && !it->is_null()) {
        if (!it->is_number()) throw ValidationError(where + ": field 'age' must be a number or null");
        const double age = it->get<double>();
        if (!(age >= 5.0 && age <= 100.0))
            throw ValidationError(where + ": field 'age' must lie in [5, 100]");
        s.age = age;
    }
    if (auto it = j.find("gender"); it != j.end() && !it->is_null()) {
        if (!it->is_string()) throw ValidationError(where + ": field 'gender' must be a string");
        auto g = parse_gender(it->get<std::string>());
        if (!g) throw ValidationError(where + ": field 'gender' must be female, male or unspecified");
        s.gender = *g;
    }
    if (auto it = j.find("cohort"); it != j.end() && !it->is_null()) {
        if (!it->is_string()) throw ValidationError(where + ": field 'cohort' must be a string");
        s.cohort = it->get<std::string>();
    }
    if (auto it = j.find("scores"); it != j.end()) {
        if (!it->is_array()) throw ValidationError(where + ": field 'scores' must be an array");
        std::size_t k = 0;
        for (const auto& o : *it) {
            const auto at = where + ": scores[" + std::to_string(k++) + "]";
            if (!o.is_object()) throw ValidationError(at + " must be an object");
            InstrumentScore sc;
            auto cond = parse_condition(require_string(o, "condition", at));
            if (!cond) throw ValidationError(at + ": field 'condition' must be depression, anxiety or trauma");
            sc.condition = *cond;
            sc.instrument_id = require_string(o, "instrument", at);
            sc.raw = require_number(o, "raw", at);
            sc.max = require_number(o, "max", at);
            if (!(sc.max > 0.0)) throw ValidationError(at + ": field 'max' must be > 0");
            if (!(sc.raw >= 0.0)) throw ValidationError(at + ": field 'raw' must be >= 0");
            if (sc.raw > sc.max) throw ValidationError(at + ": field 'raw' exceeds 'max'");
            s.scores.push_back(std::move(sc));
        }
    }
    return s;
}

/// Reads a JSONL corpus. Each problem is reported with its line number; ids must be unique.
inline Corpus ingest_stream(std::istream& in, const std::string& origin = "<corpus>",
                            Warnings* warnings = nullptr) {
    Corpus corpus;
    std::set<std::string> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        const auto where = origin + ":" + std::to_string(line_no);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw ValidationError(where + ": malformed JSON (" + e.what() + ")");
        }
        auto s = sample_from_json(j, where);
        if (!seen.insert(s.id).second) throw ValidationError(where + ": duplicate id '" + s.id + "'");
        corpus.push_back(std::move(s));
    }
    if (corpus.empty()) warn(warnings, origin + ": corpus is empty");
    return corpus;
}

inline Corpus ingest(const std::filesystem::path& path, Warnings* warnings = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open corpus file: " + path.string());
    return ingest_stream(in, path.string(), warnings);
}

inline void emit(const Corpus& corpus, std::ostream& out) {
    for (const auto& s : corpus) out << to_json(s).dump() << '\n';
}

inline void emit(const Corpus& corpus, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot write corpus file: " + path.string());
    emit(corpus, out);
}

} // namespace narralyze
