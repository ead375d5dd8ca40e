#pragma once

// Layer 3: schema-constrained LLM narrative evaluation. Three protocols
// (propositional + rhetorical structure, Labov story grammar, clinical
// narrative dimensions), each validated with one repair round, plus a
// deterministic offline mock and flattening to 28 named features.

#include "narralyze/error.hpp"
#include "narralyze/hash.hpp"
#include "narralyze/providers.hpp"
#include "narralyze/resources.hpp"
#include "narralyze/unicode.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace narralyze::evaluator {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Vocabulary

enum class PropositionCategory { actions_facts, sensory_perception, direct_emotion, indirect_emotion, cognition };
inline constexpr std::array<std::string_view, 5> kPropositionCategories = {
    "actions_facts", "sensory_perception", "direct_emotion", "indirect_emotion", "cognition"};

inline constexpr std::array<std::string_view, 10> kRstRelations = {
    "elaboration", "cause",      "contrast",       "sequence",    "condition",
    "concession",  "background", "evaluation_rel", "restatement", "other"};

inline constexpr std::array<std::string_view, 3> kGroundingNames = {
    "narrative_time_score", "narrative_location_score", "narrative_detail_score"};

inline constexpr std::array<std::string_view, 6> kLabovNames = {
    "abstract", "orientation", "complicating_action", "evaluation", "resolution", "coda"};

/// Grouped 4/4/4/3: structural trauma processing, cognitive processing,
/// affective/agentic integration, global structural coherence.
inline constexpr std::array<std::string_view, 15> kClinicalNames = {
    "exposure_engagement",  "avoidance",          "overgeneralization",   "episodic_specificity",
    "cognitive_bias_score", "sense_making_depth", "causal_coherence",     "perspective_flexibility",
    "agency_score",         "affective_tone",     "emotional_granularity", "self_reported_distress_score",
    "temporal_consistency", "spatial_consistency", "contextual_density"};

inline constexpr std::array<std::size_t, 4> kClinicalGroupSizes = {4, 4, 4, 3};

template <std::size_t N>
constexpr std::optional<std::size_t> index_of(const std::array<std::string_view, N>& names, std::string_view s) {
    for (std::size_t i = 0; i < N; ++i)
        if (names[i] == s) return i;
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Domain types

struct PropositionUnit {
    std::string text_span;
    PropositionCategory category = PropositionCategory::actions_facts;
};

struct RstRelation {
    std::size_t pair_index = 0;
    std::string relation;
    int quality = 0;
};

struct RstAssessment {
    std::vector<RstRelation> relations;
    double global_coherence = 0.0;  // mean transition quality; 0 without relations
};

struct Ratios {
    double cognitive = 0.0;  // C_ratio
    double affective = 0.0;  // A_ratio
    double grounding = 0.0;  // G_ratio
};

struct PropositionalResult {
    std::vector<PropositionUnit> propositions;
    Ratios ratios;
    std::array<int, 3> grounding{};  // kGroundingNames order
    RstAssessment rst;
};

struct ScoredItem {
    int score = 0;
    std::string evidence;
};

struct LabovScores {
    std::array<ScoredItem, 6> items;  // kLabovNames order
};

struct ClinicalDimensions {
    std::array<ScoredItem, 15> items;  // kClinicalNames order
};

struct Provenance {
    std::string model_id;
    std::string prompt_hash;
    bool repaired = false;
};

enum class Protocol { propositional, labov, clinical };
inline constexpr std::array<Protocol, 3> kProtocols = {Protocol::propositional, Protocol::labov,
                                                       Protocol::clinical};

inline std::string_view to_string(Protocol p) {
    switch (p) {
    case Protocol::propositional: return "propositional";
    case Protocol::labov: return "labov";
    case Protocol::clinical: return "clinical";
    }
    return "?";
}

/// Outcome of one protocol: the validated value, or the reason it is missing.
template <typename T>
struct ProtocolOutcome {
    std::optional<T> value;
    Provenance provenance;
    json raw;           // accepted response, kept for auditing and reloading
    std::string error;  // set when value is empty
};

struct EvaluationResult {
    ProtocolOutcome<PropositionalResult> propositional;
    ProtocolOutcome<LabovScores> labov;
    ProtocolOutcome<ClinicalDimensions> clinical;
};

/// C = cognition, A = direct + indirect emotion, G = actions/facts + sensory perception.
inline Ratios compute_ratios(const std::vector<PropositionUnit>& props) {
    if (props.empty()) return {};
    std::array<std::size_t, 5> counts{};
    for (const auto& p : props) ++counts[static_cast<std::size_t>(p.category)];
    const double n = static_cast<double>(props.size());
    using C = PropositionCategory;
    auto at = [&](C c) { return static_cast<double>(counts[static_cast<std::size_t>(c)]); };
    return {at(C::cognition) / n, (at(C::direct_emotion) + at(C::indirect_emotion)) / n,
            (at(C::actions_facts) + at(C::sensory_perception)) / n};
}

// ---------------------------------------------------------------------------
// Validation

enum class SchemaErrorKind { parse, missing_field, type, range, cardinality, enumeration, evidence };

inline std::string_view to_string(SchemaErrorKind k) {
    switch (k) {
    case SchemaErrorKind::parse: return "parse";
    case SchemaErrorKind::missing_field: return "missing_field";
    case SchemaErrorKind::type: return "type";
    case SchemaErrorKind::range: return "range";
    case SchemaErrorKind::cardinality: return "cardinality";
    case SchemaErrorKind::enumeration: return "enumeration";
    case SchemaErrorKind::evidence: return "evidence";
    }
    return "?";
}

class SchemaError : public ValidationError {
public:
    SchemaError(SchemaErrorKind kind, const std::string& path, const std::string& message)
        : ValidationError(std::string(to_string(kind)) + " error at " + path + ": " + message), kind_(kind) {}
    SchemaErrorKind kind() const { return kind_; }

private:
    SchemaErrorKind kind_;
};

namespace detail {

inline const json& field(const json& obj, std::string_view key, const std::string& path) {
    if (!obj.is_object()) throw SchemaError(SchemaErrorKind::type, path, "expected an object");
    auto it = obj.find(std::string(key));
    if (it == obj.end()) throw SchemaError(SchemaErrorKind::missing_field, path, "missing '" + std::string(key) + "'");
    return *it;
}

inline int integer_in(const json& v, int lo, int hi, const std::string& path) {
    if (!v.is_number()) throw SchemaError(SchemaErrorKind::type, path, "expected an integer");
    const double d = v.get<double>();
    if (!std::isfinite(d) || d != std::floor(d)) throw SchemaError(SchemaErrorKind::type, path, "expected an integer");
    if (d < lo || d > hi)
        throw SchemaError(SchemaErrorKind::range, path,
                          "value " + v.dump() + " outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    return static_cast<int>(d);
}

inline std::string string_of(const json& v, const std::string& path) {
    if (!v.is_string()) throw SchemaError(SchemaErrorKind::type, path, "expected a string");
    return v.get<std::string>();
}

inline const json& array_of(const json& v, const std::string& path) {
    if (!v.is_array()) throw SchemaError(SchemaErrorKind::type, path, "expected an array");
    return v;
}

/// {"score": int in [lo, hi], "evidence": str}; evidence must be non-empty when score > 1.
inline ScoredItem scored_item(const json& v, int lo, int hi, const std::string& path) {
    ScoredItem item;
    item.score = integer_in(field(v, "score", path), lo, hi, path + ".score");
    if (auto it = v.find("evidence"); it != v.end() && !it->is_null())
        item.evidence = string_of(*it, path + ".evidence");
    const bool blank = std::all_of(item.evidence.begin(), item.evidence.end(),
                                   [](unsigned char c) { return std::isspace(c); });
    if (item.score > 1 && blank)
        throw SchemaError(SchemaErrorKind::evidence, path + ".evidence", "evidence required when score > 1");
    return item;
}

inline json parse_json(std::string_view text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw SchemaError(SchemaErrorKind::parse, "$", e.what());
    }
    if (!j.is_object()) throw SchemaError(SchemaErrorKind::type, "$", "top level must be an object");
    return j;
}

} // namespace detail

/// Ratios and global coherence are always recomputed here, never taken from the response.
inline PropositionalResult validate_propositional(const json& j) {
    using namespace detail;
    PropositionalResult r;
    const auto& props = array_of(field(j, "propositions", "$"), "$.propositions");
    if (props.empty()) throw SchemaError(SchemaErrorKind::cardinality, "$.propositions", "at least one proposition required");
    for (std::size_t i = 0; i < props.size(); ++i) {
        const auto path = "$.propositions[" + std::to_string(i) + "]";
        PropositionUnit u;
        u.text_span = string_of(field(props[i], "text", path), path + ".text");
        if (u.text_span.empty()) throw SchemaError(SchemaErrorKind::range, path + ".text", "empty span");
        const auto cat = string_of(field(props[i], "category", path), path + ".category");
        const auto idx = index_of(kPropositionCategories, cat);
        if (!idx) throw SchemaError(SchemaErrorKind::enumeration, path + ".category", "unknown category '" + cat + "'");
        u.category = static_cast<PropositionCategory>(*idx);
        r.propositions.push_back(std::move(u));
    }
    r.ratios = compute_ratios(r.propositions);
    const auto& grounding = field(j, "grounding", "$");
    for (std::size_t k = 0; k < kGroundingNames.size(); ++k)
        r.grounding[k] = integer_in(field(grounding, kGroundingNames[k], "$.grounding"), 0, 5,
                                    "$.grounding." + std::string(kGroundingNames[k]));
    const auto& rst = field(j, "rst", "$");
    const auto& rels = array_of(field(rst, "relations", "$.rst"), "$.rst.relations");
    double sum = 0.0;
    for (std::size_t i = 0; i < rels.size(); ++i) {
        const auto path = "$.rst.relations[" + std::to_string(i) + "]";
        RstRelation rel;
        const auto& pi = field(rels[i], "pair_index", path);
        if (!pi.is_number_integer() || pi.get<long long>() < 0)
            throw SchemaError(SchemaErrorKind::type, path + ".pair_index", "expected a non-negative integer");
        rel.pair_index = pi.get<std::size_t>();
        rel.relation = string_of(field(rels[i], "relation", path), path + ".relation");
        if (!index_of(kRstRelations, rel.relation))
            throw SchemaError(SchemaErrorKind::enumeration, path + ".relation", "unknown relation '" + rel.relation + "'");
        rel.quality = integer_in(field(rels[i], "quality", path), 0, 5, path + ".quality");
        sum += rel.quality;
        r.rst.relations.push_back(std::move(rel));
    }
    r.rst.global_coherence = rels.empty() ? 0.0 : sum / static_cast<double>(rels.size());
    return r;
}

inline LabovScores validate_labov(const json& j) {
    using namespace detail;
    LabovScores s;
    for (std::size_t k = 0; k < kLabovNames.size(); ++k)
        s.items[k] = scored_item(field(j, kLabovNames[k], "$"), 1, 5, "$." + std::string(kLabovNames[k]));
    return s;
}

inline ClinicalDimensions validate_clinical(const json& j) {
    using namespace detail;
    const auto& dims = field(j, "dimensions", "$");
    if (!dims.is_object()) throw SchemaError(SchemaErrorKind::type, "$.dimensions", "expected an object");
    if (dims.size() != kClinicalNames.size())
        throw SchemaError(SchemaErrorKind::cardinality, "$.dimensions",
                          "expected 15 dimensions, got " + std::to_string(dims.size()));
    for (const auto& [k, v] : dims.items())
        if (!index_of(kClinicalNames, k))
            throw SchemaError(SchemaErrorKind::enumeration, "$.dimensions", "unknown dimension '" + k + "'");
    ClinicalDimensions c;
    for (std::size_t k = 0; k < kClinicalNames.size(); ++k)
        c.items[k] = scored_item(field(dims, kClinicalNames[k], "$.dimensions"), 0, 5,
                                 "$.dimensions." + std::string(kClinicalNames[k]));
    return c;
}

// ---------------------------------------------------------------------------
// Serialization of accepted results (inverse of the validators)

inline json to_json(const PropositionalResult& r) {
    json props = json::array();
    for (const auto& p : r.propositions)
        props.push_back({{"text", p.text_span}, {"category", kPropositionCategories[static_cast<std::size_t>(p.category)]}});
    json grounding = json::object();
    for (std::size_t k = 0; k < 3; ++k) grounding[std::string(kGroundingNames[k])] = r.grounding[k];
    json rels = json::array();
    for (const auto& rel : r.rst.relations)
        rels.push_back({{"pair_index", rel.pair_index}, {"relation", rel.relation}, {"quality", rel.quality}});
    return {{"propositions", props}, {"grounding", grounding}, {"rst", {{"relations", rels}}}};
}

inline json to_json(const LabovScores& s) {
    json j = json::object();
    for (std::size_t k = 0; k < 6; ++k)
        j[std::string(kLabovNames[k])] = {{"score", s.items[k].score}, {"evidence", s.items[k].evidence}};
    return j;
}

inline json to_json(const ClinicalDimensions& c) {
    json dims = json::object();
    for (std::size_t k = 0; k < 15; ++k)
        dims[std::string(kClinicalNames[k])] = {{"score", c.items[k].score}, {"evidence", c.items[k].evidence}};
    return {{"dimensions", dims}};
}

// ---------------------------------------------------------------------------
// Prompts

struct Message {
    std::string role;
    std::string content;
};

struct RenderedPrompt {
    std::string system;
    std::string user;

    /// SHA-256 of the rendered prompt.
    std::string hash() const { return sha256_hex(system + "\n" + user); }
};

inline std::string_view template_for(Protocol p) {
    switch (p) {
    case Protocol::propositional: return resources::prompt_propositional;
    case Protocol::labov: return resources::prompt_labov;
    case Protocol::clinical: return resources::prompt_clinical;
    }
    return {};
}

inline std::string substitute(std::string_view tmpl, std::string_view key, std::string_view value) {
    std::string out(tmpl);
    const std::string marker = "{{" + std::string(key) + "}}";
    for (auto pos = out.find(marker); pos != std::string::npos; pos = out.find(marker, pos + value.size()))
        out.replace(pos, marker.size(), value);
    return out;
}

/// Splits a "[system] ... [user] ..." template and substitutes {{text}}.
inline RenderedPrompt render(std::string_view tmpl, std::string_view text) {
    const auto sys = tmpl.find("[system]\n");
    const auto usr = tmpl.find("[user]\n");
    if (sys == std::string_view::npos || usr == std::string_view::npos || usr < sys)
        throw ValidationError("prompt template must contain [system] and [user] sections");
    auto trim_end = [](std::string s) {
        while (!s.empty() && (s.back() == '\n' || s.back() == ' ')) s.pop_back();
        return s;
    };
    RenderedPrompt p;
    p.system = trim_end(std::string(tmpl.substr(sys + 9, usr - sys - 9)));
    p.user = trim_end(substitute(tmpl.substr(usr + 7), "text", text));
    return p;
}

inline RenderedPrompt render(Protocol p, std::string_view text) { return render(template_for(p), text); }

// ---------------------------------------------------------------------------
// Chat clients

struct ChatRequest {
    Protocol protocol = Protocol::propositional;
    std::string text;  // the narrative under evaluation
    std::vector<Message> messages;
};

class ChatClient {
public:
    virtual ~ChatClient() = default;
    /// Returns the assistant message content (expected to be a JSON object).
    virtual std::string complete(const ChatRequest& request) = 0;
    virtual std::string model_id() const = 0;
};

/// OpenAI-compatible chat completions at temperature 0 in JSON mode.
class RemoteChatClient : public ChatClient {
public:
    explicit RemoteChatClient(std::shared_ptr<providers::Client> client) : client_(std::move(client)) {}

    static json request_body(const std::string& model, const std::vector<Message>& messages) {
        json msgs = json::array();
        for (const auto& m : messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
        return {{"model", model},
                {"temperature", 0},
                {"response_format", {{"type", "json_object"}}},
                {"messages", msgs}};
    }

    std::string complete(const ChatRequest& request) override {
        const auto response = client_->call("/chat/completions", request_body(model_id(), request.messages));
        try {
            return response.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const json::exception&) {
            throw ProtocolError("chat response lacks choices[0].message.content");
        }
    }

    std::string model_id() const override { return client_->config().model_id; }

private:
    std::shared_ptr<providers::Client> client_;
};

/// Planted severity per condition, each in [0, 1]; drives the mock rule table.
struct PlantedSeverity {
    double depression = 0.5;
    double anxiety = 0.5;
    double trauma = 0.5;

    static PlantedSeverity uniform(double s) { return {s, s, s}; }
    double mean() const { return (depression + anxiety + trauma) / 3.0; }
};

namespace detail {

inline int level(double x, int lo, int hi, double offset = 0.5) {
    const double v = std::floor(lo + (hi - lo) * std::clamp(x, 0.0, 1.0) + offset);
    return static_cast<int>(std::clamp(v, static_cast<double>(lo), static_cast<double>(hi)));
}

inline std::string evidence_for(std::string_view name, int score, const std::vector<std::string>& sentences,
                                std::size_t salt) {
    if (score <= 1 || sentences.empty()) return {};
    return std::string(name) + ": \"" + sentences[(salt + score) % sentences.size()] + "\"";
}

/// Sentence-like spans for mock propositions; splits on CJK terminators.
inline std::vector<std::string> spans(std::string_view text) {
    std::vector<std::string> out;
    std::u32string cur;
    for (char32_t c : unicode::to_u32(text)) {
        const bool end = c == U'。' || c == U'！' || c == U'？' || c == U'；' || c == U'\n' || c == U'，';
        if (!end) cur.push_back(c);
        if (end || cur.size() >= 40) {
            auto s = unicode::to_utf8(cur);
            if (s.find_first_not_of(" \t\r") != std::string::npos) out.push_back(s);
            cur.clear();
        }
    }
    auto s = unicode::to_utf8(cur);
    if (s.find_first_not_of(" \t\r") != std::string::npos) out.push_back(s);
    if (out.empty()) out.emplace_back(text.empty() ? "(empty)" : std::string(text));
    return out;
}

} // namespace detail

/// Deterministic rule-based evaluation. Pathology-related clinical scores
/// rise and structural scores (Labov evaluation/resolution, time/detail
/// grounding) fall monotonically with planted severity. Output goes through
/// the same validators as live responses.
inline EvaluationResult mock_evaluate(std::string_view text, const PlantedSeverity& sev) {
    using detail::level;
    const auto sents = detail::spans(text);
    const auto salt = static_cast<std::size_t>(fnv1a64(text));
    const double dep = std::clamp(sev.depression, 0.0, 1.0);
    const double anx = std::clamp(sev.anxiety, 0.0, 1.0);
    const double tra = std::clamp(sev.trauma, 0.0, 1.0);
    const double mean = (dep + anx + tra) / 3.0;

    // Propositions: one per span, category drawn from a severity-dependent
    // mix by a hash of (text, index) so the rule stays a pure function.
    PropositionalResult prop;
    const std::array<double, 5> weights = {0.30 * (1.0 - 0.6 * mean), 0.20 * (1.0 - 0.5 * tra), 0.10 + 0.20 * anx,
                                           0.10 + 0.10 * mean, 0.15 + 0.30 * dep};
    const double wsum = weights[0] + weights[1] + weights[2] + weights[3] + weights[4];
    for (std::size_t i = 0; i < sents.size(); ++i) {
        double u = static_cast<double>(mix64(salt ^ (i * 0x9e37u)) >> 11) * 0x1.0p-53 * wsum;
        std::size_t cat = 0;
        while (cat < 4 && u >= weights[cat]) u -= weights[cat++];
        prop.propositions.push_back({sents[i], static_cast<PropositionCategory>(cat)});
    }
    prop.ratios = compute_ratios(prop.propositions);
    prop.grounding = {level(1.0 - tra, 0, 5), level(1.0 - anx, 0, 5), level(1.0 - dep, 0, 5)};
    for (std::size_t i = 0; i + 1 < sents.size(); ++i) {
        const auto h = mix64(salt + i);
        prop.rst.relations.push_back({i, std::string(kRstRelations[h % kRstRelations.size()]),
                                      level(1.0 - mean, 0, 5, static_cast<double>((h >> 8) % 100) / 100.0)});
    }
    double q = 0.0;
    for (const auto& r : prop.rst.relations) q += r.quality;
    prop.rst.global_coherence = prop.rst.relations.empty() ? 0.0 : q / static_cast<double>(prop.rst.relations.size());

    // Labov: a well-structured (low severity) narrative scores >= 4 throughout.
    LabovScores lab;
    const std::array<int, 6> labov_scores = {level(1.0 - 0.5 * mean, 1, 5), level(1.0 - 0.5 * tra, 1, 5),
                                             level(1.0 - 0.4 * anx, 1, 5), level(1.0 - dep, 1, 5),
                                             level(1.0 - 0.5 * (dep + anx), 1, 5, 0.25),
                                             level(1.0 - 0.5 * mean, 1, 5, 0.75)};
    for (std::size_t k = 0; k < 6; ++k)
        lab.items[k] = {labov_scores[k], detail::evidence_for(kLabovNames[k], labov_scores[k], sents, salt + k)};

    // Clinical dimensions; staggered rounding offsets spread the planted
    // severity across several integer scales.
    ClinicalDimensions clin;
    const std::array<int, 15> clinical_scores = {
        level(1.0 - tra, 0, 5, 0.3),               // exposure_engagement
        level(tra, 0, 5, 0.5),                     // avoidance
        level(0.6 * dep + 0.4 * tra, 0, 5, 0.7),   // overgeneralization
        level(1.0 - 0.5 * (dep + tra), 0, 5, 0.2), // episodic_specificity
        level(dep, 0, 5, 0.5),                     // cognitive_bias_score
        level(1.0 - dep, 0, 5, 0.15),              // sense_making_depth
        level(1.0 - 0.5 * (dep + anx), 0, 5, 0.6), // causal_coherence
        level(1.0 - anx, 0, 5, 0.35),              // perspective_flexibility
        level(1.0 - dep, 0, 5, 0.85),              // agency_score
        level(1.0 - mean, 0, 5, 0.4),              // affective_tone
        level(1.0 - 0.5 * (anx + dep), 0, 5, 0.1), // emotional_granularity
        level(anx, 0, 5, 0.5),                     // self_reported_distress_score
        level(1.0 - tra, 0, 5, 0.65),              // temporal_consistency
        level(1.0 - anx, 0, 5, 0.8),               // spatial_consistency
        level(1.0 - 0.5 * mean, 0, 5, 0.45),       // contextual_density
    };
    for (std::size_t k = 0; k < 15; ++k)
        clin.items[k] = {clinical_scores[k], detail::evidence_for(kClinicalNames[k], clinical_scores[k], sents, salt + k)};

    EvaluationResult r;
    const Provenance prov{"mock-evaluator", "", false};
    r.propositional.value = std::move(prop);
    r.propositional.provenance = prov;
    r.propositional.raw = to_json(*r.propositional.value);
    r.labov.value = lab;
    r.labov.provenance = prov;
    r.labov.raw = to_json(lab);
    r.clinical.value = clin;
    r.clinical.provenance = prov;
    r.clinical.raw = to_json(clin);
    return r;
}

inline EvaluationResult mock_evaluate(std::string_view text, double planted_severity) {
    return mock_evaluate(text, PlantedSeverity::uniform(planted_severity));
}

/// Offline chat client answering every protocol with mock_evaluate output.
class MockChatClient : public ChatClient {
public:
    using SeverityLookup = std::function<PlantedSeverity(std::string_view text)>;

    explicit MockChatClient(SeverityLookup lookup = {})
        : lookup_(lookup ? std::move(lookup) : SeverityLookup([](std::string_view) { return PlantedSeverity{}; })) {}

    std::string complete(const ChatRequest& request) override {
        const auto r = mock_evaluate(request.text, lookup_(request.text));
        switch (request.protocol) {
        case Protocol::propositional: return r.propositional.raw.dump();
        case Protocol::labov: return r.labov.raw.dump();
        case Protocol::clinical: return r.clinical.raw.dump();
        }
        return "{}";
    }

    std::string model_id() const override { return "mock-evaluator"; }

private:
    SeverityLookup lookup_;
};

// ---------------------------------------------------------------------------
// Protocol execution

template <typename T>
ProtocolOutcome<T> run_protocol(Protocol protocol, std::string_view text, ChatClient& client,
                                T (*validate)(const json&)) {
    ProtocolOutcome<T> out;
    const auto prompt = render(protocol, text);
    out.provenance = {client.model_id(), prompt.hash(), false};
    ChatRequest req{protocol, std::string(text), {{"system", prompt.system}, {"user", prompt.user}}};
    auto reply = client.complete(req);
    try {
        auto j = detail::parse_json(reply);
        out.value = validate(j);
        out.raw = std::move(j);
        return out;
    } catch (const SchemaError& first) {
        // One repair round: echo the reply and the validator's message.
        req.messages.push_back({"assistant", reply});
        req.messages.push_back({"user", substitute(resources::prompt_repair, "error", first.what())});
        out.provenance.repaired = true;
        reply = client.complete(req);
        try {
            auto j = detail::parse_json(reply);
            out.value = validate(j);
            out.raw = std::move(j);
        } catch (const SchemaError& second) {
            out.error = second.what();
        }
    }
    return out;
}

inline ProtocolOutcome<PropositionalResult> evaluate_propositional(std::string_view text, ChatClient& client) {
    return run_protocol<PropositionalResult>(Protocol::propositional, text, client, &validate_propositional);
}

inline ProtocolOutcome<LabovScores> evaluate_labov(std::string_view text, ChatClient& client) {
    return run_protocol<LabovScores>(Protocol::labov, text, client, &validate_labov);
}

inline ProtocolOutcome<ClinicalDimensions> evaluate_clinical(std::string_view text, ChatClient& client) {
    return run_protocol<ClinicalDimensions>(Protocol::clinical, text, client, &validate_clinical);
}

/// Runs all three protocols. Provider failures mark the protocol missing.
inline EvaluationResult evaluate(std::string_view text, ChatClient& client, Warnings* warnings = nullptr) {
    EvaluationResult r;
    auto guarded = [&](auto fn, auto& slot, Protocol p) {
        try {
            slot = fn(text, client);
        } catch (const ProviderError& e) {
            slot.error = e.what();
            warn(warnings, std::string(to_string(p)) + " protocol failed: " + e.what());
        }
        if (!slot.value && !slot.error.empty()) warn(warnings, std::string(to_string(p)) + ": " + slot.error);
    };
    guarded(evaluate_propositional, r.propositional, Protocol::propositional);
    guarded(evaluate_labov, r.labov, Protocol::labov);
    guarded(evaluate_clinical, r.clinical, Protocol::clinical);
    return r;
}

// ---------------------------------------------------------------------------
// Flattening

inline constexpr std::size_t kL3FeatureCount = 28;

inline const std::array<std::string, kL3FeatureCount>& l3_feature_names() {
    static const auto names = [] {
        std::array<std::string, kL3FeatureCount> n;
        std::size_t k = 0;
        for (auto s : {"C_ratio", "A_ratio", "G_ratio"}) n[k++] = s;
        for (auto s : kGroundingNames) n[k++] = std::string(s);
        n[k++] = "rst_global_coherence";
        for (auto s : kLabovNames) n[k++] = std::string(s);
        for (auto s : kClinicalNames) n[k++] = std::string(s);
        return n;
    }();
    return names;
}

/// Column ranges per protocol inside the 28-feature block.
inline constexpr std::size_t kPropositionalBegin = 0, kPropositionalEnd = 7;
inline constexpr std::size_t kLabovBegin = 7, kLabovEnd = 13;
inline constexpr std::size_t kClinicalBegin = 13, kClinicalEnd = 28;

struct L3Features {
    std::array<double, kL3FeatureCount> values{};
    std::array<bool, kL3FeatureCount> missing{};
    std::array<bool, 3> protocol_missing{};

    bool any_missing() const { return protocol_missing[0] || protocol_missing[1] || protocol_missing[2]; }
    bool all_missing() const { return protocol_missing[0] && protocol_missing[1] && protocol_missing[2]; }
};

/// 3 ratios + 3 grounding + RST global coherence + 6 Labov + 15 clinical.
/// Failed protocols contribute zero-filled cells marked missing.
inline L3Features flatten_l3(const EvaluationResult& r) {
    L3Features f;
    if (r.propositional.value) {
        const auto& p = *r.propositional.value;
        f.values[0] = p.ratios.cognitive;
        f.values[1] = p.ratios.affective;
        f.values[2] = p.ratios.grounding;
        for (std::size_t k = 0; k < 3; ++k) f.values[3 + k] = p.grounding[k];
        f.values[6] = p.rst.global_coherence;
    } else {
        f.protocol_missing[0] = true;
        for (auto k = kPropositionalBegin; k < kPropositionalEnd; ++k) f.missing[k] = true;
    }
    if (r.labov.value) {
        for (std::size_t k = 0; k < 6; ++k) f.values[kLabovBegin + k] = r.labov.value->items[k].score;
    } else {
        f.protocol_missing[1] = true;
        for (auto k = kLabovBegin; k < kLabovEnd; ++k) f.missing[k] = true;
    }
    if (r.clinical.value) {
        for (std::size_t k = 0; k < 15; ++k) f.values[kClinicalBegin + k] = r.clinical.value->items[k].score;
    } else {
        f.protocol_missing[2] = true;
        for (auto k = kClinicalBegin; k < kClinicalEnd; ++k) f.missing[k] = true;
    }
    return f;
}

// ---------------------------------------------------------------------------
// Persistence (one JSON object per sample)

template <typename T>
json outcome_to_json(const ProtocolOutcome<T>& o) {
    json j = {{"model_id", o.provenance.model_id},
              {"prompt_hash", o.provenance.prompt_hash},
              {"repaired", o.provenance.repaired}};
    if (o.value) {
        j["response"] = o.raw;
    } else {
        j["response"] = nullptr;
        j["error"] = o.error;
    }
    return j;
}

inline json to_json(const EvaluationResult& r) {
    return {{"propositional", outcome_to_json(r.propositional)},
            {"labov", outcome_to_json(r.labov)},
            {"clinical", outcome_to_json(r.clinical)}};
}

template <typename T>
ProtocolOutcome<T> outcome_from_json(const json& j, T (*validate)(const json&)) {
    ProtocolOutcome<T> o;
    o.provenance = {j.value("model_id", ""), j.value("prompt_hash", ""), j.value("repaired", false)};
    if (j.contains("response") && !j["response"].is_null()) {
        o.raw = j["response"];
        o.value = validate(o.raw);
    } else {
        o.error = j.value("error", "missing");
    }
    return o;
}

/// Re-validates stored responses, so a tampered file cannot inject out-of-range values.
inline EvaluationResult result_from_json(const json& j) {
    EvaluationResult r;
    r.propositional = outcome_from_json<PropositionalResult>(j.at("propositional"), &validate_propositional);
    r.labov = outcome_from_json<LabovScores>(j.at("labov"), &validate_labov);
    r.clinical = outcome_from_json<ClinicalDimensions>(j.at("clinical"), &validate_clinical);
    return r;
}

} // namespace narralyze::evaluator
