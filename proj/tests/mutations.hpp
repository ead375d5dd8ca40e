#pragma once

// Structured corruptions of valid evaluator responses, each paired with the
// error class the validators must report.

#include "narralyze/evaluator.hpp"
#include "narralyze/random.hpp"

#include <string>
#include <vector>

namespace mutations {

using narralyze::evaluator::json;
using narralyze::evaluator::Protocol;
using narralyze::evaluator::SchemaErrorKind;

struct Mutant {
    std::string text;  // serialized response
    SchemaErrorKind expected;
    std::string label;
};

inline std::string pick_key(const json& obj, narralyze::Rng& rng) {
    std::vector<std::string> keys;
    for (const auto& [k, _] : obj.items()) keys.push_back(k);
    return keys[rng.index(keys.size())];
}

/// A valid object for `p` mutated in one of several ways.
inline Mutant mutate(Protocol p, json valid, narralyze::Rng& rng) {
    const int kind = static_cast<int>(rng.index(5));
    switch (p) {
    case Protocol::labov: {
        const auto key = pick_key(valid, rng);
        switch (kind) {
        case 0: valid[key]["score"] = rng.bernoulli(0.5) ? 6 : 0; return {valid.dump(), SchemaErrorKind::range, "labov range"};
        case 1: valid.erase(key); return {valid.dump(), SchemaErrorKind::missing_field, "labov missing component"};
        case 2: valid[key].erase("score"); return {valid.dump(), SchemaErrorKind::missing_field, "labov missing score"};
        case 3: valid[key]["score"] = "high"; return {valid.dump(), SchemaErrorKind::type, "labov type"};
        default: {
            auto s = valid.dump();
            return {s.substr(0, s.size() / 2), SchemaErrorKind::parse, "labov truncated"};
        }
        }
    }
    case Protocol::clinical: {
        auto& dims = valid["dimensions"];
        const auto key = pick_key(dims, rng);
        switch (kind) {
        case 0: dims[key]["score"] = rng.bernoulli(0.5) ? 9 : -1; return {valid.dump(), SchemaErrorKind::range, "clinical range"};
        case 1: dims.erase(key); return {valid.dump(), SchemaErrorKind::cardinality, "clinical 14 dimensions"};
        case 2: dims["extra_dimension"] = {{"score", 1}, {"evidence", ""}}; return {valid.dump(), SchemaErrorKind::cardinality, "clinical 16 dimensions"};
        case 3: valid.erase("dimensions"); return {valid.dump(), SchemaErrorKind::missing_field, "clinical missing dimensions"};
        default: {
            json renamed = json::object();
            for (auto& [k, v] : dims.items()) renamed[k == key ? "made_up_dimension" : k] = v;
            dims = renamed;
            return {valid.dump(), SchemaErrorKind::enumeration, "clinical unknown dimension"};
        }
        }
    }
    case Protocol::propositional:
    default: {
        switch (kind) {
        case 0: {
            const auto key = pick_key(valid["grounding"], rng);
            valid["grounding"][key] = 7;
            return {valid.dump(), SchemaErrorKind::range, "grounding range"};
        }
        case 1: valid["propositions"] = json::array(); return {valid.dump(), SchemaErrorKind::cardinality, "no propositions"};
        case 2: valid.erase(rng.bernoulli(0.5) ? "grounding" : "rst"); return {valid.dump(), SchemaErrorKind::missing_field, "propositional missing block"};
        case 3: valid["propositions"][0]["category"] = "daydream"; return {valid.dump(), SchemaErrorKind::enumeration, "unknown category"};
        default:
            if (!valid["rst"]["relations"].empty()) {
                valid["rst"]["relations"][0]["quality"] = 6;
                return {valid.dump(), SchemaErrorKind::range, "rst quality range"};
            }
            valid["propositions"][0].erase("text");
            return {valid.dump(), SchemaErrorKind::missing_field, "proposition without text"};
        }
    }
    }
}

/// Runs the protocol's validator on a serialized response.
inline void validate(Protocol p, const std::string& text) {
    using namespace narralyze::evaluator;
    const auto j = detail::parse_json(text);
    switch (p) {
    case Protocol::propositional: validate_propositional(j); break;
    case Protocol::labov: validate_labov(j); break;
    case Protocol::clinical: validate_clinical(j); break;
    }
}

} // namespace mutations
