#include "narralyze/evaluator.hpp"
#include "mutations.hpp"

#include <gtest/gtest.h>

#include <deque>

using namespace narralyze;
using namespace narralyze::evaluator;

namespace {

const char* kText = "那年夏天我们去了海边。天气很好，我记得很清楚。后来我很难过，因为朋友离开了。";

SchemaErrorKind kind_of(Protocol p, const std::string& text) {
    try {
        mutations::validate(p, text);
    } catch (const SchemaError& e) {
        return e.kind();
    }
    ADD_FAILURE() << "accepted: " << text;
    return SchemaErrorKind::parse;
}

/// Returns scripted replies in order, recording requests.
class ScriptedChat : public ChatClient {
public:
    explicit ScriptedChat(std::deque<std::string> replies) : replies_(std::move(replies)) {}
    std::string complete(const ChatRequest& r) override {
        requests.push_back(r);
        if (replies_.empty()) throw ProviderError("script exhausted");
        auto s = replies_.front();
        replies_.pop_front();
        return s;
    }
    std::string model_id() const override { return "scripted"; }
    std::vector<ChatRequest> requests;

private:
    std::deque<std::string> replies_;
};

} // namespace

TEST(Ratios, SumToOneAndMatchCounts) {
    using C = PropositionCategory;
    const std::vector<PropositionUnit> props = {{"a", C::cognition}, {"b", C::direct_emotion}, {"c", C::indirect_emotion},
                                                {"d", C::actions_facts}};
    const auto r = compute_ratios(props);
    EXPECT_DOUBLE_EQ(r.cognitive, 0.25);
    EXPECT_DOUBLE_EQ(r.affective, 0.5);
    EXPECT_DOUBLE_EQ(r.grounding, 0.25);
}

TEST(Validate, RecomputesRatiosAndCoherence) {
    const json j = {{"propositions", {{{"text", "x"}, {"category", "cognition"}}, {{"text", "y"}, {"category", "sensory_perception"}}}},
                    {"ratios", {{"C", 0.9}}},
                    {"grounding", {{"narrative_time_score", 1}, {"narrative_location_score", 2}, {"narrative_detail_score", 3}}},
                    {"rst", {{"relations", {{{"pair_index", 0}, {"relation", "cause"}, {"quality", 4}},
                                            {{"pair_index", 1}, {"relation", "contrast"}, {"quality", 1}}}},
                             {"global_coherence", 5}}}};
    const auto r = validate_propositional(j);
    EXPECT_DOUBLE_EQ(r.ratios.cognitive, 0.5);
    EXPECT_DOUBLE_EQ(r.ratios.grounding, 0.5);
    EXPECT_DOUBLE_EQ(r.rst.global_coherence, 2.5);
}

TEST(Validate, EvidenceRequiredAboveOne) {
    json j = to_json(*mock_evaluate(kText, 0.0).labov.value);
    j["abstract"] = {{"score", 3}, {"evidence", "  "}};
    EXPECT_EQ(kind_of(Protocol::labov, j.dump()), SchemaErrorKind::evidence);
    j["abstract"] = {{"score", 1}};
    EXPECT_NO_THROW(validate_labov(j));
}

TEST(Validate, LabovIgnoresExtraKeys) {
    json j = to_json(*mock_evaluate(kText, 0.3).labov.value);
    j["commentary"] = "fine";
    EXPECT_NO_THROW(validate_labov(j));
}

TEST(Validate, FuzzedMutantsRejectedWithTheRightKind) {
    Rng rng(12);
    for (int i = 0; i < 300; ++i) {
        const auto sev = PlantedSeverity{rng.uniform(), rng.uniform(), rng.uniform()};
        const auto r = mock_evaluate(kText, sev);
        for (auto p : kProtocols) {
            const json valid = p == Protocol::propositional ? r.propositional.raw : p == Protocol::labov ? r.labov.raw : r.clinical.raw;
            const auto m = mutations::mutate(p, valid, rng);
            EXPECT_EQ(kind_of(p, m.text), m.expected) << m.label;
        }
    }
}

TEST(Mock, OutputsAlwaysValidate) {
    Rng rng(5);
    for (int i = 0; i < 200; ++i) {
        const auto r = mock_evaluate(kText, PlantedSeverity{rng.uniform(), rng.uniform(), rng.uniform()});
        const auto p = validate_propositional(r.propositional.raw);
        validate_labov(r.labov.raw);
        validate_clinical(r.clinical.raw);
        EXPECT_NEAR(p.ratios.cognitive + p.ratios.affective + p.ratios.grounding, 1.0, 1e-9);
    }
}

TEST(Mock, ZeroSeverityScoresLabovHigh) {
    const auto r = mock_evaluate(kText, 0.0);
    for (const auto& item : r.labov.value->items) EXPECT_GE(item.score, 4);
}

TEST(Mock, ScoresMoveWithSeverity) {
    const auto lo = mock_evaluate(kText, PlantedSeverity{0.05, 0.05, 0.05});
    const auto hi = mock_evaluate(kText, PlantedSeverity{0.95, 0.95, 0.95});
    const auto idx = *index_of(kClinicalNames, "cognitive_bias_score");
    EXPECT_LT(lo.clinical.value->items[idx].score, hi.clinical.value->items[idx].score);
    const auto agency = *index_of(kClinicalNames, "agency_score");
    EXPECT_GT(lo.clinical.value->items[agency].score, hi.clinical.value->items[agency].score);
}

TEST(Protocol, OneRepairRound) {
    const auto good = mock_evaluate(kText, 0.5).labov.raw.dump();
    ScriptedChat ok({"not json", good});
    const auto r = evaluate_labov(kText, ok);
    ASSERT_TRUE(r.value);
    EXPECT_TRUE(r.provenance.repaired);
    ASSERT_EQ(ok.requests.size(), 2u);
    EXPECT_EQ(ok.requests[1].messages.size(), 4u);
    EXPECT_EQ(ok.requests[1].messages[2].role, "assistant");

    ScriptedChat bad({"{}", "{}", good});
    const auto r2 = evaluate_labov(kText, bad);
    EXPECT_FALSE(r2.value);
    EXPECT_FALSE(r2.error.empty());
    EXPECT_EQ(bad.requests.size(), 2u);
}

TEST(Protocol, ProvenanceHashesPrompt) {
    MockChatClient mock;
    const auto r = evaluate(kText, mock);
    EXPECT_EQ(r.clinical.provenance.prompt_hash, render(Protocol::clinical, kText).hash());
    EXPECT_EQ(r.clinical.provenance.prompt_hash.size(), 64u);
    EXPECT_NE(r.clinical.provenance.prompt_hash, r.labov.provenance.prompt_hash);
}

TEST(Protocol, RenderedPromptContainsText) {
    const auto p = render(Protocol::propositional, kText);
    EXPECT_NE(p.user.find(kText), std::string::npos);
    EXPECT_EQ(p.system.find("{{"), std::string::npos);
}

TEST(Evaluate, ProviderFailureMarksProtocolMissing) {
    ScriptedChat chat({mock_evaluate(kText, 0.5).propositional.raw.dump()});
    Warnings w;
    const auto r = evaluate(kText, chat, &w);
    EXPECT_TRUE(r.propositional.value);
    EXPECT_FALSE(r.labov.value);
    EXPECT_FALSE(r.clinical.value);
    const auto f = flatten_l3(r);
    EXPECT_TRUE(f.any_missing());
    EXPECT_FALSE(f.all_missing());
    for (auto k = kLabovBegin; k < kClinicalEnd; ++k) EXPECT_TRUE(f.missing[k]);
    EXPECT_FALSE(w.empty());
}

TEST(Persistence, RoundTripRevalidates) {
    const auto r = mock_evaluate(kText, 0.7);
    const auto back = result_from_json(to_json(r));
    EXPECT_EQ(flatten_l3(back).values, flatten_l3(r).values);
    auto tampered = to_json(r);
    tampered["labov"]["response"]["coda"]["score"] = 11;
    EXPECT_THROW(result_from_json(tampered), SchemaError);
}

TEST(Flatten, TwentyEightNamedColumns) {
    EXPECT_EQ(l3_feature_names().size(), 28u);
    EXPECT_EQ(l3_feature_names()[kClinicalBegin], "exposure_engagement");
    std::size_t total = 0;
    for (auto g : kClinicalGroupSizes) total += g;
    EXPECT_EQ(total, 15u);
}
