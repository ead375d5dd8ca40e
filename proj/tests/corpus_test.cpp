#include "narralyze/corpus.hpp"
#include "narralyze/synthetic.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace narralyze;

TEST(Severity, BoundaryGoesToHigherLevel) {
    EXPECT_EQ(bin_severity(0.25, Condition::depression), 1);
    EXPECT_EQ(bin_severity(0.2499, Condition::depression), 0);
    EXPECT_EQ(bin_severity(1.0, Condition::depression), 3);
    EXPECT_EQ(bin_severity(0.8, Condition::trauma), 4);
    EXPECT_EQ(bin_severity(0.0, Condition::trauma), 0);
}

TEST(Severity, RejectsBadBoundaries) {
    EXPECT_THROW(SeverityBins({0.5, 0.4}), ValidationError);
    EXPECT_THROW(SeverityBins({0.0, 0.4}), ValidationError);
    EXPECT_THROW(SeverityBins::defaults(Condition::anxiety).level(1.2), DomainError);
}

TEST(Normalize, EnforcesDomain) {
    EXPECT_DOUBLE_EQ(normalize_score(9, 27), 1.0 / 3.0);
    EXPECT_THROW(normalize_score(28, 27), DomainError);
    EXPECT_THROW(normalize_score(-1, 27), DomainError);
    EXPECT_THROW(normalize_score(1, 0), DomainError);
}

TEST(Outcome, AveragesInstrumentsOfOneCondition) {
    WritingSample s;
    s.scores = {{Condition::anxiety, "GAD-7", 21, 21}, {Condition::anxiety, "X", 0, 10}};
    const auto o = outcome(s, Condition::anxiety);
    ASSERT_TRUE(o);
    EXPECT_DOUBLE_EQ(o->normalized, 0.5);
    EXPECT_EQ(o->severity, 2);
    EXPECT_FALSE(outcome(s, Condition::trauma));
}

TEST(Eligibility, StrictlyMoreThanHundredWords) {
    EXPECT_FALSE(is_eligible(100));
    EXPECT_TRUE(is_eligible(101));
    std::string text;
    for (int i = 0; i < 101; ++i) text += "我";
    EXPECT_EQ(word_count(text), 101u);
}

TEST(Ingest, RoundTripsThroughJsonl) {
    const auto syn = synthetic::generate_synthetic({.n = 5, .seed = 3});
    std::stringstream buf;
    emit(syn.corpus, buf);
    const auto back = ingest_stream(buf);
    EXPECT_EQ(back, syn.corpus);
}

TEST(Ingest, ReportsLineNumbers) {
    std::stringstream in("{\"id\":\"a\",\"text\":\"x\"}\n\n{\"id\":\"b\",\"text\":\"y\",\"age\":200}\n");
    try {
        ingest_stream(in, "c.jsonl");
        FAIL();
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("c.jsonl:3"), std::string::npos) << e.what();
    }
}

TEST(Ingest, RejectsDuplicatesAndBadScores) {
    std::stringstream dup("{\"id\":\"a\",\"text\":\"x\"}\n{\"id\":\"a\",\"text\":\"y\"}\n");
    EXPECT_THROW(ingest_stream(dup), ValidationError);
    std::stringstream bad(
        "{\"id\":\"a\",\"text\":\"x\",\"scores\":[{\"condition\":\"depression\",\"instrument\":\"P\",\"raw\":30,\"max\":27}]}\n");
    EXPECT_THROW(ingest_stream(bad), ValidationError);
    std::stringstream cond(
        "{\"id\":\"a\",\"text\":\"x\",\"scores\":[{\"condition\":\"ocd\",\"instrument\":\"P\",\"raw\":3,\"max\":27}]}\n");
    EXPECT_THROW(ingest_stream(cond), ValidationError);
    std::stringstream garbage("{not json\n");
    EXPECT_THROW(ingest_stream(garbage), ValidationError);
}

TEST(Ingest, EmptyCorpusWarns) {
    std::stringstream in("\n");
    Warnings w;
    EXPECT_TRUE(ingest_stream(in, "e", &w).empty());
    EXPECT_EQ(w.size(), 1u);
}

TEST(Synthetic, DeterministicAndEligible) {
    const synthetic::SynthConfig cfg{.n = 30, .seed = 9};
    const auto a = synthetic::generate_synthetic(cfg), b = synthetic::generate_synthetic(cfg);
    EXPECT_EQ(a.corpus, b.corpus);
    for (const auto& s : a.corpus) {
        EXPECT_TRUE(is_eligible(word_count(s.text))) << s.id;
        for (auto c : kConditions) EXPECT_TRUE(outcome(s, c)) << s.id;
    }
}

TEST(Synthetic, OutcomesFollowTheLatent) {
    const auto syn = synthetic::generate_synthetic({.n = 300, .seed = 4});
    int concordant = 0, total = 0;
    for (std::size_t i = 0; i + 1 < syn.corpus.size(); ++i) {
        const auto a = outcome(syn.corpus[i], Condition::depression)->normalized;
        const auto b = outcome(syn.corpus[i + 1], Condition::depression)->normalized;
        const auto za = syn.truth[i].latent[0], zb = syn.truth[i + 1].latent[0];
        if (a == b) continue;
        ++total;
        concordant += (a < b) == (za < zb);
    }
    EXPECT_EQ(concordant, total);
}

TEST(Synthetic, LevelMixRoughlyHonored) {
    const auto syn = synthetic::generate_synthetic({.n = 2000, .seed = 5});
    std::array<int, 4> counts{};
    for (const auto& s : syn.corpus) ++counts[static_cast<std::size_t>(outcome(s, Condition::anxiety)->severity)];
    EXPECT_NEAR(counts[0] / 2000.0, 0.4, 0.05);
    EXPECT_NEAR(counts[3] / 2000.0, 0.1, 0.03);
}
