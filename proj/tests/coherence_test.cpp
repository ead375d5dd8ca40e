#include "narralyze/coherence.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace narralyze;
using namespace narralyze::coherence;

TEST(SplitSentences, TerminatorsAndClosingQuotes) {
    EXPECT_EQ(split_sentences("他说：“走吧。”我们走了！！真的？"),
              (std::vector<std::string>{"他说：“走吧。”", "我们走了！！", "真的？"}));
    EXPECT_EQ(split_sentences("第一行\n第二行"), (std::vector<std::string>{"第一行", "第二行"}));
    EXPECT_EQ(split_sentences("没有句号"), (std::vector<std::string>{"没有句号"}));
    EXPECT_EQ(split_sentences("。。。真的吗？\n！！"), (std::vector<std::string>{"真的吗？！！"}));
    EXPECT_THROW(split_sentences(" \n "), DegenerateInputError);
}

TEST(Cosine, RejectsMismatchAndZero) {
    EXPECT_THROW(cosine(std::vector<double>{1, 0}, std::vector<double>{1}), DomainError);
    EXPECT_THROW(cosine(std::vector<double>{0, 0}, std::vector<double>{1, 0}), DomainError);
    EXPECT_DOUBLE_EQ(cosine(std::vector<double>{1, 1}, std::vector<double>{2, 2}), 1.0);
}

TEST(MockEmbedder, DeterministicUnitVectors) {
    MockEmbedder a(64), b(64);
    const auto va = a.embed({"今天天气很好。", "今天天气很好。", "完全不同的内容"});
    const auto vb = b.embed({"今天天气很好。"});
    EXPECT_EQ(va[0], vb[0]);
    EXPECT_EQ(va[0], va[1]);
    EXPECT_NEAR(norm(va[2]), 1.0, 1e-12);
    EXPECT_EQ(va[2].size(), 64u);
    EXPECT_GT(cosine(va[0], a.embed({"今天天气很好"})[0]), cosine(va[0], va[2]));
}

TEST(Profile, SingleSentenceIsDegenerateNotFatal) {
    MockEmbedder e(32);
    const auto d = embed_document("只有一句话。", e);
    const auto p = coherence_profile(d.sentences, d.document);
    EXPECT_TRUE(p.degenerate);
    EXPECT_EQ(p.s2s_mean, 0.0);
    EXPECT_EQ(p.s2s_std, 0.0);
    EXPECT_NEAR(p.s2d_mean, 1.0, 1e-12);
}

TEST(Profile, IdenticalSentencesHaveZeroSpread) {
    const std::vector<Embedding> s(4, Embedding{0.6, 0.8});
    const auto p = coherence_profile(s, Embedding{0.6, 0.8});
    EXPECT_EQ(p.s2s_std, 0.0);
    EXPECT_LE(p.s2s_mean, p.s2s_min);
    EXPECT_GE(p.s2s_mean, p.s2s_min);
}

TEST(Profile, MatchesBruteForceOnRandomEmbeddings) {
    Rng rng(3);
    for (int doc = 0; doc < 50; ++doc) {
        const std::size_t n = 1 + rng.index(12), dim = 2 + rng.index(20);
        std::vector<Embedding> sents(n, Embedding(dim));
        Embedding d(dim);
        for (auto& s : sents)
            for (auto& v : s) v = rng.normal();
        for (auto& v : d) v = rng.normal();
        const auto p = coherence_profile(sents, d);
        const auto o = oracle::naive_coherence(sents, d);
        ASSERT_EQ(p.degenerate, o.degenerate);
        for (std::size_t k = 0; k < 7; ++k) ASSERT_NEAR(p.values()[k], o.values[k], 1e-9) << k;
    }
}

namespace {

class CountingEmbedder : public Embedder {
public:
    std::vector<Embedding> embed(const std::vector<std::string>& texts) override {
        calls += texts.size();
        return inner.embed(texts);
    }
    std::size_t dimension() const override { return inner.dimension(); }
    std::string model_id() const override { return "counting"; }
    MockEmbedder inner{16};
    std::size_t calls = 0;
};

} // namespace

TEST(CachedEmbedder, OnlyMissesReachInner) {
    const auto dir = std::filesystem::temp_directory_path() / "narralyze_embcache_test";
    std::filesystem::remove_all(dir);
    auto inner = std::make_shared<CountingEmbedder>();
    {
        CachedEmbedder c(inner, dir);
        c.embed({"一。", "二。"});
        c.embed({"一。", "三。"});
        EXPECT_EQ(inner->calls, 3u);
        EXPECT_EQ(c.hits(), 1u);
    }
    CachedEmbedder again(inner, dir);
    const auto v = again.embed({"三。"});
    EXPECT_EQ(inner->calls, 3u);
    EXPECT_EQ(v[0], inner->inner.embed({"三。"})[0]);
    std::filesystem::remove_all(dir);
}

namespace {

class FailingEmbedder : public Embedder {
public:
    std::vector<Embedding> embed(const std::vector<std::string>&) override { throw ProviderError("down"); }
    std::size_t dimension() const override { return 4; }
    std::string model_id() const override { return "failing"; }
};

} // namespace

TEST(CoherenceFeatures, ProviderFailureMarksMissing) {
    FailingEmbedder e;
    Warnings w;
    EXPECT_FALSE(coherence_features("一句。两句。", e, &w));
    EXPECT_EQ(w.size(), 1u);
}
