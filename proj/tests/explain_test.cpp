#include "narralyze/explain.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace narralyze;
using namespace narralyze::models;
using namespace narralyze::explain;

namespace {

/// x0 <= 0 -> a (cover ca), else b (cover cb).
Tree stump(double a, double b, double ca, double cb) {
    Tree t;
    t.add_node(ca + cb, std::array<double, 1>{0.0});
    const auto l = t.add_node(ca, std::array<double, 1>{a});
    const auto r = t.add_node(cb, std::array<double, 1>{b});
    t.nodes[0].feature = 0;
    t.nodes[0].threshold = 0.0;
    t.nodes[0].left = static_cast<std::int32_t>(l);
    t.nodes[0].right = static_cast<std::int32_t>(r);
    return t;
}

std::vector<double> random_x(Rng& rng, std::size_t m) {
    std::vector<double> x(m);
    for (auto& v : x) v = rng.uniform(-1.2, 1.2);
    return x;
}

} // namespace

TEST(TreeShap, StumpClosedForm) {
    const auto t = stump(1.0, 5.0, 3.0, 1.0);
    const auto a = tree_shap(t, std::vector<double>{0.5, 9.0});
    EXPECT_DOUBLE_EQ(a.base_value, 2.0);
    EXPECT_DOUBLE_EQ(a.phi[0], 3.0);
    EXPECT_EQ(a.phi[1], 0.0);
    EXPECT_DOUBLE_EQ(tree_shap(t, std::vector<double>{-1.0, 0.0}).phi[0], -1.0);
}

TEST(TreeShap, MatchesBruteForceOnRandomTrees) {
    Rng rng(10);
    for (int i = 0; i < 300; ++i) {
        const std::size_t m = 1 + rng.index(8);
        const auto t = oracle::random_tree(rng, m, 1 + rng.index(3));
        const auto x = random_x(rng, m);
        const auto fast = tree_shap(t, x);
        const auto slow = brute_force_shapley(t, x);
        ASSERT_NEAR(fast.base_value, slow.base_value, 1e-9);
        for (std::size_t f = 0; f < m; ++f) ASSERT_NEAR(fast.phi[f], slow.phi[f], 1e-9) << i << " " << f;
    }
}

TEST(TreeShap, BruteForceAgreesWithPermutationOracle) {
    Rng rng(11);
    for (int i = 0; i < 60; ++i) {
        const std::size_t m = 1 + rng.index(6);
        const auto t = oracle::random_tree(rng, m, 1 + rng.index(3));
        const auto x = random_x(rng, m);
        const auto lib = brute_force_shapley(t, x);
        const auto ref = oracle::permutation_shapley(t, x);
        for (std::size_t f = 0; f < m; ++f) ASSERT_NEAR(lib.phi[f], ref[f], 1e-9);
    }
}

TEST(TreeShap, DummyAndSymmetry) {
    Rng rng(12);
    for (int i = 0; i < 100; ++i) {
        const auto t = oracle::random_tree(rng, 3, 3);
        auto x = random_x(rng, 5);
        const auto a = tree_shap(t, x);
        EXPECT_EQ(a.phi[3], 0.0);
        EXPECT_EQ(a.phi[4], 0.0);
    }
    // f = 1 iff both x0 and x1 are positive, with a balanced cover: symmetric players.
    Tree t;
    t.add_node(4, std::array<double, 1>{0.0});
    auto split = [&](std::size_t node, int feature, std::size_t l, std::size_t r) {
        t.nodes[node].feature = feature;
        t.nodes[node].left = static_cast<std::int32_t>(l);
        t.nodes[node].right = static_cast<std::int32_t>(r);
    };
    const auto l = t.add_node(2, std::array<double, 1>{0.0});
    const auto r = t.add_node(2, std::array<double, 1>{0.0});
    split(0, 0, l, r);
    const auto rl = t.add_node(1, std::array<double, 1>{0.0});
    const auto rr = t.add_node(1, std::array<double, 1>{1.0});
    split(r, 1, rl, rr);
    const auto a = tree_shap(t, std::vector<double>{1.0, 1.0});
    EXPECT_NEAR(a.phi[0], a.phi[1], 1e-15);
    EXPECT_NEAR(a.phi[0] + a.phi[1] + a.base_value, 1.0, 1e-15);
}

TEST(TreeShap, EnsembleEfficiency) {
    Rng rng(13);
    Matrix x(120, 5);
    std::vector<int> y(120);
    std::vector<double> yr(120);
    for (std::size_t i = 0; i < 120; ++i) {
        for (std::size_t j = 0; j < 5; ++j) x(i, j) = rng.normal();
        yr[i] = x(i, 0) - x(i, 3) + 0.3 * rng.normal();
        y[i] = yr[i] < -0.5 ? 0 : yr[i] < 0.5 ? 1 : 2;
    }
    Hyperparameters p;
    p.n_trees = 25;
    p.gbdt_rounds = 25;
    const std::vector<TreeEnsembleModel> models = {train_extratrees_regressor(x, yr, p, 1),
                                                   train_extratrees_classifier(x, y, p, 1),
                                                   train_gbdt_classifier(x, y, p, 1)};
    for (const auto& m : models)
        for (std::size_t out = 0; out < m.n_outputs(); ++out)
            for (std::size_t i = 0; i < 20; ++i) {
                const auto a = tree_shap(m, x.row(i), out);
                double s = a.base_value;
                for (double v : a.phi) s += v;
                ASSERT_NEAR(s, m.predict_raw(x.row(i))[out], 1e-9) << to_string(m.kind);
            }
}

TEST(TreeShap, RejectsBadInputs) {
    const auto t = stump(0, 1, 1, 1);
    EXPECT_THROW(tree_shap(t, std::vector<double>{}), ValidationError);
    EXPECT_THROW(brute_force_shapley(t, std::vector<double>(16, 0.0)), ValidationError);
    TreeEnsembleModel m;
    m.n_features = 3;
    m.trees = {t};
    EXPECT_THROW(tree_shap(m, std::vector<double>{1, 2}), ValidationError);
    EXPECT_THROW(tree_shap(m, std::vector<double>{1, 2, 3}, 1), ValidationError);
}

TEST(Ranking, SortedWithStableTies) {
    Matrix phi(2, 4);
    phi.data = {0.1, -2.0, 1.0, -1.0, 0.1, 2.0, -1.0, 1.0};
    const auto r = rank_features(phi, {"a", "b", "c", "d"});
    ASSERT_EQ(r.size(), 4u);
    EXPECT_EQ(r[0].name, "b");
    EXPECT_EQ(r[1].name, "c");
    EXPECT_EQ(r[2].name, "d");
    EXPECT_EQ(r[3].name, "a");
    EXPECT_DOUBLE_EQ(r[0].mean_abs, 2.0);
    EXPECT_THROW(rank_features(Matrix(0, 4), {"a", "b", "c", "d"}), ValidationError);
}

TEST(Summary, TopNWithLayerTagsAndPoints) {
    Explanation e;
    e.sample_ids = {"x", "y"};
    e.columns = {{"age", features::Layer::B, false}, {"i", features::Layer::L1, false}, {"s2s_mean", features::Layer::L2, false}};
    e.values = Matrix(2, 3);
    e.values.data = {30, 0.1, 0.5, 40, 0.2, 0.6};
    e.phi = Matrix(2, 3);
    e.phi.data = {0.0, 0.5, -0.1, 0.0, -0.5, 0.2};
    const auto j = summary_json(e, 2);
    ASSERT_EQ(j.size(), 2u);
    EXPECT_EQ(j[0]["feature"], "i");
    EXPECT_EQ(j[0]["layer_tag"], "L1");
    EXPECT_EQ(j[1]["layer_tag"], "L2");
    EXPECT_EQ(j[0]["points"].size(), 2u);
    EXPECT_EQ(j[0]["points"][1]["shap"], -0.5);
}
