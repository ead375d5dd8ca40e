#include "narralyze/models.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace narralyze;
using namespace narralyze::models;

namespace {

std::vector<std::vector<double>> random_proba(Rng& rng, std::size_t n, std::size_t k) {
    std::vector<std::vector<double>> p(n, std::vector<double>(k));
    for (auto& row : p) {
        double s = 0;
        for (auto& v : row) s += (v = rng.uniform() + 1e-3);
        for (auto& v : row) v /= s;
    }
    return p;
}

Matrix to_matrix(const std::vector<std::vector<double>>& rows) {
    Matrix m(rows.size(), rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
    return m;
}

} // namespace

TEST(Folds, StratifiedAndBalanced) {
    std::vector<int> y;
    for (int c = 0; c < 4; ++c)
        for (int i = 0; i < 10 + 7 * c; ++i) y.push_back(c);
    const auto fold = stratified_kfold(y, 5, 1);
    std::map<int, std::array<int, 5>> per;
    std::array<int, 5> sizes{};
    for (std::size_t i = 0; i < y.size(); ++i) {
        ++per[y[i]][static_cast<std::size_t>(fold[i])];
        ++sizes[static_cast<std::size_t>(fold[i])];
    }
    for (const auto& [c, counts] : per) {
        const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
        EXPECT_LE(*hi - *lo, 1) << c;
    }
    const auto [lo, hi] = std::minmax_element(sizes.begin(), sizes.end());
    EXPECT_LE(*hi - *lo, 1);
    EXPECT_EQ(stratified_kfold(y, 5, 1), fold);
    EXPECT_NE(stratified_kfold(y, 5, 2), fold);
}

TEST(Folds, RejectsTooFewFoldsAndWarnsOnRareClass) {
    const std::vector<int> y = {0, 0, 0, 0, 0, 0, 1};
    EXPECT_THROW(stratified_kfold(y, 1, 0), ValidationError);
    Warnings w;
    stratified_kfold(y, 3, 0, &w);
    EXPECT_EQ(w.size(), 1u);
}

TEST(ClassWeights, InverseFrequency) {
    const std::vector<int> y = {0, 0, 0, 1};
    const auto w = class_weights(y);
    EXPECT_DOUBLE_EQ(w.at(0), 4.0 / 6.0);
    EXPECT_DOUBLE_EQ(w.at(1), 2.0);
    const auto sw = sample_weights(y);
    EXPECT_DOUBLE_EQ(std::accumulate(sw.begin(), sw.end(), 0.0), 4.0);
}

TEST(Metrics, AucFixture) {
    EXPECT_DOUBLE_EQ(binary_auc(std::vector<double>{0.1, 0.4, 0.35, 0.8}, {false, false, true, true}), 0.75);
    EXPECT_DOUBLE_EQ(binary_auc(std::vector<double>{0.5, 0.5}, {false, true}), 0.5);
}

TEST(Metrics, RegressionMatchesOracle) {
    Rng rng(2);
    for (int t = 0; t < 50; ++t) {
        const std::size_t n = 2 + rng.index(60);
        std::vector<double> y(n), p(n);
        for (std::size_t i = 0; i < n; ++i) {
            y[i] = rng.normal();
            p[i] = y[i] + 0.5 * rng.normal();
        }
        if (y[0] == y[1]) continue;
        const auto m = metrics_regression(y, p);
        EXPECT_NEAR(m.r2, oracle::r2(y, p), 1e-12);
        EXPECT_NEAR(m.rmse, oracle::rmse(y, p), 1e-12);
        EXPECT_NEAR(m.mae, oracle::mae(y, p), 1e-12);
    }
    EXPECT_THROW(metrics_regression(std::vector<double>{1, 1}, std::vector<double>{1, 2}), DomainError);
}

TEST(Metrics, ClassificationMatchesOracle) {
    Rng rng(3);
    for (int t = 0; t < 100; ++t) {
        const std::size_t n = 4 + rng.index(80), k = 2 + rng.index(4);
        std::vector<int> y(n);
        for (auto& v : y) v = static_cast<int>(rng.index(k));
        y[0] = 0;
        y[1] = 1;
        const auto p = random_proba(rng, n, k);
        const auto m = metrics_classification(y, to_matrix(p));
        const auto pred = oracle::argmax(p);
        EXPECT_NEAR(m.auc, oracle::macro_auc(y, p), 1e-12);
        EXPECT_NEAR(m.balanced_accuracy, oracle::balanced_accuracy(y, pred), 1e-12);
        EXPECT_NEAR(m.macro_f1, oracle::macro_f1(y, pred), 1e-12);
    }
}

TEST(Metrics, SingleClassFoldHasNoAuc) {
    Warnings w;
    const auto m = metrics_classification(std::vector<int>{1, 1}, to_matrix({{0.2, 0.8}, {0.6, 0.4}}), &w);
    EXPECT_TRUE(std::isnan(m.auc));
    EXPECT_EQ(w.size(), 1u);
    EXPECT_THROW(metrics_classification(std::vector<int>{0}, to_matrix({{0.2, 0.7}})), ValidationError);
}

TEST(Trees, RegressorLearnsAStep) {
    Rng rng(4);
    Matrix x(200, 3);
    std::vector<double> y(200);
    for (std::size_t i = 0; i < 200; ++i) {
        for (std::size_t j = 0; j < 3; ++j) x(i, j) = rng.uniform();
        y[i] = x(i, 1) > 0.5 ? 1.0 : 0.0;
    }
    Hyperparameters p;
    p.n_trees = 50;
    const auto m = train_extratrees_regressor(x, y, p, 7);
    EXPECT_LT(m.predict(std::vector<double>{0.5, 0.05, 0.5}), 0.2);
    EXPECT_GT(m.predict(std::vector<double>{0.5, 0.95, 0.5}), 0.8);
    for (const auto& t : m.trees)
        for (std::size_t i = 0; i < t.nodes.size(); ++i)
            if (!t.nodes[i].is_leaf())
                EXPECT_DOUBLE_EQ(t.nodes[i].cover, t.nodes[static_cast<std::size_t>(t.nodes[i].left)].cover +
                                                       t.nodes[static_cast<std::size_t>(t.nodes[i].right)].cover);
}

TEST(Trees, ClassifiersGiveProbabilities) {
    Rng rng(5);
    Matrix x(150, 2);
    std::vector<int> y(150);
    for (std::size_t i = 0; i < 150; ++i) {
        x(i, 0) = rng.uniform();
        x(i, 1) = rng.uniform();
        y[i] = x(i, 0) < 0.33 ? 0 : x(i, 0) < 0.66 ? 2 : 5;
    }
    Hyperparameters p;
    p.n_trees = 30;
    p.gbdt_rounds = 30;
    for (const auto& m : {train_extratrees_classifier(x, y, p, 1), train_gbdt_classifier(x, y, p, 1)}) {
        EXPECT_EQ(m.classes, (std::vector<int>{0, 2, 5}));
        const auto pr = m.predict_proba(std::vector<double>{0.9, 0.5});
        EXPECT_NEAR(std::accumulate(pr.begin(), pr.end(), 0.0), 1.0, 1e-12);
        EXPECT_GT(pr[2], 0.5);
    }
}

TEST(Trees, JsonRoundTripPredictsIdentically) {
    Rng rng(6);
    Matrix x(60, 4);
    std::vector<int> y(60);
    for (std::size_t i = 0; i < 60; ++i) {
        for (std::size_t j = 0; j < 4; ++j) x(i, j) = rng.normal();
        y[i] = x(i, 2) > 0;
    }
    Hyperparameters p;
    p.n_trees = 10;
    p.gbdt_rounds = 10;
    const auto m = train_gbdt_classifier(x, y, p, 3);
    const auto back = model_from_json(nlohmann::json::parse(to_json(m).dump()));
    for (std::size_t i = 0; i < 60; ++i) EXPECT_EQ(back.predict_proba(x.row(i)), m.predict_proba(x.row(i)));
    EXPECT_THROW(m.predict_raw(std::vector<double>{1, 2}), ValidationError);
}

TEST(Trees, SameSeedSameModel) {
    Rng rng(7);
    Matrix x(80, 3);
    std::vector<double> y(80);
    for (std::size_t i = 0; i < 80; ++i) {
        for (std::size_t j = 0; j < 3; ++j) x(i, j) = rng.normal();
        y[i] = x(i, 0) + rng.normal();
    }
    Hyperparameters p;
    p.n_trees = 20;
    auto p4 = p;
    p4.threads = 4;
    EXPECT_EQ(to_json(train_extratrees_regressor(x, y, p, 9)), to_json(train_extratrees_regressor(x, y, p4, 9)));
}

namespace {

CVReport two_combo_report() {
    CVReport r;
    r.tasks = {{Condition::depression, TaskKind::regression}, {Condition::trauma, TaskKind::classification}};
    r.combos = {features::Combo::B, features::Combo::L3};
    auto set = [&](const Task& t, features::Combo c, const std::string& metric, double mean) {
        r.cells[t.name()][std::string(features::to_string(c))][metric] = {mean, 0.01, {mean, mean}, false};
    };
    set(r.tasks[0], features::Combo::B, "r2", -0.1);
    set(r.tasks[0], features::Combo::L3, "r2", 0.4);
    set(r.tasks[0], features::Combo::B, "rmse", 0.2);
    set(r.tasks[0], features::Combo::L3, "rmse", 0.3);
    set(r.tasks[0], features::Combo::B, "mae", 0.1);
    set(r.tasks[0], features::Combo::L3, "mae", 0.1);
    set(r.tasks[1], features::Combo::B, "auc", 0.5);
    set(r.tasks[1], features::Combo::L3, "auc", 0.8);
    for (const auto* m : {"balanced_accuracy", "macro_f1"}) {
        set(r.tasks[1], features::Combo::B, m, 0.3);
        set(r.tasks[1], features::Combo::L3, m, 0.6);
    }
    mark_best(r);
    return r;
}

} // namespace

TEST(Report, BestRespectsMetricDirectionAndTies) {
    const auto r = two_combo_report();
    EXPECT_TRUE(r.at(r.tasks[0], features::Combo::L3, "r2").best);
    EXPECT_FALSE(r.at(r.tasks[0], features::Combo::B, "r2").best);
    EXPECT_TRUE(r.at(r.tasks[0], features::Combo::B, "rmse").best);
    EXPECT_TRUE(r.at(r.tasks[0], features::Combo::B, "mae").best);
    EXPECT_TRUE(r.at(r.tasks[0], features::Combo::L3, "mae").best);
}

TEST(Report, TableBoldsBestPrimaryCell) {
    const auto t = table_markdown(two_combo_report());
    EXPECT_NE(t.find("| Features | depression_regression (r2) | trauma_classification (auc) |"), std::string::npos);
    EXPECT_NE(t.find("| L3 | **0.400 ± 0.010** | **0.800 ± 0.010** |"), std::string::npos) << t;
    EXPECT_NE(t.find("| B | -0.100 ± 0.010 | 0.500 ± 0.010 |"), std::string::npos) << t;
}

TEST(Report, RadarScalesByColumnMax) {
    const auto j = radar_json(two_combo_report());
    EXPECT_DOUBLE_EQ(j["series"]["L3"][0].get<double>(), 1.0);
    EXPECT_DOUBLE_EQ(j["series"]["L3"][1].get<double>(), 1.0);
    EXPECT_DOUBLE_EQ(j["series"]["B"][1].get<double>(), 0.625);
    EXPECT_DOUBLE_EQ(j["series"]["B"][0].get<double>(), -0.25);
}

TEST(Report, JsonRoundTrip) {
    auto r = two_combo_report();
    r.cells["trauma_classification"]["B"]["auc"].mean = std::nan("");
    r.sample_ids = {"s1", "s2", "s3"};
    r.folds[Condition::depression] = {1, 0, -1};
    r.folds[Condition::trauma] = {0, 1, 1};
    const auto back = cv_report_from_json(nlohmann::json::parse(to_json(r).dump()));
    EXPECT_EQ(back.tasks, r.tasks);
    EXPECT_EQ(back.combos, r.combos);
    EXPECT_TRUE(std::isnan(back.cells.at("trauma_classification").at("B").at("auc").mean));
    EXPECT_EQ(back.at(r.tasks[0], features::Combo::L3, "r2").folds, (std::vector<double>{0.4, 0.4}));
    EXPECT_EQ(back.sample_ids, r.sample_ids);
    EXPECT_EQ(back.folds, r.folds);
    EXPECT_EQ(to_json(back).dump(), to_json(r).dump());
}

namespace {

features::FeatureMatrix toy_matrix(std::size_t n, double signal, std::uint64_t seed) {
    Rng rng(seed);
    features::FeatureMatrix m;
    m.columns = {{"age", features::Layer::B, false}, {"gender_code", features::Layer::B, false},
                 {"i", features::Layer::L1, false}, {"negemo", features::Layer::L1, false}};
    for (auto& v : m.targets.score) v.assign(n, features::kNaN);
    for (auto& v : m.targets.level) v.assign(n, -1);
    for (std::size_t i = 0; i < n; ++i) {
        m.sample_ids.push_back("s" + std::to_string(i));
        const double z = rng.normal();
        const double s = 1.0 / (1.0 + std::exp(-z));
        for (std::size_t c = 0; c < 3; ++c) {
            m.targets.score[c][i] = s;
            m.targets.level[c][i] = s < 0.3 ? 0 : s < 0.5 ? 1 : s < 0.7 ? 2 : 3;
        }
        m.values.insert(m.values.end(), {rng.uniform(18, 60), rng.bernoulli(0.5) ? 1.0 : 0.0,
                                         signal * z + rng.normal(), rng.normal()});
    }
    m.missing.assign(m.values.size(), 0);
    return m;
}

} // namespace

TEST(Experiment, ProducesEveryCellAndRecoversSignal) {
    ExperimentConfig cfg;
    cfg.combos = {features::Combo::B, features::Combo::L1};
    cfg.params.n_trees = 30;
    const auto r = run_experiment(toy_matrix(200, 2.0, 1), cfg);
    for (const auto& t : cfg.tasks)
        for (auto c : cfg.combos)
            for (const auto& metric : metric_names(t.kind)) EXPECT_EQ(r.at(t, c, metric).folds.size(), 5u);
    EXPECT_GT(r.at(cfg.tasks[0], features::Combo::L1, "r2").mean, 0.3);
    EXPECT_TRUE(r.at(cfg.tasks[2], features::Combo::L1, "auc").best);
    for (const auto& [cond, folds] : r.folds) EXPECT_EQ(folds.size(), 200u);
}

TEST(Experiment, RejectsTraumaRegression) {
    ExperimentConfig cfg;
    cfg.tasks = {{Condition::trauma, TaskKind::regression}};
    EXPECT_THROW(run_experiment(toy_matrix(50, 1.0, 2), cfg), ValidationError);
}

TEST(Experiment, Deterministic) {
    ExperimentConfig cfg;
    cfg.combos = {features::Combo::L1};
    cfg.params.n_trees = 10;
    cfg.classifier = ModelKind::gbdt_classifier;
    cfg.params.gbdt_rounds = 10;
    const auto m = toy_matrix(120, 1.0, 3);
    EXPECT_EQ(to_json(run_experiment(m, cfg)).dump(), to_json(run_experiment(m, cfg)).dump());
}
