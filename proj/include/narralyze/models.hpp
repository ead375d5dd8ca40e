#pragma once

// Stratified k-fold cross-validation over every task x feature-combination
// cell, class-balanced weighting and the regression/classification metrics.

#include "narralyze/corpus.hpp"
#include "narralyze/error.hpp"
#include "narralyze/featureset.hpp"
#include "narralyze/random.hpp"
#include "narralyze/trees.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace narralyze::models {

// ---------------------------------------------------------------------------
// Folds and weights

/// Assigns each sample to one of k folds so that every class is spread as
/// evenly as possible (per-class fold counts differ by at most one).
/// Classes with fewer than k members are spread round-robin with a warning.
inline std::vector<int> stratified_kfold(std::span<const int> labels, int k, std::uint64_t seed,
                                         Warnings* warnings = nullptr) {
    if (k < 2) throw ValidationError("stratified_kfold: k must be >= 2");
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
    Rng rng(seed);
    std::vector<int> fold(labels.size(), -1);
    std::size_t offset = 0;
    for (auto& [label, members] : by_class) {
        if (members.size() < static_cast<std::size_t>(k))
            warn(warnings, "class " + std::to_string(label) + " has " + std::to_string(members.size()) +
                               " members, fewer than k = " + std::to_string(k));
        rng.shuffle(members);
        for (std::size_t j = 0; j < members.size(); ++j)
            fold[members[j]] = static_cast<int>((offset + j) % static_cast<std::size_t>(k));
        offset += members.size();
    }
    return fold;
}

/// weight_c = N / (K * n_c).
inline std::map<int, double> class_weights(std::span<const int> labels) {
    if (labels.empty()) throw ValidationError("class_weights: empty label vector");
    std::map<int, std::size_t> counts;
    for (int l : labels) ++counts[l];
    const double n = static_cast<double>(labels.size()), k = static_cast<double>(counts.size());
    std::map<int, double> w;
    for (const auto& [c, nc] : counts) w[c] = n / (k * static_cast<double>(nc));
    return w;
}

inline std::vector<double> sample_weights(std::span<const int> labels) {
    const auto cw = class_weights(labels);
    std::vector<double> w;
    w.reserve(labels.size());
    for (int l : labels) w.push_back(cw.at(l));
    return w;
}

// ---------------------------------------------------------------------------
// Metrics

struct RegressionMetrics {
    double r2 = 0.0, rmse = 0.0, mae = 0.0;
};

inline RegressionMetrics metrics_regression(std::span<const double> y, std::span<const double> pred) {
    if (y.size() != pred.size() || y.empty()) throw ValidationError("metrics_regression: misaligned or empty inputs");
    const double mean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
    double sse = 0.0, sst = 0.0, sae = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double e = y[i] - pred[i];
        sse += e * e;
        sae += std::abs(e);
        sst += (y[i] - mean) * (y[i] - mean);
    }
    if (sst == 0.0) throw DomainError("R^2 undefined: validation targets have zero variance");
    const double n = static_cast<double>(y.size());
    return {1.0 - sse / sst, std::sqrt(sse / n), sae / n};
}

/// ROC AUC of `scores` for positives vs negatives via average ranks (ties count 0.5).
inline double binary_auc(std::span<const double> scores, const std::vector<bool>& positive) {
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
    double rank_sum = 0.0;
    std::size_t n_pos = 0;
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // ranks i+1 .. j
        for (std::size_t t = i; t < j; ++t)
            if (positive[idx[t]]) {
                rank_sum += avg_rank;
                ++n_pos;
            }
        i = j;
    }
    const std::size_t n_neg = scores.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) throw DomainError("AUC undefined without both positives and negatives");
    const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
    return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

struct ClassificationMetrics {
    double auc = std::numeric_limits<double>::quiet_NaN();  // macro one-vs-rest
    double balanced_accuracy = 0.0;
    double macro_f1 = 0.0;
};

/// `y` holds class indices into the columns of `proba` (n x K, rows sum to 1).
inline ClassificationMetrics metrics_classification(std::span<const int> y, const Matrix& proba,
                                                    Warnings* warnings = nullptr) {
    if (y.size() != proba.rows || y.empty()) throw ValidationError("metrics_classification: misaligned inputs");
    const std::size_t k = proba.cols;
    for (std::size_t i = 0; i < proba.rows; ++i) {
        double s = 0.0;
        for (double p : proba.row(i)) s += p;
        if (std::abs(s - 1.0) > 1e-6) throw ValidationError("probability rows must sum to 1");
    }
    ClassificationMetrics m;
    std::vector<std::size_t> pred(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        const auto row = proba.row(i);
        pred[i] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    }
    // AUC over classes present with both positives and negatives.
    double auc_sum = 0.0;
    std::size_t auc_n = 0;
    std::vector<double> col(y.size());
    std::vector<bool> pos_bits(y.size());
    for (std::size_t c = 0; c < k; ++c) {
        std::size_t n_pos = 0;
        for (std::size_t i = 0; i < y.size(); ++i) {
            col[i] = proba(i, c);
            pos_bits[i] = static_cast<std::size_t>(y[i]) == c;
            n_pos += pos_bits[i];
        }
        if (n_pos == 0 || n_pos == y.size()) continue;
        auc_sum += binary_auc(col, pos_bits);
        ++auc_n;
    }
    if (auc_n > 0)
        m.auc = auc_sum / static_cast<double>(auc_n);
    else
        warn(warnings, "AUC skipped: validation fold contains a single class");

    std::vector<double> tp(k, 0), fp(k, 0), fn(k, 0), support(k, 0);
    for (std::size_t i = 0; i < y.size(); ++i) {
        const auto t = static_cast<std::size_t>(y[i]);
        ++support[t];
        if (pred[i] == t)
            ++tp[t];
        else {
            ++fp[pred[i]];
            ++fn[t];
        }
    }
    double recall_sum = 0.0, f1_sum = 0.0;
    std::size_t recall_n = 0, f1_n = 0;
    for (std::size_t c = 0; c < k; ++c) {
        if (support[c] > 0) {
            recall_sum += tp[c] / support[c];
            ++recall_n;
        }
        if (support[c] > 0 || tp[c] + fp[c] > 0) {
            const double den = 2 * tp[c] + fp[c] + fn[c];
            f1_sum += den > 0 ? 2 * tp[c] / den : 0.0;
            ++f1_n;
        }
    }
    m.balanced_accuracy = recall_n ? recall_sum / static_cast<double>(recall_n) : 0.0;
    m.macro_f1 = f1_n ? f1_sum / static_cast<double>(f1_n) : 0.0;
    return m;
}

// ---------------------------------------------------------------------------
// Experiment harness

enum class TaskKind { regression, classification };

struct Task {
    Condition condition = Condition::depression;
    TaskKind kind = TaskKind::regression;

    std::string name() const {
        return std::string(narralyze::to_string(condition)) +
               (kind == TaskKind::regression ? "_regression" : "_classification");
    }
    friend bool operator==(const Task&, const Task&) = default;
};

/// Regression for depression and anxiety (no continuous trauma target);
/// severity classification for all three conditions.
inline std::vector<Task> default_tasks() {
    return {{Condition::depression, TaskKind::regression},
            {Condition::anxiety, TaskKind::regression},
            {Condition::depression, TaskKind::classification},
            {Condition::anxiety, TaskKind::classification},
            {Condition::trauma, TaskKind::classification}};
}

inline std::optional<Task> parse_task(std::string_view s) {
    for (auto c : kConditions)
        for (auto k : {TaskKind::regression, TaskKind::classification}) {
            Task t{c, k};
            if (t.name() == s) return t;
        }
    return std::nullopt;
}

inline const std::vector<std::string>& metric_names(TaskKind k) {
    static const std::vector<std::string> reg = {"r2", "rmse", "mae"};
    static const std::vector<std::string> clf = {"auc", "balanced_accuracy", "macro_f1"};
    return k == TaskKind::regression ? reg : clf;
}

inline bool higher_is_better(std::string_view metric) { return metric != "rmse" && metric != "mae"; }

struct ExperimentConfig {
    std::vector<Task> tasks = default_tasks();
    std::vector<features::Combo> combos{features::kCombos.begin(), features::kCombos.end()};
    int k = 5;
    std::uint64_t seed = 42;
    Hyperparameters params;
    ModelKind classifier = ModelKind::extratrees_classifier;
};

struct MetricSummary {
    double mean = 0.0;
    double sd = 0.0;  // sample SD across folds
    std::vector<double> folds;
    bool best = false;  // best combo for this task x metric
};

struct CVReport {
    std::vector<Task> tasks;
    std::vector<features::Combo> combos;
    int k = 5;
    std::uint64_t seed = 0;
    ModelKind classifier = ModelKind::extratrees_classifier;
    std::vector<std::string> sample_ids;
    /// Per condition, per sample fold index (-1 where the target is absent).
    std::map<Condition, std::vector<int>> folds;
    /// cells[task name][combo label][metric]
    std::map<std::string, std::map<std::string, std::map<std::string, MetricSummary>>> cells;
    Warnings warnings;

    const MetricSummary& at(const Task& t, features::Combo c, const std::string& metric) const {
        return cells.at(t.name()).at(std::string(features::to_string(c))).at(metric);
    }
};

inline double sample_sd(const std::vector<double>& xs, double mean) {
    if (xs.size() < 2) return 0.0;
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

/// Marks, for each task x metric, the combo(s) with the best mean.
inline void mark_best(CVReport& report) {
    for (auto& [task, by_combo] : report.cells) {
        std::set<std::string> metrics;
        for (const auto& [combo, by_metric] : by_combo)
            for (const auto& [metric, _] : by_metric) metrics.insert(metric);
        for (const auto& metric : metrics) {
            const bool hi = higher_is_better(metric);
            std::optional<double> best;
            for (auto& [combo, by_metric] : by_combo) {
                auto it = by_metric.find(metric);
                if (it == by_metric.end() || std::isnan(it->second.mean)) continue;
                if (!best || (hi ? it->second.mean > *best : it->second.mean < *best)) best = it->second.mean;
            }
            for (auto& [combo, by_metric] : by_combo) {
                auto it = by_metric.find(metric);
                if (it != by_metric.end()) it->second.best = best && it->second.mean == *best;
            }
        }
    }
}

/// Train/validation split of one fold, after dropping rows without a target.
struct FoldSplit {
    std::vector<std::size_t> train;
    std::vector<std::size_t> validation;
};

inline FoldSplit fold_split(const std::vector<int>& fold, int f) {
    FoldSplit s;
    for (std::size_t i = 0; i < fold.size(); ++i) {
        if (fold[i] < 0) continue;
        (fold[i] == f ? s.validation : s.train).push_back(i);
    }
    return s;
}

inline Matrix to_matrix(const features::FeatureMatrix& m) {
    Matrix x(m.rows(), m.cols());
    x.data = m.values;
    return x;
}

/// Trains the configured learner for a task on rows `idx` of `x`.
inline TreeEnsembleModel train_for_task(const Task& task, const Matrix& x, const features::Targets& targets,
                                        std::span<const std::size_t> idx, const ExperimentConfig& cfg,
                                        std::uint64_t seed, Warnings* warnings = nullptr) {
    const Matrix xt = x.select_rows(idx);
    const auto c = static_cast<std::size_t>(task.condition);
    if (task.kind == TaskKind::regression) {
        std::vector<double> y;
        for (auto i : idx) y.push_back(targets.score[c][i]);
        return train_extratrees_regressor(xt, y, cfg.params, seed, {}, warnings);
    }
    std::vector<int> y;
    for (auto i : idx) y.push_back(targets.level[c][i]);
    const auto w = sample_weights(y);
    if (cfg.classifier == ModelKind::gbdt_classifier) return train_gbdt_classifier(xt, y, cfg.params, seed, w);
    return train_extratrees_classifier(xt, y, cfg.params, seed, w);
}

/// For every (task, combo): train on k-1 folds, evaluate on the held-out
/// fold, aggregate mean and SD across folds. Folds are stratified by the
/// task condition's severity level and shared by that condition's tasks.
inline CVReport run_experiment(const features::FeatureMatrix& matrix, const ExperimentConfig& cfg) {
    CVReport report;
    report.tasks = cfg.tasks;
    report.combos = cfg.combos;
    report.k = cfg.k;
    report.seed = cfg.seed;
    report.classifier = cfg.classifier;
    report.sample_ids = matrix.sample_ids;
    for (const auto& task : cfg.tasks) {
        if (task.kind == TaskKind::regression && task.condition == Condition::trauma)
            throw ValidationError("trauma regression is not supported: no continuous trauma target");
        if (report.folds.count(task.condition)) continue;
        const auto& levels = matrix.targets.levels(task.condition);
        std::vector<std::size_t> rows;
        std::vector<int> labels;
        for (std::size_t i = 0; i < levels.size(); ++i)
            if (levels[i] >= 0) {
                rows.push_back(i);
                labels.push_back(levels[i]);
            }
        if (rows.size() < static_cast<std::size_t>(cfg.k))
            throw ValidationError("too few samples with a " + std::string(narralyze::to_string(task.condition)) +
                                  " target for " + std::to_string(cfg.k) + "-fold cross-validation");
        const auto assigned = stratified_kfold(labels, cfg.k, mix64(cfg.seed ^ fnv1a64(narralyze::to_string(task.condition))),
                                               &report.warnings);
        std::vector<int> fold(levels.size(), -1);
        for (std::size_t j = 0; j < rows.size(); ++j) fold[rows[j]] = assigned[j];
        report.folds[task.condition] = std::move(fold);
    }

    for (auto combo : cfg.combos) {
        const auto sub = features::select_combo(matrix, combo);
        const Matrix x = to_matrix(sub);
        for (const auto& task : cfg.tasks) {
            const auto& fold = report.folds.at(task.condition);
            const auto c = static_cast<std::size_t>(task.condition);
            std::map<std::string, std::vector<double>> per_metric;
            std::vector<int> all_levels;
            for (int l : matrix.targets.level[c])
                if (l >= 0) all_levels.push_back(l);
            const auto task_classes = detail::sorted_classes(all_levels);
            for (int f = 0; f < cfg.k; ++f) {
                const auto split = fold_split(fold, f);
                std::set<std::string> train_ids, val_ids;
                for (auto i : split.train) train_ids.insert(matrix.sample_ids[i]);
                for (auto i : split.validation) val_ids.insert(matrix.sample_ids[i]);
                for (const auto& id : val_ids)
                    if (train_ids.count(id)) throw Error("cross-validation leak: sample '" + id + "' in both splits");
                const auto seed = mix64(cfg.seed ^ (static_cast<std::uint64_t>(f) << 32) ^ fnv1a64(task.name()) ^
                                        fnv1a64(features::to_string(combo)));
                const auto model = train_for_task(task, x, matrix.targets, split.train, cfg, seed, &report.warnings);
                if (task.kind == TaskKind::regression) {
                    std::vector<double> y, pred;
                    for (auto i : split.validation) {
                        y.push_back(matrix.targets.score[c][i]);
                        pred.push_back(model.predict(x.row(i)));
                    }
                    const auto m = metrics_regression(y, pred);
                    per_metric["r2"].push_back(m.r2);
                    per_metric["rmse"].push_back(m.rmse);
                    per_metric["mae"].push_back(m.mae);
                } else {
                    Matrix proba(split.validation.size(), task_classes.size());
                    std::vector<int> y;
                    for (std::size_t r = 0; r < split.validation.size(); ++r) {
                        const auto i = split.validation[r];
                        const auto p = model.predict_proba(x.row(i));
                        for (std::size_t mc = 0; mc < model.classes.size(); ++mc) {
                            const auto slot = std::lower_bound(task_classes.begin(), task_classes.end(),
                                                               model.classes[mc]) - task_classes.begin();
                            proba(r, static_cast<std::size_t>(slot)) = p[mc];
                        }
                        y.push_back(static_cast<int>(std::lower_bound(task_classes.begin(), task_classes.end(),
                                                                      matrix.targets.level[c][i]) - task_classes.begin()));
                    }
                    const auto m = metrics_classification(y, proba, &report.warnings);
                    per_metric["auc"].push_back(m.auc);
                    per_metric["balanced_accuracy"].push_back(m.balanced_accuracy);
                    per_metric["macro_f1"].push_back(m.macro_f1);
                }
            }
            auto& cell = report.cells[task.name()][std::string(features::to_string(combo))];
            for (auto& [metric, values] : per_metric) {
                std::vector<double> finite;
                for (double v : values)
                    if (!std::isnan(v)) finite.push_back(v);
                MetricSummary s;
                s.folds = values;
                s.mean = finite.empty() ? std::numeric_limits<double>::quiet_NaN()
                                        : std::accumulate(finite.begin(), finite.end(), 0.0) / static_cast<double>(finite.size());
                s.sd = finite.empty() ? 0.0 : sample_sd(finite, s.mean);
                cell[metric] = std::move(s);
            }
        }
    }
    mark_best(report);
    return report;
}

inline nlohmann::ordered_json to_json(const CVReport& r) {
    nlohmann::ordered_json j;
    j["format"] = "narralyze-cv-report";
    j["version"] = 1;
    j["k"] = r.k;
    j["seed"] = r.seed;
    j["classifier"] = to_string(r.classifier);
    auto tasks = nlohmann::ordered_json::array();
    for (const auto& t : r.tasks) tasks.push_back(t.name());
    j["tasks"] = tasks;
    auto combos = nlohmann::ordered_json::array();
    for (auto c : r.combos) combos.push_back(features::to_string(c));
    j["combos"] = combos;
    nlohmann::ordered_json cells = nlohmann::ordered_json::object();
    for (const auto& t : r.tasks) {
        nlohmann::ordered_json by_combo = nlohmann::ordered_json::object();
        for (auto c : r.combos) {
            nlohmann::ordered_json by_metric = nlohmann::ordered_json::object();
            for (const auto& metric : metric_names(t.kind)) {
                const auto& s = r.at(t, c, metric);
                auto num = [](double v) { return std::isnan(v) ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(v); };
                auto folds = nlohmann::ordered_json::array();
                for (double v : s.folds) folds.push_back(num(v));
                by_metric[metric] = {{"mean", num(s.mean)}, {"sd", s.sd}, {"best", s.best}, {"folds", folds}};
            }
            by_combo[std::string(features::to_string(c))] = by_metric;
        }
        cells[t.name()] = by_combo;
    }
    j["cells"] = cells;
    nlohmann::ordered_json folds = nlohmann::ordered_json::object();
    for (const auto& [cond, f] : r.folds) {
        nlohmann::ordered_json per = nlohmann::ordered_json::object();
        for (std::size_t i = 0; i < f.size(); ++i) per[r.sample_ids[i]] = f[i];
        folds[std::string(narralyze::to_string(cond))] = per;
    }
    j["folds"] = folds;
    j["warnings"] = r.warnings;
    return j;
}

inline CVReport cv_report_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "narralyze-cv-report") throw ValidationError("not a narralyze CV report");
    CVReport r;
    r.k = j.at("k");
    r.seed = j.at("seed");
    r.classifier = parse_model_kind(j.at("classifier").get<std::string>());
    for (const auto& t : j.at("tasks")) {
        auto task = parse_task(t.get<std::string>());
        if (!task) throw ValidationError("unknown task " + t.dump());
        r.tasks.push_back(*task);
    }
    for (const auto& c : j.at("combos")) {
        auto combo = features::parse_combo(c.get<std::string>());
        if (!combo) throw ValidationError("unknown combo " + c.dump());
        r.combos.push_back(*combo);
    }
    auto num = [](const nlohmann::json& v) {
        return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
    };
    for (const auto& [task, by_combo] : j.at("cells").items())
        for (const auto& [combo, by_metric] : by_combo.items())
            for (const auto& [metric, s] : by_metric.items()) {
                MetricSummary ms;
                ms.mean = num(s.at("mean"));
                ms.sd = s.at("sd");
                ms.best = s.value("best", false);
                for (const auto& v : s.value("folds", nlohmann::json::array())) ms.folds.push_back(num(v));
                r.cells[task][combo][metric] = ms;
            }
    const auto all_folds = j.value("folds", nlohmann::json::object());
    for (const auto& [cond, per] : all_folds.items()) {
        auto c = parse_condition(cond);
        if (!c) continue;
        std::vector<int> f;
        std::vector<std::string> ids;
        for (const auto& [id, v] : per.items()) {
            ids.push_back(id);
            f.push_back(v.get<int>());
        }
        if (r.sample_ids.empty()) r.sample_ids = ids;
        r.folds[*c] = std::move(f);
    }
    if (j.contains("warnings")) r.warnings = j["warnings"].get<Warnings>();
    return r;
}


// ---------------------------------------------------------------------------
// Reports

inline const std::string& primary_metric(TaskKind k) { return metric_names(k).front(); }

inline std::string format_fixed(double v, int digits = 3) {
    if (std::isnan(v)) return "n/a";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

/// Rows: feature combinations. Columns: tasks, showing the primary metric
/// (R^2 or AUC) as mean ± SD, with the best combo per column in bold.
inline std::string table_markdown(const CVReport& r) {
    std::string out = "| Features |";
    for (const auto& t : r.tasks) out += " " + t.name() + " (" + primary_metric(t.kind) + ") |";
    out += "\n|---|";
    for (std::size_t i = 0; i < r.tasks.size(); ++i) out += "---|";
    out += "\n";
    for (auto c : r.combos) {
        out += "| " + std::string(features::to_string(c)) + " |";
        for (const auto& t : r.tasks) {
            const auto& s = r.at(t, c, primary_metric(t.kind));
            std::string cell = format_fixed(s.mean) + " ± " + format_fixed(s.sd);
            if (s.best) cell = "**" + cell + "**";
            out += " " + cell + " |";
        }
        out += "\n";
    }
    return out;
}

/// Per task, the primary metric of each combo divided by the task's maximum
/// (0 when that maximum is not positive).
inline nlohmann::ordered_json radar_json(const CVReport& r) {
    nlohmann::ordered_json j;
    auto axes = nlohmann::ordered_json::array();
    for (const auto& t : r.tasks) axes.push_back(t.name());
    j["axes"] = axes;
    nlohmann::ordered_json series = nlohmann::ordered_json::object();
    std::vector<double> col_max;
    for (const auto& t : r.tasks) {
        double mx = -std::numeric_limits<double>::infinity();
        for (auto c : r.combos) {
            const double v = r.at(t, c, primary_metric(t.kind)).mean;
            if (!std::isnan(v)) mx = std::max(mx, v);
        }
        col_max.push_back(mx);
    }
    for (auto c : r.combos) {
        auto vals = nlohmann::ordered_json::array();
        for (std::size_t i = 0; i < r.tasks.size(); ++i) {
            const double v = r.at(r.tasks[i], c, primary_metric(r.tasks[i].kind)).mean;
            vals.push_back(col_max[i] > 0 && !std::isnan(v) ? v / col_max[i] : 0.0);
        }
        series[std::string(features::to_string(c))] = vals;
    }
    j["series"] = series;
    return j;
}

} // namespace narralyze::models
