#pragma once

// Path-dependent TreeSHAP for tree ensembles, an exhaustive Shapley oracle,
// and mean-|SHAP| feature ranking with summary export.

#include "narralyze/error.hpp"
#include "narralyze/featureset.hpp"
#include "narralyze/trees.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

namespace narralyze::explain {

using models::Matrix;
using models::Tree;
using models::TreeEnsembleModel;

struct ShapAttribution {
    double base_value = 0.0;
    std::vector<double> phi;
};

namespace detail {

struct PathElement {
    std::int32_t feature;
    double zero_fraction;
    double one_fraction;
    double weight;
};

using Path = std::vector<PathElement>;

inline void extend(Path& path, double zero, double one, std::int32_t feature) {
    const std::size_t d = path.size();
    path.push_back({feature, zero, one, d == 0 ? 1.0 : 0.0});
    const double dd = static_cast<double>(d);
    for (std::size_t i = d; i-- > 0;) {
        path[i + 1].weight += one * path[i].weight * static_cast<double>(i + 1) / (dd + 1);
        path[i].weight = zero * path[i].weight * (dd - static_cast<double>(i)) / (dd + 1);
    }
}

inline void unwind(Path& path, std::size_t index) {
    const std::size_t d = path.size() - 1;
    const double dd = static_cast<double>(d);
    const double one = path[index].one_fraction, zero = path[index].zero_fraction;
    double next = path[d].weight;
    for (std::size_t i = d; i-- > 0;) {
        if (one != 0.0) {
            const double tmp = path[i].weight;
            path[i].weight = next * (dd + 1) / (static_cast<double>(i + 1) * one);
            next = tmp - path[i].weight * zero * (dd - static_cast<double>(i)) / (dd + 1);
        } else {
            path[i].weight = path[i].weight * (dd + 1) / (zero * (dd - static_cast<double>(i)));
        }
    }
    for (std::size_t i = index; i < d; ++i) {
        path[i].feature = path[i + 1].feature;
        path[i].zero_fraction = path[i + 1].zero_fraction;
        path[i].one_fraction = path[i + 1].one_fraction;
    }
    path.pop_back();
}

inline double unwound_sum(const Path& path, std::size_t index) {
    const std::size_t d = path.size() - 1;
    const double dd = static_cast<double>(d);
    const double one = path[index].one_fraction, zero = path[index].zero_fraction;
    double next = path[d].weight, total = 0.0;
    for (std::size_t i = d; i-- > 0;) {
        if (one != 0.0) {
            const double tmp = next * (dd + 1) / (static_cast<double>(i + 1) * one);
            total += tmp;
            next = path[i].weight - tmp * zero * (dd - static_cast<double>(i)) / (dd + 1);
        } else if (zero != 0.0) {
            total += path[i].weight / zero / ((dd - static_cast<double>(i)) / (dd + 1));
        }
    }
    return total;
}

inline void recurse(const Tree& tree, std::size_t output, std::span<const double> x, std::vector<double>& phi,
                    std::size_t node, Path path, double zero, double one, std::int32_t feature, double scale) {
    extend(path, zero, one, feature);
    const auto& n = tree.nodes[node];
    if (n.is_leaf()) {
        const double v = tree.value(node)[output] * scale;
        for (std::size_t i = 1; i < path.size(); ++i)
            phi[static_cast<std::size_t>(path[i].feature)] +=
                unwound_sum(path, i) * (path[i].one_fraction - path[i].zero_fraction) * v;
        return;
    }
    const auto f = static_cast<std::size_t>(n.feature);
    const auto hot = static_cast<std::size_t>(x[f] <= n.threshold ? n.left : n.right);
    const auto cold = static_cast<std::size_t>(x[f] <= n.threshold ? n.right : n.left);
    double in_zero = 1.0, in_one = 1.0;
    for (std::size_t k = 1; k < path.size(); ++k)
        if (path[k].feature == n.feature) {
            in_zero = path[k].zero_fraction;
            in_one = path[k].one_fraction;
            unwind(path, k);
            break;
        }
    const double cover = n.cover;
    recurse(tree, output, x, phi, hot, path, in_zero * tree.nodes[hot].cover / cover, in_one, n.feature, scale);
    recurse(tree, output, x, phi, cold, path, in_zero * tree.nodes[cold].cover / cover, 0.0, n.feature, scale);
}

} // namespace detail

/// Cover-weighted mean of the leaf values: the tree's expected output.
inline double expected_value(const Tree& tree, std::size_t output = 0, std::size_t node = 0) {
    const auto& n = tree.nodes[node];
    if (n.is_leaf()) return tree.value(node)[output];
    const auto l = static_cast<std::size_t>(n.left), r = static_cast<std::size_t>(n.right);
    return (tree.nodes[l].cover * expected_value(tree, output, l) + tree.nodes[r].cover * expected_value(tree, output, r)) /
           n.cover;
}

/// SHAP values of a single tree's `output` column at x.
inline ShapAttribution tree_shap(const Tree& tree, std::span<const double> x, std::size_t output = 0) {
    ShapAttribution a;
    a.phi.assign(x.size(), 0.0);
    for (const auto& n : tree.nodes)
        if (!n.is_leaf() && static_cast<std::size_t>(n.feature) >= x.size())
            throw ValidationError("tree_shap: tree splits on a feature beyond the input dimension");
    a.base_value = expected_value(tree, output);
    detail::recurse(tree, output, x, a.phi, 0, {}, 1.0, 1.0, -1, 1.0);
    return a;
}

/// SHAP values of the ensemble's raw output `output` (regression value,
/// mean class probability for extratrees, class margin for gbdt).
inline ShapAttribution tree_shap(const TreeEnsembleModel& model, std::span<const double> x, std::size_t output = 0) {
    if (x.size() != model.n_features)
        throw ValidationError("tree_shap: model expects " + std::to_string(model.n_features) + " features, got " +
                              std::to_string(x.size()));
    if (output >= model.n_outputs()) throw ValidationError("tree_shap: output index out of range");
    ShapAttribution a;
    a.phi.assign(x.size(), 0.0);
    if (model.kind == models::ModelKind::gbdt_classifier) a.base_value = model.init_score[output];
    const double w = model.tree_weight();
    for (std::size_t t = 0; t < model.trees.size(); ++t) {
        const auto& tree = model.trees[t];
        std::size_t col = output;
        if (model.kind == models::ModelKind::gbdt_classifier) {
            if (model.tree_output(t) != output) continue;
            col = 0;
        }
        a.base_value += w * expected_value(tree, col);
        detail::recurse(tree, col, x, a.phi, 0, {}, 1.0, 1.0, -1, w);
    }
    return a;
}

/// E[f(x) | x_S] under the tree's cover distribution: features in S follow
/// x, the rest average their children by cover.
inline double conditional_expectation(const Tree& tree, std::span<const double> x, std::uint32_t subset,
                                      std::size_t output = 0, std::size_t node = 0) {
    const auto& n = tree.nodes[node];
    if (n.is_leaf()) return tree.value(node)[output];
    const auto l = static_cast<std::size_t>(n.left), r = static_cast<std::size_t>(n.right);
    if (subset & (1u << n.feature))
        return conditional_expectation(tree, x, subset, output, x[static_cast<std::size_t>(n.feature)] <= n.threshold ? l : r);
    return (tree.nodes[l].cover * conditional_expectation(tree, x, subset, output, l) +
            tree.nodes[r].cover * conditional_expectation(tree, x, subset, output, r)) /
           n.cover;
}

inline constexpr std::size_t kBruteForceMaxFeatures = 15;

/// Exact Shapley values by enumerating all 2^M subsets.
inline ShapAttribution brute_force_shapley(const Tree& tree, std::span<const double> x, std::size_t output = 0) {
    const std::size_t m = x.size();
    if (m > kBruteForceMaxFeatures)
        throw ValidationError("brute_force_shapley: at most " + std::to_string(kBruteForceMaxFeatures) + " features");
    std::vector<double> fact(m + 1, 1.0);
    for (std::size_t i = 1; i <= m; ++i) fact[i] = fact[i - 1] * static_cast<double>(i);
    const std::uint32_t full = m == 0 ? 0u : ((1u << m) - 1u);
    std::vector<double> v(std::size_t{1} << m);
    for (std::uint32_t s = 0; s <= full; ++s) v[s] = conditional_expectation(tree, x, s, output);
    ShapAttribution a;
    a.base_value = v[0];
    a.phi.assign(m, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::uint32_t s = 0; s <= full; ++s) {
            if (s & (1u << i)) continue;
            const auto k = static_cast<std::size_t>(std::popcount(s));
            a.phi[i] += fact[k] * fact[m - k - 1] / fact[m] * (v[s | (1u << i)] - v[s]);
        }
    return a;
}

// ---------------------------------------------------------------------------
// Ranking and summary export

struct RankedFeature {
    std::size_t index = 0;
    std::string name;
    double mean_abs = 0.0;
};

/// Mean |phi| per column of `phi` (samples x features), sorted
/// non-increasing; ties keep input order.
inline std::vector<RankedFeature> rank_features(const Matrix& phi, const std::vector<std::string>& names) {
    if (phi.rows == 0) throw ValidationError("rank_features: no samples");
    if (names.size() != phi.cols) throw ValidationError("rank_features: name count does not match attribution width");
    std::vector<RankedFeature> out;
    for (std::size_t f = 0; f < phi.cols; ++f) {
        double s = 0.0;
        for (std::size_t r = 0; r < phi.rows; ++r) s += std::abs(phi(r, f));
        out.push_back({f, names[f], s / static_cast<double>(phi.rows)});
    }
    std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.mean_abs > b.mean_abs; });
    return out;
}

struct Explanation {
    std::vector<std::string> sample_ids;
    std::vector<features::Column> columns;
    Matrix values;  // feature values of explained samples
    Matrix phi;
    std::vector<double> base_values;
    std::vector<double> raw_outputs;
};

/// Attributions of output `output` for every row of `x`.
inline Explanation explain_rows(const TreeEnsembleModel& model, const features::FeatureMatrix& x, std::size_t output = 0,
                                std::size_t threads = 1) {
    if (x.cols() != model.n_features) throw ValidationError("explain: feature matrix width does not match the model");
    Explanation e;
    e.sample_ids = x.sample_ids;
    e.columns = x.columns;
    e.values = Matrix(x.rows(), x.cols());
    e.values.data = x.values;
    e.phi = Matrix(x.rows(), x.cols());
    e.base_values.resize(x.rows());
    e.raw_outputs.resize(x.rows());
    models::detail::parallel_for(x.rows(), threads, [&](std::size_t r) {
        const auto row = e.values.row(r);
        const auto a = tree_shap(model, row, output);
        std::copy(a.phi.begin(), a.phi.end(), e.phi.data.begin() + static_cast<std::ptrdiff_t>(r * x.cols()));
        e.base_values[r] = a.base_value;
        e.raw_outputs[r] = model.predict_raw(row)[output];
    });
    return e;
}

/// Largest |base + sum(phi) - raw output| over explained rows.
inline double max_efficiency_gap(const Explanation& e) {
    double gap = 0.0;
    for (std::size_t r = 0; r < e.phi.rows; ++r) {
        double s = e.base_values[r];
        for (double p : e.phi.row(r)) s += p;
        gap = std::max(gap, std::abs(s - e.raw_outputs[r]));
    }
    return gap;
}

inline constexpr std::size_t kDefaultTopN = 15;

/// [{feature, layer_tag, mean_abs_shap, points: [{value, shap}]}] for the top-N features.
inline nlohmann::ordered_json summary_json(const Explanation& e, std::size_t top_n = kDefaultTopN) {
    std::vector<std::string> names;
    for (const auto& c : e.columns) names.push_back(c.name);
    const auto ranking = rank_features(e.phi, names);
    auto out = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < std::min(top_n, ranking.size()); ++i) {
        const auto& rf = ranking[i];
        nlohmann::ordered_json f;
        f["feature"] = rf.name;
        f["layer_tag"] = features::to_string(e.columns[rf.index].layer);
        f["mean_abs_shap"] = rf.mean_abs;
        auto points = nlohmann::ordered_json::array();
        for (std::size_t r = 0; r < e.phi.rows; ++r)
            points.push_back({{"value", e.values(r, rf.index)}, {"shap", e.phi(r, rf.index)}});
        f["points"] = points;
        out.push_back(f);
    }
    return out;
}

} // namespace narralyze::explain
