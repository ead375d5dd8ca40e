#pragma once

// Decision trees and tree ensembles: extremely randomized trees (regression
// and classification) and multiclass gradient boosting on softmax
// gradients. Every node stores its training cover for TreeSHAP.

#include "narralyze/error.hpp"
#include "narralyze/hash.hpp"
#include "narralyze/random.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <thread>
#include <vector>

namespace narralyze::models {

/// Dense row-major design matrix.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

    Matrix select_rows(std::span<const std::size_t> idx) const {
        Matrix out(idx.size(), cols);
        for (std::size_t i = 0; i < idx.size(); ++i)
            std::copy_n(data.begin() + static_cast<std::ptrdiff_t>(idx[i] * cols), cols,
                        out.data.begin() + static_cast<std::ptrdiff_t>(i * cols));
        return out;
    }
};

struct TreeNode {
    std::int32_t feature = -1;  // -1 = leaf
    double threshold = 0.0;     // x[feature] <= threshold goes left
    std::int32_t left = -1;
    std::int32_t right = -1;
    double cover = 0.0;  // training weight reaching the node
    bool is_leaf() const { return feature < 0; }
};

/// Binary tree with `n_outputs` values per node (leaf prediction; internal
/// nodes hold the node mean, used only for inspection).
class Tree {
public:
    std::vector<TreeNode> nodes;
    std::vector<double> values;
    std::size_t n_outputs = 1;

    std::span<const double> value(std::size_t node) const { return {values.data() + node * n_outputs, n_outputs}; }

    std::size_t leaf_for(std::span<const double> x) const {
        std::size_t at = 0;
        while (!nodes[at].is_leaf())
            at = static_cast<std::size_t>(x[static_cast<std::size_t>(nodes[at].feature)] <= nodes[at].threshold
                                              ? nodes[at].left
                                              : nodes[at].right);
        return at;
    }

    std::span<const double> predict(std::span<const double> x) const { return value(leaf_for(x)); }

    std::size_t depth(std::size_t node = 0) const {
        if (nodes[node].is_leaf()) return 0;
        return 1 + std::max(depth(static_cast<std::size_t>(nodes[node].left)),
                            depth(static_cast<std::size_t>(nodes[node].right)));
    }

    std::size_t add_node(double cover, std::span<const double> value) {
        nodes.push_back({-1, 0.0, -1, -1, cover});
        values.insert(values.end(), value.begin(), value.end());
        return nodes.size() - 1;
    }
};

enum class ModelKind { extratrees_regressor, extratrees_classifier, gbdt_classifier };

inline std::string_view to_string(ModelKind k) {
    switch (k) {
    case ModelKind::extratrees_regressor: return "extratrees_regressor";
    case ModelKind::extratrees_classifier: return "extratrees_classifier";
    case ModelKind::gbdt_classifier: return "gbdt_classifier";
    }
    return "?";
}

inline ModelKind parse_model_kind(std::string_view s) {
    for (auto k : {ModelKind::extratrees_regressor, ModelKind::extratrees_classifier, ModelKind::gbdt_classifier})
        if (to_string(k) == s) return k;
    throw ValidationError("unknown model kind '" + std::string(s) + "'");
}

struct Hyperparameters {
    // Extremely randomized trees.
    std::size_t n_trees = 300;
    std::size_t max_features = 0;  // 0 = sqrt(d) for classification, d for regression
    std::size_t min_samples_leaf = 2;
    std::size_t max_depth = 0;  // 0 = unlimited
    // Gradient boosting.
    std::size_t gbdt_rounds = 200;
    double learning_rate = 0.1;
    std::size_t gbdt_max_depth = 3;
    std::size_t gbdt_min_samples_leaf = 1;
    // Trees are seeded independently; thread count never changes results.
    std::size_t threads = 1;
};

struct TreeEnsembleModel {
    ModelKind kind = ModelKind::extratrees_regressor;
    std::vector<Tree> trees;
    std::vector<int> classes;        // ordered labels (classifiers)
    std::vector<double> init_score;  // gbdt per-class prior log-odds
    double learning_rate = 0.0;
    std::uint64_t seed = 0;
    std::size_t n_features = 0;
    Hyperparameters params;

    bool is_classifier() const { return kind != ModelKind::extratrees_regressor; }
    std::size_t n_outputs() const { return is_classifier() ? classes.size() : 1; }

    /// Output of tree t goes to this output slot (gbdt trees are one class each).
    std::size_t tree_output(std::size_t t) const { return kind == ModelKind::gbdt_classifier ? t % classes.size() : 0; }

    /// Scale applied to each tree's leaf values in the raw output.
    double tree_weight() const {
        return kind == ModelKind::gbdt_classifier ? 1.0 : 1.0 / static_cast<double>(trees.size());
    }

    /// Additive raw output: mean over trees (extratrees; class probabilities
    /// for the classifier) or per-class margin (gbdt, pre-softmax).
    std::vector<double> predict_raw(std::span<const double> x) const {
        if (x.size() != n_features)
            throw ValidationError("feature count mismatch: model expects " + std::to_string(n_features) + ", got " +
                                  std::to_string(x.size()));
        std::vector<double> out(n_outputs(), 0.0);
        if (kind == ModelKind::gbdt_classifier) {
            out = init_score;
            for (std::size_t t = 0; t < trees.size(); ++t) out[tree_output(t)] += trees[t].predict(x)[0];
            return out;
        }
        for (const auto& tree : trees) {
            const auto v = tree.predict(x);
            for (std::size_t k = 0; k < out.size(); ++k) out[k] += v[k];
        }
        for (double& v : out) v /= static_cast<double>(trees.size());
        return out;
    }

    double predict(std::span<const double> x) const { return predict_raw(x)[0]; }

    /// Class probabilities in `classes` order; rows sum to 1.
    std::vector<double> predict_proba(std::span<const double> x) const {
        auto raw = predict_raw(x);
        if (kind == ModelKind::gbdt_classifier) {
            const double mx = *std::max_element(raw.begin(), raw.end());
            double s = 0.0;
            for (double& v : raw) s += (v = std::exp(v - mx));
            for (double& v : raw) v /= s;
            return raw;
        }
        double s = std::accumulate(raw.begin(), raw.end(), 0.0);
        for (double& v : raw) v /= s;
        return raw;
    }
};

namespace detail {

inline std::uint64_t tree_seed(std::uint64_t seed, std::size_t t) { return seed ^ static_cast<std::uint64_t>(t); }

/// Runs f(t) for t in [0, n) on up to `threads` workers; each index is independent.
template <typename F>
void parallel_for(std::size_t n, std::size_t threads, F&& f) {
    threads = std::max<std::size_t>(1, std::min(threads, n));
    if (threads == 1) {
        for (std::size_t t = 0; t < n; ++t) f(t);
        return;
    }
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < threads; ++w)
        pool.emplace_back([&, w] {
            for (std::size_t t = w; t < n; t += threads) f(t);
        });
    for (auto& th : pool) th.join();
}

/// One extremely randomized tree. Targets are either a scalar (regression,
/// n_classes == 0) or a class index in [0, n_classes).
class ExtraTreeBuilder {
public:
    ExtraTreeBuilder(const Matrix& x, std::span<const double> y, std::span<const int> cls, std::size_t n_classes,
                     std::span<const double> w, const Hyperparameters& p, std::size_t max_features, std::uint64_t seed)
        : x_(x), y_(y), cls_(cls), k_(n_classes), w_(w), p_(p), max_features_(max_features), rng_(seed) {}

    Tree build() {
        tree_.n_outputs = k_ == 0 ? 1 : k_;
        std::vector<std::size_t> idx(x_.rows);
        std::iota(idx.begin(), idx.end(), 0);
        features_.resize(x_.cols);
        std::iota(features_.begin(), features_.end(), 0);
        grow(idx, 0, idx.size(), 0);
        return std::move(tree_);
    }

private:
    struct Stats {
        double w = 0.0, s = 0.0, ss = 0.0;
        std::vector<double> cw;
    };

    Stats stats(const std::vector<std::size_t>& idx, std::size_t b, std::size_t e) const {
        Stats st;
        st.cw.assign(k_, 0.0);
        for (std::size_t i = b; i < e; ++i) {
            const auto r = idx[i];
            st.w += w_[r];
            if (k_ == 0) {
                st.s += w_[r] * y_[r];
                st.ss += w_[r] * y_[r] * y_[r];
            } else {
                st.cw[static_cast<std::size_t>(cls_[r])] += w_[r];
            }
        }
        return st;
    }

    std::vector<double> leaf_value(const Stats& st) const {
        if (k_ == 0) return {st.s / st.w};
        std::vector<double> v(k_);
        for (std::size_t c = 0; c < k_; ++c) v[c] = st.cw[c] / st.w;
        return v;
    }

    bool pure(const Stats& st) const {
        if (k_ == 0) return st.ss / st.w - (st.s / st.w) * (st.s / st.w) <= 1e-14 * std::max(1.0, std::abs(st.ss / st.w));
        std::size_t nonzero = 0;
        for (double c : st.cw) nonzero += c > 0.0;
        return nonzero <= 1;
    }

    /// Proxy score to maximize: sum over children of (sum^2 / weight) for
    /// regression, sum over children of (sum_c w_c^2 / w) for Gini.
    double score(const Stats& l, const Stats& r) const {
        if (k_ == 0) return l.s * l.s / l.w + r.s * r.s / r.w;
        double a = 0.0, b = 0.0;
        for (std::size_t c = 0; c < k_; ++c) {
            a += l.cw[c] * l.cw[c];
            b += r.cw[c] * r.cw[c];
        }
        return a / l.w + b / r.w;
    }

    std::size_t grow(std::vector<std::size_t>& idx, std::size_t b, std::size_t e, std::size_t depth) {
        const Stats st = stats(idx, b, e);
        const auto node = tree_.add_node(st.w, leaf_value(st));
        const std::size_t n = e - b;
        if (n < 2 * p_.min_samples_leaf || n < 2 || (p_.max_depth && depth >= p_.max_depth) || pure(st)) return node;

        int best_f = -1;
        double best_thr = 0.0, best_score = -std::numeric_limits<double>::infinity();
        std::size_t visited = 0;
        // Partial Fisher-Yates over the feature list; constant features don't count.
        for (std::size_t j = 0; j < features_.size() && visited < max_features_; ++j) {
            std::swap(features_[j], features_[j + rng_.index(features_.size() - j)]);
            const auto f = features_[j];
            double lo = std::numeric_limits<double>::infinity(), hi = -lo;
            for (std::size_t i = b; i < e; ++i) {
                const double v = x_(idx[i], f);
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
            if (!(hi > lo)) continue;
            ++visited;
            double thr = rng_.uniform(lo, hi);
            if (thr >= hi) thr = lo;
            Stats l, r;
            l.cw.assign(k_, 0.0);
            r.cw.assign(k_, 0.0);
            std::size_t nl = 0;
            for (std::size_t i = b; i < e; ++i) {
                const auto row = idx[i];
                Stats& side = x_(row, f) <= thr ? (++nl, l) : r;
                side.w += w_[row];
                if (k_ == 0)
                    side.s += w_[row] * y_[row];
                else
                    side.cw[static_cast<std::size_t>(cls_[row])] += w_[row];
            }
            if (nl < p_.min_samples_leaf || n - nl < p_.min_samples_leaf) continue;
            const double sc = score(l, r);
            if (sc > best_score) {
                best_score = sc;
                best_f = static_cast<int>(f);
                best_thr = thr;
            }
        }
        if (best_f < 0) return node;

        const auto mid = static_cast<std::size_t>(
            std::stable_partition(idx.begin() + static_cast<std::ptrdiff_t>(b), idx.begin() + static_cast<std::ptrdiff_t>(e),
                                  [&](std::size_t row) { return x_(row, static_cast<std::size_t>(best_f)) <= best_thr; }) -
            idx.begin());
        const auto left = grow(idx, b, mid, depth + 1);
        const auto right = grow(idx, mid, e, depth + 1);
        auto& nd = tree_.nodes[node];
        nd.feature = best_f;
        nd.threshold = best_thr;
        nd.left = static_cast<std::int32_t>(left);
        nd.right = static_cast<std::int32_t>(right);
        return node;
    }

    const Matrix& x_;
    std::span<const double> y_;
    std::span<const int> cls_;
    std::size_t k_;
    std::span<const double> w_;
    const Hyperparameters& p_;
    std::size_t max_features_;
    Rng rng_;
    std::vector<std::size_t> features_;
    Tree tree_;
};

/// Depth-limited least-squares regression tree grown level by level with
/// exact greedy splits over presorted feature orders. Leaf values are set
/// afterwards by the caller.
class RegressionTreeBuilder {
public:
    RegressionTreeBuilder(const Matrix& x, const std::vector<std::vector<std::uint32_t>>& order,
                          std::size_t max_depth, std::size_t min_leaf)
        : x_(x), order_(order), max_depth_(max_depth), min_leaf_(min_leaf) {}

    /// Returns the tree and, per sample, the index of its leaf.
    Tree build(std::span<const double> g, std::span<const double> w, std::vector<std::int32_t>& leaf_of) {
        const std::size_t n = x_.rows;
        Tree tree;
        tree.n_outputs = 1;
        std::vector<std::int32_t> node_of(n, 0);
        double w0 = 0.0;
        for (std::size_t i = 0; i < n; ++i) w0 += w[i];
        tree.add_node(w0, std::array<double, 1>{0.0});
        std::vector<std::int32_t> frontier = {0};

        for (std::size_t depth = 0; depth < max_depth_ && !frontier.empty(); ++depth) {
            const std::size_t nodes = tree.nodes.size();
            std::vector<double> tw(nodes, 0.0), ts(nodes, 0.0);
            std::vector<std::size_t> tc(nodes, 0);
            for (std::size_t i = 0; i < n; ++i) {
                const auto v = static_cast<std::size_t>(node_of[i]);
                tw[v] += w[i];
                ts[v] += w[i] * g[i];
                ++tc[v];
            }
            std::vector<char> active(nodes, 0);
            for (auto v : frontier) active[static_cast<std::size_t>(v)] = 1;

            std::vector<double> best_gain(nodes, 1e-12), best_thr(nodes, 0.0);
            std::vector<std::int32_t> best_f(nodes, -1);
            std::vector<double> lw(nodes), ls(nodes), last(nodes);
            std::vector<std::size_t> lc(nodes);
            for (std::size_t f = 0; f < x_.cols; ++f) {
                std::fill(lw.begin(), lw.end(), 0.0);
                std::fill(ls.begin(), ls.end(), 0.0);
                std::fill(lc.begin(), lc.end(), 0);
                for (auto i : order_[f]) {
                    const auto v = static_cast<std::size_t>(node_of[i]);
                    if (!active[v]) continue;
                    const double xv = x_(i, f);
                    if (lc[v] >= min_leaf_ && tc[v] - lc[v] >= min_leaf_ && xv > last[v]) {
                        const double rw = tw[v] - lw[v], rs = ts[v] - ls[v];
                        if (lw[v] > 0.0 && rw > 0.0) {
                            const double gain = ls[v] * ls[v] / lw[v] + rs * rs / rw - ts[v] * ts[v] / tw[v];
                            if (gain > best_gain[v]) {
                                best_gain[v] = gain;
                                best_f[v] = static_cast<std::int32_t>(f);
                                double thr = 0.5 * (last[v] + xv);
                                if (!(thr < xv)) thr = last[v];
                                best_thr[v] = thr;
                            }
                        }
                    }
                    lw[v] += w[i];
                    ls[v] += w[i] * g[i];
                    ++lc[v];
                    last[v] = xv;
                }
            }
            std::vector<std::int32_t> next;
            std::vector<std::int32_t> left_of(nodes, -1), right_of(nodes, -1);
            for (auto v : frontier) {
                const auto u = static_cast<std::size_t>(v);
                if (best_f[u] < 0) continue;
                tree.nodes[u].feature = best_f[u];
                tree.nodes[u].threshold = best_thr[u];
                left_of[u] = static_cast<std::int32_t>(tree.add_node(0.0, std::array<double, 1>{0.0}));
                right_of[u] = static_cast<std::int32_t>(tree.add_node(0.0, std::array<double, 1>{0.0}));
                tree.nodes[u].left = left_of[u];
                tree.nodes[u].right = right_of[u];
                next.push_back(left_of[u]);
                next.push_back(right_of[u]);
            }
            for (std::size_t i = 0; i < n; ++i) {
                const auto u = static_cast<std::size_t>(node_of[i]);
                if (left_of[u] < 0) continue;
                node_of[i] = x_(i, static_cast<std::size_t>(tree.nodes[u].feature)) <= tree.nodes[u].threshold
                                 ? left_of[u]
                                 : right_of[u];
                tree.nodes[static_cast<std::size_t>(node_of[i])].cover += w[i];
            }
            frontier = std::move(next);
        }
        leaf_of = std::move(node_of);
        return tree;
    }

private:
    const Matrix& x_;
    const std::vector<std::vector<std::uint32_t>>& order_;
    std::size_t max_depth_;
    std::size_t min_leaf_;
};

inline std::vector<int> sorted_classes(std::span<const int> labels) {
    std::vector<int> c(labels.begin(), labels.end());
    std::sort(c.begin(), c.end());
    c.erase(std::unique(c.begin(), c.end()), c.end());
    return c;
}

inline void check_inputs(const Matrix& x, std::size_t n_targets, std::span<const double> w) {
    if (x.rows < 2) throw ValidationError("training needs at least 2 samples");
    if (n_targets != x.rows) throw ValidationError("target length does not match the number of rows");
    if (!w.empty() && w.size() != x.rows) throw ValidationError("weight length does not match the number of rows");
    for (double v : x.data)
        if (!std::isfinite(v)) throw ValidationError("training matrix contains a non-finite value");
    for (double v : w)
        if (!(v > 0.0) || !std::isfinite(v)) throw ValidationError("sample weights must be positive and finite");
}

} // namespace detail

inline TreeEnsembleModel train_extratrees_regressor(const Matrix& x, std::span<const double> y,
                                                    const Hyperparameters& p, std::uint64_t seed,
                                                    std::span<const double> weights = {},
                                                    Warnings* warnings = nullptr) {
    detail::check_inputs(x, y.size(), weights);
    if (std::all_of(y.begin(), y.end(), [&](double v) { return v == y[0]; }))
        warn(warnings, "constant regression target; the model predicts that constant");
    std::vector<double> w(weights.begin(), weights.end());
    if (w.empty()) w.assign(x.rows, 1.0);
    TreeEnsembleModel m;
    m.kind = ModelKind::extratrees_regressor;
    m.seed = seed;
    m.n_features = x.cols;
    m.params = p;
    m.trees.resize(p.n_trees);
    const std::size_t mf = p.max_features ? std::min(p.max_features, x.cols) : x.cols;
    detail::parallel_for(p.n_trees, p.threads, [&](std::size_t t) {
        m.trees[t] = detail::ExtraTreeBuilder(x, y, {}, 0, w, p, mf, detail::tree_seed(seed, t)).build();
    });
    return m;
}

inline TreeEnsembleModel train_extratrees_classifier(const Matrix& x, std::span<const int> labels,
                                                     const Hyperparameters& p, std::uint64_t seed,
                                                     std::span<const double> weights = {}) {
    detail::check_inputs(x, labels.size(), weights);
    TreeEnsembleModel m;
    m.kind = ModelKind::extratrees_classifier;
    m.seed = seed;
    m.n_features = x.cols;
    m.params = p;
    m.classes = detail::sorted_classes(labels);
    std::vector<int> cls(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i)
        cls[i] = static_cast<int>(std::lower_bound(m.classes.begin(), m.classes.end(), labels[i]) - m.classes.begin());
    std::vector<double> w(weights.begin(), weights.end());
    if (w.empty()) w.assign(x.rows, 1.0);
    const std::size_t mf =
        p.max_features ? std::min(p.max_features, x.cols)
                       : std::max<std::size_t>(1, static_cast<std::size_t>(std::sqrt(static_cast<double>(x.cols))));
    m.trees.resize(p.n_trees);
    detail::parallel_for(p.n_trees, p.threads, [&](std::size_t t) {
        m.trees[t] =
            detail::ExtraTreeBuilder(x, {}, cls, m.classes.size(), w, p, mf, detail::tree_seed(seed, t)).build();
    });
    return m;
}

/// Multiclass gradient boosting: one least-squares tree per class and round
/// on the softmax residuals, Newton leaf values, shrinkage folded into leaves.
inline TreeEnsembleModel train_gbdt_classifier(const Matrix& x, std::span<const int> labels, const Hyperparameters& p,
                                               std::uint64_t seed, std::span<const double> weights = {}) {
    detail::check_inputs(x, labels.size(), weights);
    TreeEnsembleModel m;
    m.kind = ModelKind::gbdt_classifier;
    m.seed = seed;
    m.n_features = x.cols;
    m.params = p;
    m.learning_rate = p.learning_rate;
    m.classes = detail::sorted_classes(labels);
    const std::size_t n = x.rows, k = m.classes.size();
    std::vector<std::size_t> cls(n);
    for (std::size_t i = 0; i < n; ++i)
        cls[i] = static_cast<std::size_t>(std::lower_bound(m.classes.begin(), m.classes.end(), labels[i]) - m.classes.begin());
    std::vector<double> w(weights.begin(), weights.end());
    if (w.empty()) w.assign(n, 1.0);

    std::vector<double> prior(k, 0.0);
    double wsum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        prior[cls[i]] += w[i];
        wsum += w[i];
    }
    m.init_score.resize(k);
    for (std::size_t c = 0; c < k; ++c) m.init_score[c] = std::log(prior[c] / wsum);
    if (k < 2) return m;  // single class: the prior is the whole model

    std::vector<std::vector<std::uint32_t>> order(x.cols);
    for (std::size_t f = 0; f < x.cols; ++f) {
        order[f].resize(n);
        std::iota(order[f].begin(), order[f].end(), 0u);
        std::stable_sort(order[f].begin(), order[f].end(), [&](auto a, auto b) { return x(a, f) < x(b, f); });
    }
    detail::RegressionTreeBuilder builder(x, order, p.gbdt_max_depth, std::max<std::size_t>(1, p.gbdt_min_samples_leaf));

    std::vector<double> score(n * k);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < k; ++c) score[i * k + c] = m.init_score[c];
    std::vector<double> prob(n * k), resid(n);
    std::vector<std::int32_t> leaf_of;
    const double newton_scale = static_cast<double>(k - 1) / static_cast<double>(k);
    for (std::size_t round = 0; round < p.gbdt_rounds; ++round) {
        for (std::size_t i = 0; i < n; ++i) {
            const double* s = &score[i * k];
            const double mx = *std::max_element(s, s + k);
            double z = 0.0;
            for (std::size_t c = 0; c < k; ++c) z += (prob[i * k + c] = std::exp(s[c] - mx));
            for (std::size_t c = 0; c < k; ++c) prob[i * k + c] /= z;
        }
        for (std::size_t c = 0; c < k; ++c) {
            for (std::size_t i = 0; i < n; ++i) resid[i] = (cls[i] == c ? 1.0 : 0.0) - prob[i * k + c];
            Tree tree = builder.build(resid, w, leaf_of);
            std::vector<double> num(tree.nodes.size(), 0.0), den(tree.nodes.size(), 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                const auto leaf = static_cast<std::size_t>(leaf_of[i]);
                num[leaf] += w[i] * resid[i];
                den[leaf] += w[i] * std::abs(resid[i]) * (1.0 - std::abs(resid[i]));
            }
            for (std::size_t v = 0; v < tree.nodes.size(); ++v) {
                if (!tree.nodes[v].is_leaf()) continue;
                const double step = den[v] > 1e-300 ? newton_scale * num[v] / den[v] : 0.0;
                tree.values[v] = p.learning_rate * step;
            }
            for (std::size_t i = 0; i < n; ++i) score[i * k + c] += tree.values[static_cast<std::size_t>(leaf_of[i])];
            m.trees.push_back(std::move(tree));
        }
    }
    return m;
}

// ---------------------------------------------------------------------------
// Serialization: versioned JSON with flattened node arrays.

inline nlohmann::ordered_json to_json(const TreeEnsembleModel& m) {
    nlohmann::ordered_json j;
    j["format"] = "narralyze-tree-ensemble";
    j["version"] = 1;
    j["kind"] = to_string(m.kind);
    j["seed"] = m.seed;
    j["n_features"] = m.n_features;
    j["classes"] = m.classes;
    j["init_score"] = m.init_score;
    j["learning_rate"] = m.learning_rate;
    j["hyperparameters"] = {{"n_trees", m.params.n_trees},
                            {"max_features", m.params.max_features},
                            {"min_samples_leaf", m.params.min_samples_leaf},
                            {"max_depth", m.params.max_depth},
                            {"gbdt_rounds", m.params.gbdt_rounds},
                            {"learning_rate", m.params.learning_rate},
                            {"gbdt_max_depth", m.params.gbdt_max_depth},
                            {"gbdt_min_samples_leaf", m.params.gbdt_min_samples_leaf}};
    auto trees = nlohmann::ordered_json::array();
    for (const auto& t : m.trees) {
        nlohmann::ordered_json tj;
        std::vector<std::int32_t> feature, left, right;
        std::vector<double> threshold, cover;
        for (const auto& nd : t.nodes) {
            feature.push_back(nd.feature);
            threshold.push_back(nd.threshold);
            left.push_back(nd.left);
            right.push_back(nd.right);
            cover.push_back(nd.cover);
        }
        tj["n_outputs"] = t.n_outputs;
        tj["feature"] = feature;
        tj["threshold"] = threshold;
        tj["left"] = left;
        tj["right"] = right;
        tj["cover"] = cover;
        tj["value"] = t.values;
        trees.push_back(std::move(tj));
    }
    j["trees"] = std::move(trees);
    return j;
}

inline TreeEnsembleModel model_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "narralyze-tree-ensemble" || j.value("version", 0) != 1)
        throw ValidationError("not a version-1 narralyze tree ensemble");
    TreeEnsembleModel m;
    m.kind = parse_model_kind(j.at("kind").get<std::string>());
    m.seed = j.at("seed").get<std::uint64_t>();
    m.n_features = j.at("n_features").get<std::size_t>();
    m.classes = j.at("classes").get<std::vector<int>>();
    m.init_score = j.at("init_score").get<std::vector<double>>();
    m.learning_rate = j.at("learning_rate").get<double>();
    const auto& hp = j.at("hyperparameters");
    m.params.n_trees = hp.at("n_trees");
    m.params.max_features = hp.at("max_features");
    m.params.min_samples_leaf = hp.at("min_samples_leaf");
    m.params.max_depth = hp.at("max_depth");
    m.params.gbdt_rounds = hp.at("gbdt_rounds");
    m.params.learning_rate = hp.at("learning_rate");
    m.params.gbdt_max_depth = hp.at("gbdt_max_depth");
    m.params.gbdt_min_samples_leaf = hp.at("gbdt_min_samples_leaf");
    for (const auto& tj : j.at("trees")) {
        Tree t;
        t.n_outputs = tj.at("n_outputs");
        const auto feature = tj.at("feature").get<std::vector<std::int32_t>>();
        const auto threshold = tj.at("threshold").get<std::vector<double>>();
        const auto left = tj.at("left").get<std::vector<std::int32_t>>();
        const auto right = tj.at("right").get<std::vector<std::int32_t>>();
        const auto cover = tj.at("cover").get<std::vector<double>>();
        t.values = tj.at("value").get<std::vector<double>>();
        const auto n = feature.size();
        if (threshold.size() != n || left.size() != n || right.size() != n || cover.size() != n ||
            t.values.size() != n * t.n_outputs)
            throw ValidationError("tree arrays have inconsistent lengths");
        for (std::size_t v = 0; v < n; ++v) {
            t.nodes.push_back({feature[v], threshold[v], left[v], right[v], cover[v]});
            if (feature[v] >= 0 && (left[v] <= static_cast<std::int32_t>(v) || right[v] <= static_cast<std::int32_t>(v) ||
                                    left[v] >= static_cast<std::int32_t>(n) || right[v] >= static_cast<std::int32_t>(n)))
                throw ValidationError("tree child index out of range");
        }
        m.trees.push_back(std::move(t));
    }
    return m;
}

} // namespace narralyze::models
