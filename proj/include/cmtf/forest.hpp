#pragma once

// Random forest of CART trees with Gini impurity, bootstrap sampling, and
// square-root feature subsampling. Feature importances are the
// sample-weighted impurity decreases summed per feature across all trees,
// normalized to sum 1. Used downstream to score phenotypes on the patient
// membership matrix.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "cmtf/errors.hpp"
#include "cmtf/rng.hpp"
#include "cmtf/tensor.hpp"

namespace cmtf {

struct ForestConfig {
    std::size_t n_trees = 200;
    int max_depth = -1;  // negative = unlimited
    std::size_t min_samples_split = 2;
    std::size_t mtry = 0;  // features tried per split; 0 = floor(sqrt(n_features))
    bool bootstrap = true;
    std::uint64_t seed = 0;

    void validate() const {
        if (n_trees < 1) throw ParameterError("ForestConfig: n_trees must be >= 1");
        if (min_samples_split < 2)
            throw ParameterError("ForestConfig: min_samples_split must be >= 2");
    }
};

struct TreeNode {
    int feature = -1;        // -1 marks a leaf
    double threshold = 0.0;  // x <= threshold goes left
    int left = -1, right = -1;
    double p1 = 0.0;  // class-1 frequency at a leaf
};

struct Tree {
    std::vector<TreeNode> nodes;
};

struct ForestModel {
    std::vector<Tree> trees;
    std::vector<double> importances;
    std::size_t n_features = 0;
};

namespace detail {

struct TreeGrower {
    const Dense2& rows;
    const std::vector<std::uint8_t>& labels;
    const ForestConfig& cfg;
    std::size_t mtry;
    Rng& rng;
    std::vector<double>& importance_acc;
    double n_root;
    Tree tree;

    static double gini(std::size_t pos, std::size_t n) {
        if (n == 0) return 0.0;
        const double p = static_cast<double>(pos) / static_cast<double>(n);
        return 2.0 * p * (1.0 - p);
    }

    int grow(std::vector<std::size_t>& sample, int depth) {
        const std::size_t n = sample.size();
        std::size_t pos = 0;
        for (auto i : sample) pos += labels[i];

        const bool pure = (pos == 0 || pos == n);
        const bool depth_capped = cfg.max_depth >= 0 && depth >= cfg.max_depth;
        if (pure || n < cfg.min_samples_split || depth_capped)
            return make_leaf(pos, n);

        // choose mtry candidate features without replacement
        std::vector<std::size_t> feats(rows.cols);
        std::iota(feats.begin(), feats.end(), 0);
        for (std::size_t k = 0; k < mtry; ++k)
            std::swap(feats[k], feats[k + rng.index(feats.size() - k)]);

        const double parent_gini = gini(pos, n);
        double best_gain = 0.0;
        int best_feat = -1;
        double best_thr = 0.0;

        std::vector<std::pair<double, std::uint8_t>> vals(n);
        for (std::size_t fi = 0; fi < mtry; ++fi) {
            const std::size_t f = feats[fi];
            for (std::size_t k = 0; k < n; ++k)
                vals[k] = {rows.at(sample[k], f), labels[sample[k]]};
            std::sort(vals.begin(), vals.end());
            std::size_t left_pos = 0;
            for (std::size_t k = 0; k + 1 < n; ++k) {
                left_pos += vals[k].second;
                if (vals[k].first == vals[k + 1].first) continue;
                const std::size_t nl = k + 1, nr = n - nl;
                const double child =
                    (static_cast<double>(nl) * gini(left_pos, nl) +
                     static_cast<double>(nr) * gini(pos - left_pos, nr)) /
                    static_cast<double>(n);
                const double gain = parent_gini - child;
                if (gain > best_gain + 1e-15) {
                    best_gain = gain;
                    best_feat = static_cast<int>(f);
                    best_thr = 0.5 * (vals[k].first + vals[k + 1].first);
                }
            }
        }

        if (best_feat < 0) return make_leaf(pos, n);  // all candidates constant

        importance_acc[static_cast<std::size_t>(best_feat)] +=
            (static_cast<double>(n) / n_root) * best_gain;

        std::vector<std::size_t> left, right;
        for (auto i : sample)
            (rows.at(i, static_cast<std::size_t>(best_feat)) <= best_thr ? left : right)
                .push_back(i);
        sample.clear();
        sample.shrink_to_fit();

        const int node_id = static_cast<int>(tree.nodes.size());
        tree.nodes.push_back({best_feat, best_thr, -1, -1, 0.0});
        const int l = grow(left, depth + 1);
        const int r = grow(right, depth + 1);
        tree.nodes[static_cast<std::size_t>(node_id)].left = l;
        tree.nodes[static_cast<std::size_t>(node_id)].right = r;
        return node_id;
    }

    int make_leaf(std::size_t pos, std::size_t n) {
        const int id = static_cast<int>(tree.nodes.size());
        tree.nodes.push_back(
            {-1, 0.0, -1, -1, n ? static_cast<double>(pos) / static_cast<double>(n) : 0.0});
        return id;
    }
};

}  // namespace detail

inline ForestModel forest_fit(const Dense2& rows, const std::vector<std::uint8_t>& labels,
                              const ForestConfig& cfg) {
    cfg.validate();
    if (rows.rows != labels.size()) throw DimensionError("forest_fit: rows/labels differ");
    if (rows.rows < cfg.min_samples_split)
        throw ParameterError("forest_fit: need at least min_samples_split rows");
    for (auto y : labels)
        if (y > 1) throw ParameterError("forest_fit: labels must be 0 or 1");

    ForestModel model;
    model.n_features = rows.cols;
    model.importances.assign(rows.cols, 0.0);
    const std::size_t mtry =
        cfg.mtry > 0 ? std::min(cfg.mtry, rows.cols)
                     : std::max<std::size_t>(
                           1, static_cast<std::size_t>(std::sqrt(static_cast<double>(rows.cols))));

    Rng base(cfg.seed);
    for (std::size_t t = 0; t < cfg.n_trees; ++t) {
        Rng tree_rng = base.fork(t);
        std::vector<std::size_t> sample;
        sample.reserve(rows.rows);
        if (cfg.bootstrap) {
            for (std::size_t i = 0; i < rows.rows; ++i) sample.push_back(tree_rng.index(rows.rows));
        } else {
            sample.resize(rows.rows);
            std::iota(sample.begin(), sample.end(), 0);
        }
        detail::TreeGrower grower{rows,    labels,
                                  cfg,     mtry,
                                  tree_rng, model.importances,
                                  static_cast<double>(sample.size()),
                                  Tree{}};
        grower.grow(sample, 0);
        model.trees.push_back(std::move(grower.tree));
    }

    double total = 0.0;
    for (double x : model.importances) total += x;
    if (total > 0.0)
        for (auto& x : model.importances) x /= total;
    return model;
}

inline double tree_predict(const Tree& t, const Dense2& rows, std::size_t i) {
    int node = 0;
    while (t.nodes[static_cast<std::size_t>(node)].feature >= 0) {
        const auto& nd = t.nodes[static_cast<std::size_t>(node)];
        node = rows.at(i, static_cast<std::size_t>(nd.feature)) <= nd.threshold ? nd.left
                                                                                : nd.right;
    }
    return t.nodes[static_cast<std::size_t>(node)].p1;
}

// Mean leaf class-1 frequency across trees, one probability per row.
inline std::vector<double> forest_predict_proba(const ForestModel& model, const Dense2& rows) {
    if (rows.cols != model.n_features)
        throw DimensionError("forest_predict_proba: feature count mismatch");
    std::vector<double> probs(rows.rows, 0.0);
    for (const auto& t : model.trees)
        for (std::size_t i = 0; i < rows.rows; ++i) probs[i] += tree_predict(t, rows, i);
    for (auto& p : probs) p /= static_cast<double>(model.trees.size());
    return probs;
}

// Feature indices with importance >= threshold, descending by importance.
inline std::vector<std::size_t> top_phenotypes(const ForestModel& model, double threshold = 0.10) {
    std::vector<std::size_t> idx;
    for (std::size_t f = 0; f < model.importances.size(); ++f)
        if (model.importances[f] >= threshold) idx.push_back(f);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return model.importances[a] > model.importances[b];
    });
    return idx;
}

}  // namespace cmtf
