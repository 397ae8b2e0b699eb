#pragma once

// Classification and imputation metrics, plus the factor-congruence score
// used to compare a recovered factor set against planted ground truth.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "cmtf/errors.hpp"
#include "cmtf/factor_set.hpp"

namespace cmtf {

// Rank-based AUC (Mann-Whitney with midranks for ties). NaN when only one
// class is present.
inline double roc_auc(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels) {
    if (scores.size() != labels.size()) throw DimensionError("roc_auc: size mismatch");
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    std::size_t n_pos = 0;
    for (auto y : labels) n_pos += y;
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) return std::numeric_limits<double>::quiet_NaN();

    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double midrank = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k)
            if (labels[order[k]]) rank_sum_pos += midrank;
        i = j + 1;
    }
    const double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) * (n_pos + 1);
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

struct BinaryMetrics {
    double auc = 0.0, f1 = 0.0, precision = 0.0, recall = 0.0;
};

// Threshold metrics at p >= 0.5. Empty denominators yield 0.
inline BinaryMetrics binary_metrics(const std::vector<double>& probs,
                                    const std::vector<std::uint8_t>& labels,
                                    double threshold = 0.5) {
    if (probs.size() != labels.size()) throw DimensionError("binary_metrics: size mismatch");
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const bool pred = probs[i] >= threshold;
        if (pred && labels[i]) ++tp;
        else if (pred && !labels[i]) ++fp;
        else if (!pred && labels[i]) ++fn;
    }
    BinaryMetrics m;
    m.auc = roc_auc(probs, labels);
    m.precision = (tp + fp) > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
    m.recall = (tp + fn) > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
    m.f1 = (m.precision + m.recall) > 0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
                                        : 0.0;
    return m;
}

inline double mean_absolute_error(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.empty()) throw DimensionError("mean_absolute_error: bad sizes");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(a[i] - b[i]);
    return acc / static_cast<double>(a.size());
}

inline double root_mean_squared_error(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.empty())
        throw DimensionError("root_mean_squared_error: bad sizes");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(acc / static_cast<double>(a.size()));
}

// One-sided sign test: P(X >= wins) for X ~ Binomial(n, 1/2).
inline double sign_test_p(std::size_t wins, std::size_t n) {
    if (wins > n) throw ParameterError("sign_test_p: wins > n");
    double p = 0.0;
    for (std::size_t k = wins; k <= n; ++k) {
        double logc = 0.0;
        for (std::size_t i = 0; i < k; ++i)
            logc += std::log(static_cast<double>(n - i)) - std::log(static_cast<double>(i + 1));
        p += std::exp(logc - static_cast<double>(n) * std::log(2.0));
    }
    return std::min(p, 1.0);
}

// ---------------------------------------------------------------------------
// Factor congruence: per matched component, the product over modes
// (A, B, C, D) of the cosine similarity between recovered and planted
// columns. Components are matched by the permutation maximizing total
// congruence (exhaustive for rank <= 8, greedy above).

struct CongruenceResult {
    double mean = 0.0;
    std::vector<double> per_component;          // indexed by recovered component
    std::vector<std::size_t> recovered_to_planted;
};

namespace detail {
inline double column_cosine(const Dense2& x, std::size_t cx, const Dense2& y, std::size_t cy) {
    double dot = 0.0, nx = 0.0, ny = 0.0;
    for (std::size_t r = 0; r < x.rows; ++r) {
        dot += x.at(r, cx) * y.at(r, cy);
        nx += x.at(r, cx) * x.at(r, cx);
        ny += y.at(r, cy) * y.at(r, cy);
    }
    if (nx == 0.0 || ny == 0.0) return 0.0;
    return dot / std::sqrt(nx * ny);
}
}  // namespace detail

inline CongruenceResult factor_congruence(const FactorSet& recovered, const FactorSet& planted) {
    recovered.check_shapes();
    planted.check_shapes();
    if (recovered.rank != planted.rank ||
        recovered.A.rows != planted.A.rows || recovered.B.rows != planted.B.rows ||
        recovered.C.rows != planted.C.rows || recovered.D.rows != planted.D.rows)
        throw DimensionError("factor_congruence: factor sets are not comparable");
    const std::size_t r = recovered.rank;

    Dense2 sim(r, r);
    for (std::size_t s = 0; s < r; ++s)
        for (std::size_t t = 0; t < r; ++t)
            sim.at(s, t) = detail::column_cosine(recovered.A, s, planted.A, t) *
                           detail::column_cosine(recovered.B, s, planted.B, t) *
                           detail::column_cosine(recovered.C, s, planted.C, t) *
                           detail::column_cosine(recovered.D, s, planted.D, t);

    std::vector<std::size_t> best(r), perm(r);
    std::iota(perm.begin(), perm.end(), 0);
    if (r <= 8) {
        double best_score = -std::numeric_limits<double>::infinity();
        do {
            double score = 0.0;
            for (std::size_t s = 0; s < r; ++s) score += sim.at(s, perm[s]);
            if (score > best_score) {
                best_score = score;
                best = perm;
            }
        } while (std::next_permutation(perm.begin(), perm.end()));
    } else {
        std::vector<bool> taken(r, false);
        best.assign(r, 0);
        // greedy: repeatedly take the globally best remaining pair
        std::vector<bool> used_s(r, false);
        for (std::size_t pick = 0; pick < r; ++pick) {
            double hi = -std::numeric_limits<double>::infinity();
            std::size_t bs = 0, bt = 0;
            for (std::size_t s = 0; s < r; ++s) {
                if (used_s[s]) continue;
                for (std::size_t t = 0; t < r; ++t) {
                    if (taken[t]) continue;
                    if (sim.at(s, t) > hi) {
                        hi = sim.at(s, t);
                        bs = s;
                        bt = t;
                    }
                }
            }
            used_s[bs] = true;
            taken[bt] = true;
            best[bs] = bt;
        }
    }

    CongruenceResult out;
    out.recovered_to_planted = best;
    out.per_component.resize(r);
    for (std::size_t s = 0; s < r; ++s) {
        out.per_component[s] = sim.at(s, best[s]);
        out.mean += sim.at(s, best[s]);
    }
    out.mean /= static_cast<double>(r);
    return out;
}

}  // namespace cmtf
