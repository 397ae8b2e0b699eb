#pragma once

// Block-alternating baseline: each outer iteration cycles the blocks
// A -> B -> C -> D -> w (-> biases when enabled), taking a fixed number of
// plain gradient steps per block with the same soft-threshold/clamp treatment
// as the all-at-once model, then refits a logistic-regression classifier on
// the current membership rows. The classifier loss is recorded in the totals
// but its gradient never reaches the factors.

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cmtf/metrics.hpp"
#include "cmtf/model.hpp"
#include "cmtf/optimizer.hpp"

namespace cmtf {

struct AlsConfig {
    std::size_t rank = 28;
    double lambda = 0.7;
    double learning_rate = 0.01;
    double l1_weight = 0.001;
    std::size_t outer_iters = 100;
    std::size_t inner_steps = 10;
    bool use_bias = false;
    std::uint64_t seed = 0;
    double lr_decay_factor = 0.8;
    std::size_t lr_decay_period = 1000;
    std::size_t logreg_max_steps = 2000;
    double logreg_tol = 1e-6;

    // Test/diagnostic hook, called after every inner gradient step.
    std::function<void(std::size_t, const ModelParams&)> step_observer;

    void validate() const {
        if (rank < 1) throw ParameterError("AlsConfig: rank must be >= 1");
        if (lambda < 0.0 || lambda > 1.0) throw ParameterError("AlsConfig: lambda not in [0,1]");
        if (learning_rate <= 0.0) throw ParameterError("AlsConfig: learning_rate must be > 0");
        if (l1_weight < 0.0) throw ParameterError("AlsConfig: l1_weight must be >= 0");
        if (outer_iters < 1 || inner_steps < 1)
            throw ParameterError("AlsConfig: iteration counts must be >= 1");
    }
};

struct LogRegParams {
    Dense2 weights;  // rank x 2
    std::array<double, 2> intercept{0.0, 0.0};
};

inline Dense2 logreg_probabilities(const LogRegParams& p, const Dense2& rows) {
    if (rows.cols != p.weights.rows)
        throw DimensionError("logreg_probabilities: feature count mismatch");
    Dense2 out(rows.rows, 2);
    for (std::size_t i = 0; i < rows.rows; ++i)
        for (std::size_t o = 0; o < 2; ++o) {
            double z = p.intercept[o];
            for (std::size_t s = 0; s < rows.cols; ++s) z += rows.at(i, s) * p.weights.at(s, o);
            out.at(i, o) = sigmoid(z);
        }
    return out;
}

inline double logreg_bce(const LogRegParams& p, const Dense2& rows, const LabelMatrix& labels) {
    if (labels.rows != rows.rows || labels.cols != 2)
        throw DimensionError("logreg_bce: label dims differ");
    Dense2 logits(rows.rows, 2);
    for (std::size_t i = 0; i < rows.rows; ++i)
        for (std::size_t o = 0; o < 2; ++o) {
            double z = p.intercept[o];
            for (std::size_t s = 0; s < rows.cols; ++s) z += rows.at(i, s) * p.weights.at(s, o);
            logits.at(i, o) = z;
        }
    return bce_with_logits(logits, labels);
}

// Gradient-descent fit of one logistic regression per outcome, run until the
// gradient norm drops below tol or the step cap is hit. The step size comes
// from a power-iteration bound on the design spectral norm, which keeps the
// descent monotone. No regularization; a single-class outcome simply drives
// the intercept.
inline LogRegParams fit_logreg(const Dense2& rows, const LabelMatrix& labels,
                               std::size_t max_steps = 2000, double tol = 1e-6) {
    if (rows.rows < 2) throw ParameterError("fit_logreg: need at least 2 rows");
    if (labels.rows != rows.rows || labels.cols != 2)
        throw DimensionError("fit_logreg: label dims differ");
    labels.validate();
    const std::size_t n = rows.rows, r = rows.cols;

    // augmented design (features + intercept column)
    Dense2 X(n, r + 1);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t s = 0; s < r; ++s) X.at(i, s) = rows.at(i, s);
        X.at(i, r) = 1.0;
    }

    // spectral-norm bound via power iteration on X^T X
    std::vector<double> v(r + 1, 1.0 / std::sqrt(static_cast<double>(r + 1)));
    double sigma_sq = 1.0;
    for (int it = 0; it < 60; ++it) {
        std::vector<double> xv(n, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t s = 0; s <= r; ++s) xv[i] += X.at(i, s) * v[s];
        std::vector<double> xtxv(r + 1, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t s = 0; s <= r; ++s) xtxv[s] += X.at(i, s) * xv[i];
        double norm = 0.0;
        for (double x : xtxv) norm += x * x;
        norm = std::sqrt(norm);
        if (norm == 0.0) break;
        sigma_sq = norm;
        for (std::size_t s = 0; s <= r; ++s) v[s] = xtxv[s] / norm;
    }
    const double lipschitz = std::max(sigma_sq / (4.0 * static_cast<double>(n)), 1e-12);
    const double lr = 1.0 / lipschitz;

    Dense2 wts(r + 1, 2);
    for (std::size_t step = 0; step < max_steps; ++step) {
        Dense2 grad(r + 1, 2);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t o = 0; o < 2; ++o) {
                double z = 0.0;
                for (std::size_t s = 0; s <= r; ++s) z += X.at(i, s) * wts.at(s, o);
                const double diff = (sigmoid(z) - static_cast<double>(labels.at(i, o))) /
                                    static_cast<double>(n);
                for (std::size_t s = 0; s <= r; ++s) grad.at(s, o) += X.at(i, s) * diff;
            }
        }
        double gnorm = 0.0;
        for (double g : grad.v) gnorm += g * g;
        gnorm = std::sqrt(gnorm);
        if (gnorm <= tol) break;
        for (std::size_t k = 0; k < wts.v.size(); ++k) wts.v[k] -= lr * grad.v[k];
    }

    LogRegParams out;
    out.weights = Dense2(r, 2);
    for (std::size_t s = 0; s < r; ++s)
        for (std::size_t o = 0; o < 2; ++o) out.weights.at(s, o) = wts.at(s, o);
    out.intercept = {wts.at(r, 0), wts.at(r, 1)};
    return out;
}

struct AlsResult {
    ModelParams params;  // classifier head left at initialization
    LogRegParams logreg;
    TrainHistory history;
};

namespace detail {
enum class AlsBlock { A, B, C, D, W, Bias };
}

inline AlsResult train_als(const CohortDataset& data, const AlsConfig& cfg) {
    cfg.validate();
    data.check_consistent();

    ModelParams params = init_params(data.patients(), data.features(), data.timepoints(),
                                     data.statics_count(), cfg.rank, cfg.seed);
    if (!cfg.use_bias) {
        std::fill(params.biases.feature.begin(), params.biases.feature.end(), 0.0);
        std::fill(params.biases.patient.begin(), params.biases.patient.end(), 0.0);
    }

    const auto train_rows = detail::classifier_rows(data);
    if (train_rows.size() < 2) throw ParameterError("train_als: need >= 2 training rows");
    const LabelMatrix ytrain = take_rows(data.labels, train_rows);

    std::vector<detail::AlsBlock> blocks = {detail::AlsBlock::A, detail::AlsBlock::B,
                                            detail::AlsBlock::C, detail::AlsBlock::D,
                                            detail::AlsBlock::W};
    if (cfg.use_bias) blocks.push_back(detail::AlsBlock::Bias);

    TrainHistory history;
    history.method = cfg.use_bias ? "als_bias" : "als";
    history.termination = "outer_iters";
    const double wrec = 1.0 - cfg.lambda;

    LogRegParams logreg;
    std::size_t global_step = 0;
    for (std::size_t outer = 0; outer < cfg.outer_iters; ++outer) {
        const auto t0 = std::chrono::steady_clock::now();
        for (auto block : blocks) {
            for (std::size_t it = 0; it < cfg.inner_steps; ++it) {
                const double lr = scheduled_lr(cfg.learning_rate, global_step,
                                               cfg.lr_decay_factor, cfg.lr_decay_period);
                auto [loss, grads] = evaluate_with_gradients(params, data, 0.0, cfg.l1_weight);
                if (!std::isfinite(loss.total))
                    throw NumericError("train_als: diverged at inner step " +
                                       std::to_string(global_step));
                const double threshold = lr * cfg.l1_weight;
                switch (block) {
                    case detail::AlsBlock::A:
                        for (std::size_t k = 0; k < params.factors.A.v.size(); ++k)
                            params.factors.A.v[k] -= lr * wrec * grads.A.v[k];
                        prox_l1_nonneg_inplace(params.factors.A, threshold);
                        break;
                    case detail::AlsBlock::B:
                        for (std::size_t k = 0; k < params.factors.B.v.size(); ++k)
                            params.factors.B.v[k] -= lr * wrec * grads.B.v[k];
                        prox_l1_nonneg_inplace(params.factors.B, threshold);
                        break;
                    case detail::AlsBlock::C:
                        for (std::size_t k = 0; k < params.factors.C.v.size(); ++k)
                            params.factors.C.v[k] -= lr * wrec * grads.C.v[k];
                        prox_l1_nonneg_inplace(params.factors.C, threshold);
                        break;
                    case detail::AlsBlock::D:
                        for (std::size_t k = 0; k < params.factors.D.v.size(); ++k)
                            params.factors.D.v[k] -= lr * wrec * grads.D.v[k];
                        prox_l1_nonneg_inplace(params.factors.D, threshold);
                        break;
                    case detail::AlsBlock::W:
                        for (std::size_t k = 0; k < params.factors.w.size(); ++k) {
                            params.factors.w[k] -= lr * wrec * grads.w[k];
                            if (params.factors.w[k] < 0.0) params.factors.w[k] = 0.0;
                        }
                        break;
                    case detail::AlsBlock::Bias:
                        for (std::size_t k = 0; k < params.biases.feature.size(); ++k)
                            params.biases.feature[k] -= lr * wrec * grads.b_feat[k];
                        for (std::size_t k = 0; k < params.biases.patient.size(); ++k)
                            params.biases.patient[k] -= lr * wrec * grads.b_pat[k];
                        break;
                }
                ++global_step;
                if (cfg.step_observer) cfg.step_observer(global_step, params);
            }
        }

        logreg = fit_logreg(take_rows(params.factors.A, train_rows), ytrain,
                            cfg.logreg_max_steps, cfg.logreg_tol);

        LossBreakdown rec = total_loss(params, data, 0.0, cfg.l1_weight);
        LossBreakdown bd;
        bd.tensor_fit = rec.tensor_fit;
        bd.matrix_fit = rec.matrix_fit;
        bd.sparsity = rec.sparsity;
        bd.classifier = logreg_bce(logreg, take_rows(params.factors.A, train_rows), ytrain);
        bd.lambda = cfg.lambda;
        bd.total = wrec * (bd.tensor_fit + bd.matrix_fit + bd.sparsity) +
                   cfg.lambda * bd.classifier;
        const auto t1 = std::chrono::steady_clock::now();
        const double lr_now = scheduled_lr(cfg.learning_rate, global_step, cfg.lr_decay_factor,
                                           cfg.lr_decay_period);
        history.steps.push_back(
            {bd, lr_now, std::chrono::duration<double, std::milli>(t1 - t0).count()});
        history.final_step = outer;
    }

    // normalize columns; fold the removed membership norms into the logistic
    // weights so its logits are unchanged
    const auto norms_a = column_norms(params.factors.A);
    params.factors = normalize_columns(params.factors);
    for (std::size_t s = 0; s < params.factors.rank; ++s)
        for (std::size_t o = 0; o < 2; ++o) logreg.weights.at(s, o) *= norms_a[s];

    return {std::move(params), std::move(logreg), std::move(history)};
}

}  // namespace cmtf
