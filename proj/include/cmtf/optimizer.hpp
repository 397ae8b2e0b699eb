#pragma once

// All-at-once training loop. Per step: evaluate the total loss and smooth
// gradients, Adam-update the decomposition blocks (w, A, B, C, D, biases),
// SGD-update the classifier head, apply the nonnegative soft-threshold to
// A, B, C, D with threshold lr * l1_weight, clamp w at 0, then advance the
// learning-rate schedule. The returned parameters are column-normalized.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "cmtf/errors.hpp"
#include "cmtf/model.hpp"

namespace cmtf {

// ---------------------------------------------------------------------------
// Optimizer states

struct AdamState {
    struct Moments {
        std::vector<double> m, v;
        explicit Moments(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
    };
    Moments w, A, B, C, D, b_feat, b_pat;
    std::size_t t = 0;  // completed steps
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

// One bias-corrected Adam update over a flat block. `t` is the 1-based step.
inline void adam_step(std::vector<double>& x, const std::vector<double>& g,
                      AdamState::Moments& mo, std::size_t t, double lr, double beta1,
                      double beta2, double eps) {
    if (x.size() != g.size() || mo.m.size() != x.size())
        throw DimensionError("adam_step: block/gradient/moment sizes differ");
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t n = 0; n < x.size(); ++n) {
        mo.m[n] = beta1 * mo.m[n] + (1.0 - beta1) * g[n];
        mo.v[n] = beta2 * mo.v[n] + (1.0 - beta2) * g[n] * g[n];
        const double mhat = mo.m[n] / c1;
        const double vhat = mo.v[n] / c2;
        x[n] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

struct SgdState {
    double lr = 0.0;
};

// ---------------------------------------------------------------------------
// Projection / proximal operator

// Entry-wise max(x - threshold, 0): the l1 soft-threshold fused with the
// nonnegativity projection. threshold 0 is the pure projection.
inline void prox_l1_nonneg_inplace(Dense2& x, double threshold) {
    if (threshold < 0.0) throw ParameterError("prox_l1_nonneg: threshold must be >= 0");
    for (auto& e : x.v) e = e > threshold ? e - threshold : 0.0;
}

inline Dense2 prox_l1_nonneg(const Dense2& x, double threshold) {
    Dense2 out = x;
    prox_l1_nonneg_inplace(out, threshold);
    return out;
}

// ---------------------------------------------------------------------------
// Schedule

inline double scheduled_lr(double base_lr, std::size_t global_step, double factor = 0.8,
                           std::size_t period = 1000) {
    if (period == 0) return base_lr;
    return base_lr * std::pow(factor, static_cast<double>(global_step / period));
}

// ---------------------------------------------------------------------------
// Configuration and history

struct TrainConfig {
    std::size_t rank = 28;
    double lambda = 0.7;
    double learning_rate = 0.01;
    double l1_weight = 0.001;
    std::size_t max_steps = 5000;
    std::uint64_t seed = 0;
    double lr_decay_factor = 0.8;
    std::size_t lr_decay_period = 1000;
    double tolerance = 1e-8;     // relative improvement over a 100-step window; 0 disables
    double sgd_lr_scale = 1.0;   // classifier step size relative to the shared lr

    // Test/diagnostic hook, called after every completed step.
    std::function<void(std::size_t, const ModelParams&)> step_observer;

    void validate() const {
        if (rank < 1) throw ParameterError("TrainConfig: rank must be >= 1");
        if (lambda < 0.0 || lambda > 1.0) throw ParameterError("TrainConfig: lambda not in [0,1]");
        if (learning_rate <= 0.0) throw ParameterError("TrainConfig: learning_rate must be > 0");
        if (l1_weight < 0.0) throw ParameterError("TrainConfig: l1_weight must be >= 0");
        if (max_steps < 1) throw ParameterError("TrainConfig: max_steps must be >= 1");
    }
};

struct StepRecord {
    LossBreakdown loss;
    double lr = 0.0;
    double wall_ms = 0.0;
};

struct TrainHistory {
    std::vector<StepRecord> steps;
    std::size_t final_step = 0;
    std::string termination;  // "max_steps", "converged", ...
    std::string method;
};

inline void write_history_csv(const TrainHistory& h, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw SchemaError("write_history_csv: cannot open " + path);
    f.precision(17);
    f << "step,tensor_fit,matrix_fit,sparsity,classifier,total,lr\n";
    for (std::size_t s = 0; s < h.steps.size(); ++s) {
        const auto& r = h.steps[s];
        f << s << ',' << r.loss.tensor_fit << ',' << r.loss.matrix_fit << ',' << r.loss.sparsity
          << ',' << r.loss.classifier << ',' << r.loss.total << ',' << r.lr << '\n';
    }
}

// ---------------------------------------------------------------------------
// Initialization: factors and biases uniform in [0,1], w all ones, classifier
// per its own policy. Deterministic given the seed.

inline ModelParams init_params(std::size_t patients, std::size_t features,
                               std::size_t timepoints, std::size_t statics, std::size_t rank,
                               std::uint64_t seed) {
    if (rank < 1) throw ParameterError("init_params: rank must be >= 1");
    Rng rng(seed);
    ModelParams p;
    p.factors = FactorSet(patients, features, timepoints, statics, rank);
    for (auto& x : p.factors.A.v) x = rng.uniform01();
    for (auto& x : p.factors.B.v) x = rng.uniform01();
    for (auto& x : p.factors.C.v) x = rng.uniform01();
    for (auto& x : p.factors.D.v) x = rng.uniform01();
    p.biases = BiasTerms(patients, features);
    for (auto& x : p.biases.feature) x = rng.uniform01();
    for (auto& x : p.biases.patient) x = rng.uniform01();
    // w stays at the all-ones FactorSet default
    p.head = init_classifier(rank, rng);
    return p;
}

namespace detail {
inline void sgd_head_update(ClassifierParams& head, const ClassifierGradients& g, double lr) {
    for (std::size_t n = 0; n < head.W1.v.size(); ++n) head.W1.v[n] -= lr * g.dW1.v[n];
    for (std::size_t n = 0; n < head.b1.size(); ++n) head.b1[n] -= lr * g.db1[n];
    for (std::size_t n = 0; n < head.bn_gamma.size(); ++n) head.bn_gamma[n] -= lr * g.dgamma[n];
    for (std::size_t n = 0; n < head.bn_beta.size(); ++n) head.bn_beta[n] -= lr * g.dbeta[n];
    for (std::size_t n = 0; n < head.W2.v.size(); ++n) head.W2.v[n] -= lr * g.dW2.v[n];
    for (std::size_t n = 0; n < head.b2.size(); ++n) head.b2[n] -= lr * g.db2[n];
}

inline void apply_running_stats(ClassifierParams& head, const std::vector<double>& mean,
                                const std::vector<double>& var, std::size_t batch) {
    const double unbias = static_cast<double>(batch) / static_cast<double>(batch - 1);
    for (std::size_t u = 0; u < head.bn_running_mean.size(); ++u) {
        head.bn_running_mean[u] =
            (1.0 - head.bn_momentum) * head.bn_running_mean[u] + head.bn_momentum * mean[u];
        head.bn_running_var[u] =
            (1.0 - head.bn_momentum) * head.bn_running_var[u] + head.bn_momentum * var[u] * unbias;
    }
}

// Column-normalizes the factors and folds the removed membership-column norms
// into the first classifier layer, so head logits are unchanged.
inline void finalize_params(ModelParams& p) {
    const auto norms_a = column_norms(p.factors.A);
    p.factors = normalize_columns(p.factors);
    for (std::size_t s = 0; s < p.factors.rank; ++s)
        for (std::size_t u = 0; u < ClassifierParams::kHidden; ++u)
            p.head.W1.at(s, u) *= norms_a[s];
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Training loop

inline std::pair<ModelParams, TrainHistory> train(const CohortDataset& data,
                                                  const TrainConfig& cfg) {
    cfg.validate();
    data.check_consistent();

    ModelParams params = init_params(data.patients(), data.features(), data.timepoints(),
                                     data.statics_count(), cfg.rank, cfg.seed);
    AdamState adam;
    adam.w = AdamState::Moments(cfg.rank);
    adam.A = AdamState::Moments(params.factors.A.v.size());
    adam.B = AdamState::Moments(params.factors.B.v.size());
    adam.C = AdamState::Moments(params.factors.C.v.size());
    adam.D = AdamState::Moments(params.factors.D.v.size());
    adam.b_feat = AdamState::Moments(params.biases.feature.size());
    adam.b_pat = AdamState::Moments(params.biases.patient.size());

    TrainHistory history;
    history.method = "all_at_once";
    history.termination = "max_steps";

    constexpr std::size_t kWindow = 100;
    for (std::size_t step = 0; step < cfg.max_steps; ++step) {
        const double lr = scheduled_lr(cfg.learning_rate, step, cfg.lr_decay_factor,
                                       cfg.lr_decay_period);
        const auto t0 = std::chrono::steady_clock::now();

        auto [loss, grads] = evaluate_with_gradients(params, data, cfg.lambda, cfg.l1_weight);
        if (!std::isfinite(loss.total)) {
            const double last = history.steps.empty() ? std::nan("")
                                                      : history.steps.back().loss.total;
            throw NumericError("train: diverged at step " + std::to_string(step) +
                               " (last finite total " + std::to_string(last) + ")");
        }

        adam.t += 1;
        adam_step(params.factors.w, grads.w, adam.w, adam.t, lr, adam.beta1, adam.beta2, adam.eps);
        adam_step(params.factors.A.v, grads.A.v, adam.A, adam.t, lr, adam.beta1, adam.beta2,
                  adam.eps);
        adam_step(params.factors.B.v, grads.B.v, adam.B, adam.t, lr, adam.beta1, adam.beta2,
                  adam.eps);
        adam_step(params.factors.C.v, grads.C.v, adam.C, adam.t, lr, adam.beta1, adam.beta2,
                  adam.eps);
        adam_step(params.factors.D.v, grads.D.v, adam.D, adam.t, lr, adam.beta1, adam.beta2,
                  adam.eps);
        adam_step(params.biases.feature, grads.b_feat, adam.b_feat, adam.t, lr, adam.beta1,
                  adam.beta2, adam.eps);
        adam_step(params.biases.patient, grads.b_pat, adam.b_pat, adam.t, lr, adam.beta1,
                  adam.beta2, adam.eps);

        if (grads.head_valid) {
            detail::sgd_head_update(params.head, grads.head, lr * cfg.sgd_lr_scale);
            detail::apply_running_stats(params.head, grads.bn_batch_mean, grads.bn_batch_var,
                                        grads.head.dinput.rows);
        }

        const double threshold = lr * cfg.l1_weight;
        prox_l1_nonneg_inplace(params.factors.A, threshold);
        prox_l1_nonneg_inplace(params.factors.B, threshold);
        prox_l1_nonneg_inplace(params.factors.C, threshold);
        prox_l1_nonneg_inplace(params.factors.D, threshold);
        for (auto& ws : params.factors.w) ws = ws > 0.0 ? ws : 0.0;

        const auto t1 = std::chrono::steady_clock::now();
        history.steps.push_back(
            {loss, lr, std::chrono::duration<double, std::milli>(t1 - t0).count()});
        if (cfg.step_observer) cfg.step_observer(step, params);

        if (cfg.tolerance > 0.0 && step >= kWindow) {
            const double prev = history.steps[step - kWindow].loss.total;
            const double cur = loss.total;
            const double improvement = (prev - cur) / std::max(std::abs(prev), 1e-30);
            if (improvement >= 0.0 && improvement < cfg.tolerance) {
                history.termination = "converged";
                history.final_step = step;
                break;
            }
        }
        history.final_step = step;
    }

    detail::finalize_params(params);
    return {std::move(params), std::move(history)};
}

}  // namespace cmtf
