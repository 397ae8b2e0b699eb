#pragma once

// Two-layer classifier head applied to patient rows of the membership matrix:
// linear (r -> 10), batch norm, ReLU, linear (10 -> 2), one output logit per
// outcome. Trained full-batch; losses are per-outcome sigmoid cross-entropy
// averaged over every label cell.

#include <cmath>
#include <cstdint>
#include <vector>

#include "cmtf/errors.hpp"
#include "cmtf/rng.hpp"
#include "cmtf/tensor.hpp"

namespace cmtf {

struct ClassifierParams {
    static constexpr std::size_t kHidden = 10;
    static constexpr std::size_t kOutputs = 2;

    std::size_t in_dim = 0;
    Dense2 W1;                            // in_dim x kHidden
    std::vector<double> b1;               // kHidden
    std::vector<double> bn_gamma, bn_beta;
    std::vector<double> bn_running_mean, bn_running_var;
    Dense2 W2;                            // kHidden x kOutputs
    std::vector<double> b2;               // kOutputs
    double bn_eps = 1e-5;
    double bn_momentum = 0.1;
};

// Weights and biases uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)], batch
// norm at identity, running statistics at (0, 1).
inline ClassifierParams init_classifier(std::size_t in_dim, Rng& rng) {
    if (in_dim == 0) throw ParameterError("init_classifier: in_dim must be >= 1");
    ClassifierParams p;
    p.in_dim = in_dim;
    const std::size_t H = ClassifierParams::kHidden, O = ClassifierParams::kOutputs;
    p.W1 = Dense2(in_dim, H);
    p.b1.assign(H, 0.0);
    const double s1 = 1.0 / std::sqrt(static_cast<double>(in_dim));
    for (auto& x : p.W1.v) x = rng.uniform(-s1, s1);
    for (auto& x : p.b1) x = rng.uniform(-s1, s1);
    p.bn_gamma.assign(H, 1.0);
    p.bn_beta.assign(H, 0.0);
    p.bn_running_mean.assign(H, 0.0);
    p.bn_running_var.assign(H, 1.0);
    p.W2 = Dense2(H, O);
    p.b2.assign(O, 0.0);
    const double s2 = 1.0 / std::sqrt(static_cast<double>(H));
    for (auto& x : p.W2.v) x = rng.uniform(-s2, s2);
    for (auto& x : p.b2) x = rng.uniform(-s2, s2);
    return p;
}

enum class Mode { Train, Eval };

struct ClassifierCache {
    Dense2 input;                   // n x in_dim
    Dense2 pre_bn;                  // n x H, before normalization
    std::vector<double> mean, var;  // batch statistics (variance divided by n)
    Dense2 normed;                  // x_hat
    Dense2 hidden;                  // relu(gamma * x_hat + beta)
    Dense2 logits;                  // n x 2
};

inline double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

// Forward pass with batch statistics. Pure: running statistics are read from
// nowhere and written nowhere; the caller decides whether to fold the batch
// statistics into the running ones.
inline ClassifierCache classifier_forward_batch(const ClassifierParams& p, const Dense2& rows) {
    if (rows.cols != p.in_dim)
        throw DimensionError("classifier forward: row width does not match in_dim");
    const std::size_t n = rows.rows, H = ClassifierParams::kHidden, O = ClassifierParams::kOutputs;
    if (n < 2) throw NumericError("classifier forward: batch statistics need >= 2 rows");

    ClassifierCache c;
    c.input = rows;
    c.pre_bn = Dense2(n, H);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t u = 0; u < H; ++u) {
            double acc = p.b1[u];
            for (std::size_t s = 0; s < p.in_dim; ++s) acc += rows.at(i, s) * p.W1.at(s, u);
            c.pre_bn.at(i, u) = acc;
        }

    c.mean.assign(H, 0.0);
    c.var.assign(H, 0.0);
    for (std::size_t u = 0; u < H; ++u) {
        double m = 0.0;
        for (std::size_t i = 0; i < n; ++i) m += c.pre_bn.at(i, u);
        m /= static_cast<double>(n);
        double v = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = c.pre_bn.at(i, u) - m;
            v += d * d;
        }
        c.mean[u] = m;
        c.var[u] = v / static_cast<double>(n);
    }

    c.normed = Dense2(n, H);
    c.hidden = Dense2(n, H);
    for (std::size_t u = 0; u < H; ++u) {
        const double iv = 1.0 / std::sqrt(c.var[u] + p.bn_eps);
        for (std::size_t i = 0; i < n; ++i) {
            const double xh = (c.pre_bn.at(i, u) - c.mean[u]) * iv;
            c.normed.at(i, u) = xh;
            const double a = p.bn_gamma[u] * xh + p.bn_beta[u];
            c.hidden.at(i, u) = a > 0.0 ? a : 0.0;
        }
    }

    c.logits = Dense2(n, O);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t o = 0; o < O; ++o) {
            double acc = p.b2[o];
            for (std::size_t u = 0; u < H; ++u) acc += c.hidden.at(i, u) * p.W2.at(u, o);
            c.logits.at(i, o) = acc;
        }
    return c;
}

inline Dense2 classifier_forward_eval(const ClassifierParams& p, const Dense2& rows) {
    if (rows.cols != p.in_dim)
        throw DimensionError("classifier forward: row width does not match in_dim");
    const std::size_t n = rows.rows, H = ClassifierParams::kHidden, O = ClassifierParams::kOutputs;
    Dense2 logits(n, O);
    std::vector<double> hidden(H);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t u = 0; u < H; ++u) {
            double acc = p.b1[u];
            for (std::size_t s = 0; s < p.in_dim; ++s) acc += rows.at(i, s) * p.W1.at(s, u);
            const double xh = (acc - p.bn_running_mean[u]) / std::sqrt(p.bn_running_var[u] + p.bn_eps);
            const double a = p.bn_gamma[u] * xh + p.bn_beta[u];
            hidden[u] = a > 0.0 ? a : 0.0;
        }
        for (std::size_t o = 0; o < O; ++o) {
            double acc = p.b2[o];
            for (std::size_t u = 0; u < H; ++u) acc += hidden[u] * p.W2.at(u, o);
            logits.at(i, o) = acc;
        }
    }
    return logits;
}

// Running statistics take the unbiased batch variance, momentum-weighted.
inline void update_running_stats(ClassifierParams& p, const ClassifierCache& c) {
    const std::size_t n = c.input.rows, H = ClassifierParams::kHidden;
    const double unbias = static_cast<double>(n) / static_cast<double>(n - 1);
    for (std::size_t u = 0; u < H; ++u) {
        p.bn_running_mean[u] =
            (1.0 - p.bn_momentum) * p.bn_running_mean[u] + p.bn_momentum * c.mean[u];
        p.bn_running_var[u] =
            (1.0 - p.bn_momentum) * p.bn_running_var[u] + p.bn_momentum * c.var[u] * unbias;
    }
}

inline Dense2 classifier_forward(ClassifierParams& p, const Dense2& rows, Mode mode) {
    if (mode == Mode::Eval) return classifier_forward_eval(p, rows);
    ClassifierCache c = classifier_forward_batch(p, rows);
    update_running_stats(p, c);
    return c.logits;
}

// Mean binary cross-entropy with logits over all n x 2 cells, computed in the
// overflow-safe form max(z,0) - z*y + log(1 + exp(-|z|)).
inline double bce_with_logits(const Dense2& logits, const LabelMatrix& labels) {
    if (logits.rows != labels.rows || logits.cols != labels.cols)
        throw DimensionError("bce_with_logits: logits/labels dims differ");
    labels.validate();
    double acc = 0.0;
    for (std::size_t n = 0; n < logits.v.size(); ++n) {
        const double z = logits.v[n];
        const double y = static_cast<double>(labels.v[n]);
        acc += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
    }
    return acc / static_cast<double>(logits.v.size());
}

struct ClassifierGradients {
    Dense2 dW1;
    std::vector<double> db1, dgamma, dbeta;
    Dense2 dW2;
    std::vector<double> db2;
    Dense2 dinput;  // gradient w.r.t. the input rows; couples the head to A
};

// Exact gradients of bce_with_logits(forward_batch(rows)) for every trainable
// field and for the input rows. Batch statistics are differentiated through.
inline ClassifierGradients classifier_backward(const ClassifierParams& p,
                                               const ClassifierCache& c,
                                               const LabelMatrix& labels) {
    const std::size_t n = c.input.rows, H = ClassifierParams::kHidden,
                      O = ClassifierParams::kOutputs;
    if (labels.rows != n || labels.cols != O)
        throw DimensionError("classifier_backward: labels dims differ from batch");

    ClassifierGradients g;
    g.dW1 = Dense2(p.in_dim, H);
    g.db1.assign(H, 0.0);
    g.dgamma.assign(H, 0.0);
    g.dbeta.assign(H, 0.0);
    g.dW2 = Dense2(H, O);
    g.db2.assign(O, 0.0);
    g.dinput = Dense2(n, p.in_dim);

    // d loss / d logits, mean reduction over n*O cells
    Dense2 dlogits(n, O);
    const double inv_cells = 1.0 / static_cast<double>(n * O);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t o = 0; o < O; ++o)
            dlogits.at(i, o) =
                (sigmoid(c.logits.at(i, o)) - static_cast<double>(labels.at(i, o))) * inv_cells;

    // second linear layer
    Dense2 dhidden(n, H);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t u = 0; u < H; ++u) {
            double acc = 0.0;
            for (std::size_t o = 0; o < O; ++o) {
                acc += dlogits.at(i, o) * p.W2.at(u, o);
                g.dW2.at(u, o) += c.hidden.at(i, u) * dlogits.at(i, o);
            }
            dhidden.at(i, u) = acc;
        }
    for (std::size_t o = 0; o < O; ++o)
        for (std::size_t i = 0; i < n; ++i) g.db2[o] += dlogits.at(i, o);

    // ReLU and batch-norm affine
    Dense2 dxhat(n, H);
    for (std::size_t u = 0; u < H; ++u)
        for (std::size_t i = 0; i < n; ++i) {
            const double d = c.hidden.at(i, u) > 0.0 ? dhidden.at(i, u) : 0.0;
            g.dgamma[u] += d * c.normed.at(i, u);
            g.dbeta[u] += d;
            dxhat.at(i, u) = d * p.bn_gamma[u];
        }

    // normalization backward (batch statistics are functions of pre_bn)
    Dense2 dpre(n, H);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t u = 0; u < H; ++u) {
        const double iv = 1.0 / std::sqrt(c.var[u] + p.bn_eps);
        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            sum_dxhat += dxhat.at(i, u);
            sum_dxhat_xhat += dxhat.at(i, u) * c.normed.at(i, u);
        }
        for (std::size_t i = 0; i < n; ++i)
            dpre.at(i, u) = iv * (dxhat.at(i, u) - inv_n * sum_dxhat -
                                  c.normed.at(i, u) * inv_n * sum_dxhat_xhat);
    }

    // first linear layer
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t u = 0; u < H; ++u) {
            const double d = dpre.at(i, u);
            g.db1[u] += d;
            for (std::size_t s = 0; s < p.in_dim; ++s) {
                g.dW1.at(s, u) += c.input.at(i, s) * d;
                g.dinput.at(i, s) += d * p.W1.at(s, u);
            }
        }
    return g;
}

}  // namespace cmtf
