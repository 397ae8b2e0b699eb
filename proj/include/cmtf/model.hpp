#pragma once

// Parameter bundle and composite loss for the supervised coupled
// factorization:
//
//   total = (1 - lambda) * [ ||O * (T - [w;A,B,C] - Bf - Bp)||^2
//                            + ||M - [w;A,D]||^2
//                            + l1_weight * L1(A,B,C,D) ]
//         + lambda * mean-BCE of the classifier head on training rows of A.
//
// Only observed tensor cells (mask 1) contribute. Gradients returned here are
// of the smooth part only; the l1 term is applied through the proximal
// operator during optimization, not through a subgradient.

#include <cmath>
#include <utility>
#include <vector>

#include "cmtf/bias.hpp"
#include "cmtf/classifier.hpp"
#include "cmtf/data.hpp"
#include "cmtf/errors.hpp"
#include "cmtf/factor_set.hpp"
#include "cmtf/tensor.hpp"

namespace cmtf {

struct ModelParams {
    FactorSet factors;
    BiasTerms biases;
    ClassifierParams head;

    void check_against(const CohortDataset& d) const {
        factors.check_shapes();
        if (factors.A.rows != d.patients() || factors.B.rows != d.features() ||
            factors.C.rows != d.timepoints() || factors.D.rows != d.statics_count())
            throw DimensionError("ModelParams: factor dims do not match dataset");
        if (biases.feature.size() != d.features() || biases.patient.size() != d.patients())
            throw DimensionError("ModelParams: bias lengths do not match dataset");
        if (head.in_dim != factors.rank)
            throw DimensionError("ModelParams: classifier in_dim does not match rank");
    }
};

struct LossBreakdown {
    double tensor_fit = 0.0;   // masked squared tensor residual
    double matrix_fit = 0.0;   // squared static-matrix residual
    double sparsity = 0.0;     // l1_weight * sum |A,B,C,D|
    double classifier = 0.0;   // mean BCE on training rows (0 when unavailable)
    double total = 0.0;        // (1-lambda)*(tensor+matrix+sparsity) + lambda*classifier
    double lambda = 0.0;
};

struct ModelGradients {
    std::vector<double> w;
    Dense2 A, B, C, D;
    std::vector<double> b_feat, b_pat;
    ClassifierGradients head;
    bool head_valid = false;
    std::vector<double> bn_batch_mean, bn_batch_var;  // for the running-stat update
};

inline double sparsity_loss(const FactorSet& f) {
    f.check_shapes();
    double acc = 0.0;
    for (double x : f.A.v) acc += std::abs(x);
    for (double x : f.B.v) acc += std::abs(x);
    for (double x : f.C.v) acc += std::abs(x);
    for (double x : f.D.v) acc += std::abs(x);
    return acc;
}

namespace detail {

// Rows the classifier trains on: the train split, or every patient when no
// split has been assigned.
inline std::vector<std::size_t> classifier_rows(const CohortDataset& d) {
    if (d.split.empty()) {
        std::vector<std::size_t> all(d.patients());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        return all;
    }
    return d.split_indices(Split::Train);
}

// Single fused pass over the tensor and static matrix. Accumulates the fit
// terms, and when `grads` is non-null the gradients of the smooth
// reconstruction part (unscaled by 1-lambda; the caller applies weights).
inline void reconstruction_pass(const ModelParams& p, const CohortDataset& d, double& tensor_fit,
                                double& matrix_fit, ModelGradients* grads) {
    const FactorSet& f = p.factors;
    const std::size_t I = d.patients(), J = d.features(), K = d.timepoints(),
                      S = d.statics_count(), r = f.rank;
    tensor_fit = 0.0;
    matrix_fit = 0.0;

    std::vector<double> ab(r), wa(r), wb(r), wab(r);
    for (std::size_t i = 0; i < I; ++i) {
        for (std::size_t s = 0; s < r; ++s) wa[s] = f.w[s] * f.A.at(i, s);
        for (std::size_t j = 0; j < J; ++j) {
            const double base = p.biases.feature[j] + p.biases.patient[i];
            for (std::size_t s = 0; s < r; ++s) {
                ab[s] = f.A.at(i, s) * f.B.at(j, s);
                wb[s] = f.w[s] * f.B.at(j, s);
                wab[s] = f.w[s] * ab[s];
            }
            const std::size_t cell0 = d.tensor.idx(i, j, 0);
            for (std::size_t k = 0; k < K; ++k) {
                if (!d.mask.v[cell0 + k]) continue;
                double x = base;
                for (std::size_t s = 0; s < r; ++s) x += wab[s] * f.C.at(k, s);
                const double res = x - d.tensor.v[cell0 + k];
                tensor_fit += res * res;
                if (grads) {
                    const double rr = 2.0 * res;
                    for (std::size_t s = 0; s < r; ++s) {
                        const double ck = f.C.at(k, s);
                        grads->w[s] += rr * ab[s] * ck;
                        grads->A.at(i, s) += rr * wb[s] * ck;
                        grads->B.at(j, s) += rr * wa[s] * ck;
                        grads->C.at(k, s) += rr * wab[s];
                    }
                    grads->b_feat[j] += rr;
                    grads->b_pat[i] += rr;
                }
            }
        }
        for (std::size_t j = 0; j < S; ++j) {
            double x = 0.0;
            for (std::size_t s = 0; s < r; ++s) x += wa[s] * f.D.at(j, s);
            const double res = x - d.statics.at(i, j);
            matrix_fit += res * res;
            if (grads) {
                const double rr = 2.0 * res;
                for (std::size_t s = 0; s < r; ++s) {
                    grads->w[s] += rr * f.A.at(i, s) * f.D.at(j, s);
                    grads->A.at(i, s) += rr * f.w[s] * f.D.at(j, s);
                    grads->D.at(j, s) += rr * wa[s];
                }
            }
        }
    }
}

}  // namespace detail

inline double reconstruction_loss(const ModelParams& p, const CohortDataset& d, double l1_weight) {
    p.check_against(d);
    double tensor_fit = 0.0, matrix_fit = 0.0;
    detail::reconstruction_pass(p, d, tensor_fit, matrix_fit, nullptr);
    return tensor_fit + matrix_fit + l1_weight * sparsity_loss(p.factors);
}

inline LossBreakdown total_loss(const ModelParams& p, const CohortDataset& d, double lambda,
                                double l1_weight) {
    if (lambda < 0.0 || lambda > 1.0) throw ParameterError("total_loss: lambda must be in [0,1]");
    p.check_against(d);

    LossBreakdown out;
    out.lambda = lambda;
    detail::reconstruction_pass(p, d, out.tensor_fit, out.matrix_fit, nullptr);
    out.sparsity = l1_weight * sparsity_loss(p.factors);

    const auto rows = detail::classifier_rows(d);
    if (rows.size() >= 2) {
        const ClassifierCache cache = classifier_forward_batch(p.head, take_rows(p.factors.A, rows));
        out.classifier = bce_with_logits(cache.logits, take_rows(d.labels, rows));
    } else if (lambda > 0.0) {
        throw NumericError("total_loss: classifier needs >= 2 training rows");
    }
    out.total = (1.0 - lambda) * (out.tensor_fit + out.matrix_fit + out.sparsity) +
                lambda * out.classifier;
    return out;
}

// Loss plus gradients of the smooth objective for every parameter block.
inline std::pair<LossBreakdown, ModelGradients> evaluate_with_gradients(const ModelParams& p,
                                                                        const CohortDataset& d,
                                                                        double lambda,
                                                                        double l1_weight) {
    if (lambda < 0.0 || lambda > 1.0)
        throw ParameterError("evaluate_with_gradients: lambda must be in [0,1]");
    p.check_against(d);
    const FactorSet& f = p.factors;

    ModelGradients g;
    g.w.assign(f.rank, 0.0);
    g.A = Dense2(f.A.rows, f.rank);
    g.B = Dense2(f.B.rows, f.rank);
    g.C = Dense2(f.C.rows, f.rank);
    g.D = Dense2(f.D.rows, f.rank);
    g.b_feat.assign(f.B.rows, 0.0);
    g.b_pat.assign(f.A.rows, 0.0);

    LossBreakdown loss;
    loss.lambda = lambda;
    detail::reconstruction_pass(p, d, loss.tensor_fit, loss.matrix_fit, &g);
    loss.sparsity = l1_weight * sparsity_loss(f);

    const double wrec = 1.0 - lambda;
    for (auto& x : g.w) x *= wrec;
    for (auto& x : g.A.v) x *= wrec;
    for (auto& x : g.B.v) x *= wrec;
    for (auto& x : g.C.v) x *= wrec;
    for (auto& x : g.D.v) x *= wrec;
    for (auto& x : g.b_feat) x *= wrec;
    for (auto& x : g.b_pat) x *= wrec;

    const auto rows = detail::classifier_rows(d);
    if (rows.size() >= 2) {
        const ClassifierCache cache = classifier_forward_batch(p.head, take_rows(f.A, rows));
        const LabelMatrix ytrain = take_rows(d.labels, rows);
        loss.classifier = bce_with_logits(cache.logits, ytrain);
        if (lambda > 0.0) {
            g.head = classifier_backward(p.head, cache, ytrain);
            g.head_valid = true;
            g.bn_batch_mean = cache.mean;
            g.bn_batch_var = cache.var;
            for (auto& x : g.head.dW1.v) x *= lambda;
            for (auto& x : g.head.db1) x *= lambda;
            for (auto& x : g.head.dgamma) x *= lambda;
            for (auto& x : g.head.dbeta) x *= lambda;
            for (auto& x : g.head.dW2.v) x *= lambda;
            for (auto& x : g.head.db2) x *= lambda;
            for (std::size_t n = 0; n < rows.size(); ++n)
                for (std::size_t s = 0; s < f.rank; ++s)
                    g.A.at(rows[n], s) += lambda * g.head.dinput.at(n, s);
        }
    } else if (lambda > 0.0) {
        throw NumericError("evaluate_with_gradients: classifier needs >= 2 training rows");
    }
    loss.total = (1.0 - lambda) * (loss.tensor_fit + loss.matrix_fit + loss.sparsity) +
                 lambda * loss.classifier;
    return {loss, std::move(g)};
}

// Full reconstruction including bias terms; callers read mask-0 positions as
// the imputed values.
inline Dense3 impute(const ModelParams& p, const Mask3& m) {
    p.factors.check_shapes();
    if (p.factors.A.rows != m.d0 || p.factors.B.rows != m.d1 || p.factors.C.rows != m.d2)
        throw DimensionError("impute: factor dims do not match mask");
    if (p.biases.feature.size() != m.d1 || p.biases.patient.size() != m.d0)
        throw DimensionError("impute: bias lengths do not match mask");
    Dense3 out = cp_reconstruct(p.factors);
    for (std::size_t i = 0; i < out.d0; ++i)
        for (std::size_t j = 0; j < out.d1; ++j) {
            const double base = p.biases.feature[j] + p.biases.patient[i];
            for (std::size_t k = 0; k < out.d2; ++k) out.at(i, j, k) += base;
        }
    return out;
}

}  // namespace cmtf
