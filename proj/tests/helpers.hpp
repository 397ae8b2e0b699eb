#pragma once

// Shared fixtures and independent oracles for the test suites. Everything in
// here recomputes expectations from first principles (brute-force loops,
// central finite differences) so it stays independent of the library's own
// evaluation paths.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "cmtf/data.hpp"
#include "cmtf/model.hpp"
#include "cmtf/optimizer.hpp"

namespace helpers {

// Brute-force CP entry: the quadruple loop the fast kernel must agree with.
inline double cp_entry_bruteforce(const cmtf::FactorSet& f, std::size_t i, std::size_t j,
                                  std::size_t k) {
    double acc = 0.0;
    for (std::size_t s = 0; s < f.rank; ++s)
        acc += f.w[s] * f.A.at(i, s) * f.B.at(j, s) * f.C.at(k, s);
    return acc;
}

inline double coupled_entry_bruteforce(const cmtf::FactorSet& f, std::size_t i, std::size_t j) {
    double acc = 0.0;
    for (std::size_t s = 0; s < f.rank; ++s) acc += f.w[s] * f.A.at(i, s) * f.D.at(j, s);
    return acc;
}

inline cmtf::FactorSet random_factor_set(std::size_t I, std::size_t J, std::size_t K,
                                         std::size_t S, std::size_t r, cmtf::Rng& rng) {
    cmtf::FactorSet f(I, J, K, S, r);
    for (auto& x : f.w) x = rng.uniform(0.1, 2.0);
    for (auto& x : f.A.v) x = rng.uniform01();
    for (auto& x : f.B.v) x = rng.uniform01();
    for (auto& x : f.C.v) x = rng.uniform01();
    for (auto& x : f.D.v) x = rng.uniform01();
    return f;
}

// Small labeled dataset with every patient in the training split.
inline cmtf::CohortDataset random_dataset(std::size_t I, std::size_t J, std::size_t K,
                                          std::size_t S, double missing, cmtf::Rng& rng) {
    cmtf::CohortDataset d;
    d.tensor = cmtf::Dense3(I, J, K);
    d.mask = cmtf::Mask3(I, J, K);
    d.statics = cmtf::Dense2(I, S);
    d.labels = cmtf::LabelMatrix(I, 2);
    d.label_missing = cmtf::LabelMatrix(I, 2);
    for (auto& x : d.tensor.v) x = rng.uniform01();
    for (auto& m : d.mask.v) m = rng.uniform01() < missing ? 0 : 1;
    for (auto& x : d.statics.v) x = rng.uniform01();
    for (auto& y : d.labels.v) y = rng.uniform01() < 0.5 ? 0 : 1;
    for (std::size_t i = 0; i < I; ++i) d.patient_ids.push_back("p" + std::to_string(i));
    for (std::size_t j = 0; j < J; ++j) d.temporal_features.push_back("tf" + std::to_string(j));
    for (std::size_t k = 0; k < K; ++k) d.timepoint_names.push_back("t" + std::to_string(k));
    for (std::size_t s = 0; s < S; ++s) d.static_features.push_back("sf" + std::to_string(s));
    d.outcome_names = {"year2", "year3"};
    d.split.assign(I, cmtf::Split::Train);
    d.normalized = true;
    return d;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check of the total loss against the analytic
// gradients, block by block. Returns the worst relative error seen.

struct GradCheckReport {
    double worst_rel_error = 0.0;
    std::string worst_block;
};

inline GradCheckReport gradcheck_instance(cmtf::ModelParams params, const cmtf::CohortDataset& d,
                                          double lambda, double step = 1e-5) {
    auto [loss, grads] = cmtf::evaluate_with_gradients(params, d, lambda, 0.0);
    (void)loss;

    struct Block {
        std::string name;
        std::vector<double>* x;
        const std::vector<double>* g;  // nullptr means expect zero gradient
    };
    std::vector<Block> blocks = {
        {"w", &params.factors.w, &grads.w},
        {"A", &params.factors.A.v, &grads.A.v},
        {"B", &params.factors.B.v, &grads.B.v},
        {"C", &params.factors.C.v, &grads.C.v},
        {"D", &params.factors.D.v, &grads.D.v},
        {"b_feat", &params.biases.feature, &grads.b_feat},
        {"b_pat", &params.biases.patient, &grads.b_pat},
        {"head.W1", &params.head.W1.v, grads.head_valid ? &grads.head.dW1.v : nullptr},
        {"head.b1", &params.head.b1, grads.head_valid ? &grads.head.db1 : nullptr},
        {"head.gamma", &params.head.bn_gamma, grads.head_valid ? &grads.head.dgamma : nullptr},
        {"head.beta", &params.head.bn_beta, grads.head_valid ? &grads.head.dbeta : nullptr},
        {"head.W2", &params.head.W2.v, grads.head_valid ? &grads.head.dW2.v : nullptr},
        {"head.b2", &params.head.b2, grads.head_valid ? &grads.head.db2 : nullptr},
    };

    GradCheckReport report;
    for (auto& blk : blocks) {
        for (std::size_t n = 0; n < blk.x->size(); ++n) {
            const double x0 = (*blk.x)[n];
            (*blk.x)[n] = x0 + step;
            const double lp = cmtf::total_loss(params, d, lambda, 0.0).total;
            (*blk.x)[n] = x0 - step;
            const double lm = cmtf::total_loss(params, d, lambda, 0.0).total;
            (*blk.x)[n] = x0;
            const double fd = (lp - lm) / (2.0 * step);
            const double an = blk.g ? (*blk.g)[n] : 0.0;
            const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
            if (rel > report.worst_rel_error) {
                report.worst_rel_error = rel;
                report.worst_block = blk.name + "[" + std::to_string(n) + "]";
            }
        }
    }
    return report;
}

// One randomized gradcheck cohort + parameter bundle with dims <= 6.
inline std::pair<cmtf::ModelParams, cmtf::CohortDataset> gradcheck_setup(std::uint64_t seed) {
    cmtf::Rng rng(seed);
    const std::size_t I = 2 + rng.index(5), J = 2 + rng.index(4), K = 2 + rng.index(4),
                      S = 1 + rng.index(3), r = 1 + rng.index(3);
    cmtf::CohortDataset d = random_dataset(I, J, K, S, 0.3, rng);
    cmtf::ModelParams p = cmtf::init_params(I, J, K, S, r, seed ^ 0xABCDEF);
    // move biases off their nonnegative init so both signs are exercised
    for (auto& b : p.biases.feature) b -= 0.5;
    for (auto& b : p.biases.patient) b -= 0.5;
    return {std::move(p), std::move(d)};
}

}  // namespace helpers
