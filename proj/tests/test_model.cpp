#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "cmtf/model.hpp"
#include "helpers.hpp"

using namespace cmtf;

TEST_CASE("bias tensors have constant slices", "[model]") {
    const Dense3 zf = bias_tensor_features(std::vector<double>(4, 0.0), 2, 4, 3);
    for (double x : zf.v) REQUIRE(x == 0.0);

    const Dense3 bf = bias_tensor_features({1.0, 2.0}, 3, 2, 4);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t k = 0; k < 4; ++k) {
            REQUIRE(bf.at(i, 0, k) == 1.0);
            REQUIRE(bf.at(i, 1, k) == 2.0);
        }

    const Dense3 bp = bias_tensor_patients({5.0}, 1, 2, 2);
    for (double x : bp.v) REQUIRE(x == 5.0);

    REQUIRE_THROWS_AS(bias_tensor_features({1.0}, 2, 3, 2), DimensionError);
    REQUIRE_THROWS_AS(bias_tensor_patients({1.0, 2.0}, 3, 2, 2), DimensionError);
}

TEST_CASE("sparsity_loss sums absolute factor entries", "[model]") {
    FactorSet zero(2, 2, 2, 1, 2);
    REQUIRE(sparsity_loss(zero) == 0.0);

    FactorSet f(1, 1, 1, 1, 2);
    f.A.at(0, 0) = 1.0;
    f.A.at(0, 1) = 2.0;
    f.B.at(0, 0) = 3.0;
    f.C.at(0, 0) = 4.0;
    f.D.at(0, 0) = 0.5;
    REQUIRE(sparsity_loss(f) == Catch::Approx(10.5).epsilon(1e-14));

    Rng rng(3);
    const FactorSet g = helpers::random_factor_set(3, 4, 2, 3, 2, rng);
    double oracle = 0.0;
    for (double x : g.A.v) oracle += std::abs(x);
    for (double x : g.B.v) oracle += std::abs(x);
    for (double x : g.C.v) oracle += std::abs(x);
    for (double x : g.D.v) oracle += std::abs(x);
    REQUIRE(sparsity_loss(g) == Catch::Approx(oracle).epsilon(1e-14));
}

namespace {
// straight-line recomputation of the reconstruction loss from its definition
double reconstruction_oracle(const ModelParams& p, const CohortDataset& d, double l1) {
    const Dense3 recon = cp_reconstruct(p.factors);
    const Dense3 bf = bias_tensor_features(p.biases.feature, d.patients(), d.features(),
                                           d.timepoints());
    const Dense3 bp = bias_tensor_patients(p.biases.patient, d.patients(), d.features(),
                                           d.timepoints());
    double tensor_term = 0.0;
    for (std::size_t n = 0; n < d.tensor.v.size(); ++n) {
        if (!d.mask.v[n]) continue;
        const double res = d.tensor.v[n] - recon.v[n] - bf.v[n] - bp.v[n];
        tensor_term += res * res;
    }
    const Dense2 m = coupled_reconstruct(p.factors);
    double matrix_term = 0.0;
    for (std::size_t n = 0; n < m.v.size(); ++n) {
        const double res = d.statics.v[n] - m.v[n];
        matrix_term += res * res;
    }
    return tensor_term + matrix_term + l1 * sparsity_loss(p.factors);
}
}  // namespace

TEST_CASE("reconstruction_loss of an exact model is zero", "[model]") {
    Rng rng(5);
    const std::size_t I = 4, J = 3, K = 3, S = 2, r = 2;
    ModelParams p = init_params(I, J, K, S, r, 7);
    CohortDataset d = helpers::random_dataset(I, J, K, S, 0.2, rng);
    const Dense3 full = impute(p, d.mask);
    d.tensor = full;
    d.statics = coupled_reconstruct(p.factors);
    REQUIRE(reconstruction_loss(p, d, 0.0) <= 1e-18);
}

TEST_CASE("reconstruction_loss of the zero model is the data energy", "[model]") {
    Rng rng(7);
    const std::size_t I = 3, J = 3, K = 2, S = 2;
    CohortDataset d = helpers::random_dataset(I, J, K, S, 0.4, rng);
    ModelParams p = init_params(I, J, K, S, 2, 1);
    for (auto& x : p.factors.A.v) x = 0.0;
    for (auto& x : p.factors.B.v) x = 0.0;
    for (auto& x : p.factors.C.v) x = 0.0;
    for (auto& x : p.factors.D.v) x = 0.0;
    for (auto& x : p.biases.feature) x = 0.0;
    for (auto& x : p.biases.patient) x = 0.0;
    double expect = 0.0;
    for (std::size_t n = 0; n < d.tensor.v.size(); ++n)
        if (d.mask.v[n]) expect += d.tensor.v[n] * d.tensor.v[n];
    for (double x : d.statics.v) expect += x * x;
    REQUIRE(reconstruction_loss(p, d, 0.0) == Catch::Approx(expect).epsilon(1e-12));
}

TEST_CASE("reconstruction_loss matches the straight-line oracle", "[model]") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(100 + seed);
        const std::size_t I = 5, J = 4, K = 3, S = 3, r = 3;
        const CohortDataset d = helpers::random_dataset(I, J, K, S, 0.3, rng);
        ModelParams p = init_params(I, J, K, S, r, seed);
        for (auto& b : p.biases.feature) b -= 0.5;
        for (auto& b : p.biases.patient) b -= 0.5;
        const double l1 = 0.05;
        REQUIRE(reconstruction_loss(p, d, l1) ==
                Catch::Approx(reconstruction_oracle(p, d, l1)).epsilon(1e-12));
    }
}

TEST_CASE("total_loss endpoints and the breakdown invariant", "[model]") {
    Rng rng(11);
    const std::size_t I = 5, J = 3, K = 3, S = 2, r = 2;
    const CohortDataset d = helpers::random_dataset(I, J, K, S, 0.3, rng);
    const ModelParams p = init_params(I, J, K, S, r, 3);

    const LossBreakdown l0 = total_loss(p, d, 0.0, 0.01);
    REQUIRE(l0.total == Catch::Approx(reconstruction_loss(p, d, 0.01)).epsilon(1e-12));

    const LossBreakdown l1 = total_loss(p, d, 1.0, 0.01);
    REQUIRE(l1.total == Catch::Approx(l1.classifier).epsilon(1e-12));

    const LossBreakdown lmid = total_loss(p, d, 0.7, 0.01);
    const double expect = 0.3 * (lmid.tensor_fit + lmid.matrix_fit + lmid.sparsity) +
                          0.7 * lmid.classifier;
    REQUIRE(lmid.total == Catch::Approx(expect).epsilon(1e-12));

    REQUIRE_THROWS_AS(total_loss(p, d, 1.5, 0.0), ParameterError);
    REQUIRE_THROWS_AS(total_loss(p, d, -0.1, 0.0), ParameterError);
}

TEST_CASE("impute equals cp reconstruction when biases are zero", "[model]") {
    Rng rng(13);
    const std::size_t I = 4, J = 3, K = 2, S = 2, r = 2;
    ModelParams p = init_params(I, J, K, S, r, 5);
    for (auto& x : p.biases.feature) x = 0.0;
    for (auto& x : p.biases.patient) x = 0.0;
    const Mask3 m(I, J, K, 1);
    const Dense3 full = impute(p, m);
    const Dense3 cp = cp_reconstruct(p.factors);
    REQUIRE(full.v == cp.v);
}

TEST_CASE("impute recovers held-out cells of a planted exact model", "[model]") {
    SynthConfig cfg;
    cfg.patients = 20;
    cfg.temporal_features = 6;
    cfg.timepoints = 5;
    cfg.static_features = 3;
    cfg.rank = 2;
    cfg.noise_sigma = 0.0;
    cfg.static_noise_sigma = 0.0;
    cfg.missing_fraction = 0.3;
    cfg.seed = 21;
    auto synth = synth_generate(cfg);

    ModelParams p;
    p.factors = synth.truth.factors;
    p.biases = synth.truth.biases;
    Rng rng(1);
    p.head = init_classifier(cfg.rank, rng);
    const Dense3 full = impute(p, synth.dataset.mask);
    for (std::size_t n = 0; n < full.v.size(); ++n) {
        REQUIRE(std::isfinite(full.v[n]));
        // every cell, held-out ones included, reproduces the noiseless data
        REQUIRE(full.v[n] == Catch::Approx(synth.dataset.tensor.v[n]).margin(1e-6));
    }
}

TEST_CASE("masked-out tensor entries never influence the loss", "[model]") {
    Rng rng(17);
    const std::size_t I = 5, J = 4, K = 3, S = 2, r = 2;
    CohortDataset d = helpers::random_dataset(I, J, K, S, 0.4, rng);
    const ModelParams p = init_params(I, J, K, S, r, 9);
    const LossBreakdown before = total_loss(p, d, 0.6, 0.02);
    for (std::size_t n = 0; n < d.tensor.v.size(); ++n)
        if (!d.mask.v[n]) d.tensor.v[n] = rng.uniform(-1e6, 1e6);
    const LossBreakdown after = total_loss(p, d, 0.6, 0.02);
    REQUIRE(before.tensor_fit == after.tensor_fit);
    REQUIRE(before.matrix_fit == after.matrix_fit);
    REQUIRE(before.sparsity == after.sparsity);
    REQUIRE(before.classifier == after.classifier);
    REQUIRE(before.total == after.total);
}

TEST_CASE("analytic gradients match central finite differences", "[model]") {
    const double lambdas[4] = {0.0, 0.3, 0.7, 1.0};
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto [params, data] = helpers::gradcheck_setup(seed);
        const auto rep = helpers::gradcheck_instance(params, data, lambdas[seed % 4]);
        INFO("seed " << seed << " worst block " << rep.worst_block);
        REQUIRE(rep.worst_rel_error <= 1e-4);
    }
}

TEST_CASE("smooth gradient plus l1 subgradient matches finite differences", "[model]") {
    // at strictly positive factor entries the penalty is differentiable with
    // slope (1-lambda)*l1_weight, so the optimizer's split treatment must add
    // up to the finite difference of the full objective
    auto [params, data] = helpers::gradcheck_setup(3);
    const double lambda = 0.4, l1 = 0.05, h = 1e-5;
    for (auto& x : params.factors.A.v) x += 0.1;  // keep entries away from 0
    auto [loss, grads] = evaluate_with_gradients(params, data, lambda, l1);
    (void)loss;
    for (std::size_t n = 0; n < params.factors.A.v.size(); ++n) {
        const double x0 = params.factors.A.v[n];
        params.factors.A.v[n] = x0 + h;
        const double lp = total_loss(params, data, lambda, l1).total;
        params.factors.A.v[n] = x0 - h;
        const double lm = total_loss(params, data, lambda, l1).total;
        params.factors.A.v[n] = x0;
        const double fd = (lp - lm) / (2.0 * h);
        const double an = grads.A.v[n] + (1.0 - lambda) * l1;
        REQUIRE(std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6}) <= 1e-4);
    }
}

TEST_CASE("feature-bias gradients are tied across their slice", "[model]") {
    // perturbing b_feat[j] must act exactly like perturbing every observed
    // entry of slice j of an untied additive offset; equivalently the
    // analytic gradient equals the summed finite differences over the slice
    auto [params, data] = helpers::gradcheck_setup(8);
    const double lambda = 0.5, h = 1e-5;
    auto [loss, grads] = evaluate_with_gradients(params, data, lambda, 0.0);
    (void)loss;
    for (std::size_t j = 0; j < data.features(); ++j) {
        double fd_sum = 0.0;
        for (std::size_t i = 0; i < data.patients(); ++i)
            for (std::size_t k = 0; k < data.timepoints(); ++k) {
                // an untied offset at (i,j,k) is equivalent to shifting the
                // observed value the other way
                const double t0 = data.tensor.at(i, j, k);
                data.tensor.at(i, j, k) = t0 - h;
                const double lp = total_loss(params, data, lambda, 0.0).total;
                data.tensor.at(i, j, k) = t0 + h;
                const double lm = total_loss(params, data, lambda, 0.0).total;
                data.tensor.at(i, j, k) = t0;
                fd_sum += (lp - lm) / (2.0 * h);
            }
        REQUIRE(std::abs(fd_sum - grads.b_feat[j]) /
                    std::max({std::abs(fd_sum), std::abs(grads.b_feat[j]), 1e-6}) <=
                1e-4);
    }
    for (std::size_t i = 0; i < data.patients(); ++i) {
        double fd_sum = 0.0;
        for (std::size_t j = 0; j < data.features(); ++j)
            for (std::size_t k = 0; k < data.timepoints(); ++k) {
                const double t0 = data.tensor.at(i, j, k);
                data.tensor.at(i, j, k) = t0 - h;
                const double lp = total_loss(params, data, lambda, 0.0).total;
                data.tensor.at(i, j, k) = t0 + h;
                const double lm = total_loss(params, data, lambda, 0.0).total;
                data.tensor.at(i, j, k) = t0;
                fd_sum += (lp - lm) / (2.0 * h);
            }
        REQUIRE(std::abs(fd_sum - grads.b_pat[i]) /
                    std::max({std::abs(fd_sum), std::abs(grads.b_pat[i]), 1e-6}) <=
                1e-4);
    }
}
