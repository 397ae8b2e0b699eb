#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "cmtf/metrics.hpp"
#include "cmtf/optimizer.hpp"
#include "helpers.hpp"

using namespace cmtf;

TEST_CASE("init_params is deterministic and honors the documented policy", "[optimizer]") {
    const ModelParams a = init_params(5, 4, 3, 2, 3, 77);
    const ModelParams b = init_params(5, 4, 3, 2, 3, 77);
    REQUIRE(a.factors.A.v == b.factors.A.v);
    REQUIRE(a.factors.D.v == b.factors.D.v);
    REQUIRE(a.biases.feature == b.biases.feature);
    REQUIRE(a.head.W1.v == b.head.W1.v);

    // w starts at all ones
    for (double ws : a.factors.w) REQUIRE(ws == 1.0);
    // factors and biases start inside [0,1]
    auto in01 = [](const std::vector<double>& xs) {
        for (double x : xs)
            if (x < 0.0 || x > 1.0) return false;
        return true;
    };
    REQUIRE(in01(a.factors.A.v));
    REQUIRE(in01(a.factors.B.v));
    REQUIRE(in01(a.factors.C.v));
    REQUIRE(in01(a.factors.D.v));
    REQUIRE(in01(a.biases.feature));
    REQUIRE(in01(a.biases.patient));

    REQUIRE_THROWS_AS(init_params(5, 4, 3, 2, 0, 1), ParameterError);
}

TEST_CASE("prox_l1_nonneg piecewise definition", "[optimizer]") {
    Dense2 x(1, 3);
    x.v = {0.5, 0.1, -0.4};
    const Dense2 y = prox_l1_nonneg(x, 0.2);
    REQUIRE(y.v[0] == Catch::Approx(0.3).epsilon(1e-14));
    REQUIRE(y.v[1] == 0.0);
    REQUIRE(y.v[2] == 0.0);

    // threshold 0 is the plain projection
    Rng rng(3);
    Dense2 z(4, 4);
    for (auto& e : z.v) e = rng.uniform(-1, 1);
    const Dense2 p = prox_l1_nonneg(z, 0.0);
    for (std::size_t n = 0; n < z.v.size(); ++n) REQUIRE(p.v[n] == std::max(z.v[n], 0.0));

    REQUIRE_THROWS_AS(prox_l1_nonneg(z, -0.1), ParameterError);
}

TEST_CASE("prox_l1_nonneg minimizes the scalar proximal objective", "[optimizer]") {
    // grid-search oracle over u >= 0 for 0.5*(u-x)^2 + t*|u|
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        const double x = rng.uniform(-2, 2);
        const double t = rng.uniform(0, 1);
        Dense2 m(1, 1);
        m.v = {x};
        const double u_star = prox_l1_nonneg(m, t).v[0];
        auto objective = [&](double u) { return 0.5 * (u - x) * (u - x) + t * u; };
        double best_u = 0.0, best_val = objective(0.0);
        for (double u = 0.0; u <= 3.0; u += 1e-4) {
            const double val = objective(u);
            if (val < best_val) {
                best_val = val;
                best_u = u;
            }
        }
        REQUIRE(u_star == Catch::Approx(best_u).margin(2e-4));
    }
}

TEST_CASE("adam_step with zero gradients leaves parameters unchanged", "[optimizer]") {
    std::vector<double> x = {1.0, -2.0, 3.0};
    const std::vector<double> g(3, 0.0);
    AdamState::Moments mo(3);
    for (std::size_t t = 1; t <= 10; ++t) adam_step(x, g, mo, t, 0.1, 0.9, 0.999, 1e-8);
    REQUIRE(x == std::vector<double>{1.0, -2.0, 3.0});
}

TEST_CASE("adam_step first-step magnitude matches the hand-evaluated recurrence", "[optimizer]") {
    // long-double evaluation of the textbook update for a single scalar
    const long double lr = 0.01L, b1 = 0.9L, b2 = 0.999L, eps = 1e-8L, g = 1.0L;
    const long double m = (1.0L - b1) * g;
    const long double v = (1.0L - b2) * g * g;
    const long double mhat = m / (1.0L - b1);
    const long double vhat = v / (1.0L - b2);
    const long double expected_delta = lr * mhat / (std::sqrt(vhat) + eps);

    std::vector<double> x = {0.5};
    AdamState::Moments mo(1);
    adam_step(x, {1.0}, mo, 1, 0.01, 0.9, 0.999, 1e-8);
    REQUIRE(0.5 - x[0] == Catch::Approx(static_cast<double>(expected_delta)).epsilon(1e-12));
    // first bias-corrected step is ~lr
    REQUIRE(0.5 - x[0] == Catch::Approx(0.01).epsilon(1e-6));
}

TEST_CASE("adam moments stay finite and nonnegative over many random steps", "[optimizer]") {
    Rng rng(7);
    std::vector<double> x(4, 0.0);
    AdamState::Moments mo(4);
    for (std::size_t t = 1; t <= 10000; ++t) {
        std::vector<double> g(4);
        for (auto& gg : g) gg = rng.uniform(-5, 5);
        adam_step(x, g, mo, t, 0.01, 0.9, 0.999, 1e-8);
    }
    for (double v : mo.v) {
        REQUIRE(std::isfinite(v));
        REQUIRE(v >= 0.0);
    }
    for (double m : mo.m) REQUIRE(std::isfinite(m));
    for (double xx : x) REQUIRE(std::isfinite(xx));
}

TEST_CASE("scheduler decays by 0.8 every 1000 steps", "[optimizer]") {
    REQUIRE(scheduled_lr(0.01, 0) == 0.01);
    REQUIRE(scheduled_lr(0.01, 999) == 0.01);
    REQUIRE(scheduled_lr(0.01, 1000) == Catch::Approx(0.008).epsilon(1e-12));
    REQUIRE(scheduled_lr(0.01, 2500) == Catch::Approx(0.0064).epsilon(1e-12));

    Rng rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t step = rng.index(100000);
        const double expect = 0.01 * std::pow(0.8, static_cast<double>(step / 1000));
        REQUIRE(scheduled_lr(0.01, step) == Catch::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("training fits noiseless planted data without missingness", "[optimizer]") {
    SynthConfig cfg;
    cfg.patients = 40;
    cfg.temporal_features = 10;
    cfg.timepoints = 6;
    cfg.static_features = 4;
    cfg.rank = 3;
    cfg.noise_sigma = 0.0;
    cfg.static_noise_sigma = 0.0;
    cfg.bias_scale_patient = 0.0;
    cfg.bias_scale_feature = 0.0;
    cfg.missing_fraction = 0.0;
    cfg.seed = 3;
    auto synth = synth_generate(cfg);

    TrainConfig tc;
    tc.rank = 3;
    tc.lambda = 0.0;
    tc.l1_weight = 0.0;
    tc.learning_rate = 0.01;
    tc.max_steps = 3000;
    tc.seed = 5;
    tc.tolerance = 0.0;
    auto [params, hist] = train(synth.dataset, tc);

    const Dense3 recon = impute(params, synth.dataset.mask);
    double num = 0.0, den = 0.0;
    for (std::size_t n = 0; n < recon.v.size(); ++n) {
        const double r = recon.v[n] - synth.dataset.tensor.v[n];
        num += r * r;
        den += synth.dataset.tensor.v[n] * synth.dataset.tensor.v[n];
    }
    REQUIRE(std::sqrt(num / den) <= 1e-2);
}

TEST_CASE("nonnegativity holds after every training step", "[optimizer]") {
    Rng rng(13);
    CohortDataset d = helpers::random_dataset(10, 5, 4, 3, 0.3, rng);
    TrainConfig tc;
    tc.rank = 3;
    tc.lambda = 0.5;
    tc.l1_weight = 0.01;
    tc.learning_rate = 0.05;
    tc.max_steps = 120;
    tc.seed = 2;
    tc.tolerance = 0.0;
    std::size_t observed = 0;
    tc.step_observer = [&](std::size_t, const ModelParams& p) {
        ++observed;
        for (double x : p.factors.w) REQUIRE(x >= 0.0);
        for (double x : p.factors.A.v) REQUIRE(x >= 0.0);
        for (double x : p.factors.B.v) REQUIRE(x >= 0.0);
        for (double x : p.factors.C.v) REQUIRE(x >= 0.0);
        for (double x : p.factors.D.v) REQUIRE(x >= 0.0);
    };
    train(d, tc);
    REQUIRE(observed == 120);
}

TEST_CASE("loss after 200 steps is below the starting loss across seeds", "[optimizer]") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        SynthConfig cfg;
        cfg.patients = 20;
        cfg.temporal_features = 6;
        cfg.timepoints = 5;
        cfg.static_features = 3;
        cfg.rank = 2;
        cfg.missing_fraction = 0.4;
        cfg.seed = 70 + seed;
        auto synth = synth_generate(cfg);
        TrainConfig tc;
        tc.rank = 2;
        tc.lambda = 0.5;
        tc.learning_rate = 0.01;
        tc.max_steps = 201;
        tc.seed = seed;
        tc.tolerance = 0.0;
        auto [params, hist] = train(synth.dataset, tc);
        REQUIRE(hist.steps[200].loss.total < hist.steps[0].loss.total);
    }
}

TEST_CASE("same configuration reproduces the loss trajectory exactly", "[optimizer]") {
    Rng rng(17);
    CohortDataset d = helpers::random_dataset(12, 6, 4, 3, 0.3, rng);
    TrainConfig tc;
    tc.rank = 3;
    tc.lambda = 0.6;
    tc.l1_weight = 0.001;
    tc.learning_rate = 0.02;
    tc.max_steps = 150;
    tc.seed = 9;
    tc.tolerance = 0.0;
    auto [p1, h1] = train(d, tc);
    auto [p2, h2] = train(d, tc);
    REQUIRE(h1.steps.size() == h2.steps.size());
    for (std::size_t s = 0; s < h1.steps.size(); ++s)
        REQUIRE(std::abs(h1.steps[s].loss.total - h2.steps[s].loss.total) <= 1e-12);
    REQUIRE(p1.factors.A.v == p2.factors.A.v);
    REQUIRE(p1.head.W1.v == p2.head.W1.v);
}

TEST_CASE("prox at zero weight is exactly the clamp", "[optimizer]") {
    Rng rng(19);
    for (int trial = 0; trial < 20; ++trial) {
        Dense2 x(5, 5);
        for (auto& e : x.v) e = rng.uniform(-2, 2);
        Dense2 clamped = x;
        for (auto& e : clamped.v) e = std::max(e, 0.0);
        REQUIRE(prox_l1_nonneg(x, 0.0).v == clamped.v);
    }
}

TEST_CASE("training reports divergence with the failing step", "[optimizer]") {
    Rng rng(23);
    CohortDataset d = helpers::random_dataset(8, 4, 3, 2, 0.2, rng);
    // squared residuals of ~1e200-scale data overflow, so the very first loss
    // evaluation is non-finite and must surface as a divergence error
    for (auto& x : d.tensor.v) x = 1e200;
    TrainConfig tc;
    tc.rank = 2;
    tc.lambda = 0.0;
    tc.max_steps = 200;
    tc.seed = 4;
    tc.tolerance = 0.0;
    REQUIRE_THROWS_WITH(train(d, tc), Catch::Matchers::ContainsSubstring("diverged at step"));
}

TEST_CASE("history CSV carries the documented columns", "[optimizer]") {
    Rng rng(29);
    CohortDataset d = helpers::random_dataset(8, 4, 3, 2, 0.2, rng);
    TrainConfig tc;
    tc.rank = 2;
    tc.lambda = 0.5;
    tc.max_steps = 5;
    tc.seed = 1;
    auto [params, hist] = train(d, tc);
    const auto path = std::filesystem::temp_directory_path() / "cmtf_hist.csv";
    write_history_csv(hist, path.string());
    std::ifstream f(path);
    std::string header;
    std::getline(f, header);
    REQUIRE(header == "step,tensor_fit,matrix_fit,sparsity,classifier,total,lr");
    std::size_t lines = 0;
    std::string line;
    while (std::getline(f, line))
        if (!line.empty()) ++lines;
    REQUIRE(lines == hist.steps.size());
}

TEST_CASE("returned factors are column-normalized and reconstruction-equivalent", "[optimizer]") {
    Rng rng(31);
    CohortDataset d = helpers::random_dataset(10, 5, 4, 3, 0.3, rng);
    TrainConfig tc;
    tc.rank = 3;
    tc.lambda = 0.5;
    tc.max_steps = 50;
    tc.seed = 6;
    tc.tolerance = 0.0;

    ModelParams last_raw;
    tc.step_observer = [&](std::size_t step, const ModelParams& p) {
        if (step == tc.max_steps - 1) last_raw = p;
    };
    auto [params, hist] = train(d, tc);

    for (const auto& norms : {column_norms(params.factors.A), column_norms(params.factors.B),
                              column_norms(params.factors.C), column_norms(params.factors.D)})
        for (double n : norms) REQUIRE((n == 0.0 || std::abs(n - 1.0) <= 1e-9));

    // normalization must not change the model: reconstructions identical and
    // classifier logits identical on arbitrary membership rows
    const Dense3 r0 = cp_reconstruct(last_raw.factors);
    const Dense3 r1 = cp_reconstruct(params.factors);
    for (std::size_t n = 0; n < r0.v.size(); ++n)
        REQUIRE(r1.v[n] == Catch::Approx(r0.v[n]).margin(1e-9));

    const auto rows_idx = d.split_indices(Split::Train);
    const Dense2 raw_rows = take_rows(last_raw.factors.A, rows_idx);
    const Dense2 norm_rows = take_rows(params.factors.A, rows_idx);
    const Dense2 l0 = classifier_forward_eval(last_raw.head, raw_rows);
    const Dense2 l1 = classifier_forward_eval(params.head, norm_rows);
    for (std::size_t n = 0; n < l0.v.size(); ++n)
        REQUIRE(l1.v[n] == Catch::Approx(l0.v[n]).margin(1e-9));
}
