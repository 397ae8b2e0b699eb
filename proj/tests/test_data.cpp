#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "cmtf/data.hpp"
#include "cmtf/metrics.hpp"
#include "cmtf/als.hpp"
#include "helpers.hpp"

using namespace cmtf;

namespace {
CohortSchema small_schema() {
    CohortSchema s;
    s.temporal_features = {"tf0", "tf1"};
    s.static_features = {"s0", "s1"};
    s.outcome_names = {"year2", "year3"};
    s.windows = 2;
    return s;
}
}  // namespace

TEST_CASE("ingest places one record in one masked cell", "[data]") {
    const auto res = ingest({{"p0", "tf1", 1, 3.5}}, {}, {}, small_schema());
    const CohortDataset& d = res.dataset;
    REQUIRE(d.patients() == 1);
    REQUIRE(d.mask.count_observed() == 1);
    REQUIRE(d.mask.at(0, 1, 1) == 1);
    REQUIRE(d.tensor.at(0, 1, 1) == 3.5);
    REQUIRE(d.label_missing.at(0, 0) == 1);
}

TEST_CASE("duplicate tensor cells are averaged with a warning", "[data]") {
    const auto res = ingest({{"p0", "tf0", 0, 1.0}, {"p0", "tf0", 0, 3.0}}, {}, {},
                            small_schema());
    REQUIRE(res.dataset.tensor.at(0, 0, 0) == 2.0);
    REQUIRE(res.warnings.size() == 1);
    REQUIRE_THAT(res.warnings[0], Catch::Matchers::ContainsSubstring("averaged"));
}

TEST_CASE("ingest rejects unknown features, windows, and outcomes by name", "[data]") {
    REQUIRE_THROWS_WITH(ingest({{"p0", "bogus", 0, 1.0}}, {}, {}, small_schema()),
                        Catch::Matchers::ContainsSubstring("bogus"));
    REQUIRE_THROWS_WITH(ingest({{"p0", "tf0", 7, 1.0}}, {}, {}, small_schema()),
                        Catch::Matchers::ContainsSubstring("window 7"));
    REQUIRE_THROWS_WITH(ingest({}, {{"p0", "nope", 1.0}}, {}, small_schema()),
                        Catch::Matchers::ContainsSubstring("nope"));
    REQUIRE_THROWS_WITH(ingest({}, {}, {{"p0", "outcomeX", 1.0}}, small_schema()),
                        Catch::Matchers::ContainsSubstring("outcomeX"));
    REQUIRE_THROWS_AS(ingest({}, {}, {{"p0", "year2", 0.5}}, small_schema()), SchemaError);
}

TEST_CASE("export then ingest reproduces the dataset bit-identically", "[data]") {
    SynthConfig cfg;
    cfg.patients = 12;
    cfg.temporal_features = 4;
    cfg.timepoints = 3;
    cfg.static_features = 3;
    cfg.rank = 2;
    cfg.missing_fraction = 0.4;
    cfg.seed = 5;
    const CohortDataset d = synth_generate(cfg).dataset;

    const auto dir = std::filesystem::temp_directory_path() / "cmtf_export";
    std::filesystem::create_directories(dir);
    const auto tpath = (dir / "temporal.csv").string();
    const auto spath = (dir / "statics.csv").string();
    const auto lpath = (dir / "labels.csv").string();
    export_cohort_csvs(d, tpath, spath, lpath);

    CohortSchema schema;
    schema.temporal_features = d.temporal_features;
    schema.static_features = d.static_features;
    schema.outcome_names = d.outcome_names;
    schema.windows = d.timepoints();
    const auto back =
        ingest(read_temporal_csv(tpath), read_statics_csv(spath), read_labels_csv(lpath), schema);
    const CohortDataset& e = back.dataset;
    REQUIRE(back.warnings.empty());
    REQUIRE(e.patient_ids == d.patient_ids);
    REQUIRE(e.mask.v == d.mask.v);
    for (std::size_t n = 0; n < d.tensor.v.size(); ++n)
        if (d.mask.v[n]) REQUIRE(e.tensor.v[n] == d.tensor.v[n]);
    for (std::size_t n = 0; n < d.statics.v.size(); ++n)
        REQUIRE(e.statics.v[n] == d.statics.v[n]);
    REQUIRE(e.labels.v == d.labels.v);
}

TEST_CASE("preprocess matches the hand-computed six-patient fixture", "[data]") {
    // patients p0..p4 carry data; p5 is fully missing and must be dropped
    std::vector<TemporalRecord> temporal;
    const double tf0_t0[5] = {1, 2, 3, 4, 5};
    for (int i = 0; i < 5; ++i)
        temporal.push_back({"p" + std::to_string(i), "tf0", 0, tf0_t0[i]});
    temporal.push_back({"p0", "tf0", 1, 2.0});
    temporal.push_back({"p1", "tf0", 1, 4.0});
    temporal.push_back({"p0", "tf1", 0, 7.0});
    temporal.push_back({"p2", "tf1", 0, 7.0});
    temporal.push_back({"p4", "tf1", 0, 7.0});
    temporal.push_back({"p3", "tf1", 1, 0.0});
    temporal.push_back({"p4", "tf1", 1, 10.0});

    std::vector<StaticRecord> statics = {
        {"p0", "s0", 1.0}, {"p1", "s0", 2.0}, {"p3", "s0", 4.0}, {"p4", "s0", 3.0},
        {"p0", "s1", 0.0}, {"p1", "s1", 1.0}, {"p2", "s1", 0.0}, {"p3", "s1", 1.0},
        {"p4", "s1", 0.0}, {"p5", "s0", 9.0}, {"p5", "s1", 1.0}};

    std::vector<LabelRecord> labels = {{"p0", "year2", 1}, {"p0", "year3", 0},
                                       {"p1", "year2", 0},  // p1 year3 missing -> failure
                                       {"p2", "year2", 1}, {"p2", "year3", 1},
                                       {"p3", "year2", 0}, {"p3", "year3", 1},
                                       {"p4", "year2", 1}, {"p4", "year3", 0},
                                       {"p5", "year2", 1}, {"p5", "year3", 1}};

    const auto raw = ingest(temporal, statics, labels, small_schema());
    REQUIRE(raw.dataset.patients() == 6);
    const auto pre = preprocess(raw.dataset);
    const CohortDataset& d = pre.dataset;

    // p5 dropped (100% >= 90% missing)
    REQUIRE(d.patients() == 5);
    for (const auto& id : d.patient_ids) REQUIRE(id != "p5");

    // step 4: two-step scaling of {1,2,3,4,5} lands on the quartile grid
    const double expect_tf0_t0[5] = {0.0, 0.25, 0.5, 0.75, 1.0};
    for (int i = 0; i < 5; ++i)
        REQUIRE(d.tensor.at(i, 0, 0) == Catch::Approx(expect_tf0_t0[i]).margin(1e-12));
    // {2,4} -> {0,1}
    REQUIRE(d.tensor.at(0, 0, 1) == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(d.tensor.at(1, 0, 1) == Catch::Approx(1.0).margin(1e-12));
    // constant slice {7,7,7} -> all zeros (degenerate spread)
    REQUIRE(d.tensor.at(0, 1, 0) == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(d.tensor.at(2, 1, 0) == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(d.tensor.at(4, 1, 0) == Catch::Approx(0.0).margin(1e-12));
    // {0,10} -> {0,1}
    REQUIRE(d.tensor.at(3, 1, 1) == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(d.tensor.at(4, 1, 1) == Catch::Approx(1.0).margin(1e-12));
    // unobserved cells are zeroed, mask untouched
    REQUIRE(d.mask.at(2, 0, 1) == 0);
    REQUIRE(d.tensor.at(2, 0, 1) == 0.0);

    // step 2: p2 s0 imputed to the mean 2.5, then step 5 scales
    // {1,2,2.5,4,3} -> {0, 1/3, 0.5, 1, 2/3}
    const double expect_s0[5] = {0.0, 1.0 / 3.0, 0.5, 1.0, 2.0 / 3.0};
    for (int i = 0; i < 5; ++i)
        REQUIRE(d.statics.at(i, 0) == Catch::Approx(expect_s0[i]).margin(1e-12));
    // binary static survives scaling unchanged
    const double expect_s1[5] = {0, 1, 0, 1, 0};
    for (int i = 0; i < 5; ++i)
        REQUIRE(d.statics.at(i, 1) == Catch::Approx(expect_s1[i]).margin(1e-12));

    // step 3: p1's missing year3 recorded as failure
    REQUIRE(d.labels.at(1, 1) == 0);
    REQUIRE(d.label_missing.at(1, 1) == 0);

    // every observed entry is inside [0,1]
    for (std::size_t n = 0; n < d.tensor.v.size(); ++n)
        if (d.mask.v[n]) {
            REQUIRE(d.tensor.v[n] >= 0.0);
            REQUIRE(d.tensor.v[n] <= 1.0);
        }
    for (double x : d.statics.v) {
        REQUIRE(x >= 0.0);
        REQUIRE(x <= 1.0);
    }
}

TEST_CASE("preprocess errors on a timepoint with fewer than two observations", "[data]") {
    std::vector<TemporalRecord> temporal = {
        {"p0", "tf0", 0, 1.0}, {"p1", "tf0", 0, 2.0}, {"p0", "tf0", 1, 1.0},
        {"p0", "tf1", 0, 1.0}, {"p1", "tf1", 0, 2.0},
        {"p0", "tf1", 1, 1.0}, {"p1", "tf1", 1, 2.0}};
    const auto raw = ingest(temporal, {}, {}, small_schema());
    REQUIRE_THROWS_WITH(preprocess(raw.dataset),
                        Catch::Matchers::ContainsSubstring("tf0"));
}

TEST_CASE("pooled mode standardizes each timepoint across all features", "[data]") {
    // two features on very different scales at the same timepoint share one
    // set of scale parameters when pooling is on
    std::vector<TemporalRecord> temporal;
    for (int i = 0; i < 4; ++i) {
        temporal.push_back({"p" + std::to_string(i), "tf0", 0, 1.0 + i});        // 1..4
        temporal.push_back({"p" + std::to_string(i), "tf1", 0, 100.0 + 10 * i}); // 100..130
        temporal.push_back({"p" + std::to_string(i), "tf0", 1, 2.0 * i});
        temporal.push_back({"p" + std::to_string(i), "tf1", 1, 5.0 * i});
    }
    const auto raw = ingest(temporal, {}, {}, small_schema());
    const auto pooled = preprocess(raw.dataset, /*per_feature_timepoint=*/false);
    const CohortDataset& d = pooled.dataset;
    REQUIRE_FALSE(d.norm.per_feature_timepoint);
    // shared parameters across features within a timepoint
    REQUIRE(d.norm.t_mean.at(0, 0) == d.norm.t_mean.at(1, 0));
    REQUIRE(d.norm.t_max.at(0, 0) == d.norm.t_max.at(1, 0));
    // the pooled min/max land on the extreme cells: tf0 value 1 -> 0,
    // tf1 value 130 -> 1
    REQUIRE(d.tensor.at(0, 0, 0) == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(d.tensor.at(3, 1, 0) == Catch::Approx(1.0).margin(1e-12));
    for (std::size_t n = 0; n < d.tensor.v.size(); ++n)
        if (d.mask.v[n]) {
            REQUIRE(d.tensor.v[n] >= 0.0);
            REQUIRE(d.tensor.v[n] <= 1.0);
        }
}

TEST_CASE("preprocess skips rescaling when parameters are cached", "[data]") {
    SynthConfig cfg;
    cfg.patients = 15;
    cfg.temporal_features = 4;
    cfg.timepoints = 3;
    cfg.static_features = 2;
    cfg.rank = 2;
    cfg.missing_fraction = 0.3;
    cfg.seed = 2;
    const CohortDataset d = synth_generate(cfg).dataset;  // marked normalized
    const auto again = preprocess(d);
    REQUIRE(again.dataset.tensor.v == d.tensor.v);
    REQUIRE(again.dataset.statics.v == d.statics.v);
    REQUIRE(again.dataset.mask.v == d.mask.v);
}

TEST_CASE("stratified split hits exact fractions on balanced strata", "[data]") {
    LabelMatrix y(100, 2);
    for (std::size_t i = 0; i < 100; ++i) {
        y.at(i, 0) = i % 2;
        y.at(i, 1) = (i / 2) % 2;
    }
    const auto res = stratified_split(y, {0.6, 0.2, 0.2}, 3);
    std::size_t counts[3] = {0, 0, 0};
    for (auto s : res.assignment) counts[static_cast<int>(s)]++;
    REQUIRE(counts[0] == 60);
    REQUIRE(counts[1] == 20);
    REQUIRE(counts[2] == 20);

    // per-stratum proportionality within one patient
    for (int key = 0; key < 4; ++key) {
        std::size_t in_split[3] = {0, 0, 0};
        std::size_t total = 0;
        for (std::size_t i = 0; i < 100; ++i)
            if (y.at(i, 0) * 2 + y.at(i, 1) == key) {
                ++total;
                in_split[static_cast<int>(res.assignment[i])]++;
            }
        REQUIRE(std::abs(double(in_split[0]) - 0.6 * double(total)) <= 1.0);
        REQUIRE(std::abs(double(in_split[1]) - 0.2 * double(total)) <= 1.0);
    }
}

TEST_CASE("stratified split is deterministic and guards tiny strata", "[data]") {
    Rng rng(5);
    LabelMatrix y(37, 2);
    for (auto& v : y.v) v = rng.uniform01() < 0.5;
    const auto a = stratified_split(y, {0.6, 0.2, 0.2}, 11);
    const auto b = stratified_split(y, {0.6, 0.2, 0.2}, 11);
    REQUIRE(a.assignment == b.assignment);

    LabelMatrix tiny(4, 2);
    tiny.at(0, 0) = 1;  // stratum (1,0) has a single member
    const auto res = stratified_split(tiny, {0.6, 0.2, 0.2}, 1);
    REQUIRE_FALSE(res.warnings.empty());
    REQUIRE(res.assignment[0] == Split::Train);

    REQUIRE_THROWS_AS(stratified_split(tiny, {0.5, 0.2, 0.2}, 1), ParameterError);
}

TEST_CASE("split fractions hold within rounding for random label tables", "[data]") {
    Rng rng(7);
    for (int trial = 0; trial < 25; ++trial) {
        const std::size_t n = 20 + rng.index(200);
        LabelMatrix y(n, 2);
        for (auto& v : y.v) v = rng.uniform01() < rng.uniform(0.1, 0.9) ? 1 : 0;
        const auto res = stratified_split(y, {0.6, 0.2, 0.2}, trial);
        for (int key = 0; key < 4; ++key) {
            std::size_t total = 0, got[3] = {0, 0, 0};
            for (std::size_t i = 0; i < n; ++i)
                if (y.at(i, 0) * 2 + y.at(i, 1) == key) {
                    ++total;
                    got[static_cast<int>(res.assignment[i])]++;
                }
            if (total < 3) continue;  // tiny strata go to train wholesale
            REQUIRE(std::abs(double(got[0]) - 0.6 * double(total)) <= 1.0);
            REQUIRE(std::abs(double(got[1]) - 0.2 * double(total)) <= 1.0);
            REQUIRE(std::abs(double(got[2]) - 0.2 * double(total)) <= 1.0);
        }
    }
}

TEST_CASE("synthetic generator plants an exactly recoverable model", "[data]") {
    SynthConfig cfg;
    cfg.patients = 25;
    cfg.temporal_features = 6;
    cfg.timepoints = 4;
    cfg.static_features = 3;
    cfg.rank = 2;
    cfg.noise_sigma = 0.0;
    cfg.static_noise_sigma = 0.0;
    cfg.missing_fraction = 0.0;
    cfg.seed = 9;
    const auto synth = synth_generate(cfg);

    ModelParams p;
    p.factors = synth.truth.factors;
    p.biases = synth.truth.biases;
    Rng rng(1);
    p.head = init_classifier(cfg.rank, rng);
    const Dense3 recon = impute(p, synth.dataset.mask);
    REQUIRE(masked_sq_error(synth.dataset.tensor, recon, synth.dataset.mask) <= 1e-16);
}

TEST_CASE("missingness fraction lands within the binomial envelope", "[data]") {
    SynthConfig cfg;
    cfg.patients = 40;
    cfg.temporal_features = 10;
    cfg.timepoints = 7;
    cfg.static_features = 4;
    cfg.rank = 3;
    cfg.missing_fraction = 0.9;
    cfg.seed = 13;
    const auto synth = synth_generate(cfg);
    const double total = static_cast<double>(synth.dataset.mask.size());
    const double expect = 0.1 * total;
    const double sigma = std::sqrt(total * 0.1 * 0.9);
    const double got = static_cast<double>(synth.dataset.mask.count_observed());
    REQUIRE(std::abs(got - expect) <= 3.0 * sigma);
}

TEST_CASE("labels carry a learnable signal from the planted memberships", "[data]") {
    SynthConfig cfg;
    cfg.patients = 300;
    cfg.temporal_features = 8;
    cfg.timepoints = 5;
    cfg.static_features = 4;
    cfg.rank = 4;
    cfg.label_components_y1 = {0, 1};
    cfg.label_components_y2 = {0, 2};
    cfg.label_coef = 4.0;
    cfg.seed = 17;
    const auto synth = synth_generate(cfg);

    // oracle: logistic regression on the planted memberships themselves
    const LogRegParams p = fit_logreg(synth.truth.factors.A, synth.dataset.labels, 5000, 1e-8);
    const Dense2 probs = logreg_probabilities(p, synth.truth.factors.A);
    for (std::size_t o = 0; o < 2; ++o) {
        std::vector<double> scores(synth.dataset.patients());
        std::vector<std::uint8_t> y(synth.dataset.patients());
        for (std::size_t i = 0; i < scores.size(); ++i) {
            scores[i] = probs.at(i, o);
            y[i] = synth.dataset.labels.at(i, o);
        }
        REQUIRE(roc_auc(scores, y) >= 0.95);
    }
}

TEST_CASE("generation is bit-deterministic in the seed", "[data]") {
    SynthConfig cfg;
    cfg.patients = 20;
    cfg.temporal_features = 5;
    cfg.timepoints = 4;
    cfg.static_features = 3;
    cfg.rank = 2;
    cfg.missing_fraction = 0.5;
    cfg.seed = 21;
    const auto a = synth_generate(cfg);
    const auto b = synth_generate(cfg);
    REQUIRE(a.dataset.tensor.v == b.dataset.tensor.v);
    REQUIRE(a.dataset.mask.v == b.dataset.mask.v);
    REQUIRE(a.dataset.statics.v == b.dataset.statics.v);
    REQUIRE(a.dataset.labels.v == b.dataset.labels.v);
    REQUIRE(a.truth.factors.A.v == b.truth.factors.A.v);

    SynthConfig bad = cfg;
    bad.missing_fraction = 0.99;
    REQUIRE_THROWS_AS(synth_generate(bad), ParameterError);
}
