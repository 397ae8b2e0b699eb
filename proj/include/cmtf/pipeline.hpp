#pragma once

// Command implementations behind the CLI: synthesis, ingestion, training,
// grid search, evaluation, phenotype reports, and method comparison. Every
// command writes its outputs plus a manifest.json (config echo, seeds, input
// content hashes, output paths, metric summary) into its --out directory and
// returns the manifest.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "cmtf/als.hpp"
#include "cmtf/checkpoint.hpp"
#include "cmtf/data.hpp"
#include "cmtf/forest.hpp"
#include "cmtf/metrics.hpp"
#include "cmtf/model.hpp"
#include "cmtf/optimizer.hpp"
#include "cmtf/phenotypes.hpp"

namespace cmtf {

// ---------------------------------------------------------------------------
// Content hashing (FNV-1a 64) for manifest reproducibility records

inline std::string content_hash_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw SchemaError("content_hash_file: cannot open " + path);
    std::uint64_t h = 1469598103934665603ull;
    char buf[65536];
    while (f) {
        f.read(buf, sizeof buf);
        const std::streamsize got = f.gcount();
        for (std::streamsize i = 0; i < got; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 1099511628211ull;
        }
    }
    char out[17];
    std::snprintf(out, sizeof out, "%016llx", static_cast<unsigned long long>(h));
    return out;
}

inline json hash_inputs(const std::vector<std::string>& paths) {
    json j = json::object();
    for (const auto& p : paths) {
        if (std::filesystem::is_directory(p)) {
            std::vector<std::string> files;
            for (const auto& e : std::filesystem::recursive_directory_iterator(p))
                if (e.is_regular_file()) files.push_back(e.path().string());
            std::sort(files.begin(), files.end());
            json sub = json::object();
            for (const auto& fpath : files)
                sub[std::filesystem::relative(fpath, p).string()] = content_hash_file(fpath);
            j[p] = sub;
        } else {
            j[p] = content_hash_file(p);
        }
    }
    return j;
}

// ---------------------------------------------------------------------------
// Config <-> JSON adapters

inline json to_json(const TrainConfig& c) {
    return json{{"rank", c.rank},
                {"lambda", c.lambda},
                {"learning_rate", c.learning_rate},
                {"l1_weight", c.l1_weight},
                {"max_steps", c.max_steps},
                {"seed", c.seed},
                {"lr_decay_factor", c.lr_decay_factor},
                {"lr_decay_period", c.lr_decay_period},
                {"tolerance", c.tolerance},
                {"sgd_lr_scale", c.sgd_lr_scale}};
}

inline TrainConfig train_config_from_json(const json& j) {
    TrainConfig c;
    c.rank = j.value("rank", c.rank);
    c.lambda = j.value("lambda", c.lambda);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.l1_weight = j.value("l1_weight", c.l1_weight);
    c.max_steps = j.value("max_steps", c.max_steps);
    c.seed = j.value("seed", c.seed);
    c.lr_decay_factor = j.value("lr_decay_factor", c.lr_decay_factor);
    c.lr_decay_period = j.value("lr_decay_period", c.lr_decay_period);
    c.tolerance = j.value("tolerance", c.tolerance);
    c.sgd_lr_scale = j.value("sgd_lr_scale", c.sgd_lr_scale);
    return c;
}

inline json to_json(const AlsConfig& c) {
    return json{{"rank", c.rank},
                {"lambda", c.lambda},
                {"learning_rate", c.learning_rate},
                {"l1_weight", c.l1_weight},
                {"outer_iters", c.outer_iters},
                {"inner_steps", c.inner_steps},
                {"use_bias", c.use_bias},
                {"seed", c.seed},
                {"lr_decay_factor", c.lr_decay_factor},
                {"lr_decay_period", c.lr_decay_period},
                {"logreg_max_steps", c.logreg_max_steps},
                {"logreg_tol", c.logreg_tol}};
}

inline AlsConfig als_config_from_json(const json& j) {
    AlsConfig c;
    c.rank = j.value("rank", c.rank);
    c.lambda = j.value("lambda", c.lambda);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.l1_weight = j.value("l1_weight", c.l1_weight);
    c.outer_iters = j.value("outer_iters", c.outer_iters);
    c.inner_steps = j.value("inner_steps", c.inner_steps);
    c.use_bias = j.value("use_bias", c.use_bias);
    c.seed = j.value("seed", c.seed);
    c.lr_decay_factor = j.value("lr_decay_factor", c.lr_decay_factor);
    c.lr_decay_period = j.value("lr_decay_period", c.lr_decay_period);
    c.logreg_max_steps = j.value("logreg_max_steps", c.logreg_max_steps);
    c.logreg_tol = j.value("logreg_tol", c.logreg_tol);
    return c;
}

inline json to_json(const SynthConfig& c) {
    return json{{"patients", c.patients},
                {"temporal_features", c.temporal_features},
                {"timepoints", c.timepoints},
                {"static_features", c.static_features},
                {"rank", c.rank},
                {"factor_sparsity", c.factor_sparsity},
                {"bias_scale_patient", c.bias_scale_patient},
                {"bias_scale_feature", c.bias_scale_feature},
                {"noise_sigma", c.noise_sigma},
                {"static_noise_sigma", c.static_noise_sigma},
                {"missing_fraction", c.missing_fraction},
                {"label_components_y1", c.label_components_y1},
                {"label_components_y2", c.label_components_y2},
                {"label_coef", c.label_coef},
                {"split_fractions", c.split_fractions},
                {"seed", c.seed}};
}

inline SynthConfig synth_config_from_json(const json& j) {
    SynthConfig c;
    c.patients = j.value("patients", c.patients);
    c.temporal_features = j.value("temporal_features", c.temporal_features);
    c.timepoints = j.value("timepoints", c.timepoints);
    c.static_features = j.value("static_features", c.static_features);
    c.rank = j.value("rank", c.rank);
    c.factor_sparsity = j.value("factor_sparsity", c.factor_sparsity);
    c.bias_scale_patient = j.value("bias_scale_patient", c.bias_scale_patient);
    c.bias_scale_feature = j.value("bias_scale_feature", c.bias_scale_feature);
    c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
    c.static_noise_sigma = j.value("static_noise_sigma", c.static_noise_sigma);
    c.missing_fraction = j.value("missing_fraction", c.missing_fraction);
    c.label_components_y1 = j.value("label_components_y1", c.label_components_y1);
    c.label_components_y2 = j.value("label_components_y2", c.label_components_y2);
    c.label_coef = j.value("label_coef", c.label_coef);
    c.split_fractions = j.value("split_fractions", c.split_fractions);
    c.seed = j.value("seed", c.seed);
    return c;
}

// ---------------------------------------------------------------------------
// Imputation holdout shared by evaluate/grid/compare: hides a seeded fraction
// of observed cells from the training mask and remembers where they were.

struct Holdout {
    Mask3 reduced_mask;
    std::vector<std::size_t> held_cells;
};

inline Holdout make_holdout(const Mask3& mask, double fraction, std::uint64_t seed) {
    if (fraction < 0.0 || fraction >= 1.0)
        throw ParameterError("make_holdout: fraction must be in [0, 1)");
    Holdout h;
    h.reduced_mask = mask;
    Rng rng(detail::splitmix64(seed ^ 0x484f4c444f555431ull));
    for (std::size_t n = 0; n < mask.size(); ++n)
        if (mask.v[n] && rng.uniform01() < fraction) {
            h.reduced_mask.v[n] = 0;
            h.held_cells.push_back(n);
        }
    return h;
}

struct ImputationScore {
    double mae = 0.0, rmse = 0.0;
    std::size_t cells = 0;
};

inline ImputationScore score_imputation(const ModelParams& params, const CohortDataset& original,
                                        const Holdout& holdout) {
    Dense3 full = impute(params, original.mask);
    std::vector<double> truth, imputed;
    truth.reserve(holdout.held_cells.size());
    for (auto n : holdout.held_cells) {
        truth.push_back(original.tensor.v[n]);
        imputed.push_back(full.v[n]);
    }
    ImputationScore s;
    s.cells = holdout.held_cells.size();
    if (s.cells > 0) {
        s.mae = mean_absolute_error(truth, imputed);
        s.rmse = root_mean_squared_error(truth, imputed);
    }
    return s;
}

// ---------------------------------------------------------------------------
// Training dispatch shared by train/grid/compare

struct FitResult {
    ModelParams params;
    std::optional<LogRegParams> logreg;
    TrainHistory history;
    std::string method;
};

inline FitResult fit_method(const CohortDataset& data, const std::string& method,
                            const TrainConfig& tc, const AlsConfig& ac) {
    FitResult out;
    out.method = method;
    if (method == "all_at_once") {
        auto [params, hist] = train(data, tc);
        out.params = std::move(params);
        out.history = std::move(hist);
    } else if (method == "als" || method == "als_bias") {
        AlsConfig cfg = ac;
        cfg.use_bias = (method == "als_bias");
        auto res = train_als(data, cfg);
        out.params = std::move(res.params);
        out.logreg = std::move(res.logreg);
        out.history = std::move(res.history);
    } else {
        throw ParameterError("unknown method '" + method +
                             "' (expected all_at_once, als, or als_bias)");
    }
    return out;
}

// Per-outcome class-1 probabilities from whichever classifier the method
// trained: the network head for all_at_once, the refit logistic regression
// for the block-alternating baselines.
inline Dense2 method_probabilities(const ModelParams& params,
                                   const std::optional<LogRegParams>& logreg,
                                   const Dense2& rows) {
    if (logreg) return logreg_probabilities(*logreg, rows);
    Dense2 logits = classifier_forward_eval(params.head, rows);
    Dense2 probs(logits.rows, logits.cols);
    for (std::size_t n = 0; n < logits.v.size(); ++n) probs.v[n] = sigmoid(logits.v[n]);
    return probs;
}

inline json metrics_to_json(const BinaryMetrics& m) {
    json j;
    j["auc"] = std::isnan(m.auc) ? json() : json(m.auc);
    j["f1"] = m.f1;
    j["precision"] = m.precision;
    j["recall"] = m.recall;
    return j;
}

// ---------------------------------------------------------------------------
// synth

struct SynthOptions {
    SynthConfig cfg;
    std::string out_dir;
};

inline json run_synth(const SynthOptions& opt) {
    auto result = synth_generate(opt.cfg);
    std::filesystem::create_directories(opt.out_dir);
    save_bundle(result.dataset, opt.out_dir, &result.truth);

    json manifest{{"command", "synth"},
                  {"config", to_json(opt.cfg)},
                  {"seeds", {opt.cfg.seed}},
                  {"inputs", json::object()},
                  {"outputs", {opt.out_dir + "/manifest.json", opt.out_dir + "/tensor.bin",
                               opt.out_dir + "/mask.bin", opt.out_dir + "/statics.bin",
                               opt.out_dir + "/truth.json"}},
                  {"metrics",
                   {{"patients", result.dataset.patients()},
                    {"observed_cells", result.dataset.mask.count_observed()},
                    {"total_cells", result.dataset.mask.size()}}}};
    detail::write_json_file(manifest, opt.out_dir + "/run_manifest.json");
    return manifest;
}

// ---------------------------------------------------------------------------
// ingest

struct IngestOptions {
    std::string temporal_csv, statics_csv, labels_csv, schema_json;
    std::string out_dir;
    bool run_preprocess = true;
    bool per_feature_timepoint = true;
    std::array<double, 3> split_fractions = {0.6, 0.2, 0.2};
    std::uint64_t seed = 0;
};

inline json run_ingest(const IngestOptions& opt) {
    const json schema_j = detail::read_json_file(opt.schema_json);
    CohortSchema schema;
    schema.temporal_features = schema_j.at("temporal_features").get<std::vector<std::string>>();
    schema.static_features = schema_j.at("static_features").get<std::vector<std::string>>();
    schema.outcome_names = schema_j.at("outcomes").get<std::vector<std::string>>();
    schema.windows = schema_j.at("windows").get<std::size_t>();

    auto ing = ingest(read_temporal_csv(opt.temporal_csv), read_statics_csv(opt.statics_csv),
                      read_labels_csv(opt.labels_csv), schema);
    std::vector<std::string> warnings = ing.warnings;
    CohortDataset d = std::move(ing.dataset);
    if (opt.run_preprocess) {
        auto pre = preprocess(d, opt.per_feature_timepoint);
        warnings.insert(warnings.end(), pre.warnings.begin(), pre.warnings.end());
        d = std::move(pre.dataset);
    }
    auto split = stratified_split(d.labels, opt.split_fractions, opt.seed);
    warnings.insert(warnings.end(), split.warnings.begin(), split.warnings.end());
    d.split = split.assignment;

    std::filesystem::create_directories(opt.out_dir);
    save_bundle(d, opt.out_dir);
    json manifest{{"command", "ingest"},
                  {"config",
                   {{"temporal_csv", opt.temporal_csv},
                    {"statics_csv", opt.statics_csv},
                    {"labels_csv", opt.labels_csv},
                    {"schema", opt.schema_json},
                    {"preprocess", opt.run_preprocess},
                    {"per_feature_timepoint", opt.per_feature_timepoint},
                    {"split_fractions", opt.split_fractions}}},
                  {"seeds", {opt.seed}},
                  {"inputs", hash_inputs({opt.temporal_csv, opt.statics_csv, opt.labels_csv,
                                          opt.schema_json})},
                  {"outputs", {opt.out_dir + "/manifest.json"}},
                  {"warnings", warnings},
                  {"metrics", {{"patients", d.patients()}}}};
    detail::write_json_file(manifest, opt.out_dir + "/run_manifest.json");
    return manifest;
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
    std::string dataset_dir, out_dir;
    std::string method = "all_at_once";
    TrainConfig train;
    AlsConfig als;
};

inline json run_train(const TrainOptions& opt) {
    Bundle bundle = load_bundle(opt.dataset_dir);
    FitResult fit = fit_method(bundle.dataset, opt.method, opt.train, opt.als);

    std::filesystem::create_directories(opt.out_dir);
    Checkpoint ck;
    ck.params = std::move(fit.params);
    ck.method = fit.method;
    ck.logreg = fit.logreg;
    ck.train_config = fit.method == "all_at_once" ? to_json(opt.train) : to_json(opt.als);
    save_checkpoint(ck, opt.out_dir + "/checkpoint.json");
    write_history_csv(fit.history, opt.out_dir + "/history.csv");

    json manifest{
        {"command", "train"},
        {"method", fit.method},
        {"config", ck.train_config},
        {"seeds", {fit.method == "all_at_once" ? opt.train.seed : opt.als.seed}},
        {"inputs", hash_inputs({opt.dataset_dir})},
        {"outputs", {opt.out_dir + "/checkpoint.json", opt.out_dir + "/history.csv"}},
        {"metrics",
         {{"steps", fit.history.steps.size()},
          {"termination", fit.history.termination},
          {"final_total", fit.history.steps.empty() ? 0.0 : fit.history.steps.back().loss.total}}}};
    detail::write_json_file(manifest, opt.out_dir + "/run_manifest.json");
    return manifest;
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateOptions {
    std::string checkpoint_path, dataset_dir, out_dir;
    double holdout_fraction = 0.05;
    std::uint64_t holdout_seed = 0;
    bool retrain_for_imputation = true;
    double rf_importance_threshold = 0.10;
    ForestConfig forest;
};

inline json run_evaluate(const EvaluateOptions& opt) {
    Checkpoint ck = load_checkpoint(opt.checkpoint_path);
    Bundle bundle = load_bundle(opt.dataset_dir);
    const CohortDataset& d = bundle.dataset;
    ck.params.check_against(d);
    if (d.split.empty()) throw ParameterError("run_evaluate: dataset has no split assignment");

    const auto train_idx = d.split_indices(Split::Train);
    const auto test_idx = d.split_indices(Split::Test);
    json notices = json::array();

    json classification = json::object();
    json rf_json = json::object();
    json rf_top_json = json::object();
    std::filesystem::create_directories(opt.out_dir);

    if (test_idx.empty()) {
        notices.push_back("classification skipped: empty test split");
    } else {
        const Dense2 test_rows = take_rows(ck.params.factors.A, test_idx);
        const Dense2 probs = method_probabilities(ck.params, ck.logreg, test_rows);
        const Dense2 train_rows = take_rows(ck.params.factors.A, train_idx);

        std::set<std::size_t> top_union;
        std::vector<ForestModel> forests;
        for (std::size_t o = 0; o < 2; ++o) {
            std::vector<double> p(test_idx.size());
            std::vector<std::uint8_t> y(test_idx.size());
            for (std::size_t n = 0; n < test_idx.size(); ++n) {
                p[n] = probs.at(n, o);
                y[n] = d.labels.at(test_idx[n], o);
            }
            classification[d.outcome_names[o]] = metrics_to_json(binary_metrics(p, y));

            std::vector<std::uint8_t> ytr(train_idx.size());
            for (std::size_t n = 0; n < train_idx.size(); ++n)
                ytr[n] = d.labels.at(train_idx[n], o);
            ForestConfig fc = opt.forest;
            fc.seed = detail::splitmix64(opt.forest.seed + o);
            ForestModel model = forest_fit(train_rows, ytr, fc);
            const auto rf_probs = forest_predict_proba(model, test_rows);
            rf_json[d.outcome_names[o]] = metrics_to_json(binary_metrics(rf_probs, y));
            rf_json[d.outcome_names[o]]["importances"] = model.importances;
            for (auto s : top_phenotypes(model, opt.rf_importance_threshold)) top_union.insert(s);
            detail::write_json_file(forest_to_json(model),
                                    opt.out_dir + "/rf_" + d.outcome_names[o] + ".json");
            forests.push_back(std::move(model));
        }

        std::vector<std::size_t> top(top_union.begin(), top_union.end());
        rf_top_json["phenotypes"] = top;
        if (top.empty()) {
            notices.push_back("rf_top skipped: no phenotype importance reached the threshold");
        } else {
            std::vector<std::size_t> cols = top;
            auto select_cols = [&](const Dense2& rows) {
                Dense2 out(rows.rows, cols.size());
                for (std::size_t i = 0; i < rows.rows; ++i)
                    for (std::size_t c = 0; c < cols.size(); ++c)
                        out.at(i, c) = rows.at(i, cols[c]);
                return out;
            };
            const Dense2 train_sel = select_cols(train_rows);
            const Dense2 test_sel = select_cols(test_rows);
            for (std::size_t o = 0; o < 2; ++o) {
                std::vector<std::uint8_t> ytr(train_idx.size()), y(test_idx.size());
                for (std::size_t n = 0; n < train_idx.size(); ++n)
                    ytr[n] = d.labels.at(train_idx[n], o);
                for (std::size_t n = 0; n < test_idx.size(); ++n)
                    y[n] = d.labels.at(test_idx[n], o);
                ForestConfig fc = opt.forest;
                fc.seed = detail::splitmix64(opt.forest.seed + 100 + o);
                ForestModel model = forest_fit(train_sel, ytr, fc);
                rf_top_json[d.outcome_names[o]] =
                    metrics_to_json(binary_metrics(forest_predict_proba(model, test_sel), y));
            }
        }
    }

    // imputation: hide a seeded fraction of observed cells, retrain with the
    // checkpoint's own configuration, score the hidden cells
    json imputation = json::object();
    {
        const Holdout holdout = make_holdout(d.mask, opt.holdout_fraction, opt.holdout_seed);
        ImputationScore score;
        if (opt.retrain_for_imputation) {
            CohortDataset reduced = d;
            reduced.mask = holdout.reduced_mask;
            TrainConfig tc = train_config_from_json(ck.train_config);
            AlsConfig ac = als_config_from_json(ck.train_config);
            FitResult refit = fit_method(reduced, ck.method, tc, ac);
            score = score_imputation(refit.params, d, holdout);
        } else {
            score = score_imputation(ck.params, d, holdout);
        }
        imputation = {{"mae", score.mae},
                      {"rmse", score.rmse},
                      {"held_cells", score.cells},
                      {"holdout_fraction", opt.holdout_fraction},
                      {"holdout_seed", opt.holdout_seed},
                      {"retrained", opt.retrain_for_imputation}};
    }

    json metrics{{"nn", classification},
                 {"rf", rf_json},
                 {"rf_top", rf_top_json},
                 {"imputation", imputation}};
    detail::write_json_file(metrics, opt.out_dir + "/metrics.json");

    // flat CSV of the same numbers
    {
        std::ofstream f(opt.out_dir + "/metrics.csv");
        f.precision(17);
        f << "classifier,outcome,auc,f1,precision,recall\n";
        for (const auto& kind : {"nn", "rf", "rf_top"}) {
            if (!metrics[kind].is_object()) continue;
            for (auto& [key, val] : metrics[kind].items()) {
                if (!val.is_object() || !val.contains("auc")) continue;
                f << kind << ',' << key << ','
                  << (val["auc"].is_null() ? "" : std::to_string(val["auc"].get<double>())) << ','
                  << val["f1"].get<double>() << ',' << val["precision"].get<double>() << ','
                  << val["recall"].get<double>() << '\n';
            }
        }
    }

    json manifest{{"command", "evaluate"},
                  {"config",
                   {{"checkpoint", opt.checkpoint_path},
                    {"dataset", opt.dataset_dir},
                    {"holdout_fraction", opt.holdout_fraction},
                    {"retrain_for_imputation", opt.retrain_for_imputation},
                    {"rf_importance_threshold", opt.rf_importance_threshold},
                    {"rf_trees", opt.forest.n_trees}}},
                  {"seeds", {opt.holdout_seed, opt.forest.seed}},
                  {"inputs", hash_inputs({opt.checkpoint_path, opt.dataset_dir})},
                  {"outputs", {opt.out_dir + "/metrics.json", opt.out_dir + "/metrics.csv"}},
                  {"notices", notices},
                  {"metrics", metrics}};
    detail::write_json_file(manifest, opt.out_dir + "/run_manifest.json");
    return manifest;
}

// ---------------------------------------------------------------------------
// phenotypes

struct PhenotypesOptions {
    std::string checkpoint_path, dataset_dir, out_dir;
    double display_threshold = 0.2;
    MembershipRule rule;
    std::size_t bias_bins = 20;
};

inline json run_phenotypes(const PhenotypesOptions& opt) {
    Checkpoint ck = load_checkpoint(opt.checkpoint_path);
    Bundle bundle = load_bundle(opt.dataset_dir);
    const CohortDataset& d = bundle.dataset;
    ck.params.check_against(d);

    const auto phenotypes = extract_phenotypes(ck.params.factors, d.temporal_features,
                                               d.static_features, opt.display_threshold);
    std::filesystem::create_directories(opt.out_dir);

    json report{{"display_threshold", opt.display_threshold},
                {"membership_rule", opt.rule.describe()},
                {"phenotypes", json::array()}};
    for (const auto& ph : phenotypes) {
        const auto frac = positive_fraction(ph, d.labels, opt.rule);
        json pj{{"index", ph.index},
                {"weight", ph.weight},
                {"temporal_pattern", ph.temporal_pattern},
                {"member_count", frac.member_count}};
        json dt = json::array(), ds = json::array();
        for (const auto& nv : ph.display_temporal) dt.push_back({{"feature", nv.first}, {"contribution", nv.second}});
        for (const auto& nv : ph.display_static) ds.push_back({{"feature", nv.first}, {"contribution", nv.second}});
        pj["temporal_features"] = std::move(dt);
        pj["static_features"] = std::move(ds);
        if (frac.defined) {
            pj["positive_fraction"] = {{d.outcome_names[0], frac.fraction[0]},
                                       {d.outcome_names[1], frac.fraction[1]}};
        } else {
            pj["positive_fraction"] = nullptr;  // no members under the rule
        }
        report["phenotypes"].push_back(std::move(pj));
    }

    const auto bias = bias_summary(ck.params.biases, d.temporal_features, opt.bias_bins);
    json bias_j{{"patient_histogram", json::array()}, {"feature_table", json::array()}};
    for (const auto& b : bias.patient_histogram)
        bias_j["patient_histogram"].push_back({{"lo", b.lo}, {"hi", b.hi}, {"count", b.count}});
    for (const auto& nv : bias.feature_table)
        bias_j["feature_table"].push_back({{"feature", nv.first}, {"bias", nv.second}});
    report["bias"] = std::move(bias_j);
    detail::write_json_file(report, opt.out_dir + "/report.json");

    // plot-ready CSVs
    {
        std::ofstream f(opt.out_dir + "/temporal_patterns.csv");
        f.precision(17);
        f << "timepoint";
        for (const auto& ph : phenotypes) f << ",phenotype_" << ph.index;
        f << '\n';
        for (std::size_t k = 0; k < d.timepoints(); ++k) {
            f << d.timepoint_names[k];
            for (const auto& ph : phenotypes) f << ',' << ph.temporal_pattern[k];
            f << '\n';
        }
    }
    {
        std::ofstream f(opt.out_dir + "/trajectories.csv");
        f.precision(17);
        f << "phenotype,feature,timepoint,mean_observed\n";
        for (const auto& ph : phenotypes) {
            for (const auto& nv : ph.display_temporal) {
                const auto it = std::find(d.temporal_features.begin(), d.temporal_features.end(),
                                          nv.first);
                const std::size_t j =
                    static_cast<std::size_t>(it - d.temporal_features.begin());
                const auto traj = mean_trajectory(ph, d, j, opt.rule);
                for (std::size_t k = 0; k < traj.size(); ++k) {
                    f << ph.index << ',' << nv.first << ',' << d.timepoint_names[k] << ',';
                    if (traj[k]) f << *traj[k];
                    f << '\n';
                }
            }
        }
    }
    {
        std::ofstream f(opt.out_dir + "/bias_histogram.csv");
        f.precision(17);
        f << "lo,hi,count\n";
        for (const auto& b : bias.patient_histogram)
            f << b.lo << ',' << b.hi << ',' << b.count << '\n';
    }
    {
        std::ofstream f(opt.out_dir + "/bias_features.csv");
        f.precision(17);
        f << "feature,bias\n";
        for (const auto& nv : bias.feature_table) f << nv.first << ',' << nv.second << '\n';
    }

    json manifest{{"command", "phenotypes"},
                  {"config",
                   {{"checkpoint", opt.checkpoint_path},
                    {"dataset", opt.dataset_dir},
                    {"display_threshold", opt.display_threshold},
                    {"membership_rule", opt.rule.describe()},
                    {"bias_bins", opt.bias_bins}}},
                  {"seeds", json::array()},
                  {"inputs", hash_inputs({opt.checkpoint_path, opt.dataset_dir})},
                  {"outputs",
                   {opt.out_dir + "/report.json", opt.out_dir + "/temporal_patterns.csv",
                    opt.out_dir + "/trajectories.csv", opt.out_dir + "/bias_histogram.csv",
                    opt.out_dir + "/bias_features.csv"}},
                  {"metrics", {{"phenotypes", phenotypes.size()}}}};
    detail::write_json_file(manifest, opt.out_dir + "/run_manifest.json");
    return manifest;
}

// ---------------------------------------------------------------------------
// grid search

struct GridSpec {
    std::vector<std::size_t> ranks;
    std::vector<double> lambdas, learning_rates, l1_weights;

    // Default search space: ranks 10..32 step 2, lambda 0.5..0.9 step 0.1,
    // lr {0.001, 0.01, 0.1}, l1 {0, 0.001, 0.01, 0.1} -> 720 cells.
    static GridSpec default_grid() {
        GridSpec g;
        for (std::size_t r = 10; r <= 32; r += 2) g.ranks.push_back(r);
        g.lambdas = {0.5, 0.6, 0.7, 0.8, 0.9};
        g.learning_rates = {0.001, 0.01, 0.1};
        g.l1_weights = {0.0, 0.001, 0.01, 0.1};
        return g;
    }

    std::size_t cells() const {
        return ranks.size() * lambdas.size() * learning_rates.size() * l1_weights.size();
    }
};

inline json to_json(const GridSpec& g) {
    return json{{"ranks", g.ranks},
                {"lambdas", g.lambdas},
                {"learning_rates", g.learning_rates},
                {"l1_weights", g.l1_weights}};
}

inline GridSpec grid_spec_from_json(const json& j) {
    GridSpec g = GridSpec::default_grid();
    if (j.contains("ranks")) g.ranks = j["ranks"].get<std::vector<std::size_t>>();
    if (j.contains("lambdas")) g.lambdas = j["lambdas"].get<std::vector<double>>();
    if (j.contains("learning_rates"))
        g.learning_rates = j["learning_rates"].get<std::vector<double>>();
    if (j.contains("l1_weights")) g.l1_weights = j["l1_weights"].get<std::vector<double>>();
    return g;
}

struct GridOptions {
    std::string dataset_dir, out_dir;
    GridSpec grid = GridSpec::default_grid();
    TrainConfig base;  // steps/seed/scheduler shared across cells
    double holdout_fraction = 0.05;
    std::uint64_t holdout_seed = 0;
    std::size_t workers = 1;
};

struct GridCellResult {
    std::size_t rank = 0;
    double lambda = 0.0, learning_rate = 0.0, l1_weight = 0.0;
    double val_auc_mean = std::numeric_limits<double>::quiet_NaN();
    double val_auc_y1 = std::numeric_limits<double>::quiet_NaN();
    double val_auc_y2 = std::numeric_limits<double>::quiet_NaN();
    ImputationScore imputation;
    std::string status = "ok";
};

namespace detail {
// Runs `tasks` jobs on up to `workers` threads; each job owns its result slot.
inline void parallel_for(std::size_t tasks, std::size_t workers,
                         const std::function<void(std::size_t)>& body) {
    if (workers <= 1 || tasks <= 1) {
        for (std::size_t i = 0; i < tasks; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    const std::size_t n_threads = std::min(workers, tasks);
    pool.reserve(n_threads);
    for (std::size_t t = 0; t < n_threads; ++t)
        pool.emplace_back([&] {
            for (std::size_t i = next.fetch_add(1); i < tasks; i = next.fetch_add(1)) body(i);
        });
    for (auto& th : pool) th.join();
}
}  // namespace detail

inline json run_grid(const GridOptions& opt) {
    Bundle bundle = load_bundle(opt.dataset_dir);
    const CohortDataset& d = bundle.dataset;
    if (d.split.empty()) throw ParameterError("run_grid: dataset has no split assignment");
    const auto val_idx = d.split_indices(Split::Val);
    if (val_idx.empty()) throw ParameterError("run_grid: empty validation split");

    // one shared holdout so every cell is scored on the same hidden cells
    const Holdout holdout = make_holdout(d.mask, opt.holdout_fraction, opt.holdout_seed);
    CohortDataset reduced = d;
    reduced.mask = holdout.reduced_mask;

    std::vector<GridCellResult> results(opt.grid.cells());
    std::vector<std::array<double, 4>> cells;
    cells.reserve(results.size());
    for (auto r : opt.grid.ranks)
        for (auto lam : opt.grid.lambdas)
            for (auto lr : opt.grid.learning_rates)
                for (auto l1 : opt.grid.l1_weights)
                    cells.push_back({static_cast<double>(r), lam, lr, l1});

    detail::parallel_for(cells.size(), opt.workers, [&](std::size_t i) {
        GridCellResult& res = results[i];
        res.rank = static_cast<std::size_t>(cells[i][0]);
        res.lambda = cells[i][1];
        res.learning_rate = cells[i][2];
        res.l1_weight = cells[i][3];
        try {
            TrainConfig tc = opt.base;
            tc.rank = res.rank;
            tc.lambda = res.lambda;
            tc.learning_rate = res.learning_rate;
            tc.l1_weight = res.l1_weight;
            auto [params, hist] = train(reduced, tc);

            const Dense2 val_rows = take_rows(params.factors.A, val_idx);
            const Dense2 probs = method_probabilities(params, std::nullopt, val_rows);
            double aucs[2];
            for (std::size_t o = 0; o < 2; ++o) {
                std::vector<double> p(val_idx.size());
                std::vector<std::uint8_t> y(val_idx.size());
                for (std::size_t n = 0; n < val_idx.size(); ++n) {
                    p[n] = probs.at(n, o);
                    y[n] = d.labels.at(val_idx[n], o);
                }
                aucs[o] = roc_auc(p, y);
            }
            res.val_auc_y1 = aucs[0];
            res.val_auc_y2 = aucs[1];
            res.val_auc_mean = 0.5 * (aucs[0] + aucs[1]);
            res.imputation = score_imputation(params, d, holdout);
        } catch (const std::exception& e) {
            res.status = std::string("failed: ") + e.what();
        }
    });

    // rank cells: validation AUC first, imputation MAE as tie-break
    std::vector<std::size_t> order(results.size());
    std::iota(order.begin(), order.end(), 0);
    auto key_ok = [&](std::size_t i) {
        return results[i].status == "ok" && !std::isnan(results[i].val_auc_mean);
    };
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (key_ok(a) != key_ok(b)) return key_ok(a);
        if (!key_ok(a)) return false;
        if (results[a].val_auc_mean != results[b].val_auc_mean)
            return results[a].val_auc_mean > results[b].val_auc_mean;
        return results[a].imputation.mae < results[b].imputation.mae;
    });

    std::filesystem::create_directories(opt.out_dir);
    {
        std::ofstream f(opt.out_dir + "/grid_results.csv");
        f.precision(17);
        f << "rank,lambda,learning_rate,l1_weight,val_auc_mean,val_auc_y1,val_auc_y2,"
             "imputation_mae,imputation_rmse,status\n";
        for (auto i : order) {
            const auto& r = results[i];
            f << r.rank << ',' << r.lambda << ',' << r.learning_rate << ',' << r.l1_weight << ','
              << r.val_auc_mean << ',' << r.val_auc_y1 << ',' << r.val_auc_y2 << ','
              << r.imputation.mae << ',' << r.imputation.rmse << ',' << r.status << '\n';
        }
    }

    const GridCellResult& best = results[order.front()];
    json manifest{{"command", "grid"},
                  {"config",
                   {{"grid", to_json(opt.grid)},
                    {"base", to_json(opt.base)},
                    {"holdout_fraction", opt.holdout_fraction},
                    {"workers", opt.workers},
                    {"selection", "val_auc_mean desc, imputation_mae asc"}}},
                  {"seeds", {opt.base.seed, opt.holdout_seed}},
                  {"inputs", hash_inputs({opt.dataset_dir})},
                  {"outputs", {opt.out_dir + "/grid_results.csv"}},
                  {"metrics",
                   {{"cells", results.size()},
                    {"best",
                     {{"rank", best.rank},
                      {"lambda", best.lambda},
                      {"learning_rate", best.learning_rate},
                      {"l1_weight", best.l1_weight},
                      {"val_auc_mean", std::isnan(best.val_auc_mean) ? json()
                                                                     : json(best.val_auc_mean)},
                      {"imputation_mae", best.imputation.mae},
                      {"imputation_rmse", best.imputation.rmse}}}}}};
    detail::write_json_file(manifest, opt.out_dir + "/run_manifest.json");
    return manifest;
}

// ---------------------------------------------------------------------------
// compare

struct CompareOptions {
    std::string dataset_dir, out_dir;
    std::vector<std::uint64_t> seeds = {0};
    std::vector<std::string> methods = {"all_at_once", "als", "als_bias"};
    TrainConfig base;
    AlsConfig als_base;
    double holdout_fraction = 0.05;
    std::size_t workers = 1;
};

struct CompareRun {
    std::string method;
    std::uint64_t seed = 0;
    BinaryMetrics outcome[2];
    ImputationScore imputation;
    std::string status = "ok";
};

inline json run_compare(const CompareOptions& opt) {
    if (opt.seeds.empty()) throw ParameterError("run_compare: need at least one seed");
    Bundle bundle = load_bundle(opt.dataset_dir);
    const CohortDataset& d = bundle.dataset;
    if (d.split.empty()) throw ParameterError("run_compare: dataset has no split assignment");
    const auto test_idx = d.split_indices(Split::Test);

    std::vector<CompareRun> runs(opt.methods.size() * opt.seeds.size());
    detail::parallel_for(runs.size(), opt.workers, [&](std::size_t i) {
        CompareRun& run = runs[i];
        run.method = opt.methods[i / opt.seeds.size()];
        run.seed = opt.seeds[i % opt.seeds.size()];
        try {
            const Holdout holdout = make_holdout(d.mask, opt.holdout_fraction, run.seed);
            CohortDataset reduced = d;
            reduced.mask = holdout.reduced_mask;
            TrainConfig tc = opt.base;
            tc.seed = run.seed;
            AlsConfig ac = opt.als_base;
            ac.seed = run.seed;
            FitResult fit = fit_method(reduced, run.method, tc, ac);
            run.imputation = score_imputation(fit.params, d, holdout);
            for (auto& m : run.outcome) m.auc = std::numeric_limits<double>::quiet_NaN();
            if (!test_idx.empty()) {
                const Dense2 rows = take_rows(fit.params.factors.A, test_idx);
                const Dense2 probs = method_probabilities(fit.params, fit.logreg, rows);
                for (std::size_t o = 0; o < 2; ++o) {
                    std::vector<double> p(test_idx.size());
                    std::vector<std::uint8_t> y(test_idx.size());
                    for (std::size_t n = 0; n < test_idx.size(); ++n) {
                        p[n] = probs.at(n, o);
                        y[n] = d.labels.at(test_idx[n], o);
                    }
                    run.outcome[o] = binary_metrics(p, y);
                }
            }
        } catch (const std::exception& e) {
            run.status = std::string("failed: ") + e.what();
        }
    });

    std::filesystem::create_directories(opt.out_dir);
    {
        std::ofstream f(opt.out_dir + "/runs.csv");
        f.precision(17);
        f << "method,seed,auc_" << d.outcome_names[0] << ",auc_" << d.outcome_names[1]
          << ",imputation_mae,imputation_rmse,status\n";
        for (const auto& r : runs)
            f << r.method << ',' << r.seed << ',' << r.outcome[0].auc << ',' << r.outcome[1].auc
              << ',' << r.imputation.mae << ',' << r.imputation.rmse << ',' << r.status << '\n';
    }

    // aggregate mean/sd per method, Table-3 shape: one row per metric, one
    // column group per method
    auto agg = [&](const std::string& method, auto getter) {
        std::vector<double> vals;
        for (const auto& r : runs)
            if (r.method == method && r.status == "ok") {
                const double v = getter(r);
                if (!std::isnan(v)) vals.push_back(v);
            }
        double mean = std::numeric_limits<double>::quiet_NaN(), sd = 0.0;
        if (!vals.empty()) {
            mean = 0.0;
            for (double v : vals) mean += v;
            mean /= static_cast<double>(vals.size());
            for (double v : vals) sd += (v - mean) * (v - mean);
            sd = vals.size() > 1 ? std::sqrt(sd / static_cast<double>(vals.size() - 1)) : 0.0;
        }
        return std::pair<double, double>(mean, sd);
    };

    struct MetricDef {
        std::string name;
        std::function<double(const CompareRun&)> get;
    };
    std::vector<MetricDef> defs;
    for (std::size_t o = 0; o < 2; ++o) {
        const std::string suffix = "_" + d.outcome_names[o];
        defs.push_back({"auc" + suffix, [o](const CompareRun& r) { return r.outcome[o].auc; }});
        defs.push_back({"f1" + suffix, [o](const CompareRun& r) { return r.outcome[o].f1; }});
        defs.push_back(
            {"precision" + suffix, [o](const CompareRun& r) { return r.outcome[o].precision; }});
        defs.push_back(
            {"recall" + suffix, [o](const CompareRun& r) { return r.outcome[o].recall; }});
    }
    defs.push_back({"imputation_mae", [](const CompareRun& r) { return r.imputation.mae; }});
    defs.push_back({"imputation_rmse", [](const CompareRun& r) { return r.imputation.rmse; }});

    json table = json::array();
    {
        std::ofstream f(opt.out_dir + "/comparison.csv");
        f.precision(17);
        f << "metric";
        for (const auto& m : opt.methods) f << ',' << m << "_mean," << m << "_sd";
        f << '\n';
        for (const auto& def : defs) {
            f << def.name;
            json row{{"metric", def.name}};
            for (const auto& m : opt.methods) {
                auto [mean, sd] = agg(m, def.get);
                f << ',' << mean << ',' << sd;
                row[m] = {{"mean", std::isnan(mean) ? json() : json(mean)}, {"sd", sd}};
            }
            f << '\n';
            table.push_back(std::move(row));
        }
    }

    // paired sign test on imputation MAE: als vs als_bias, when both ran
    json sign_test = json();
    {
        std::vector<double> als_mae(opt.seeds.size(), std::nan("")),
            bias_mae(opt.seeds.size(), std::nan(""));
        for (const auto& r : runs) {
            if (r.status != "ok") continue;
            for (std::size_t s = 0; s < opt.seeds.size(); ++s) {
                if (r.seed != opt.seeds[s]) continue;
                if (r.method == "als") als_mae[s] = r.imputation.mae;
                if (r.method == "als_bias") bias_mae[s] = r.imputation.mae;
            }
        }
        std::size_t wins = 0, n = 0;
        for (std::size_t s = 0; s < opt.seeds.size(); ++s) {
            if (std::isnan(als_mae[s]) || std::isnan(bias_mae[s]) || als_mae[s] == bias_mae[s])
                continue;
            ++n;
            if (als_mae[s] > bias_mae[s]) ++wins;
        }
        if (n > 0)
            sign_test = {{"comparison", "als_mae > als_bias_mae"},
                         {"wins", wins},
                         {"pairs", n},
                         {"p_value", sign_test_p(wins, n)}};
    }

    json manifest{{"command", "compare"},
                  {"config",
                   {{"methods", opt.methods},
                    {"base", to_json(opt.base)},
                    {"als_base", to_json(opt.als_base)},
                    {"holdout_fraction", opt.holdout_fraction},
                    {"workers", opt.workers}}},
                  {"seeds", opt.seeds},
                  {"inputs", hash_inputs({opt.dataset_dir})},
                  {"outputs", {opt.out_dir + "/runs.csv", opt.out_dir + "/comparison.csv"}},
                  {"metrics", {{"table", table}, {"sign_test", sign_test}}}};
    detail::write_json_file(manifest, opt.out_dir + "/run_manifest.json");
    return manifest;
}

}  // namespace cmtf
