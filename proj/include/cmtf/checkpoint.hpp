#pragma once

// JSON checkpoints for trained parameters, the dataset bundle directory
// format, and the forest export. Bundles hold a manifest.json (dims, names,
// labels, split, normalization parameters) next to binary tensor/mask/static
// containers and, for synthetic cohorts, a ground-truth file.

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "cmtf/als.hpp"
#include "cmtf/data.hpp"
#include "cmtf/errors.hpp"
#include "cmtf/forest.hpp"
#include "cmtf/model.hpp"

#include "json.hpp"

namespace cmtf {

using json = nlohmann::json;

namespace detail {
inline json dense2_to_json(const Dense2& m) {
    return json{{"rows", m.rows}, {"cols", m.cols}, {"values", m.v}};
}

inline Dense2 dense2_from_json(const json& j) {
    Dense2 m(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>());
    const auto vals = j.at("values").get<std::vector<double>>();
    if (vals.size() != m.v.size()) throw SchemaError("dense2_from_json: value count mismatch");
    m.v = vals;
    return m;
}

inline void write_json_file(const json& j, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw SchemaError("cannot open " + path + " for writing");
    f << j.dump(2) << '\n';
}

inline json read_json_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw SchemaError("cannot open " + path);
    json j;
    try {
        f >> j;
    } catch (const std::exception& e) {
        throw SchemaError("invalid JSON in " + path + ": " + e.what());
    }
    return j;
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Checkpoints

struct Checkpoint {
    ModelParams params;
    std::string method = "all_at_once";
    bool normalized = true;              // factors column-normalized at save time
    std::optional<LogRegParams> logreg;  // present for the block-alternating methods
    json train_config;                   // numeric echo of the training configuration
};

inline json classifier_to_json(const ClassifierParams& p) {
    return json{{"in_dim", p.in_dim},
                {"W1", p.W1.v},
                {"b1", p.b1},
                {"bn_gamma", p.bn_gamma},
                {"bn_beta", p.bn_beta},
                {"bn_running_mean", p.bn_running_mean},
                {"bn_running_var", p.bn_running_var},
                {"W2", p.W2.v},
                {"b2", p.b2},
                {"bn_eps", p.bn_eps},
                {"bn_momentum", p.bn_momentum}};
}

inline ClassifierParams classifier_from_json(const json& j) {
    ClassifierParams p;
    p.in_dim = j.at("in_dim").get<std::size_t>();
    p.W1 = Dense2(p.in_dim, ClassifierParams::kHidden);
    p.W1.v = j.at("W1").get<std::vector<double>>();
    p.b1 = j.at("b1").get<std::vector<double>>();
    p.bn_gamma = j.at("bn_gamma").get<std::vector<double>>();
    p.bn_beta = j.at("bn_beta").get<std::vector<double>>();
    p.bn_running_mean = j.at("bn_running_mean").get<std::vector<double>>();
    p.bn_running_var = j.at("bn_running_var").get<std::vector<double>>();
    p.W2 = Dense2(ClassifierParams::kHidden, ClassifierParams::kOutputs);
    p.W2.v = j.at("W2").get<std::vector<double>>();
    p.b2 = j.at("b2").get<std::vector<double>>();
    p.bn_eps = j.at("bn_eps").get<double>();
    p.bn_momentum = j.at("bn_momentum").get<double>();
    if (p.W1.v.size() != p.in_dim * ClassifierParams::kHidden)
        throw SchemaError("classifier_from_json: W1 size mismatch");
    return p;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    const FactorSet& f = ck.params.factors;
    json j{{"format", "cmtf-checkpoint-1"},
           {"method", ck.method},
           {"normalized", ck.normalized},
           {"dims",
            {{"patients", f.A.rows},
             {"temporal_features", f.B.rows},
             {"timepoints", f.C.rows},
             {"static_features", f.D.rows}}},
           {"rank", f.rank},
           {"w", f.w},
           {"A", f.A.v},
           {"B", f.B.v},
           {"C", f.C.v},
           {"D", f.D.v},
           {"b_feat", ck.params.biases.feature},
           {"b_pat", ck.params.biases.patient},
           {"head", classifier_to_json(ck.params.head)},
           {"train_config", ck.train_config}};
    if (ck.logreg) {
        j["logreg"] = {{"weights", ck.logreg->weights.v},
                       {"intercept", std::vector<double>{ck.logreg->intercept[0],
                                                         ck.logreg->intercept[1]}}};
    }
    detail::write_json_file(j, path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    const json j = detail::read_json_file(path);
    if (j.value("format", "") != "cmtf-checkpoint-1")
        throw SchemaError("load_checkpoint: unrecognized format in " + path);
    Checkpoint ck;
    ck.method = j.at("method").get<std::string>();
    ck.normalized = j.value("normalized", true);
    const auto& dims = j.at("dims");
    const std::size_t I = dims.at("patients").get<std::size_t>();
    const std::size_t J = dims.at("temporal_features").get<std::size_t>();
    const std::size_t K = dims.at("timepoints").get<std::size_t>();
    const std::size_t S = dims.at("static_features").get<std::size_t>();
    const std::size_t r = j.at("rank").get<std::size_t>();

    ck.params.factors = FactorSet(I, J, K, S, r);
    ck.params.factors.w = j.at("w").get<std::vector<double>>();
    ck.params.factors.A.v = j.at("A").get<std::vector<double>>();
    ck.params.factors.B.v = j.at("B").get<std::vector<double>>();
    ck.params.factors.C.v = j.at("C").get<std::vector<double>>();
    ck.params.factors.D.v = j.at("D").get<std::vector<double>>();
    if (ck.params.factors.w.size() != r || ck.params.factors.A.v.size() != I * r ||
        ck.params.factors.B.v.size() != J * r || ck.params.factors.C.v.size() != K * r ||
        ck.params.factors.D.v.size() != S * r)
        throw SchemaError("load_checkpoint: factor sizes inconsistent in " + path);
    ck.params.biases.feature = j.at("b_feat").get<std::vector<double>>();
    ck.params.biases.patient = j.at("b_pat").get<std::vector<double>>();
    ck.params.head = classifier_from_json(j.at("head"));
    ck.train_config = j.value("train_config", json::object());
    if (j.contains("logreg")) {
        LogRegParams lr;
        lr.weights = Dense2(r, 2);
        lr.weights.v = j["logreg"].at("weights").get<std::vector<double>>();
        const auto ic = j["logreg"].at("intercept").get<std::vector<double>>();
        if (lr.weights.v.size() != r * 2 || ic.size() != 2)
            throw SchemaError("load_checkpoint: logreg sizes inconsistent in " + path);
        lr.intercept = {ic[0], ic[1]};
        ck.logreg = std::move(lr);
    }
    return ck;
}

// ---------------------------------------------------------------------------
// Dataset bundles

inline json ground_truth_to_json(const GroundTruth& t) {
    return json{{"rank", t.factors.rank},
                {"w", t.factors.w},
                {"A", detail::dense2_to_json(t.factors.A)},
                {"B", detail::dense2_to_json(t.factors.B)},
                {"C", detail::dense2_to_json(t.factors.C)},
                {"D", detail::dense2_to_json(t.factors.D)},
                {"b_feat", t.biases.feature},
                {"b_pat", t.biases.patient},
                {"label_components_y1", t.label_components_y1},
                {"label_components_y2", t.label_components_y2}};
}

inline GroundTruth ground_truth_from_json(const json& j) {
    GroundTruth t;
    t.factors.rank = j.at("rank").get<std::size_t>();
    t.factors.w = j.at("w").get<std::vector<double>>();
    t.factors.A = detail::dense2_from_json(j.at("A"));
    t.factors.B = detail::dense2_from_json(j.at("B"));
    t.factors.C = detail::dense2_from_json(j.at("C"));
    t.factors.D = detail::dense2_from_json(j.at("D"));
    t.biases.feature = j.at("b_feat").get<std::vector<double>>();
    t.biases.patient = j.at("b_pat").get<std::vector<double>>();
    t.label_components_y1 = j.at("label_components_y1").get<std::vector<std::size_t>>();
    t.label_components_y2 = j.at("label_components_y2").get<std::vector<std::size_t>>();
    return t;
}

namespace detail {
inline json norm_params_to_json(const NormalizationParams& n) {
    return json{{"per_feature_timepoint", n.per_feature_timepoint},
                {"t_mean", dense2_to_json(n.t_mean)},
                {"t_sd", dense2_to_json(n.t_sd)},
                {"t_min", dense2_to_json(n.t_min)},
                {"t_max", dense2_to_json(n.t_max)},
                {"s_mean", n.s_mean},
                {"s_sd", n.s_sd},
                {"s_min", n.s_min},
                {"s_max", n.s_max}};
}

inline NormalizationParams norm_params_from_json(const json& j) {
    NormalizationParams n;
    n.per_feature_timepoint = j.at("per_feature_timepoint").get<bool>();
    n.t_mean = dense2_from_json(j.at("t_mean"));
    n.t_sd = dense2_from_json(j.at("t_sd"));
    n.t_min = dense2_from_json(j.at("t_min"));
    n.t_max = dense2_from_json(j.at("t_max"));
    n.s_mean = j.at("s_mean").get<std::vector<double>>();
    n.s_sd = j.at("s_sd").get<std::vector<double>>();
    n.s_min = j.at("s_min").get<std::vector<double>>();
    n.s_max = j.at("s_max").get<std::vector<double>>();
    return n;
}
}  // namespace detail

struct Bundle {
    CohortDataset dataset;
    std::optional<GroundTruth> truth;
};

inline void save_bundle(const CohortDataset& d, const std::string& dir,
                        const GroundTruth* truth = nullptr) {
    d.check_consistent();
    std::filesystem::create_directories(dir);
    write_binary(d.tensor, dir + "/tensor.bin");
    write_binary(d.mask, dir + "/mask.bin");
    write_binary(d.statics, dir + "/statics.bin");

    std::vector<int> labels_flat, missing_flat, split_flat;
    for (std::size_t i = 0; i < d.patients(); ++i)
        for (std::size_t o = 0; o < 2; ++o) {
            labels_flat.push_back(d.labels.at(i, o));
            missing_flat.push_back(d.label_missing.at(i, o));
        }
    for (auto s : d.split) split_flat.push_back(static_cast<int>(s));

    json manifest{{"format", "cmtf-bundle-1"},
                  {"dims",
                   {{"patients", d.patients()},
                    {"temporal_features", d.features()},
                    {"timepoints", d.timepoints()},
                    {"static_features", d.statics_count()}}},
                  {"patient_ids", d.patient_ids},
                  {"temporal_features", d.temporal_features},
                  {"timepoint_names", d.timepoint_names},
                  {"static_features", d.static_features},
                  {"outcome_names", d.outcome_names},
                  {"labels", labels_flat},
                  {"label_missing", missing_flat},
                  {"split", split_flat},
                  {"normalized", d.normalized}};
    if (d.normalized && d.norm.t_mean.size() > 0)
        manifest["normalization"] = detail::norm_params_to_json(d.norm);
    detail::write_json_file(manifest, dir + "/manifest.json");

    if (truth) detail::write_json_file(ground_truth_to_json(*truth), dir + "/truth.json");
}

inline Bundle load_bundle(const std::string& dir) {
    const json manifest = detail::read_json_file(dir + "/manifest.json");
    if (manifest.value("format", "") != "cmtf-bundle-1")
        throw SchemaError("load_bundle: unrecognized bundle format in " + dir);

    Bundle b;
    CohortDataset& d = b.dataset;
    d.tensor = read_binary_dense3(dir + "/tensor.bin");
    d.mask = read_binary_mask3(dir + "/mask.bin");
    d.statics = read_binary_dense2(dir + "/statics.bin");
    d.patient_ids = manifest.at("patient_ids").get<std::vector<std::string>>();
    d.temporal_features = manifest.at("temporal_features").get<std::vector<std::string>>();
    d.timepoint_names = manifest.at("timepoint_names").get<std::vector<std::string>>();
    d.static_features = manifest.at("static_features").get<std::vector<std::string>>();
    d.outcome_names = manifest.at("outcome_names").get<std::vector<std::string>>();

    const auto labels_flat = manifest.at("labels").get<std::vector<int>>();
    const auto missing_flat = manifest.at("label_missing").get<std::vector<int>>();
    if (labels_flat.size() != d.patients() * 2 || missing_flat.size() != d.patients() * 2)
        throw SchemaError("load_bundle: label array sizes inconsistent in " + dir);
    d.labels = LabelMatrix(d.patients(), 2);
    d.label_missing = LabelMatrix(d.patients(), 2);
    for (std::size_t i = 0; i < d.patients(); ++i)
        for (std::size_t o = 0; o < 2; ++o) {
            d.labels.at(i, o) = static_cast<std::uint8_t>(labels_flat[i * 2 + o]);
            d.label_missing.at(i, o) = static_cast<std::uint8_t>(missing_flat[i * 2 + o]);
        }

    const auto split_flat = manifest.at("split").get<std::vector<int>>();
    for (int s : split_flat) {
        if (s < 0 || s > 2) throw SchemaError("load_bundle: bad split tag in " + dir);
        d.split.push_back(static_cast<Split>(s));
    }
    d.normalized = manifest.at("normalized").get<bool>();
    if (manifest.contains("normalization"))
        d.norm = detail::norm_params_from_json(manifest["normalization"]);
    d.check_consistent();

    if (std::filesystem::exists(dir + "/truth.json"))
        b.truth = ground_truth_from_json(detail::read_json_file(dir + "/truth.json"));
    return b;
}

// ---------------------------------------------------------------------------
// Forest export

inline json forest_to_json(const ForestModel& m) {
    json trees = json::array();
    for (const auto& t : m.trees) {
        json nodes = json::array();
        for (const auto& nd : t.nodes)
            nodes.push_back({{"feature", nd.feature},
                             {"threshold", nd.threshold},
                             {"left", nd.left},
                             {"right", nd.right},
                             {"p1", nd.p1}});
        trees.push_back(std::move(nodes));
    }
    return json{{"n_features", m.n_features},
                {"importances", m.importances},
                {"trees", std::move(trees)}};
}

}  // namespace cmtf
