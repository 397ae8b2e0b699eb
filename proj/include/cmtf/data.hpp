#pragma once

// Cohort container and the data pipeline: long-record ingestion, the
// preprocessing chain (patient dropping, static mean imputation,
// missing-outcome fill, per-timepoint standardization and [0,1] scaling),
// stratified splitting, and a synthetic cohort generator with planted
// factors, biases, and label structure.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "cmtf/bias.hpp"
#include "cmtf/errors.hpp"
#include "cmtf/factor_set.hpp"
#include "cmtf/rng.hpp"
#include "cmtf/tensor.hpp"

namespace cmtf {

enum class Split : std::uint8_t { Train = 0, Val = 1, Test = 2 };

inline const char* split_name(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        default: return "test";
    }
}

// Standardization/scaling parameters captured by preprocess so imputed values
// can be mapped back to original units.
struct NormalizationParams {
    bool per_feature_timepoint = true;
    Dense2 t_mean, t_sd, t_min, t_max;  // J x K (per feature-timepoint cell)
    std::vector<double> s_mean, s_sd, s_min, s_max;
};

struct CohortDataset {
    Dense3 tensor;   // patients x temporal features x timepoints
    Mask3 mask;      // 1 where the tensor entry was observed
    Dense2 statics;  // patients x static features; NaN marks missing before preprocess
    LabelMatrix labels;
    LabelMatrix label_missing;  // 1 where the outcome was absent in the input

    std::vector<std::string> patient_ids, temporal_features, timepoint_names, static_features,
        outcome_names;
    std::vector<Split> split;

    bool normalized = false;
    NormalizationParams norm;

    std::size_t patients() const { return tensor.d0; }
    std::size_t features() const { return tensor.d1; }
    std::size_t timepoints() const { return tensor.d2; }
    std::size_t statics_count() const { return statics.cols; }

    std::vector<std::size_t> split_indices(Split which) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < split.size(); ++i)
            if (split[i] == which) out.push_back(i);
        return out;
    }

    void check_consistent() const {
        if (!mask.same_dims(tensor)) throw DimensionError("CohortDataset: mask/tensor dims differ");
        if (statics.rows != tensor.d0) throw DimensionError("CohortDataset: statics rows differ");
        if (labels.rows != tensor.d0) throw DimensionError("CohortDataset: label rows differ");
        if (!split.empty() && split.size() != tensor.d0)
            throw DimensionError("CohortDataset: split length differs");
    }
};

// ---------------------------------------------------------------------------
// Ingestion

struct TemporalRecord {
    std::string patient, feature;
    long window;
    double value;
};
struct StaticRecord {
    std::string patient, feature;
    double value;
};
struct LabelRecord {
    std::string patient, outcome;
    double value;
};

struct CohortSchema {
    std::vector<std::string> temporal_features;
    std::vector<std::string> static_features;
    std::vector<std::string> outcome_names;  // two outcomes expected
    std::size_t windows = 0;
};

struct IngestResult {
    CohortDataset dataset;
    std::vector<std::string> warnings;
};

// Builds the cohort containers from long records. Patients are the sorted
// union of ids across all three record sets. Duplicate cells are averaged
// with a warning; unknown features, windows, or outcomes raise SchemaError
// naming the record.
inline IngestResult ingest(const std::vector<TemporalRecord>& temporal,
                           const std::vector<StaticRecord>& statics,
                           const std::vector<LabelRecord>& labels, const CohortSchema& schema) {
    if (schema.windows == 0) throw ParameterError("ingest: schema.windows must be >= 1");
    if (schema.outcome_names.size() != 2)
        throw ParameterError("ingest: exactly two outcomes expected");

    std::map<std::string, std::size_t> fidx, sidx, oidx;
    for (std::size_t j = 0; j < schema.temporal_features.size(); ++j)
        fidx[schema.temporal_features[j]] = j;
    for (std::size_t s = 0; s < schema.static_features.size(); ++s)
        sidx[schema.static_features[s]] = s;
    for (std::size_t o = 0; o < schema.outcome_names.size(); ++o)
        oidx[schema.outcome_names[o]] = o;

    std::map<std::string, std::size_t> pidx;
    for (const auto& r : temporal) pidx.emplace(r.patient, 0);
    for (const auto& r : statics) pidx.emplace(r.patient, 0);
    for (const auto& r : labels) pidx.emplace(r.patient, 0);
    if (pidx.empty()) throw SchemaError("ingest: no records");
    {
        std::size_t i = 0;
        for (auto& kv : pidx) kv.second = i++;
    }

    const std::size_t I = pidx.size(), J = schema.temporal_features.size(),
                      K = schema.windows, S = schema.static_features.size();

    IngestResult out;
    CohortDataset& d = out.dataset;
    d.tensor = Dense3(I, J, K);
    d.mask = Mask3(I, J, K);
    d.statics = Dense2(I, S, std::numeric_limits<double>::quiet_NaN());
    d.labels = LabelMatrix(I, 2);
    d.label_missing = LabelMatrix(I, 2, 1);
    d.temporal_features = schema.temporal_features;
    d.static_features = schema.static_features;
    d.outcome_names = schema.outcome_names;
    d.patient_ids.resize(I);
    for (const auto& kv : pidx) d.patient_ids[kv.second] = kv.first;
    for (std::size_t k = 0; k < K; ++k) d.timepoint_names.push_back("t" + std::to_string(k));

    std::vector<double> sums(I * J * K, 0.0);
    std::vector<std::uint32_t> counts(I * J * K, 0);
    for (const auto& r : temporal) {
        auto f = fidx.find(r.feature);
        if (f == fidx.end())
            throw SchemaError("ingest: unknown temporal feature '" + r.feature + "' for patient " +
                              r.patient);
        if (r.window < 0 || static_cast<std::size_t>(r.window) >= K)
            throw SchemaError("ingest: window " + std::to_string(r.window) + " out of range for (" +
                              r.patient + ", " + r.feature + ")");
        if (!std::isfinite(r.value))
            throw SchemaError("ingest: non-finite value for (" + r.patient + ", " + r.feature + ")");
        const std::size_t n =
            d.tensor.idx(pidx[r.patient], f->second, static_cast<std::size_t>(r.window));
        sums[n] += r.value;
        counts[n] += 1;
    }
    std::size_t dup_cells = 0;
    for (std::size_t n = 0; n < sums.size(); ++n) {
        if (counts[n] > 0) {
            d.tensor.v[n] = sums[n] / counts[n];
            d.mask.v[n] = 1;
            if (counts[n] > 1) ++dup_cells;
        }
    }
    if (dup_cells > 0)
        out.warnings.push_back("ingest: averaged duplicate records in " +
                               std::to_string(dup_cells) + " tensor cell(s)");

    Dense2 ssum(I, S);
    std::vector<std::uint32_t> scount(I * S, 0);
    for (const auto& r : statics) {
        auto f = sidx.find(r.feature);
        if (f == sidx.end())
            throw SchemaError("ingest: unknown static feature '" + r.feature + "' for patient " +
                              r.patient);
        if (!std::isfinite(r.value))
            throw SchemaError("ingest: non-finite static value for (" + r.patient + ", " +
                              r.feature + ")");
        const std::size_t n = d.statics.idx(pidx[r.patient], f->second);
        ssum.v[n] += r.value;
        scount[n] += 1;
    }
    std::size_t dup_statics = 0;
    for (std::size_t n = 0; n < scount.size(); ++n) {
        if (scount[n] > 0) {
            d.statics.v[n] = ssum.v[n] / scount[n];
            if (scount[n] > 1) ++dup_statics;
        }
    }
    if (dup_statics > 0)
        out.warnings.push_back("ingest: averaged duplicate records in " +
                               std::to_string(dup_statics) + " static cell(s)");

    for (const auto& r : labels) {
        auto f = oidx.find(r.outcome);
        if (f == oidx.end())
            throw SchemaError("ingest: unknown outcome '" + r.outcome + "' for patient " +
                              r.patient);
        if (r.value != 0.0 && r.value != 1.0)
            throw SchemaError("ingest: non-binary label for (" + r.patient + ", " + r.outcome +
                              ")");
        d.labels.at(pidx[r.patient], f->second) = static_cast<std::uint8_t>(r.value);
        d.label_missing.at(pidx[r.patient], f->second) = 0;
    }

    d.check_consistent();
    return out;
}

// Long-CSV readers for the three input tables. Headers are fixed:
//   temporal: patient_id,feature,window,value
//   statics:  patient_id,feature,value
//   labels:   patient_id,outcome,value
namespace detail {
inline std::vector<std::vector<std::string>> read_table(const std::string& path,
                                                        const std::string& expected_header) {
    std::ifstream f(path);
    if (!f) throw SchemaError("cannot open " + path);
    std::string line;
    if (!std::getline(f, line)) throw SchemaError("empty file " + path);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != expected_header)
        throw SchemaError(path + ": expected header '" + expected_header + "', got '" + line + "'");
    std::vector<std::vector<std::string>> rows;
    while (std::getline(f, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        rows.push_back(split_csv_line(line));
    }
    return rows;
}

inline double parse_double(const std::string& s, const std::string& where) {
    try {
        return std::stod(s);
    } catch (const std::exception&) {
        throw SchemaError(where + ": unparsable number '" + s + "'");
    }
}
}  // namespace detail

inline std::vector<TemporalRecord> read_temporal_csv(const std::string& path) {
    auto rows = detail::read_table(path, "patient_id,feature,window,value");
    std::vector<TemporalRecord> out;
    for (const auto& r : rows) {
        if (r.size() != 4) throw SchemaError(path + ": expected 4 fields per row");
        out.push_back({r[0], r[1], std::stol(r[2]), detail::parse_double(r[3], path)});
    }
    return out;
}

inline std::vector<StaticRecord> read_statics_csv(const std::string& path) {
    auto rows = detail::read_table(path, "patient_id,feature,value");
    std::vector<StaticRecord> out;
    for (const auto& r : rows) {
        if (r.size() != 3) throw SchemaError(path + ": expected 3 fields per row");
        out.push_back({r[0], r[1], detail::parse_double(r[2], path)});
    }
    return out;
}

inline std::vector<LabelRecord> read_labels_csv(const std::string& path) {
    auto rows = detail::read_table(path, "patient_id,outcome,value");
    std::vector<LabelRecord> out;
    for (const auto& r : rows) {
        if (r.size() != 3) throw SchemaError(path + ": expected 3 fields per row");
        out.push_back({r[0], r[1], detail::parse_double(r[2], path)});
    }
    return out;
}

// Writes a dataset back to the long-CSV input schema (observed cells only).
inline void export_cohort_csvs(const CohortDataset& d, const std::string& temporal_path,
                               const std::string& statics_path, const std::string& labels_path) {
    std::ofstream ft(temporal_path);
    if (!ft) throw SchemaError("cannot open " + temporal_path);
    ft.precision(17);
    ft << "patient_id,feature,window,value\n";
    for (std::size_t i = 0; i < d.patients(); ++i)
        for (std::size_t j = 0; j < d.features(); ++j)
            for (std::size_t k = 0; k < d.timepoints(); ++k)
                if (d.mask.at(i, j, k))
                    ft << d.patient_ids[i] << ',' << d.temporal_features[j] << ',' << k << ','
                       << d.tensor.at(i, j, k) << '\n';

    std::ofstream fs(statics_path);
    if (!fs) throw SchemaError("cannot open " + statics_path);
    fs.precision(17);
    fs << "patient_id,feature,value\n";
    for (std::size_t i = 0; i < d.patients(); ++i)
        for (std::size_t s = 0; s < d.statics_count(); ++s)
            if (!std::isnan(d.statics.at(i, s)))
                fs << d.patient_ids[i] << ',' << d.static_features[s] << ','
                   << d.statics.at(i, s) << '\n';

    std::ofstream fl(labels_path);
    if (!fl) throw SchemaError("cannot open " + labels_path);
    fl << "patient_id,outcome,value\n";
    for (std::size_t i = 0; i < d.patients(); ++i)
        for (std::size_t o = 0; o < 2; ++o)
            if (!d.label_missing.at(i, o))
                fl << d.patient_ids[i] << ',' << d.outcome_names[o] << ','
                   << int(d.labels.at(i, o)) << '\n';
}

// ---------------------------------------------------------------------------
// Preprocessing

struct PreprocessResult {
    CohortDataset dataset;
    std::vector<std::string> warnings;
};

namespace detail {
inline CohortDataset keep_patients(const CohortDataset& d, const std::vector<std::size_t>& keep) {
    CohortDataset out;
    const std::size_t I = keep.size(), J = d.features(), K = d.timepoints(),
                      S = d.statics_count();
    out.tensor = Dense3(I, J, K);
    out.mask = Mask3(I, J, K);
    out.statics = Dense2(I, S);
    out.labels = LabelMatrix(I, 2);
    out.label_missing = LabelMatrix(I, 2);
    for (std::size_t r = 0; r < I; ++r) {
        const std::size_t i = keep[r];
        for (std::size_t j = 0; j < J; ++j)
            for (std::size_t k = 0; k < K; ++k) {
                out.tensor.at(r, j, k) = d.tensor.at(i, j, k);
                out.mask.at(r, j, k) = d.mask.at(i, j, k);
            }
        for (std::size_t s = 0; s < S; ++s) out.statics.at(r, s) = d.statics.at(i, s);
        for (std::size_t o = 0; o < 2; ++o) {
            out.labels.at(r, o) = d.labels.at(i, o);
            out.label_missing.at(r, o) = d.label_missing.at(i, o);
        }
        out.patient_ids.push_back(d.patient_ids[i]);
        if (!d.split.empty()) out.split.push_back(d.split[i]);
    }
    out.temporal_features = d.temporal_features;
    out.timepoint_names = d.timepoint_names;
    out.static_features = d.static_features;
    out.outcome_names = d.outcome_names;
    out.normalized = d.normalized;
    out.norm = d.norm;
    return out;
}
}  // namespace detail

// The preprocessing chain, applied in order:
//   1. drop patients with >= 90% of temporal cells missing
//   2. mean-impute missing statics per feature
//   3. set missing outcomes to 0
//   4. per (feature, timepoint): standardize observed entries, then min-max
//      scale them to [0,1] (set per_feature_timepoint=false to pool features
//      within each timepoint instead)
//   5. per static feature: standardize, then min-max scale to [0,1]
// Steps 4-5 are skipped when the dataset already carries normalization
// parameters. Standard deviations use the population convention; a zero
// spread maps all values to 0.
inline PreprocessResult preprocess(const CohortDataset& input, bool per_feature_timepoint = true,
                                   double drop_threshold = 0.9) {
    input.check_consistent();
    PreprocessResult out;
    std::vector<std::string>& warnings = out.warnings;

    // 1. drop nearly-empty patients
    std::vector<std::size_t> keep;
    const std::size_t cells_per_patient = input.features() * input.timepoints();
    for (std::size_t i = 0; i < input.patients(); ++i) {
        std::size_t observed = 0;
        for (std::size_t j = 0; j < input.features(); ++j)
            for (std::size_t k = 0; k < input.timepoints(); ++k) observed += input.mask.at(i, j, k);
        const double missing =
            1.0 - static_cast<double>(observed) / static_cast<double>(cells_per_patient);
        if (missing < drop_threshold) keep.push_back(i);
    }
    if (keep.empty()) throw NumericError("preprocess: every patient exceeds the missingness cap");
    if (keep.size() < input.patients())
        warnings.push_back("preprocess: dropped " + std::to_string(input.patients() - keep.size()) +
                           " patient(s) with >= " + std::to_string(int(drop_threshold * 100)) +
                           "% missing temporal data");
    CohortDataset d = detail::keep_patients(input, keep);

    const std::size_t I = d.patients(), J = d.features(), K = d.timepoints(),
                      S = d.statics_count();

    // 2. mean-impute statics
    for (std::size_t s = 0; s < S; ++s) {
        double sum = 0.0;
        std::size_t n = 0;
        for (std::size_t i = 0; i < I; ++i)
            if (!std::isnan(d.statics.at(i, s))) {
                sum += d.statics.at(i, s);
                ++n;
            }
        double mean = 0.0;
        if (n == 0) {
            warnings.push_back("preprocess: static feature '" + d.static_features[s] +
                               "' has no observed values; filled with 0");
        } else {
            mean = sum / static_cast<double>(n);
        }
        for (std::size_t i = 0; i < I; ++i)
            if (std::isnan(d.statics.at(i, s))) d.statics.at(i, s) = mean;
    }

    // 3. missing outcomes count as failures
    for (std::size_t i = 0; i < I; ++i)
        for (std::size_t o = 0; o < 2; ++o)
            if (d.label_missing.at(i, o)) {
                d.labels.at(i, o) = 0;
                d.label_missing.at(i, o) = 0;
            }

    if (d.normalized) {
        out.dataset = std::move(d);
        return out;  // scale parameters already cached; do not rescale
    }

    // 4. temporal standardization + [0,1] scaling over observed entries
    d.norm.per_feature_timepoint = per_feature_timepoint;
    d.norm.t_mean = Dense2(J, K);
    d.norm.t_sd = Dense2(J, K);
    d.norm.t_min = Dense2(J, K);
    d.norm.t_max = Dense2(J, K);

    auto normalize_group = [&](const std::vector<std::size_t>& cells, const std::string& where) {
        std::size_t n = 0;
        double sum = 0.0;
        for (std::size_t c : cells)
            if (d.mask.v[c]) {
                sum += d.tensor.v[c];
                ++n;
            }
        if (n < 2) throw NumericError("preprocess: " + where + " has fewer than 2 observed entries");
        const double mean = sum / static_cast<double>(n);
        double var = 0.0;
        for (std::size_t c : cells)
            if (d.mask.v[c]) {
                const double dd = d.tensor.v[c] - mean;
                var += dd * dd;
            }
        const double sd = std::sqrt(var / static_cast<double>(n));
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (std::size_t c : cells)
            if (d.mask.v[c]) {
                const double z = sd > 0.0 ? (d.tensor.v[c] - mean) / sd : 0.0;
                lo = std::min(lo, z);
                hi = std::max(hi, z);
            }
        const double range = hi - lo;
        for (std::size_t c : cells) {
            if (d.mask.v[c]) {
                const double z = sd > 0.0 ? (d.tensor.v[c] - mean) / sd : 0.0;
                d.tensor.v[c] = range > 0.0 ? (z - lo) / range : 0.0;
            } else {
                d.tensor.v[c] = 0.0;  // unobserved cells carry no information
            }
        }
        return std::array<double, 4>{mean, sd, lo, hi};
    };

    for (std::size_t k = 0; k < K; ++k) {
        if (per_feature_timepoint) {
            for (std::size_t j = 0; j < J; ++j) {
                std::vector<std::size_t> cells;
                cells.reserve(I);
                for (std::size_t i = 0; i < I; ++i) cells.push_back(d.tensor.idx(i, j, k));
                auto p = normalize_group(cells, "feature '" + d.temporal_features[j] +
                                                    "' at timepoint " + std::to_string(k));
                d.norm.t_mean.at(j, k) = p[0];
                d.norm.t_sd.at(j, k) = p[1];
                d.norm.t_min.at(j, k) = p[2];
                d.norm.t_max.at(j, k) = p[3];
            }
        } else {
            std::vector<std::size_t> cells;
            cells.reserve(I * J);
            for (std::size_t i = 0; i < I; ++i)
                for (std::size_t j = 0; j < J; ++j) cells.push_back(d.tensor.idx(i, j, k));
            auto p = normalize_group(cells, "timepoint " + std::to_string(k));
            for (std::size_t j = 0; j < J; ++j) {
                d.norm.t_mean.at(j, k) = p[0];
                d.norm.t_sd.at(j, k) = p[1];
                d.norm.t_min.at(j, k) = p[2];
                d.norm.t_max.at(j, k) = p[3];
            }
        }
    }

    // 5. static standardization + [0,1] scaling
    d.norm.s_mean.assign(S, 0.0);
    d.norm.s_sd.assign(S, 0.0);
    d.norm.s_min.assign(S, 0.0);
    d.norm.s_max.assign(S, 0.0);
    for (std::size_t s = 0; s < S; ++s) {
        double mean = 0.0;
        for (std::size_t i = 0; i < I; ++i) mean += d.statics.at(i, s);
        mean /= static_cast<double>(I);
        double var = 0.0;
        for (std::size_t i = 0; i < I; ++i) {
            const double dd = d.statics.at(i, s) - mean;
            var += dd * dd;
        }
        const double sd = std::sqrt(var / static_cast<double>(I));
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (std::size_t i = 0; i < I; ++i) {
            const double z = sd > 0.0 ? (d.statics.at(i, s) - mean) / sd : 0.0;
            lo = std::min(lo, z);
            hi = std::max(hi, z);
        }
        const double range = hi - lo;
        for (std::size_t i = 0; i < I; ++i) {
            const double z = sd > 0.0 ? (d.statics.at(i, s) - mean) / sd : 0.0;
            d.statics.at(i, s) = range > 0.0 ? (z - lo) / range : 0.0;
        }
        d.norm.s_mean[s] = mean;
        d.norm.s_sd[s] = sd;
        d.norm.s_min[s] = lo;
        d.norm.s_max[s] = hi;
    }

    d.normalized = true;
    out.dataset = std::move(d);
    return out;
}

// Maps a value in normalized [0,1] units back to the original units of
// temporal feature j at timepoint k.
inline double denormalize_temporal(const NormalizationParams& p, std::size_t j, std::size_t k,
                                   double value) {
    const double range = p.t_max.at(j, k) - p.t_min.at(j, k);
    const double z = value * (range > 0.0 ? range : 0.0) + p.t_min.at(j, k);
    return z * (p.t_sd.at(j, k) > 0.0 ? p.t_sd.at(j, k) : 0.0) + p.t_mean.at(j, k);
}

// ---------------------------------------------------------------------------
// Stratified split

struct SplitResult {
    std::vector<Split> assignment;
    std::vector<std::string> warnings;
};

// Partitions patients into train/val/test, stratified on the joint (y1, y2)
// outcome. Each stratum is split with largest-remainder rounding; strata with
// fewer than 3 members go to the training set with a warning.
inline SplitResult stratified_split(const LabelMatrix& labels,
                                    std::array<double, 3> fractions = {0.6, 0.2, 0.2},
                                    std::uint64_t seed = 0) {
    labels.validate();
    double fsum = 0.0;
    for (double f : fractions) {
        if (f < 0.0) throw ParameterError("stratified_split: negative fraction");
        fsum += f;
    }
    if (std::abs(fsum - 1.0) > 1e-9)
        throw ParameterError("stratified_split: fractions must sum to 1");

    SplitResult out;
    out.assignment.assign(labels.rows, Split::Train);
    Rng rng(seed);

    for (int key = 0; key < 4; ++key) {
        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < labels.rows; ++i)
            if (labels.at(i, 0) * 2 + labels.at(i, 1) == key) members.push_back(i);
        if (members.empty()) continue;
        if (members.size() < 3) {
            out.warnings.push_back("stratified_split: stratum (" + std::to_string(key / 2) + "," +
                                   std::to_string(key % 2) + ") has " +
                                   std::to_string(members.size()) +
                                   " member(s); assigned to train");
            continue;  // default assignment is Train
        }
        rng.shuffle(members);

        const double n = static_cast<double>(members.size());
        std::array<std::size_t, 3> quota;
        std::array<double, 3> frac;
        std::size_t assigned = 0;
        for (int p = 0; p < 3; ++p) {
            const double exact = n * fractions[p];
            quota[p] = static_cast<std::size_t>(std::floor(exact));
            frac[p] = exact - std::floor(exact);
            assigned += quota[p];
        }
        std::array<int, 3> order = {0, 1, 2};  // ties favor train, then val
        std::stable_sort(order.begin(), order.end(),
                         [&](int a, int b) { return frac[a] > frac[b]; });
        for (std::size_t left = members.size() - assigned, p = 0; left > 0; --left, ++p)
            quota[order[p % 3]] += 1;

        std::size_t pos = 0;
        for (int p = 0; p < 3; ++p)
            for (std::size_t q = 0; q < quota[p]; ++q)
                out.assignment[members[pos++]] = static_cast<Split>(p);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic cohorts

struct SynthConfig {
    std::size_t patients = 200;
    std::size_t temporal_features = 40;
    std::size_t timepoints = 7;
    std::size_t static_features = 12;
    std::size_t rank = 5;
    double factor_sparsity = 0.5;     // fraction of factor entries forced to 0
    double bias_scale_patient = 0.1;  // gaussian scale of planted patient offsets
    double bias_scale_feature = 0.1;
    double noise_sigma = 0.01;
    double static_noise_sigma = 0.01;
    double missing_fraction = 0.75;
    std::vector<std::size_t> label_components_y1;  // planted components driving outcome 1
    std::vector<std::size_t> label_components_y2;
    double label_coef = 4.0;
    std::array<double, 3> split_fractions = {0.6, 0.2, 0.2};
    std::uint64_t seed = 0;
};

struct GroundTruth {
    FactorSet factors;  // column-normalized planted factors
    BiasTerms biases;
    std::vector<std::size_t> label_components_y1, label_components_y2;
};

struct SynthResult {
    CohortDataset dataset;
    GroundTruth truth;
};

namespace detail {
inline void draw_sparse_factor(Dense2& m, double sparsity, Rng& rng) {
    for (std::size_t r = 0; r < m.rows; ++r)
        for (std::size_t c = 0; c < m.cols; ++c) {
            const double gate = rng.uniform01();
            const double val = rng.uniform01();
            m.at(r, c) = gate < sparsity ? 0.0 : val;
        }
    // a fully zeroed column would make the component unrecoverable
    for (std::size_t c = 0; c < m.cols; ++c) {
        bool zero = true;
        for (std::size_t r = 0; r < m.rows && zero; ++r)
            if (m.at(r, c) != 0.0) zero = false;
        if (zero)
            for (std::size_t r = 0; r < m.rows; ++r) m.at(r, c) = rng.uniform01();
    }
}
}  // namespace detail

// Generates a cohort from planted sparse nonnegative factors plus bias terms,
// with MCAR missingness and Bernoulli labels driven by a logistic map of
// selected planted membership columns. The tensor is scaled so the noiseless
// signal peaks at 1; values are therefore already in model units and the
// dataset is marked normalized.
inline SynthResult synth_generate(const SynthConfig& cfg) {
    if (cfg.rank < 1) throw ParameterError("synth_generate: rank must be >= 1");
    if (cfg.missing_fraction < 0.0 || cfg.missing_fraction > 0.95)
        throw ParameterError("synth_generate: missing_fraction must be in [0, 0.95]");
    if (cfg.noise_sigma < 0.0 || cfg.static_noise_sigma < 0.0)
        throw ParameterError("synth_generate: noise sigma must be >= 0");
    if (cfg.factor_sparsity < 0.0 || cfg.factor_sparsity >= 1.0)
        throw ParameterError("synth_generate: factor_sparsity must be in [0, 1)");

    std::vector<std::size_t> comps1 = cfg.label_components_y1, comps2 = cfg.label_components_y2;
    if (comps1.empty()) {
        comps1.push_back(0);
        if (cfg.rank >= 2) comps1.push_back(1);
    }
    if (comps2.empty()) {
        comps2.push_back(0);
        if (cfg.rank >= 3) comps2.push_back(2);
    }
    for (auto s : comps1)
        if (s >= cfg.rank) throw ParameterError("synth_generate: label component out of range");
    for (auto s : comps2)
        if (s >= cfg.rank) throw ParameterError("synth_generate: label component out of range");

    const std::size_t I = cfg.patients, J = cfg.temporal_features, K = cfg.timepoints,
                      S = cfg.static_features, r = cfg.rank;
    Rng rng(cfg.seed);

    FactorSet planted(I, J, K, S, r);
    detail::draw_sparse_factor(planted.A, cfg.factor_sparsity, rng);
    detail::draw_sparse_factor(planted.B, cfg.factor_sparsity, rng);
    detail::draw_sparse_factor(planted.C, cfg.factor_sparsity, rng);
    detail::draw_sparse_factor(planted.D, cfg.factor_sparsity, rng);

    // scale w so the clean tensor peaks at 1
    Dense3 clean = cp_reconstruct(planted);
    double tmax = 0.0;
    for (double x : clean.v) tmax = std::max(tmax, x);
    const double wscale = tmax > 0.0 ? 1.0 / tmax : 1.0;
    for (auto& ws : planted.w) ws *= wscale;
    for (auto& x : clean.v) x *= wscale;

    BiasTerms biases(I, J);
    for (auto& b : biases.patient) b = cfg.bias_scale_patient * rng.gaussian();
    for (auto& b : biases.feature) b = cfg.bias_scale_feature * rng.gaussian();

    SynthResult out;
    CohortDataset& d = out.dataset;
    d.tensor = Dense3(I, J, K);
    for (std::size_t i = 0; i < I; ++i)
        for (std::size_t j = 0; j < J; ++j)
            for (std::size_t k = 0; k < K; ++k)
                d.tensor.at(i, j, k) = clean.at(i, j, k) + biases.feature[j] + biases.patient[i] +
                                       cfg.noise_sigma * rng.gaussian();

    // scale D so the clean static matrix peaks at 1
    Dense2 mclean = coupled_reconstruct(planted);
    double mmax = 0.0;
    for (double x : mclean.v) mmax = std::max(mmax, x);
    const double dscale = mmax > 0.0 ? 1.0 / mmax : 1.0;
    for (auto& x : planted.D.v) x *= dscale;
    d.statics = Dense2(I, S);
    for (std::size_t i = 0; i < I; ++i)
        for (std::size_t s = 0; s < S; ++s)
            d.statics.at(i, s) = mclean.at(i, s) * dscale + cfg.static_noise_sigma * rng.gaussian();

    // MCAR mask; every patient must keep at least one observed cell
    const int max_retries = 100;
    bool ok = false;
    for (int attempt = 0; attempt < max_retries && !ok; ++attempt) {
        d.mask = Mask3(I, J, K);
        for (auto& m : d.mask.v) m = rng.uniform01() < (1.0 - cfg.missing_fraction) ? 1 : 0;
        ok = true;
        for (std::size_t i = 0; i < I && ok; ++i) {
            std::size_t observed = 0;
            for (std::size_t j = 0; j < J; ++j)
                for (std::size_t k = 0; k < K; ++k) observed += d.mask.at(i, j, k);
            if (observed == 0) ok = false;
        }
    }
    if (!ok)
        throw NumericError("synth_generate: could not draw a mask leaving every patient observed");

    // labels from a logistic map of standardized planted membership columns
    Dense2 zA(I, r);
    for (std::size_t s = 0; s < r; ++s) {
        double mean = 0.0;
        for (std::size_t i = 0; i < I; ++i) mean += planted.A.at(i, s);
        mean /= static_cast<double>(I);
        double var = 0.0;
        for (std::size_t i = 0; i < I; ++i) {
            const double dd = planted.A.at(i, s) - mean;
            var += dd * dd;
        }
        const double sd = std::sqrt(var / static_cast<double>(I));
        for (std::size_t i = 0; i < I; ++i)
            zA.at(i, s) = sd > 0.0 ? (planted.A.at(i, s) - mean) / sd : 0.0;
    }
    d.labels = LabelMatrix(I, 2);
    d.label_missing = LabelMatrix(I, 2);
    const std::vector<std::size_t>* comps[2] = {&comps1, &comps2};
    for (std::size_t i = 0; i < I; ++i)
        for (std::size_t o = 0; o < 2; ++o) {
            double logit = 0.0;
            const double scale = cfg.label_coef / std::sqrt(static_cast<double>(comps[o]->size()));
            for (auto s : *comps[o]) logit += scale * zA.at(i, s);
            const double pr = 1.0 / (1.0 + std::exp(-logit));
            d.labels.at(i, o) = rng.uniform01() < pr ? 1 : 0;
        }

    auto sp = stratified_split(d.labels, cfg.split_fractions, detail::splitmix64(cfg.seed + 17));
    d.split = sp.assignment;

    d.patient_ids.reserve(I);
    char buf[32];
    for (std::size_t i = 0; i < I; ++i) {
        std::snprintf(buf, sizeof buf, "p%04zu", i);
        d.patient_ids.push_back(buf);
    }
    for (std::size_t j = 0; j < J; ++j) d.temporal_features.push_back("tf" + std::to_string(j));
    for (std::size_t k = 0; k < K; ++k) d.timepoint_names.push_back("t" + std::to_string(k));
    for (std::size_t s = 0; s < S; ++s) d.static_features.push_back("sf" + std::to_string(s));
    d.outcome_names = {"year2", "year3"};
    d.normalized = true;  // generated directly in model units

    out.truth.factors = normalize_columns(planted);
    out.truth.biases = biases;
    out.truth.label_components_y1 = comps1;
    out.truth.label_components_y2 = comps2;
    d.check_consistent();
    return out;
}

}  // namespace cmtf
