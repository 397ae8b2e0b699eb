#pragma once

// Turns a trained, column-normalized factor set into interpretable phenotype
// views: per-component feature contributions (with a display filter),
// temporal patterns (raw C columns), patient memberships, positive-class
// fractions under a configurable membership rule, observed-only mean feature
// trajectories, and bias summaries.

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cmtf/bias.hpp"
#include "cmtf/data.hpp"
#include "cmtf/errors.hpp"
#include "cmtf/factor_set.hpp"

namespace cmtf {

struct Phenotype {
    std::size_t index = 0;
    double weight = 0.0;
    // full columns, named
    std::vector<std::pair<std::string, double>> temporal_contributions;
    std::vector<std::pair<std::string, double>> static_contributions;
    // entries strictly above the display threshold, sorted descending
    std::vector<std::pair<std::string, double>> display_temporal;
    std::vector<std::pair<std::string, double>> display_static;
    std::vector<double> temporal_pattern;  // raw C column
    std::vector<double> memberships;       // raw A column
};

namespace detail {
inline void check_normalized(const Dense2& m, const char* what) {
    const auto norms = column_norms(m);
    for (double n : norms)
        if (n != 0.0 && std::abs(n - 1.0) > 1e-6)
            throw ParameterError(std::string("extract_phenotypes: ") + what +
                                 " is not column-normalized");
}

inline std::vector<std::pair<std::string, double>> filter_sorted(
    const std::vector<std::pair<std::string, double>>& full, double threshold) {
    std::vector<std::pair<std::string, double>> out;
    for (const auto& nv : full)
        if (nv.second > threshold) out.push_back(nv);
    std::stable_sort(out.begin(), out.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    return out;
}
}  // namespace detail

inline std::vector<Phenotype> extract_phenotypes(const FactorSet& f,
                                                 const std::vector<std::string>& temporal_names,
                                                 const std::vector<std::string>& static_names,
                                                 double display_threshold = 0.2) {
    f.check_shapes();
    if (temporal_names.size() != f.B.rows || static_names.size() != f.D.rows)
        throw ParameterError("extract_phenotypes: name list lengths do not match factors");
    detail::check_normalized(f.A, "A");
    detail::check_normalized(f.B, "B");
    detail::check_normalized(f.C, "C");
    detail::check_normalized(f.D, "D");

    std::vector<Phenotype> out;
    out.reserve(f.rank);
    for (std::size_t s = 0; s < f.rank; ++s) {
        Phenotype ph;
        ph.index = s;
        ph.weight = f.w[s];
        for (std::size_t j = 0; j < f.B.rows; ++j)
            ph.temporal_contributions.emplace_back(temporal_names[j], f.B.at(j, s));
        for (std::size_t j = 0; j < f.D.rows; ++j)
            ph.static_contributions.emplace_back(static_names[j], f.D.at(j, s));
        ph.display_temporal = detail::filter_sorted(ph.temporal_contributions, display_threshold);
        ph.display_static = detail::filter_sorted(ph.static_contributions, display_threshold);
        ph.temporal_pattern.resize(f.C.rows);
        for (std::size_t k = 0; k < f.C.rows; ++k) ph.temporal_pattern[k] = f.C.at(k, s);
        ph.memberships.resize(f.A.rows);
        for (std::size_t i = 0; i < f.A.rows; ++i) ph.memberships[i] = f.A.at(i, s);
        out.push_back(std::move(ph));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Membership rules

struct MembershipRule {
    enum class Kind { QuantileTop, All };
    Kind kind = Kind::QuantileTop;
    double quantile = 0.75;  // member when A[i,s] exceeds this column quantile

    std::string describe() const {
        if (kind == Kind::All) return "all";
        return "quantile>" + std::to_string(quantile);
    }
};

// Linearly interpolated quantile of a copy of `values`.
inline double quantile(std::vector<double> values, double q) {
    if (values.empty()) throw ParameterError("quantile: empty input");
    if (q < 0.0 || q > 1.0) throw ParameterError("quantile: q not in [0,1]");
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = static_cast<std::size_t>(std::ceil(pos));
    const double frac = pos - std::floor(pos);
    return values[lo] * (1.0 - frac) + values[hi] * frac;
}

inline std::vector<std::size_t> phenotype_members(const Phenotype& ph, const MembershipRule& rule) {
    std::vector<std::size_t> out;
    if (rule.kind == MembershipRule::Kind::All) {
        out.resize(ph.memberships.size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = i;
        return out;
    }
    const double cut = quantile(ph.memberships, rule.quantile);
    for (std::size_t i = 0; i < ph.memberships.size(); ++i)
        if (ph.memberships[i] > cut) out.push_back(i);
    return out;
}

struct PositiveFraction {
    std::array<double, 2> fraction{0.0, 0.0};
    std::size_t member_count = 0;
    bool defined = false;  // false when no patient qualifies as a member
};

inline PositiveFraction positive_fraction(const Phenotype& ph, const LabelMatrix& labels,
                                          const MembershipRule& rule) {
    if (labels.rows != ph.memberships.size())
        throw DimensionError("positive_fraction: label rows differ from memberships");
    labels.validate();
    const auto members = phenotype_members(ph, rule);
    PositiveFraction out;
    out.member_count = members.size();
    if (members.empty()) return out;
    out.defined = true;
    for (std::size_t o = 0; o < 2; ++o) {
        std::size_t pos = 0;
        for (auto i : members) pos += labels.at(i, o);
        out.fraction[o] = static_cast<double>(pos) / static_cast<double>(members.size());
    }
    return out;
}

// Per-timepoint mean of feature j over member patients, observed entries
// only. Timepoints where no member has an observation come back empty.
inline std::vector<std::optional<double>> mean_trajectory(const Phenotype& ph,
                                                          const CohortDataset& d,
                                                          std::size_t feature,
                                                          const MembershipRule& rule) {
    if (feature >= d.features()) throw ParameterError("mean_trajectory: feature out of range");
    if (ph.memberships.size() != d.patients())
        throw DimensionError("mean_trajectory: memberships do not match dataset");
    const auto members = phenotype_members(ph, rule);
    std::vector<std::optional<double>> out(d.timepoints());
    for (std::size_t k = 0; k < d.timepoints(); ++k) {
        double sum = 0.0;
        std::size_t n = 0;
        for (auto i : members)
            if (d.mask.at(i, feature, k)) {
                sum += d.tensor.at(i, feature, k);
                ++n;
            }
        if (n > 0) out[k] = sum / static_cast<double>(n);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Bias summaries

struct BiasSummary {
    struct Bin {
        double lo = 0.0, hi = 0.0;
        std::size_t count = 0;
    };
    std::vector<Bin> patient_histogram;
    std::vector<std::pair<std::string, double>> feature_table;  // sorted by |bias| desc
};

inline BiasSummary bias_summary(const BiasTerms& b, const std::vector<std::string>& feature_names,
                                std::size_t bins = 20) {
    if (feature_names.size() != b.feature.size())
        throw DimensionError("bias_summary: feature name count differs");
    if (bins < 1) throw ParameterError("bias_summary: need at least one bin");

    BiasSummary out;
    if (!b.patient.empty()) {
        double lo = b.patient[0], hi = b.patient[0];
        for (double x : b.patient) {
            lo = std::min(lo, x);
            hi = std::max(hi, x);
        }
        if (lo == hi) {
            out.patient_histogram.push_back({lo, hi, b.patient.size()});
        } else {
            const double width = (hi - lo) / static_cast<double>(bins);
            for (std::size_t k = 0; k < bins; ++k)
                out.patient_histogram.push_back({lo + width * k, lo + width * (k + 1), 0});
            for (double x : b.patient) {
                std::size_t k = static_cast<std::size_t>((x - lo) / width);
                if (k >= bins) k = bins - 1;  // the max lands in the last bin
                out.patient_histogram[k].count += 1;
            }
        }
    }

    for (std::size_t j = 0; j < b.feature.size(); ++j)
        out.feature_table.emplace_back(feature_names[j], b.feature[j]);
    std::stable_sort(out.feature_table.begin(), out.feature_table.end(),
                     [](const auto& a, const auto& bb) {
                         return std::abs(a.second) > std::abs(bb.second);
                     });
    return out;
}

}  // namespace cmtf
