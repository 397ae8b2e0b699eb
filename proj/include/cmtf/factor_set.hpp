#pragma once

// Rank-r coupled factor set: weight vector w plus factor matrices
// A (patients x r), B (temporal features x r), C (timepoints x r),
// D (static features x r). The tensor reconstruction is
//   X[i,j,k] = sum_s w[s] * A[i,s] * B[j,s] * C[k,s]
// and the coupled matrix reconstruction shares A:
//   M[i,j]   = sum_s w[s] * A[i,s] * D[j,s].

#include <cmath>
#include <vector>

#include "cmtf/errors.hpp"
#include "cmtf/tensor.hpp"

namespace cmtf {

struct FactorSet {
    std::size_t rank = 0;
    std::vector<double> w;
    Dense2 A, B, C, D;

    FactorSet() = default;
    FactorSet(std::size_t patients, std::size_t features, std::size_t timepoints,
              std::size_t statics, std::size_t r)
        : rank(r), w(r, 1.0), A(patients, r), B(features, r), C(timepoints, r), D(statics, r) {}

    void check_shapes() const {
        if (rank == 0) throw ParameterError("FactorSet: rank must be >= 1");
        if (w.size() != rank || A.cols != rank || B.cols != rank || C.cols != rank || D.cols != rank)
            throw DimensionError("FactorSet: factor ranks disagree");
    }
};

inline std::vector<double> column_norms(const Dense2& m) {
    std::vector<double> out(m.cols, 0.0);
    for (std::size_t r = 0; r < m.rows; ++r)
        for (std::size_t c = 0; c < m.cols; ++c) out[c] += m.at(r, c) * m.at(r, c);
    for (auto& x : out) x = std::sqrt(x);
    return out;
}

inline Dense3 cp_reconstruct(const FactorSet& f) {
    f.check_shapes();
    const std::size_t I = f.A.rows, J = f.B.rows, K = f.C.rows, r = f.rank;
    Dense3 t(I, J, K);
    std::vector<double> wab(r);
    for (std::size_t i = 0; i < I; ++i) {
        for (std::size_t j = 0; j < J; ++j) {
            for (std::size_t s = 0; s < r; ++s) wab[s] = f.w[s] * f.A.at(i, s) * f.B.at(j, s);
            double* row = &t.v[t.idx(i, j, 0)];
            for (std::size_t k = 0; k < K; ++k) {
                double acc = 0.0;
                for (std::size_t s = 0; s < r; ++s) acc += wab[s] * f.C.at(k, s);
                row[k] = acc;
            }
        }
    }
    return t;
}

inline Dense2 coupled_reconstruct(const FactorSet& f) {
    f.check_shapes();
    const std::size_t I = f.A.rows, S = f.D.rows, r = f.rank;
    Dense2 m(I, S);
    for (std::size_t i = 0; i < I; ++i) {
        for (std::size_t j = 0; j < S; ++j) {
            double acc = 0.0;
            for (std::size_t s = 0; s < r; ++s) acc += f.w[s] * f.A.at(i, s) * f.D.at(j, s);
            m.at(i, j) = acc;
        }
    }
    return m;
}

// Rescales every nonzero column of A, B, C, D to unit Euclidean norm. The
// norms removed from A, B, and C multiply into w, so the tensor
// reconstruction is unchanged entry for entry. A single shared w cannot also
// keep the coupled matrix product fixed once D is rescaled, so D's norms are
// simply dropped: after normalization the matrix product reads in units of
// unit-norm static columns. Zero columns stay zero; a zero column in A, B,
// or C zeroes its weight entry.
inline FactorSet normalize_columns(const FactorSet& f) {
    f.check_shapes();
    FactorSet out = f;
    const Dense2* mats[4] = {&f.A, &f.B, &f.C, &f.D};
    Dense2* outs[4] = {&out.A, &out.B, &out.C, &out.D};
    for (int m = 0; m < 4; ++m) {
        const auto norms = column_norms(*mats[m]);
        for (std::size_t s = 0; s < f.rank; ++s) {
            if (m < 3) out.w[s] *= norms[s];
            if (norms[s] > 0.0) {
                const double inv = 1.0 / norms[s];
                for (std::size_t r = 0; r < mats[m]->rows; ++r)
                    outs[m]->at(r, s) = mats[m]->at(r, s) * inv;
            }
        }
    }
    return out;
}

}  // namespace cmtf
