#pragma once

// Learned scalar offsets added to the tensor reconstruction as constant
// slices: one value per temporal feature (constant over patients and time)
// and one per patient (constant over features and time). Unconstrained in
// sign, unlike the factors.

#include <vector>

#include "cmtf/errors.hpp"
#include "cmtf/tensor.hpp"

namespace cmtf {

struct BiasTerms {
    std::vector<double> feature;  // length J
    std::vector<double> patient;  // length I

    BiasTerms() = default;
    BiasTerms(std::size_t patients, std::size_t features)
        : feature(features, 0.0), patient(patients, 0.0) {}
};

inline Dense3 bias_tensor_features(const std::vector<double>& b_feat, std::size_t d0,
                                   std::size_t d1, std::size_t d2) {
    if (b_feat.size() != d1)
        throw DimensionError("bias_tensor_features: offset count does not match feature dim");
    Dense3 t(d0, d1, d2);
    for (std::size_t i = 0; i < d0; ++i)
        for (std::size_t j = 0; j < d1; ++j)
            for (std::size_t k = 0; k < d2; ++k) t.at(i, j, k) = b_feat[j];
    return t;
}

inline Dense3 bias_tensor_patients(const std::vector<double>& b_pat, std::size_t d0,
                                   std::size_t d1, std::size_t d2) {
    if (b_pat.size() != d0)
        throw DimensionError("bias_tensor_patients: offset count does not match patient dim");
    Dense3 t(d0, d1, d2);
    for (std::size_t i = 0; i < d0; ++i)
        for (std::size_t j = 0; j < d1; ++j)
            for (std::size_t k = 0; k < d2; ++k) t.at(i, j, k) = b_pat[i];
    return t;
}

}  // namespace cmtf
