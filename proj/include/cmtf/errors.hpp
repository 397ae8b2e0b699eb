#pragma once

#include <stdexcept>
#include <string>

namespace cmtf {

// Shape or rank disagreement between containers.
struct DimensionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid configuration or argument value.
struct ParameterError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed input files or records.
struct SchemaError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite values, divergence, or a degenerate numeric state.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace cmtf
