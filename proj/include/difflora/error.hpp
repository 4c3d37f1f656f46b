// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace difflora {

// Base class for everything thrown by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Dimension or layout mismatch; message names both shapes.
struct ShapeError : Error {
    using Error::Error;
};

// Invalid configuration (bad dims, infeasible spec, rank too large, ...).
struct ConfigError : Error {
    using Error::Error;
};

// Operation not valid in the current state (e.g. double adapter injection).
struct StateError : Error {
    using Error::Error;
};

// Out-of-range or otherwise unusable runtime input.
struct InputError : Error {
    using Error::Error;
};

// Unknown parameter or dataset key.
struct LookupError : Error {
    using Error::Error;
};

// NaN/Inf escaped a public operation.
struct NumericError : Error {
    using Error::Error;
};

// A batch with no loss-bearing positions.
struct DegenerateBatchError : Error {
    using Error::Error;
};

// Malformed file; carries the byte offset where parsing failed.
struct FormatError : Error {
    FormatError(const std::string& msg, std::size_t at_offset)
        : Error(msg + " (offset " + std::to_string(at_offset) + ")"), offset(at_offset) {}
    std::size_t offset = 0;
};

// Training loss went NaN/Inf; carries the step and the lambda values at that step.
struct DivergenceError : Error {
    DivergenceError(const std::string& msg, int at_step, double lambda)
        : Error(msg + " (step " + std::to_string(at_step) + ", lambda " + std::to_string(lambda) + ")"),
          step(at_step),
          lambda_value(lambda) {}
    int step = 0;
    double lambda_value = 0.0;
};

// Region annotations do not partition the sequence.
struct AnnotationError : Error {
    using Error::Error;
};

// Two reports have incompatible schemas.
struct ComparisonError : Error {
    using Error::Error;
};

}  // namespace difflora
