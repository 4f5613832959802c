#pragma once

#include <stdexcept>
#include <string>

namespace eeunet {

// Error taxonomy. The CLI maps categories to exit codes, so every
// throw site picks the subclass matching what actually went wrong.

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed or unsupported input data (exit code 3 at the CLI).
struct DataError : Error {
    using Error::Error;
};

struct BadMagic : DataError {
    using DataError::DataError;
};
struct UnsupportedDtype : DataError {
    using DataError::DataError;
};
struct TruncatedData : DataError {
    using DataError::DataError;
};
struct NonPositiveSpacing : DataError {
    using DataError::DataError;
};
struct DimMismatch : DataError {
    using DataError::DataError;
};
struct UnknownLabel : DataError {
    using DataError::DataError;
};
struct TooFewPatients : DataError {
    using DataError::DataError;
};
struct EmptyFold : DataError {
    using DataError::DataError;
};
struct EmptyRecords : DataError {
    using DataError::DataError;
};

// Tensor plumbing bugs: wrong shapes wired together, pooling odd dims, ...
struct ShapeMismatch : Error {
    using Error::Error;
};
struct OddSpatialDim : ShapeMismatch {
    using ShapeMismatch::ShapeMismatch;
};
struct GridTooSmall : ShapeMismatch {
    using ShapeMismatch::ShapeMismatch;
};
struct BadKernel : Error {
    using Error::Error;
};

// A parameter whose gradient accumulator was never written by backward.
struct EmptyGradient : Error {
    using Error::Error;
};

// Loss went NaN during training (exit code 4 at the CLI).
struct DivergenceDetected : Error {
    using Error::Error;
};

// Filesystem / OS failures (exit code 5 at the CLI).
struct IoFailure : Error {
    using Error::Error;
};

struct NonFiniteActivation : Error {
    using Error::Error;
};

}  // namespace eeunet
