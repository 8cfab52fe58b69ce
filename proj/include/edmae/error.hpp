#pragma once

#include <stdexcept>
#include <string>

namespace edmae {

// Error taxonomy used across the library. Everything derives from Error so
// callers can catch broadly; the CLI maps ConfigError/UsageError to exit
// code 2 and everything else to 1.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes, indivisible spatial dims, tiling mismatches.
struct DimensionError : Error {
    using Error::Error;
};

// Invalid configuration values or unknown config keys.
struct ConfigError : Error {
    using Error::Error;
};

// Bad data: out-of-range labels, missing files, mismatched datasets.
struct DataError : Error {
    using Error::Error;
};

// Malformed on-disk formats (.t32, .edmk, manifests).
struct ParseError : Error {
    using Error::Error;
};

// NaN/Inf encountered where finite values are required.
struct NumericError : Error {
    using Error::Error;
};

// API misuse, e.g. backward() on a non-scalar.
struct UsageError : Error {
    using Error::Error;
};

// A metric is undefined for the given inputs (empty mask, single-class AUC).
struct MetricError : Error {
    using Error::Error;
};

}  // namespace edmae
