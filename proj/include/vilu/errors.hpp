#pragma once

#include <stdexcept>
#include <string>

namespace vilu {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape algebra violations: mismatched operand shapes, bad kernel extents.
struct DimensionError : Error {
    using Error::Error;
};

// Invalid hyperparameters or network configuration.
struct ConfigError : Error {
    using Error::Error;
};

// Non-finite value produced where the contract requires finiteness.
struct NumericError : Error {
    using Error::Error;
};

// Malformed or unsupported input files (NRRD, checkpoints, manifests).
struct FormatError : Error {
    using Error::Error;
};

// Label values outside [0, num_classes).
struct LabelError : Error {
    using Error::Error;
};

}  // namespace vilu
