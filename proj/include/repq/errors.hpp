#pragma once

#include <stdexcept>
#include <string>

namespace repq {

// Invalid shapes, incompatible channel counts, bad configuration keys.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// NaN/Inf encountered, degenerate statistics, divergence.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Fusion self-check failed or a block was fused twice.
struct FusionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed checkpoint / dataset bytes.
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Filesystem failures.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace repq
