#pragma once

#include <stdexcept>
#include <string>

namespace emg {

// Shape/dimension violations (matmul mismatch, non-square mask, ...).
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Class label outside [0, K) and not the ignore index.
struct LabelError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// NaN/Inf produced from finite inputs; message names the offending op/layer.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid configuration (bad ratios, missing checkpoint, unknown variant...).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Dataset-level problems: missing files, bad set kinds, channel mismatch.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// On-disk format violations: magic, version, manifest, CRC, truncation.
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Wire-protocol violations on the socket source.
struct ProtocolError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Misuse of the autodiff tape (backward twice, backward on non-scalar).
struct AutodiffError : std::logic_error {
    using std::logic_error::logic_error;
};

// Operation not available for the selected variant (e.g. training zero-shot).
struct UnsupportedError : std::logic_error {
    using std::logic_error::logic_error;
};

} // namespace emg
