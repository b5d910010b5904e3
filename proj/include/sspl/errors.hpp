#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace sspl {

/// Shape/dimension contract violations.
struct DimError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Invalid configuration (bad layer plan, batch size < 2 in training BN, ...).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// API misuse (non-scalar loss to backward, empty sample list, ...).
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Non-finite values where finite ones are required.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Malformed file contents; carries the byte offset of the defect.
struct FormatError : std::runtime_error {
    FormatError(const std::string& msg, uint64_t byte_offset)
        : std::runtime_error(msg + " (byte offset " + std::to_string(byte_offset) + ")"),
          offset(byte_offset) {}
    uint64_t offset;
};

} // namespace sspl
