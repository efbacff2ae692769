#pragma once

#include <stdexcept>
#include <string>

namespace phishlab {

/// Bad input or configuration: malformed rows, out-of-range labels,
/// inconsistent shapes. Maps to CLI exit code 1.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// File could not be opened, read or written. Maps to CLI exit code 2.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// File opened fine but its contents fail integrity checks (hash mismatch,
/// truncation, unknown version). Maps to CLI exit code 2.
class CorruptionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace phishlab
