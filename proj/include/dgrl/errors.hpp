#pragma once

#include <stdexcept>
#include <string>

namespace dgrl {

// Error categories double as CLI exit-code classes (see tools/dgrl.cpp).

/// Inconsistent shapes, specs, or configuration values.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// API misuse: wrong state, non-scalar backward, non-±1 pack input.
class UsageError : public std::logic_error {
public:
    explicit UsageError(const std::string& what) : std::logic_error(what) {}
};

/// Malformed or missing dataset content.
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

/// Checkpoint failed its integrity check or has an unsupported format.
class CorruptionError : public std::runtime_error {
public:
    explicit CorruptionError(const std::string& what) : std::runtime_error(what) {}
};

class UnsupportedVersionError : public std::runtime_error {
public:
    explicit UnsupportedVersionError(const std::string& what) : std::runtime_error(what) {}
};

/// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
public:
    explicit DivergenceError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace dgrl
