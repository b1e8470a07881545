#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace bdscan {

// Invalid shapes, arguments or option combinations.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed or truncated files.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// File written by a newer (or unknown) format revision.
class VersionError : public FormatError {
public:
    using FormatError::FormatError;
};

class TrainingDivergence : public std::runtime_error {
public:
    TrainingDivergence(std::size_t epoch, const std::string& what)
        : std::runtime_error(what), epoch_(epoch) {}
    std::size_t epoch() const noexcept { return epoch_; }

private:
    std::size_t epoch_;
};

// Statistics too degenerate for a density fit or a robust scale estimate.
class DegenerateData : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace bdscan
