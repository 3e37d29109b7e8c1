#pragma once

#include <stdexcept>
#include <string>

namespace tpivot {

// Invalid parameters or configuration. Maps to CLI exit code 2.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed input data (annotation files, prediction files). Maps to exit code 2.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Filesystem and decoding failures. Maps to exit code 4.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A model backend could not produce a usable answer. Maps to exit code 3.
class BackendError : public std::runtime_error {
public:
    BackendError(const std::string& what, std::string transcript = {})
        : std::runtime_error(what), transcript_(std::move(transcript)) {}

    const std::string& transcript() const noexcept { return transcript_; }

private:
    std::string transcript_;
};

}  // namespace tpivot
