#pragma once

#include <stdexcept>
#include <string>

namespace s2d {

// Bad data: non-finite logits, malformed files, shape mismatches.
struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad wiring: exit not in ladder, threshold/ladder length mismatch,
// vocabulary mismatch between draft and target.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem and serialization failures.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace s2d
