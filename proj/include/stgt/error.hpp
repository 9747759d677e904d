#pragma once

#include <stdexcept>
#include <string>

namespace stgt {

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Incompatible tensor/matrix shapes.
struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// Bad value in otherwise well-shaped input (negative distance, non-binary mask, ...).
struct ValueError : Error {
    explicit ValueError(const std::string& msg) : Error(msg) {}
};

// Malformed or missing input files.
struct IoError : Error {
    explicit IoError(const std::string& msg) : Error(msg) {}
};

// Bad run configuration.
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

} // namespace stgt
