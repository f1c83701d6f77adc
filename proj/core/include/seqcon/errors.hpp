#pragma once

#include <stdexcept>
#include <string>

namespace seqcon {

// Error taxonomy mirrors the CLI exit-code contract:
// config errors -> 2, numerical failures -> 3, I/O failures -> 4.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace seqcon
