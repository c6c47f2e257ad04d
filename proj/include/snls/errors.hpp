#pragma once

#include <stdexcept>
#include <string>

namespace snls {

// Bad or inconsistent run configuration; the CLI maps this to exit code 2.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Numerical failure outside blow-up semantics; the CLI maps this to exit code 3.
struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace snls
