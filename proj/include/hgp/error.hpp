#pragma once

#include <stdexcept>
#include <string>

namespace hgp {

/// Bad input: malformed files, invalid arguments, violated preconditions.
class InputError : public std::invalid_argument {
public:
    explicit InputError(const std::string& what) : std::invalid_argument(what) {}
};

/// Numerical breakdown: failed factorizations, non-finite objectives, divergence.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace hgp
