#pragma once

#include <stdexcept>

namespace mlclt {

// Bad arguments: dimension mismatch, out-of-range parameters, unsupported tags.
struct UsageError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// A quadrature or iteration failed its own convergence check.
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline void require(bool ok, const char* what)
{
    if (!ok) throw UsageError(what);
}

} // namespace mlclt
