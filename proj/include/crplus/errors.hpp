#pragma once

#include <stdexcept>

namespace crplus {

// Input data that cannot be used (missing cells, bad files, inconsistent
// panels). Precondition violations on function arguments throw
// std::invalid_argument instead.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A numerical procedure failed to produce a valid result (no root bracket,
// recursion breakdown, tail truncated too early).
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace crplus
