#pragma once

#include <stdexcept>
#include <string>

namespace rach {

// Base of every error thrown by the library. The CLI maps the concrete
// subclasses onto process exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Inputs violate a documented precondition or invariant.
class ValidationError : public Error {
public:
    using Error::Error;
};

// Dense 2^K storage or an enumeration guard would be exceeded.
class CapacityError : public Error {
public:
    using Error::Error;
};

// A numerical routine failed (eigen solve, barrier phase-I, degenerate iterate).
class NumericalError : public Error {
public:
    using Error::Error;
};

class NotImplementedError : public Error {
public:
    using Error::Error;
};

inline void require(bool cond, const std::string& what)
{
    if (!cond) throw ValidationError(what);
}

} // namespace rach
