#pragma once

#include <stdexcept>
#include <string>

namespace isac {

// Every failure raised by the library derives from isac::Error so callers
// (the CLI in particular) can map categories onto exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid or infeasible scenario / experiment configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
public:
    using Error::Error;
};

// Matrix that must be positive-definite is not (or is numerically singular).
class SingularityError : public Error {
public:
    using Error::Error;
};

// Degenerate positions (target coincident with a BS or UE, ...).
class GeometryError : public Error {
public:
    using Error::Error;
};

// Dimension mismatch between arguments.
class ContractError : public Error {
public:
    using Error::Error;
};

} // namespace isac
