#pragma once

#include <stdexcept>
#include <string>

namespace psiflow {

/// Base class for every error raised by the library.
class Error : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

/// Quadrature or root finding did not reach the requested accuracy.
class NumericalError : public Error
{
public:
    using Error::Error;
};

/// u_t(lambda) escaped to +infinity before the requested time.
class BlowUpError : public NumericalError
{
public:
    BlowUpError(const std::string& what, double escape_time)
        : NumericalError(what), escape_time_(escape_time)
    {
    }
    double escape_time() const noexcept { return escape_time_; }

private:
    double escape_time_;
};

class ClassificationError : public Error
{
public:
    using Error::Error;
};

/// Invalid parameters, unsupported family/option combinations, malformed configs.
class ConfigError : public Error
{
public:
    using Error::Error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error
{
public:
    using Error::Error;
};

/// Inputs that must agree (e.g. jump sizes and totals) do not.
class ConsistencyError : public Error
{
public:
    using Error::Error;
};

/// Broken internal invariant (non-monotone clock and similar).
class InternalError : public Error
{
public:
    using Error::Error;
};

} // namespace psiflow
