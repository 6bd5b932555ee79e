#ifndef VELO_ERROR_HPP
#define VELO_ERROR_HPP

#include <stdexcept>
#include <string>

namespace velo {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A parameter or argument lies outside the domain of the operation.
class DomainError : public Error {
public:
    using Error::Error;
};

/// Tensor or matrix dimensions disagree.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A computation produced NaN or infinity.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Malformed input file, config, or command line.
class InputError : public Error {
public:
    using Error::Error;
};

}  // namespace velo

#endif
