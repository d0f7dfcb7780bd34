#pragma once

#include <stdexcept>
#include <string>

namespace sensiq {

// Root of the toolkit error hierarchy. Subclasses encode the failure
// domain so callers (and the CLI exit-code mapping) can tell them apart.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Dimension or shape mismatch between operands.
class ShapeError : public Error {
public:
    using Error::Error;
};

// Invalid user-supplied values (spec fields, config entries, parameters).
class ValidationError : public Error {
public:
    using Error::Error;
};

// Malformed file contents. Messages carry a line or row number when known.
class ParseError : public Error {
public:
    using Error::Error;
};

// Unknown names: layers, metrics, config keys.
class LookupError : public Error {
public:
    using Error::Error;
};

// Operation requires state that has not been produced yet (e.g. gradients
// requested from a tap that only saw a forward pass).
class StateError : public Error {
public:
    using Error::Error;
};

// Numerical failure: indefinite factorization, degenerate curvature.
class NumericalError : public Error {
public:
    using Error::Error;
};

// Filesystem-level failure: missing or unwritable paths.
class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace sensiq
