#pragma once

#include <stdexcept>
#include <string>

namespace evrec {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input text; `line` is 1-based, 0 when unknown.
class ParseError : public Error {
public:
    ParseError(std::string const& source, std::size_t line, std::string const& what)
        : Error(source + (line ? ":" + std::to_string(line) : std::string{}) + ": " + what),
          line_(line) {}

    [[nodiscard]] std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// A cross reference (bus, node, charging station) names an entity that does not exist.
class ReferenceError : public Error {
public:
    using Error::Error;
};

/// A field violates a documented invariant.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Operation called in the wrong state (e.g. metrics before the episode ended).
class StateError : public Error {
public:
    using Error::Error;
};

/// Tensor or vector dimensions do not line up.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Iterative solver failed to converge, or hit a singular system.
class ConvergenceError : public Error {
public:
    ConvergenceError(std::string const& what, int iterations, double residual)
        : Error(what), iterations_(iterations), residual_(residual) {}

    [[nodiscard]] int iterations() const noexcept { return iterations_; }
    [[nodiscard]] double residual() const noexcept { return residual_; }

private:
    int iterations_;
    double residual_;
};

/// Network has no route between two nodes.
class UnreachableError : public Error {
public:
    using Error::Error;
};

}  // namespace evrec
