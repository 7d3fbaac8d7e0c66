#pragma once

#include <stdexcept>
#include <string>

namespace nndp {

// Bad shapes, names, parameter ranges: anything wrong with the inputs
// rather than with the numerics.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// A policy produced a control outside the declared control set.
class DomainViolationError : public std::runtime_error {
public:
    explicit DomainViolationError(const std::string& what) : std::runtime_error(what) {}
};

// Gradient descent hit a non-finite loss or gradient.
class DivergenceError : public std::runtime_error {
public:
    DivergenceError(const std::string& what, int iteration)
        : std::runtime_error(what + " (iteration " + std::to_string(iteration) + ")"),
          iteration_(iteration) {}
    int iteration() const { return iteration_; }

private:
    int iteration_;
};

// Quantizer training collapsed onto duplicate grid points.
class DegenerateGridError : public std::runtime_error {
public:
    explicit DegenerateGridError(const std::string& what) : std::runtime_error(what) {}
};

// Singular or indefinite matrix where the recursion needs an inverse.
class ConditioningError : public std::runtime_error {
public:
    explicit ConditioningError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace nndp
