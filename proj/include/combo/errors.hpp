#pragma once

#include <stdexcept>
#include <string>

namespace combo {

/// Malformed input: bad shapes, non-stochastic rows, out-of-range knobs.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// An iterative solver exhausted its budget before reaching tolerance.
class ConvergenceError : public std::runtime_error {
public:
    ConvergenceError(const std::string& what, int iterations, double residual)
        : std::runtime_error(what), iterations_(iterations), residual_(residual) {}

    int iterations() const { return iterations_; }
    double residual() const { return residual_; }

private:
    int iterations_;
    double residual_;
};

/// A direct solve came back outside its residual tolerance.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised by a poisoned MDP when its dynamics or rewards are read.
class TruthAccessError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// No finite conservatism coefficient achieves the requested bound.
class UnattainableBound : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace combo
