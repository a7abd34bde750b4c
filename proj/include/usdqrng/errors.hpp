#pragma once

#include <stdexcept>
#include <string>

namespace usdqrng {

/// Argument outside the mathematical domain of an operation (epsilon not in (0,1), negative
/// photon number, overlap outside [0,1], ...).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Malformed serialized data: invalid event byte, bad certificate record, bad seed header.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A per-input total N_x is zero, so the block cannot be certified.
class ZeroTotalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// The observed distribution cannot be produced by any measurement on states with the
/// declared overlap.
class InfeasibleDataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// The interior-point solver stopped without meeting its tolerances.
class ConvergenceError : public std::runtime_error {
public:
    ConvergenceError(const std::string& what, int iterations, double gap, double primal_residual,
                     double dual_residual)
        : std::runtime_error(what), iterations_(iterations), gap_(gap),
          primal_residual_(primal_residual), dual_residual_(dual_residual) {}

    int iterations() const noexcept { return iterations_; }
    double gap() const noexcept { return gap_; }
    double primal_residual() const noexcept { return primal_residual_; }
    double dual_residual() const noexcept { return dual_residual_; }

private:
    int iterations_;
    double gap_;
    double primal_residual_;
    double dual_residual_;
};

/// Inputs whose sizes disagree (raw block vs. extractor parameters, seed length, ...).
class LengthMismatchError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace usdqrng
