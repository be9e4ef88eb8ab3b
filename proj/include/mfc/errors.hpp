#pragma once

#include <stdexcept>
#include <string>

namespace mfc {

// Precondition / API-contract violations (bad shapes, bad arguments, misuse).
struct ContractViolation : std::logic_error {
    explicit ContractViolation(const std::string& msg) : std::logic_error(msg) {}
};

// Invalid or unsatisfiable configuration. CLI exit code 2.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// An artifact is missing or does not match the hashes recorded by the stage
// that should have produced it. CLI exit code 3.
struct StalenessError : std::runtime_error {
    explicit StalenessError(const std::string& msg) : std::runtime_error(msg) {}
};

// File-level problems: missing, truncated, wrong magic, failed writes.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// A model was used before its pretraining phase completed (or after it was
// supposed to be frozen).
struct LifecycleError : std::logic_error {
    explicit LifecycleError(const std::string& msg) : std::logic_error(msg) {}
};

// Numerical degeneracy: zero-norm embeddings, non-finite values.
struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace mfc
