#pragma once

#include <stdexcept>
#include <string>

namespace gda {

// Error taxonomy. The CLI maps these onto exit codes:
//   IoError -> 1, ConfigError/SchemaError -> 2, TrainingError -> 3.

/// File access or parse failure; the message names the offending file.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Dataset content violates an invariant (bad index, wrong row count, ...).
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Type/relation pairing is inconsistent or does not resolve in a graph.
struct SchemaError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A configuration value is missing, malformed, or out of range.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A caller broke an API precondition (shape mismatch, empty batch, ...).
struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

/// Optimization diverged; the message carries the step index.
struct TrainingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace gda
