#pragma once

#include <stdexcept>

namespace flowalign {

// Invalid configuration or schema violation (zero-width layer, malformed config file).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Caller broke an API contract (shape mismatch, bad argument combination).
struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

// Non-finite values fed into a numeric routine.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Argument outside the mathematical domain of an operation.
struct DomainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Training or sampling produced a non-finite state.
struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Transition kernel is degenerate (sigma = 0), so densities and ratios are undefined.
struct KernelError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A required upstream artifact (checkpoint, dataset) is missing.
struct DependencyError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace flowalign
