#pragma once

#include <stdexcept>
#include <string>

namespace dbvae {

// Error taxonomy used across the library. The CLI maps InputError and its
// siblings to exit code 1 and NumericalError to exit code 2.
struct InputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : InputError {
    using InputError::InputError;
};

struct ShapeError : InputError {
    using InputError::InputError;
};

struct IoError : InputError {
    using InputError::InputError;
};

// Controller or other stateful component used before it holds valid state.
struct StateError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Raised when a training loss goes non-finite; carries the last finite state
// so callers can checkpoint and report.
struct TrainingDiverged : NumericalError {
    TrainingDiverged(const std::string& msg, long epoch_, long step_,
                     double last_rec_, double last_reg_)
        : NumericalError(msg), epoch(epoch_), step(step_),
          last_finite_rec(last_rec_), last_finite_reg(last_reg_) {}
    long epoch = 0;
    long step = 0;
    double last_finite_rec = 0.0;
    double last_finite_reg = 0.0;
};

}  // namespace dbvae
