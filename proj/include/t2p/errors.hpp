#pragma once

#include <stdexcept>
#include <string>

namespace t2p {

// Bad or unknown configuration key/value.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A stage was invoked before the checkpoint it depends on exists.
struct StageOrderError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Training produced a NaN/Inf loss.
struct NonFiniteLossError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed or incompatible checkpoint / dataset files.
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Process exit codes used by the CLI.
enum ExitCode : int {
    kExitOk = 0,
    kExitFailure = 1,
    kExitConfig = 2,
    kExitStageOrder = 3,
    kExitNonFinite = 4,
    kExitIo = 5,
};

}  // namespace t2p
