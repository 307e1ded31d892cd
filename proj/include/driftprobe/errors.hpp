#pragma once

#include <stdexcept>
#include <string>

namespace driftprobe {

// Error taxonomy shared across the toolkit. The CLI maps these onto exit
// codes: ConfigError -> 2, MissingDataError -> 3, BackendError -> 4.

struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ArgumentError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A store lookup failed; the message names the missing keys and, where
// possible, the extract invocation that would produce them.
struct MissingDataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Capacity or capability failures of a model backend.
struct BackendError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct StoreError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace driftprobe
