#pragma once

#include <stdexcept>
#include <string>

namespace clinnum {

// Error categories map 1:1 onto CLI exit codes (see tools/).
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Internal contract violations (shape mismatches, invalid arguments).
struct InvariantError : std::logic_error {
    using std::logic_error::logic_error;
};

}  // namespace clinnum
