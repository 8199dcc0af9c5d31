#pragma once

#include <stdexcept>
#include <string>

namespace picotab {

// Base for everything this library throws on purpose.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad user input: malformed files, schema mismatches, unparseable values.
// The CLI maps this family to exit code 2.
struct DataError : Error {
    using Error::Error;
};

// Bad configuration or API misuse (invalid ranges, missing options).
struct ConfigError : Error {
    using Error::Error;
};

// Failures that happen mid-computation: divergence, degenerate inputs
// discovered late, exhausted retries.
struct RuntimeFailure : Error {
    using Error::Error;
};

}  // namespace picotab
