#pragma once

#include <stdexcept>

namespace milbag {

// Error categories; the CLI maps them to exit codes
// (config -> 1, data/format -> 2, numeric -> 3).
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DimError : Error { using Error::Error; };
struct DomainError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct FormatError : Error { using Error::Error; };
struct NumericError : Error { using Error::Error; };
struct IntegrityError : Error { using Error::Error; };

}  // namespace milbag
