#pragma once

#include <stdexcept>
#include <string>

namespace meshprobe {

/// Raised for bad user input: missing files, malformed documents, violated
/// preconditions. The CLI maps it to exit code 2.
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A linear system or numerical routine could not produce a result.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace meshprobe
