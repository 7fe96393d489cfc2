// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace cspsim {

// Process exit codes used by the command-line tool.
enum class ExitCode : int {
    Ok = 0,
    ValidationFailure = 2,
    Unschedulable = 3,
    IoError = 4,
};

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what, ExitCode code = ExitCode::ValidationFailure)
        : std::runtime_error(what), code_(code) {}

    ExitCode code() const { return code_; }

private:
    ExitCode code_;
};

/// Malformed network description, shape mismatch, unsupported layer parameters.
class ValidationError : public Error {
public:
    explicit ValidationError(const std::string& what) : Error(what, ExitCode::ValidationFailure) {}
};

/// Bad magic/version/size in a binary container, unreadable file.
class FormatError : public Error {
public:
    explicit FormatError(const std::string& what) : Error(what, ExitCode::IoError) {}
};

/// A layer cannot be mapped onto the accelerator memories.
class UnschedulableError : public Error {
public:
    explicit UnschedulableError(const std::string& what) : Error(what, ExitCode::Unschedulable) {}
};

/// A 32-bit accumulator left its range during a convolution or FC reduction.
class AccumulatorOverflow : public Error {
public:
    explicit AccumulatorOverflow(const std::string& what) : Error(what, ExitCode::ValidationFailure) {}
};

}  // namespace cspsim
