#pragma once

#include <stdexcept>
#include <string>

namespace physhdr {

/// Error classes surfaced by the library. The CLI maps each class to its own
/// process exit code.
enum class ErrorCategory {
    Config = 2,
    Io = 3,
    Format = 4,
    Shape = 5,
    Numeric = 6,
    Checkpoint = 7,
    Evaluation = 8,
};

class Error : public std::runtime_error {
public:
    Error(ErrorCategory category, const std::string& what)
        : std::runtime_error(what), category_(category) {}

    ErrorCategory category() const noexcept { return category_; }
    int exit_code() const noexcept { return static_cast<int>(category_); }

private:
    ErrorCategory category_;
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& what) : Error(ErrorCategory::Config, what) {}
};

struct IoError : Error {
    explicit IoError(const std::string& what) : Error(ErrorCategory::Io, what) {}
};

struct ShapeError : Error {
    explicit ShapeError(const std::string& what) : Error(ErrorCategory::Shape, what) {}
};

struct RangeError : Error {
    explicit RangeError(const std::string& what) : Error(ErrorCategory::Numeric, what) {}
};

struct NumericError : Error {
    explicit NumericError(const std::string& what) : Error(ErrorCategory::Numeric, what) {}
};

struct CheckpointError : Error {
    explicit CheckpointError(const std::string& what) : Error(ErrorCategory::Checkpoint, what) {}
};

struct EvaluationError : Error {
    explicit EvaluationError(const std::string& what) : Error(ErrorCategory::Evaluation, what) {}
};

} // namespace physhdr
