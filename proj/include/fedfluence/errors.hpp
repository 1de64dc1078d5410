#pragma once

#include <stdexcept>
#include <string>

namespace fedfluence {

// Base class for all library errors.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor/vector layout disagreement between operands.
struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// An operation that requires at least one element received none.
struct EmptyInputError : Error {
    explicit EmptyInputError(const std::string& msg) : Error(msg) {}
};

// Invalid configuration value or combination.
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Malformed input file; message carries the line number when known.
struct FormatError : Error {
    explicit FormatError(const std::string& msg) : Error(msg) {}
};

struct IndexError : Error {
    explicit IndexError(const std::string& msg) : Error(msg) {}
};

// A dense-path request exceeded the configured size cap.
struct CapacityError : Error {
    explicit CapacityError(const std::string& msg) : Error(msg) {}
};

// Local training produced non-finite parameters.
struct DivergenceError : Error {
    explicit DivergenceError(const std::string& msg) : Error(msg) {}
};

// An influence vector exceeded the overflow guard or went non-finite.
struct OverflowError : Error {
    explicit OverflowError(const std::string& msg) : Error(msg) {}
};

// Aggregation over an empty participant set.
struct DegenerateRoundError : Error {
    explicit DegenerateRoundError(const std::string& msg) : Error(msg) {}
};

// Pearson correlation undefined (zero variance).
struct CorrelationError : Error {
    explicit CorrelationError(const std::string& msg) : Error(msg) {}
};

// Two trajectories that should share a configuration do not line up.
struct ComparisonError : Error {
    explicit ComparisonError(const std::string& msg) : Error(msg) {}
};

} // namespace fedfluence
