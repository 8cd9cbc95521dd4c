#pragma once

#include <stdexcept>
#include <string>

namespace latlab {

// Bad user input, CLI flags, or run configuration. CLI exit code 1.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed, inconsistent, or missing data artifacts. CLI exit code 2.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor shape contract violation; names both offending shapes.
struct ShapeError : DataError {
    using DataError::DataError;
};

// A parse failure with location information.
struct ParseError : DataError {
    ParseError(const std::string& what, std::size_t line, std::size_t byte)
        : DataError(what + " (line " + std::to_string(line) + ", byte offset " +
                    std::to_string(byte) + ")"),
          line_number(line),
          byte_offset(byte) {}
    std::size_t line_number = 0;
    std::size_t byte_offset = 0;
};

// Non-finite value produced by a named operation.
struct NumericError : std::runtime_error {
    NumericError(const std::string& op, const std::string& detail)
        : std::runtime_error("non-finite value in op '" + op + "': " + detail), op_name(op) {}
    std::string op_name;
};

// Training produced a non-finite loss. CLI exit code 3.
struct DivergenceError : std::runtime_error {
    DivergenceError(long long at_step, const std::string& detail)
        : std::runtime_error("training diverged at step " + std::to_string(at_step) + ": " +
                             detail),
          step(at_step) {}
    long long step = 0;
};

}  // namespace latlab
