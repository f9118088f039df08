#pragma once

#include <stdexcept>
#include <string>

namespace driftback {

// Shape/dimension mismatches between tensors or point sets.
struct dim_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Bad argument values (out-of-range timestep, empty set, unknown kind, ...).
struct argument_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Non-finite values or degenerate denominators encountered mid-computation.
struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Training diverged; carries the epoch at which it happened.
struct training_error : std::runtime_error {
    int epoch;
    training_error(const std::string& what, int epoch_index)
        : std::runtime_error(what + " (epoch " + std::to_string(epoch_index) + ")"),
          epoch(epoch_index) {}
};

// Malformed input file; carries a 1-based line (text) or byte offset (binary).
struct parse_error : std::runtime_error {
    long where;
    parse_error(const std::string& what, long line_or_offset)
        : std::runtime_error(what + " at " + std::to_string(line_or_offset)),
          where(line_or_offset) {}
};

// Missing checkpoint, unreadable config, and similar setup problems.
struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace driftback
