#pragma once

#include <stdexcept>
#include <string>

namespace ovseg {

// Tensor dimensions disagree with an operation's contract.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Invalid hyperparameter or configuration value.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class ArgumentError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Tile origin not on the patch grid.
class AlignmentError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Metric has no defined value (e.g. every class absent).
class UndefinedMetricError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace ovseg
