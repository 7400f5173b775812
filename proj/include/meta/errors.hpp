#pragma once

#include <stdexcept>
#include <string>

namespace meta {

// Shape disagreement between operands. The message names both shapes.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A scalar was required (e.g. the argument of backward()).
class RankError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DegenerateRowError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Rating index or symbol outside the supported scale.
class ScaleError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// Probability rows that do not sum to one.
class DistributionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Unreadable or empty input files.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GradientStateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class NonFiniteGradientError : public std::runtime_error {
 public:
  NonFiniteGradientError(std::string group, std::string parameter)
      : std::runtime_error("non-finite gradient in parameter group '" + group +
                           "' (" + parameter + ")"),
        group_(std::move(group)),
        parameter_(std::move(parameter)) {}

  const std::string& group() const noexcept { return group_; }
  const std::string& parameter() const noexcept { return parameter_; }

 private:
  std::string group_;
  std::string parameter_;
};

// Record sets compared across modes do not cover the same samples.
class AlignmentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace meta
