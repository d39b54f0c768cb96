#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace rainmrf {

// Discrete rainfall state of one cell. 1 = high, 2 = low.
using State = std::uint8_t;
inline constexpr State kHigh = 1;
inline constexpr State kLow = 2;

inline constexpr State flip(State z) { return z == kHigh ? kLow : kHigh; }

// Rainfall below this many mm/day is evaluated as if it were this value.
inline constexpr double kRainEpsilon = 0.01;

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using StateMatrix = Eigen::Matrix<State, Eigen::Dynamic, Eigen::Dynamic>;

// Cluster labels are 1-based. A label vector is dense when the used labels
// are exactly {1..K}.
using Labels = std::vector<int>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const { return 1; }
};

// Malformed input or violated precondition.
class ValidationError : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return 2; }
};

class ParseError : public ValidationError {
 public:
  ParseError(const std::string& file, std::size_t line, const std::string& what)
      : ValidationError(file + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Non-finite densities, degenerate parameters.
class NumericError : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return 3; }
};

class IoError : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return 4; }
};

inline int max_label(const Labels& labels) {
  int k = 0;
  for (int l : labels) k = l > k ? l : k;
  return k;
}

inline bool is_dense(const Labels& labels) {
  const int k = max_label(labels);
  std::vector<bool> seen(static_cast<std::size_t>(k) + 1, false);
  for (int l : labels) {
    if (l < 1) return false;
    seen[static_cast<std::size_t>(l)] = true;
  }
  for (int l = 1; l <= k; ++l)
    if (!seen[static_cast<std::size_t>(l)]) return false;
  return !labels.empty();
}

// Renumbers labels to {1..K}, preserving the relative order of label values.
// Returns the old label of every new label (index 0 unused).
inline std::vector<int> compact_labels(Labels& labels) {
  const int k = max_label(labels);
  std::vector<int> remap(static_cast<std::size_t>(k) + 1, 0);
  for (int l : labels) remap[static_cast<std::size_t>(l)] = 1;
  std::vector<int> old_of_new{0};
  int next = 0;
  for (int l = 1; l <= k; ++l) {
    if (remap[static_cast<std::size_t>(l)] != 0) {
      remap[static_cast<std::size_t>(l)] = ++next;
      old_of_new.push_back(l);
    }
  }
  for (int& l : labels) l = remap[static_cast<std::size_t>(l)];
  return old_of_new;
}

}  // namespace rainmrf
