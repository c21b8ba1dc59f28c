#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <stdexcept>
#include <string>

namespace asot {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Raised when the transportation polytope U(a, b) is empty, i.e. the two
/// mass vectors do not carry the same total mass.
class InfeasibleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when an iterative computation produced NaN or an unrecoverable
/// non-finite value.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised by the dataset readers. Carries the offending file and 1-based line.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::string file, std::size_t line, const std::string& what)
      : std::runtime_error(file + ":" + std::to_string(line) + ": " + what),
        file_(std::move(file)),
        line_(line) {}

  const std::string& file() const noexcept { return file_; }
  std::size_t line() const noexcept { return line_; }

 private:
  std::string file_;
  std::size_t line_;
};

// Tolerances shared by the distribution types.
inline constexpr double kSimplexTolerance = 1e-9;
inline constexpr double kNormalizeTolerance = 1e-6;

/// Checks that `mass` is nonnegative and sums to one within
/// kNormalizeTolerance, then returns it rescaled to sum exactly to one.
/// Throws std::invalid_argument otherwise.
Vector normalize_mass(const Vector& mass);

/// True if every entry is >= -tol and the entries sum to 1 within tol.
bool on_simplex(const Vector& v, double tol);

bool all_finite(const Matrix& m);

}  // namespace asot
