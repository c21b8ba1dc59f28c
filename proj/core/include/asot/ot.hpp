#pragma once

// Single-pair optimal transport: ground costs, the exact transportation
// simplex and Sinkhorn's fixed-point iterations.

#include "asot/common.hpp"

namespace asot {

/// A discrete probability distribution: n samples in R^d with a mass vector
/// on the probability simplex.
class DiscreteDistribution {
 public:
  /// Validates the samples (finite, n >= 1) and the mass vector. Mass within
  /// 1e-6 of the simplex is renormalized; a larger deviation throws
  /// std::invalid_argument.
  DiscreteDistribution(Matrix samples, Vector mass);

  /// Mass exactly 1/n on each row of `samples`.
  static DiscreteDistribution uniform(Matrix samples);

  const Matrix& samples() const noexcept { return samples_; }
  const Vector& mass() const noexcept { return mass_; }
  Index size() const noexcept { return samples_.rows(); }
  Index dim() const noexcept { return samples_.cols(); }

 private:
  Matrix samples_;
  Vector mass_;
};

/// Nonnegative, finite ground cost matrix.
class CostMatrix {
 public:
  CostMatrix() = default;
  explicit CostMatrix(Matrix values);

  const Matrix& values() const noexcept { return values_; }
  Index rows() const noexcept { return values_.rows(); }
  Index cols() const noexcept { return values_.cols(); }
  double operator()(Index i, Index j) const { return values_(i, j); }

  CostMatrix transpose() const { return CostMatrix(values_.transpose()); }

 private:
  Matrix values_;
};

struct TransportPlan {
  Matrix values;

  /// Frobenius product <T, C>.
  double cost(const CostMatrix& c) const;
  /// Largest absolute deviation of the row/column sums from (a, b).
  double marginal_error(const Vector& a, const Vector& b) const;
};

struct OtResult {
  TransportPlan plan;
  double cost = 0.0;
};

struct SinkhornConfig {
  double epsilon = 0.1;
  int iterations = 50;
  /// Denominators of the scaling updates are clamped from below at this value.
  double underflow_floor = 1e-300;

  /// Throws std::invalid_argument unless epsilon > 0, iterations >= 1 and
  /// underflow_floor > 0.
  void validate() const;
};

struct SinkhornResult {
  TransportPlan plan;
  /// <T, C> of the entropic plan, without the entropy term.
  double cost = 0.0;
  /// Set when at least one denominator fell below the underflow floor.
  bool underflow_clamped = false;
  /// max(|T 1 - a|, |T^T 1 - b|) of the returned plan.
  double marginal_error = 0.0;
};

/// Pairwise Euclidean distances between the rows of x (n x d) and y (m x d).
CostMatrix euclidean_cost(const Matrix& x, const Matrix& y);

/// Exact optimal transport by the transportation simplex (MODI pivoting on a
/// spanning-tree basis). Deterministic: entering and leaving variables are
/// chosen by lowest index among ties.
///
/// Throws InfeasibleError when sum(a) and sum(b) differ by more than 1e-6 and
/// std::invalid_argument on shape mismatch or negative mass.
OtResult solve_exact(const Vector& a, const Vector& b, const CostMatrix& c);

/// Convenience overload on two distributions with the Euclidean ground cost.
OtResult solve_exact(const DiscreteDistribution& x, const DiscreteDistribution& y);

/// Sinkhorn with a fixed number of iterations, starting from v = 1:
///   u <- a / (K v),   v <- b / (K^T u),   K = exp(-C / epsilon).
/// Throws NumericError if a NaN appears in the scalings.
SinkhornResult sinkhorn(const Vector& a, const Vector& b, const CostMatrix& c,
                        const SinkhornConfig& cfg);

}  // namespace asot
