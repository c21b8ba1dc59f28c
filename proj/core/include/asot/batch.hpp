#pragma once

// Batch execution of multiple OT problems.

#include "asot/ot.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace asot {

using IndexPair = std::pair<std::size_t, std::size_t>;

/// A collection of distributions plus the list of (i, j) pairs to solve.
class ProblemSet {
 public:
  ProblemSet() = default;
  /// Throws std::invalid_argument on out-of-range indices, self-pairs or
  /// duplicate pairs.
  ProblemSet(std::vector<DiscreteDistribution> distributions, std::vector<IndexPair> pairs);

  /// All unordered pairs (i < j).
  static ProblemSet all_pairs(std::vector<DiscreteDistribution> distributions);

  const std::vector<DiscreteDistribution>& distributions() const noexcept { return distributions_; }
  const std::vector<IndexPair>& pairs() const noexcept { return pairs_; }

 private:
  std::vector<DiscreteDistribution> distributions_;
  std::vector<IndexPair> pairs_;
};

/// k x N stacked source and target marginals; column i is one problem.
struct BatchedMarginals {
  Matrix sources;
  Matrix targets;

  /// Throws std::invalid_argument unless shapes agree and every column is on
  /// the probability simplex within 1e-9.
  void validate() const;
};

enum class ColumnStatus : std::uint8_t { ok, underflow_clamped, numeric_failure };

struct BatchResult {
  Vector costs;
  std::vector<ColumnStatus> status;
};

/// Matrix-form Sinkhorn over N problems sharing one k x k cost:
///   U <- A / (K V),   V <- B / (K^T U).
/// A NaN in one column marks that column numeric_failure (cost NaN) and leaves
/// the others untouched.
BatchResult batched_sinkhorn_fixed(const BatchedMarginals& marginals, const CostMatrix& shared_cost,
                                   const SinkhornConfig& cfg);

/// Builds the ground cost between two sample matrices.
using GroundMetric = std::function<CostMatrix(const Matrix&, const Matrix&)>;

/// Block-diagonal stack of per-pair Gibbs kernels. Only the diagonal blocks
/// are stored; products never touch off-block positions.
class BlockDiagonalKernel {
 public:
  BlockDiagonalKernel() = default;

  void add_block(Matrix block);

  /// Extracts the diagonal blocks of a dense stacked matrix. Off-block entries
  /// of `dense` are ignored.
  static BlockDiagonalKernel from_dense(const Matrix& dense, const std::vector<Index>& row_sizes,
                                        const std::vector<Index>& col_sizes);

  std::size_t block_count() const noexcept { return blocks_.size(); }
  Index total_rows() const noexcept { return total_rows_; }
  Index total_cols() const noexcept { return total_cols_; }
  Index row_offset(std::size_t b) const { return row_offsets_[b]; }
  Index col_offset(std::size_t b) const { return col_offsets_[b]; }
  const Matrix& block(std::size_t b) const { return blocks_[b]; }

  /// True if (r, c) of the stacked matrix lies inside a diagonal block.
  bool in_block(Index r, Index c) const;

  /// Stacked products K v and K^T u, computed block by block.
  Vector multiply(const Vector& v) const;
  Vector multiply_transpose(const Vector& u) const;

 private:
  std::vector<Matrix> blocks_;
  std::vector<Index> row_offsets_;
  std::vector<Index> col_offsets_;
  Index total_rows_ = 0;
  Index total_cols_ = 0;
};

/// Sinkhorn over every pair of `problems` as one stacked update sequence on a
/// block-diagonal kernel. Entry p of the result is the cost of pairs()[p].
BatchResult bds_sinkhorn(const ProblemSet& problems, const GroundMetric& metric,
                         const SinkhornConfig& cfg);

/// Same as above with a caller-provided stacked kernel and cost blocks; used
/// by bds_sinkhorn and by tests that inject their own kernel storage.
BatchResult bds_sinkhorn_stacked(const BlockDiagonalKernel& kernel,
                                 const std::vector<CostMatrix>& costs, const Vector& stacked_a,
                                 const Vector& stacked_b, const SinkhornConfig& cfg);

/// Symmetric N x N matrix with a mask of the entries that were computed.
class DistanceMatrix {
 public:
  DistanceMatrix() = default;
  explicit DistanceMatrix(std::size_t n);

  std::size_t size() const noexcept { return n_; }
  const Matrix& values() const noexcept { return values_; }
  bool filled(std::size_t i, std::size_t j) const { return mask_[i * n_ + j] != 0; }
  double operator()(std::size_t i, std::size_t j) const { return values_(i, j); }

  /// Sets (i, j) and (j, i). Diagonal entries must be zero; values must be
  /// nonnegative.
  void set(std::size_t i, std::size_t j, double value);
  /// Records a failed entry: it stays unfilled and is listed in failures().
  void mark_failed(std::size_t i, std::size_t j, std::string reason);

  std::size_t filled_count() const;
  const std::vector<std::pair<IndexPair, std::string>>& failures() const noexcept { return failures_; }

 private:
  std::size_t n_ = 0;
  Matrix values_;
  std::vector<char> mask_;
  std::vector<std::pair<IndexPair, std::string>> failures_;
};

enum class Strategy { exact, sinkhorn_one_by_one, bds_sinkhorn, easot_batched };

std::string_view to_string(Strategy s);
/// Accepts "exact", "sinkhorn-one-by-one", "bds-sinkhorn", "easot-batched".
Strategy parse_strategy(std::string_view name);

struct PairwiseOptions {
  Strategy strategy = Strategy::exact;
  SinkhornConfig sinkhorn;
  /// When set, every distribution lives on the same k points and this k x k
  /// cost replaces the per-pair ground cost (ASOT problems). Required for
  /// easot_batched.
  std::optional<CostMatrix> shared_cost;
  GroundMetric metric;  // defaults to euclidean_cost
  std::size_t chunk_size = 1024;
  unsigned threads = 1;
};

/// Fills the entries of `problems.pairs()` (each unordered pair once).
/// Solver failures are recorded per entry in the mask instead of aborting.
DistanceMatrix pairwise_matrix(const ProblemSet& problems, const PairwiseOptions& options);

/// Runs fn(i) for i in [0, count) over `threads` workers with a static
/// contiguous partition. fn must only write disjoint state.
void parallel_for(std::size_t count, unsigned threads, const std::function<void(std::size_t)>& fn);

}  // namespace asot
