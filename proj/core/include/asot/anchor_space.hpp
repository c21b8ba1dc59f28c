#pragma once

// Anchor space translation: distributions are re-expressed as mass vectors
// over k shared anchor points, and all translated problems share one k x k
// anchor cost matrix.

#include "asot/ot.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>

#include <nlohmann/json_fwd.hpp>

namespace asot {

enum class AnchorMetric : std::uint8_t { euclidean = 0, mahalanobis = 1 };

/// k anchor points in R^d plus the metric used between them. The Mahalanobis
/// metric is d(w, w') = ||M w - M w'||_2 with M of shape h x d.
class AnchorSpace {
 public:
  AnchorSpace() = default;
  /// Euclidean anchor space. Throws std::invalid_argument if k < 1 or an entry
  /// is not finite.
  explicit AnchorSpace(Matrix anchors);
  /// Mahalanobis anchor space; `transform` must have d columns.
  AnchorSpace(Matrix anchors, Matrix transform);

  const Matrix& anchors() const noexcept { return anchors_; }
  AnchorMetric metric() const noexcept { return metric_; }
  /// h x d transform; empty for the Euclidean metric.
  const Matrix& transform() const noexcept { return transform_; }
  Index k() const noexcept { return anchors_.rows(); }
  Index dim() const noexcept { return anchors_.cols(); }

  /// Anchor metric between two points of R^d.
  double distance(const Vector& p, const Vector& q) const;

  friend bool operator==(const AnchorSpace& l, const AnchorSpace& r);

 private:
  Matrix anchors_;
  AnchorMetric metric_ = AnchorMetric::euclidean;
  Matrix transform_;
};

/// Per-sample codes over the anchors, one simplex row per sample.
class Encoding {
 public:
  Encoding() = default;
  /// Throws std::invalid_argument if a row is off the simplex by more than
  /// 1e-6, or if `one_hot` is set and a row is not a unit vector.
  explicit Encoding(Matrix codes, bool one_hot = false);

  /// One-hot rows from anchor indices.
  static Encoding from_indices(std::span<const Index> indices, Index k);

  const Matrix& codes() const noexcept { return codes_; }
  bool one_hot() const noexcept { return one_hot_; }
  Index rows() const noexcept { return codes_.rows(); }
  Index k() const noexcept { return codes_.cols(); }

 private:
  Matrix codes_;
  bool one_hot_ = false;
};

/// Mass vector of length k on the probability simplex (within 1e-6).
class MappedDistribution {
 public:
  MappedDistribution() = default;
  explicit MappedDistribution(Vector mass);
  const Vector& mass() const noexcept { return mass_; }
  Index k() const noexcept { return mass_.size(); }

 private:
  Vector mass_;
};

/// C_s(u, v) = d_AS(w_u, w_v).
CostMatrix anchor_cost(const AnchorSpace& space);

/// a' = Z^T a.
MappedDistribution map_distribution(const DiscreteDistribution& d, const Encoding& z);

/// Exact OT between two mapped distributions under the anchor cost.
double asot_exact(const MappedDistribution& ax, const MappedDistribution& bx, const CostMatrix& anchor_costs);

/// Entropic OT between two mapped distributions (Sinkhorn, <T, C_s>).
SinkhornResult easot(const MappedDistribution& ax, const MappedDistribution& bx, const CostMatrix& anchor_costs,
                     const SinkhornConfig& cfg);

/// C_hat = Z_x C_s Z_y^T.
CostMatrix reconstructed_cost(const Encoding& zx, const CostMatrix& anchor_costs, const Encoding& zy);

/// Entrywise L1 norm sum |C_hat - C|; upper bound on |W_AS - W_1|.
double prop1_bound(const CostMatrix& reconstructed, const CostMatrix& ground);

/// m * sum ||e_x|| + n * sum ||e_y|| for one-hot encodings under a shared
/// Euclidean metric, where n = res_x.size(), m = res_y.size().
/// Throws std::invalid_argument on a negative residual.
double prop2_bound(std::span<const double> residuals_x, std::span<const double> residuals_y);

/// ||w_{P(x_i)} - x_i||_2 for every sample under a one-hot encoding.
std::vector<double> onehot_residuals(const Matrix& samples, const Encoding& z, const AnchorSpace& space);

struct Equivalence {
  double w_asot = 0.0;
  double w_reconstructed_lp = 0.0;
};

/// Solves the translated problem two ways: exact OT between the mapped
/// marginals under C_s, and exact OT between the original marginals under the
/// reconstructed cost Z_x C_s Z_y^T. The two optima coincide.
Equivalence equivalence_check(const DiscreteDistribution& dx, const DiscreteDistribution& dy, const Encoding& zx,
                              const Encoding& zy, const AnchorSpace& space);

// Serialization.
//
// Binary record, little-endian, fields in this order:
//   char[8]  magic "ASOTSPC\0"
//   u32      version (1)
//   u64      k
//   u64      d
//   u8       metric tag (0 euclidean, 1 mahalanobis)
//   u64      h                     (mahalanobis only)
//   f64[k*d] anchors, row-major
//   f64[h*d] transform, row-major  (mahalanobis only)
//
// JSON record: {"k", "d", "metric": "euclidean"|"mahalanobis", "anchors": [k*d
// row-major], "h", "transform": [h*d row-major]} with the last two present for
// the Mahalanobis metric. Doubles are written with round-trip precision.
void write_binary(std::ostream& os, const AnchorSpace& space);
AnchorSpace read_binary(std::istream& is);
nlohmann::json to_json(const AnchorSpace& space);
AnchorSpace anchor_space_from_json(const nlohmann::json& j);

void save_anchor_space(const std::string& path, const AnchorSpace& space);
/// Reads either format; binary files are recognised by the magic bytes.
AnchorSpace load_anchor_space(const std::string& path);

}  // namespace asot
