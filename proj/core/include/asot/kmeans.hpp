#pragma once

// Anchor learning by k-means clustering of the pooled samples, and the
// one-hot nearest-anchor encoder that goes with it.

#include "asot/anchor_space.hpp"

#include <cstdint>
#include <vector>

namespace asot {

struct KmeansConfig {
  Index k = 8;
  Index batch_size = 1024;
  /// Upper bound on mini-batch steps and on full refinement passes.
  int max_iters = 300;
  std::uint64_t seed = 0;
  /// Stop once no center moves by more than this (Euclidean).
  double tol = 1e-6;

  void validate() const;
};

struct KmeansResult {
  AnchorSpace space;
  /// Within-cluster sum of squared distances after each full pass; the first
  /// entry is the state right after the mini-batch phase.
  std::vector<double> inertia_trace;
  double inertia = 0.0;
  int full_passes = 0;
};

/// k-means++ seeding, Sculley mini-batch updates, then full Lloyd passes until
/// the centers stop moving. Deterministic for a fixed seed.
///
/// With fewer distinct samples than k, the distinct samples are all used as
/// anchors and the remainder are copies with a 1e-9 deterministic jitter.
/// Throws std::invalid_argument when `samples` is empty.
KmeansResult fit_kmeans(const Matrix& samples, const KmeansConfig& cfg);

/// Nested fit for sweeps over k: the centers of `previous` are kept as the
/// first seeds and the remaining ones come from k-means++. Returns the pass
/// (including the initial seeding) with the smallest mean residual norm, so
/// the mean residual never exceeds the one of `previous`.
KmeansResult fit_kmeans_nested(const Matrix& samples, const AnchorSpace& previous, const KmeansConfig& cfg);

/// Index of the nearest anchor under the Euclidean metric; ties go to the
/// lowest index. Throws if the space is not Euclidean or dims differ.
Index nearest_anchor(const Vector& x, const AnchorSpace& space);

/// One-hot row (1 x k) for the nearest anchor.
Encoding encode_onehot(const Vector& x, const AnchorSpace& space);

/// One-hot encoding for every row of `samples`.
Encoding encode_onehot_rows(const Matrix& samples, const AnchorSpace& space);

double kmeans_inertia(const Matrix& samples, const AnchorSpace& space);
double mean_residual_norm(const Matrix& samples, const AnchorSpace& space);

}  // namespace asot
