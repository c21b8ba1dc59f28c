#pragma once

// ASOT-ML: a mapping network P onto the anchor simplex, the anchors W and a
// Mahalanobis transform M, fitted so that z_i^T C_s z_j regresses the ground
// cost between samples.

#include "asot/anchor_space.hpp"
#include "asot/nn.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace asot {

struct MlModel {
  nn::Mlp mapper;    // D -> k
  Matrix anchors;    // k x D
  Matrix transform;  // h x D
  double c_weight = 100.0;

  Index k() const noexcept { return anchors.rows(); }
  Index dim() const noexcept { return anchors.cols(); }
  AnchorSpace space() const { return AnchorSpace(anchors, transform); }
  /// Throws std::invalid_argument on non-finite values or inconsistent shapes.
  void validate() const;

  friend bool operator==(const MlModel& l, const MlModel& r);
};

/// Mapper D -> 2D -> k with ReLU hidden layer, given anchors (k x D) and an
/// identity-padded h x D transform.
MlModel make_ml_model(Matrix anchors, Index h, double c_weight, std::uint64_t seed);

struct MlTrainConfig {
  int epochs = 500;
  Index batch_graphs = 500;
  Index pair_subsample = 512;
  std::uint64_t seed = 0;
  double learning_rate = 0.01;

  void validate() const;
};

/// Codes z = |y| / ||y||_1 with y the mapper output. Rows whose mapper output is
/// all zero fall back to the uniform row and are listed in `fallback_rows`.
Encoding ml_encode(const MlModel& model, const Matrix& samples, std::vector<Index>* fallback_rows = nullptr);

/// z_i^T C_s z_j with C_s the Mahalanobis anchor cost.
double ml_predicted_cost(const MlModel& model, const Vector& zi, const Vector& zj);

/// (C / nm) sum_ij (f(i, j) - C_true(i, j))^2 over all sample pairs.
double ml_loss(const MlModel& model, const Matrix& x, const Matrix& y, const CostMatrix& c_true);

/// One sample pair (i, j) with its ground cost.
struct SamplePair {
  Index i = 0;
  Index j = 0;
  double target = 0.0;
};

/// Flattened parameter vector: mapper parameters, then anchors (row-major),
/// then the transform (row-major).
Vector ml_parameters(const MlModel& model);
void set_ml_parameters(MlModel& model, const Vector& flat);

/// Loss (C / P) sum_p (f(i_p, j_p) - target_p)^2 over the listed pairs and, if
/// `gradient` is non-null, its gradient in the ml_parameters layout.
double ml_objective(const MlModel& model, const Matrix& x, const Matrix& y, std::span<const SamplePair> pairs,
                    Vector* gradient);

/// All n*m pairs with Euclidean targets.
std::vector<SamplePair> all_sample_pairs(const Matrix& x, const Matrix& y);

struct MlTrainResult {
  MlModel model;
  std::vector<double> loss_trace;  // mean pair loss per epoch
  bool aborted = false;            // numeric failure; model is the last finite state
  std::string message;
};

/// Adam training over graphs given by their sample matrices (uniform masses).
/// Each epoch shuffles the graphs into batches, pairs graphs within a batch by
/// a random matching and takes one step per batch.
MlTrainResult train_ml(std::span<const Matrix> graphs, MlModel init, const MlTrainConfig& cfg);

nlohmann::json ml_to_json(const MlModel& model);
MlModel ml_from_json(const nlohmann::json& j);

}  // namespace asot
