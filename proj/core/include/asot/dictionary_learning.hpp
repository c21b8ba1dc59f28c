#pragma once

// ASOT-DL: near-one-hot codes from unrolled projected gradient steps
//   z <- S_lambda(z - W^T (W z - x)),  S_theta(a) = max(0, a - theta),
// with a learned dictionary W (columns are anchors) and a per-input lambda
// network.

#include "asot/anchor_space.hpp"
#include "asot/nn.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace asot {

/// Inputs are shifted by `input_offset` and divided by `input_scale` before
/// encoding; the dictionary lives in those units. Anchors in sample units are
/// input_offset + input_scale * W^T.
struct DlModel {
  Matrix dictionary;  // D x k
  double input_scale = 1.0;
  Vector input_offset;  // D
  nn::Mlp lambda_net;  // D -> 1, followed by softplus
  int layers = 20;
  double alpha = 1.0;
  double beta = 1.0;
  double gamma = 1.0;
  double p = 2.0;

  Index k() const noexcept { return dictionary.cols(); }
  Index dim() const noexcept { return dictionary.rows(); }
  /// Euclidean anchor space over the dictionary columns, in sample units.
  AnchorSpace space() const;
  void validate() const;

  friend bool operator==(const DlModel& l, const DlModel& r);
};

/// Dictionary initialised from anchors (k x D), centred on their mean and
/// scaled so that the spectral norm of W^T W is 1. lambda_net is D -> ceil(D/2) -> 1 with ReLU; its output
/// layer starts near the constant lambda = 0.01.
DlModel make_dl_model(const Matrix& anchors, std::uint64_t seed, int layers = 20);

/// max(0, a_i - theta).
Vector simplex_project(const Vector& a, double theta);

/// S_lambda(z - W^T (W z - x)).
Vector near_onehot_layer(const Vector& z, const Vector& x, const Matrix& w, double lambda);

/// (x - input_offset) / input_scale per row.
Matrix dl_scaled_inputs(const DlModel& model, const Matrix& samples);

/// softplus(lambda_net(scaled x)) per row.
Vector dl_lambdas(const DlModel& model, const Matrix& samples);

/// Raw codes after the unrolled layers, starting from z = 0. n x k.
Matrix dl_codes(const DlModel& model, const Matrix& samples);

/// Raw codes divided by their l1 norm. All-zero rows become uniform and are
/// listed in `fallback_rows`.
Encoding dl_encode(const DlModel& model, const Matrix& samples, std::vector<Index>* fallback_rows = nullptr);
Vector dl_encode(const DlModel& model, const Vector& sample, bool* fallback = nullptr);

struct DlLoss {
  double total = 0.0;
  double reconstruction = 0.0;  // (1/2n) sum ||W z_i - x_i||^2
  double lp_ball = 0.0;         // (1/n) sum (||z_i||_p - 1)^2
  double simplex = 0.0;         // (1/n) sum (sum z_i - 1)^2
};

/// Loss of codes `z` (n x k) for samples in sample units.
DlLoss dl_loss(const DlModel& model, const Matrix& samples, const Matrix& z);

/// Dictionary (row-major) followed by lambda_net parameters.
Vector dl_parameters(const DlModel& model);
void set_dl_parameters(DlModel& model, const Vector& flat);

/// Loss of the unrolled encoder on `samples` and, if requested, the gradient
/// of the total in the dl_parameters layout.
DlLoss dl_objective(const DlModel& model, const Matrix& samples, Vector* gradient);

struct DlTrainConfig {
  int epochs = 500;
  Index batch_graphs = 500;
  Index sample_subsample = 4096;
  std::uint64_t seed = 0;
  double learning_rate = 0.01;

  void validate() const;
};

struct DlTrainResult {
  DlModel model;
  std::vector<double> loss_trace;  // mean total loss per epoch
  bool aborted = false;
  std::string message;
};

/// Adam training; each step pools the samples of one batch of graphs and
/// subsamples up to `sample_subsample` of them.
DlTrainResult train_dl(std::span<const Matrix> graphs, DlModel init, const DlTrainConfig& cfg);

nlohmann::json dl_to_json(const DlModel& model);
DlModel dl_from_json(const nlohmann::json& j);

}  // namespace asot
