#pragma once

// Small dense networks with hand-written backpropagation, Adam, and a
// central-difference gradient checker.

#include "asot/common.hpp"

#include <cstdint>
#include <functional>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace asot::nn {

enum class Activation : std::uint8_t { relu, identity };

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out
};

/// Intermediate values of a forward pass, needed by backward().
struct ForwardCache {
  std::vector<Matrix> inputs;       // input of each layer, B x in
  std::vector<Matrix> activations;  // pre-activation of each layer, B x out
};

struct MlpGradients {
  std::vector<Matrix> weight;
  std::vector<Vector> bias;
  Matrix input;  // B x in
};

/// Fully connected network. The hidden activation is applied after every
/// layer except the last, which is linear.
class Mlp {
 public:
  Mlp() = default;
  /// dims = {in, hidden..., out}. Weights and biases are drawn from
  /// U(-1/sqrt(fan_in), 1/sqrt(fan_in)) using `seed`.
  Mlp(std::vector<Index> dims, Activation hidden, std::uint64_t seed);
  /// Takes ownership of explicit layers; throws if shapes do not chain.
  Mlp(std::vector<DenseLayer> layers, Activation hidden);

  Index input_dim() const { return layers_.front().weight.cols(); }
  Index output_dim() const { return layers_.back().weight.rows(); }
  const std::vector<DenseLayer>& layers() const noexcept { return layers_; }
  std::vector<DenseLayer>& layers() noexcept { return layers_; }
  Activation hidden_activation() const noexcept { return hidden_; }
  std::vector<Index> dims() const;

  /// B x in -> B x out.
  Matrix forward(const Matrix& batch) const;
  Matrix forward(const Matrix& batch, ForwardCache& cache) const;

  /// Gradients of sum(upstream .* output) w.r.t. parameters and input.
  MlpGradients backward(const ForwardCache& cache, const Matrix& upstream) const;

  /// Parameters flattened layer by layer: weight (row-major), then bias.
  Index parameter_count() const;
  Vector parameters() const;
  void set_parameters(const Vector& flat);
  Vector flatten(const MlpGradients& grads) const;

  friend bool operator==(const Mlp& l, const Mlp& r);

 private:
  void check_chain() const;

  std::vector<DenseLayer> layers_;
  Activation hidden_ = Activation::relu;
};

nlohmann::json to_json(const Mlp& net);
Mlp mlp_from_json(const nlohmann::json& j);

struct AdamState {
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_hat = 1e-8;
  std::int64_t step = 0;
  Vector first_moment;
  Vector second_moment;
};

/// One bias-corrected Adam update of `params` in place. Moments are sized on
/// the first call. Throws NumericError if `grads` contains NaN and
/// std::invalid_argument on a shape mismatch.
void adam_step(AdamState& state, Vector& params, const Vector& grads);

/// max_i |analytic_i - fd_i| / max(1e-8, |fd_i|) with fd the central
/// difference (loss(p + h e_i) - loss(p - h e_i)) / 2h.
double grad_check(const std::function<double(const Vector&)>& loss, const Vector& params, const Vector& analytic,
                  double step);

}  // namespace asot::nn
