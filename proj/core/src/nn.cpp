#include "asot/nn.hpp"

#include <cmath>
#include <random>

#include <nlohmann/json.hpp>

namespace asot::nn {

Mlp::Mlp(std::vector<Index> dims, Activation hidden, std::uint64_t seed) : hidden_(hidden) {
  if (dims.size() < 2) throw std::invalid_argument("mlp needs at least input and output dims");
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const Index in = dims[l];
    const Index out = dims[l + 1];
    if (in < 1 || out < 1) throw std::invalid_argument("mlp layer dims must be positive");
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    DenseLayer layer{Matrix(out, in), Vector(out)};
    for (Index r = 0; r < out; ++r) {
      for (Index c = 0; c < in; ++c) layer.weight(r, c) = dist(rng);
    }
    for (Index r = 0; r < out; ++r) layer.bias(r) = dist(rng);
    layers_.push_back(std::move(layer));
  }
}

Mlp::Mlp(std::vector<DenseLayer> layers, Activation hidden) : layers_(std::move(layers)), hidden_(hidden) {
  check_chain();
}

void Mlp::check_chain() const {
  if (layers_.empty()) throw std::invalid_argument("mlp has no layers");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (layers_[l].bias.size() != layers_[l].weight.rows()) throw std::invalid_argument("mlp bias size mismatch");
    if (l > 0 && layers_[l].weight.cols() != layers_[l - 1].weight.rows()) {
      throw std::invalid_argument("mlp layer dims do not chain");
    }
    if (!layers_[l].weight.allFinite() || !layers_[l].bias.allFinite()) {
      throw std::invalid_argument("mlp parameters must be finite");
    }
  }
}

std::vector<Index> Mlp::dims() const {
  std::vector<Index> out{input_dim()};
  for (const auto& l : layers_) out.push_back(l.weight.rows());
  return out;
}

Matrix Mlp::forward(const Matrix& batch) const {
  ForwardCache unused;
  return forward(batch, unused);
}

Matrix Mlp::forward(const Matrix& batch, ForwardCache& cache) const {
  if (batch.cols() != input_dim()) {
    throw std::invalid_argument("mlp input has " + std::to_string(batch.cols()) + " columns, expected " +
                                std::to_string(input_dim()));
  }
  cache.inputs.clear();
  cache.activations.clear();
  Matrix x = batch;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    cache.inputs.push_back(x);
    Matrix z = x * layers_[l].weight.transpose();
    z.rowwise() += layers_[l].bias.transpose();
    cache.activations.push_back(z);
    const bool last = l + 1 == layers_.size();
    x = (!last && hidden_ == Activation::relu) ? Matrix(z.cwiseMax(0.0)) : z;
  }
  return x;
}

MlpGradients Mlp::backward(const ForwardCache& cache, const Matrix& upstream) const {
  if (cache.inputs.size() != layers_.size()) throw std::invalid_argument("mlp backward without a matching forward");
  const Index batch = cache.inputs.front().rows();
  if (upstream.rows() != batch || upstream.cols() != output_dim()) {
    throw std::invalid_argument("mlp backward: upstream gradient shape mismatch");
  }
  MlpGradients g;
  g.weight.resize(layers_.size());
  g.bias.resize(layers_.size());
  Matrix delta = upstream;
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const bool last = l + 1 == layers_.size();
    if (!last && hidden_ == Activation::relu) {
      delta = delta.cwiseProduct((cache.activations[l].array() > 0.0).cast<double>().matrix());
    }
    g.weight[l] = delta.transpose() * cache.inputs[l];
    g.bias[l] = delta.colwise().sum().transpose();
    delta = delta * layers_[l].weight;
  }
  g.input = std::move(delta);
  return g;
}

Index Mlp::parameter_count() const {
  Index n = 0;
  for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
  return n;
}

Vector Mlp::parameters() const {
  Vector out(parameter_count());
  Index pos = 0;
  for (const auto& l : layers_) {
    for (Index r = 0; r < l.weight.rows(); ++r) {
      for (Index c = 0; c < l.weight.cols(); ++c) out(pos++) = l.weight(r, c);
    }
    out.segment(pos, l.bias.size()) = l.bias;
    pos += l.bias.size();
  }
  return out;
}

void Mlp::set_parameters(const Vector& flat) {
  if (flat.size() != parameter_count()) throw std::invalid_argument("mlp parameter vector has the wrong size");
  Index pos = 0;
  for (auto& l : layers_) {
    for (Index r = 0; r < l.weight.rows(); ++r) {
      for (Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = flat(pos++);
    }
    l.bias = flat.segment(pos, l.bias.size());
    pos += l.bias.size();
  }
}

Vector Mlp::flatten(const MlpGradients& grads) const {
  Vector out(parameter_count());
  Index pos = 0;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Matrix& w = grads.weight[i];
    for (Index r = 0; r < w.rows(); ++r) {
      for (Index c = 0; c < w.cols(); ++c) out(pos++) = w(r, c);
    }
    out.segment(pos, grads.bias[i].size()) = grads.bias[i];
    pos += grads.bias[i].size();
  }
  return out;
}

bool operator==(const Mlp& l, const Mlp& r) {
  if (l.hidden_ != r.hidden_ || l.layers_.size() != r.layers_.size()) return false;
  for (std::size_t i = 0; i < l.layers_.size(); ++i) {
    const auto& a = l.layers_[i];
    const auto& b = r.layers_[i];
    if (a.weight.rows() != b.weight.rows() || a.weight.cols() != b.weight.cols()) return false;
    if (a.weight != b.weight || a.bias != b.bias) return false;
  }
  return true;
}

nlohmann::json to_json(const Mlp& net) {
  nlohmann::json j;
  j["activation"] = net.hidden_activation() == Activation::relu ? "relu" : "identity";
  j["dims"] = net.dims();
  const Vector params = net.parameters();
  j["parameters"] = std::vector<double>(params.data(), params.data() + params.size());
  return j;
}

Mlp mlp_from_json(const nlohmann::json& j) {
  const auto act = j.at("activation").get<std::string>();
  if (act != "relu" && act != "identity") throw std::invalid_argument("unknown activation '" + act + "'");
  Mlp net(j.at("dims").get<std::vector<Index>>(), act == "relu" ? Activation::relu : Activation::identity, 0);
  const auto params = j.at("parameters").get<std::vector<double>>();
  net.set_parameters(Eigen::Map<const Vector>(params.data(), static_cast<Index>(params.size())));
  return net;
}

void adam_step(AdamState& state, Vector& params, const Vector& grads) {
  if (params.size() != grads.size()) throw std::invalid_argument("adam: parameter and gradient sizes differ");
  if (grads.hasNaN()) throw NumericError("adam: NaN gradient");
  if (state.first_moment.size() == 0 && state.step == 0) {
    state.first_moment = Vector::Zero(params.size());
    state.second_moment = Vector::Zero(params.size());
  }
  if (state.first_moment.size() != params.size()) throw std::invalid_argument("adam: state was sized for other parameters");
  ++state.step;
  state.first_moment = state.beta1 * state.first_moment + (1.0 - state.beta1) * grads;
  state.second_moment = state.beta2 * state.second_moment + (1.0 - state.beta2) * grads.cwiseAbs2();
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (Index i = 0; i < params.size(); ++i) {
    const double m_hat = state.first_moment(i) / c1;
    const double v_hat = state.second_moment(i) / c2;
    params(i) -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.eps_hat);
  }
}

double grad_check(const std::function<double(const Vector&)>& loss, const Vector& params, const Vector& analytic,
                  double step) {
  if (analytic.size() != params.size()) throw std::invalid_argument("grad_check: gradient size mismatch");
  double worst = 0.0;
  Vector probe = params;
  for (Index i = 0; i < params.size(); ++i) {
    probe(i) = params(i) + step;
    const double up = loss(probe);
    probe(i) = params(i) - step;
    const double down = loss(probe);
    probe(i) = params(i);
    const double fd = (up - down) / (2.0 * step);
    worst = std::max(worst, std::abs(analytic(i) - fd) / std::max(1e-8, std::abs(fd)));
  }
  return worst;
}

}  // namespace asot::nn
