#include "asot/metric_learning.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "json_util.hpp"

namespace asot {

void MlModel::validate() const {
  if (anchors.rows() < 1 || anchors.cols() < 1) throw std::invalid_argument("ml model: no anchors");
  if (transform.cols() != anchors.cols() || transform.rows() < 1) {
    throw std::invalid_argument("ml model: transform must be h x D");
  }
  if (mapper.layers().empty() || mapper.input_dim() != anchors.cols() || mapper.output_dim() != anchors.rows()) {
    throw std::invalid_argument("ml model: mapper must map D -> k");
  }
  if (!anchors.allFinite() || !transform.allFinite() || !std::isfinite(c_weight)) {
    throw std::invalid_argument("ml model: non-finite parameters");
  }
  if (!(c_weight > 0.0)) throw std::invalid_argument("ml model: C must be positive");
}

bool operator==(const MlModel& l, const MlModel& r) {
  return l.mapper == r.mapper && l.c_weight == r.c_weight && detail::same_matrix(l.anchors, r.anchors) &&
         detail::same_matrix(l.transform, r.transform);
}

MlModel make_ml_model(Matrix anchors, Index h, double c_weight, std::uint64_t seed) {
  const Index k = anchors.rows();
  const Index d = anchors.cols();
  if (h < 1) throw std::invalid_argument("ml model: h must be >= 1");
  MlModel m;
  m.mapper = nn::Mlp({d, 2 * d, k}, nn::Activation::relu, seed);
  m.anchors = std::move(anchors);
  m.transform = Matrix::Identity(h, d);
  m.c_weight = c_weight;
  m.validate();
  return m;
}

void MlTrainConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("ml training: epochs must be >= 0");
  if (batch_graphs < 2) throw std::invalid_argument("ml training: batch must hold at least 2 graphs");
  if (pair_subsample < 1) throw std::invalid_argument("ml training: pair_subsample must be >= 1");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("ml training: learning rate must be positive");
}

namespace {

struct Codes {
  Matrix z;                  // n x k
  Matrix y;                  // mapper output
  Vector l1;                 // ||y_i||_1, 0 on fallback rows
  nn::ForwardCache cache;
  std::vector<Index> fallback;
};

Codes encode(const MlModel& model, const Matrix& x) {
  if (!x.allFinite()) throw std::invalid_argument("ml encode: non-finite input");
  Codes c;
  c.y = model.mapper.forward(x, c.cache);
  c.z = c.y.cwiseAbs();
  c.l1 = c.z.rowwise().sum();
  for (Index i = 0; i < c.z.rows(); ++i) {
    if (c.l1(i) > 0.0 && std::isfinite(c.l1(i))) {
      c.z.row(i) /= c.l1(i);
    } else {
      c.z.row(i).setConstant(1.0 / static_cast<double>(c.z.cols()));
      c.l1(i) = 0.0;
      c.fallback.push_back(i);
    }
  }
  return c;
}

// Gradient of a loss w.r.t. mapper outputs given its gradient w.r.t. codes.
Matrix codes_backward(const Codes& c, const Matrix& dz) {
  Matrix dy = Matrix::Zero(dz.rows(), dz.cols());
  for (Index i = 0; i < dz.rows(); ++i) {
    if (c.l1(i) == 0.0) continue;
    const double inner = dz.row(i).dot(c.z.row(i));
    for (Index u = 0; u < dz.cols(); ++u) {
      const double y = c.y(i, u);
      const double s = y > 0.0 ? 1.0 : (y < 0.0 ? -1.0 : 0.0);
      dy(i, u) = s * (dz(i, u) - inner) / c.l1(i);
    }
  }
  return dy;
}

}  // namespace

Encoding ml_encode(const MlModel& model, const Matrix& samples, std::vector<Index>* fallback_rows) {
  Codes c = encode(model, samples);
  if (fallback_rows) *fallback_rows = c.fallback;
  return Encoding(std::move(c.z));
}

double ml_predicted_cost(const MlModel& model, const Vector& zi, const Vector& zj) {
  const CostMatrix cs = anchor_cost(model.space());
  if (zi.size() != cs.rows() || zj.size() != cs.cols()) throw std::invalid_argument("ml cost: code length differs from k");
  return zi.dot(cs.values() * zj);
}

double ml_loss(const MlModel& model, const Matrix& x, const Matrix& y, const CostMatrix& c_true) {
  if (c_true.rows() != x.rows() || c_true.cols() != y.rows()) throw std::invalid_argument("ml loss: cost shape mismatch");
  const Matrix zx = encode(model, x).z;
  const Matrix zy = encode(model, y).z;
  const CostMatrix cs = anchor_cost(model.space());
  const Matrix f = zx * cs.values() * zy.transpose();
  return model.c_weight * (f - c_true.values()).squaredNorm() / static_cast<double>(x.rows() * y.rows());
}

std::vector<SamplePair> all_sample_pairs(const Matrix& x, const Matrix& y) {
  const CostMatrix c = euclidean_cost(x, y);
  std::vector<SamplePair> out;
  out.reserve(static_cast<std::size_t>(x.rows() * y.rows()));
  for (Index i = 0; i < x.rows(); ++i) {
    for (Index j = 0; j < y.rows(); ++j) out.push_back({i, j, c(i, j)});
  }
  return out;
}

Vector ml_parameters(const MlModel& model) {
  const Vector net = model.mapper.parameters();
  Vector out(net.size() + model.anchors.size() + model.transform.size());
  out.head(net.size()) = net;
  Index pos = net.size();
  for (const Matrix* m : {&model.anchors, &model.transform}) {
    for (Index r = 0; r < m->rows(); ++r) {
      for (Index c = 0; c < m->cols(); ++c) out(pos++) = (*m)(r, c);
    }
  }
  return out;
}

void set_ml_parameters(MlModel& model, const Vector& flat) {
  const Index n = model.mapper.parameter_count();
  if (flat.size() != n + model.anchors.size() + model.transform.size()) {
    throw std::invalid_argument("ml parameters: wrong vector size");
  }
  model.mapper.set_parameters(flat.head(n));
  Index pos = n;
  for (Matrix* m : {&model.anchors, &model.transform}) {
    for (Index r = 0; r < m->rows(); ++r) {
      for (Index c = 0; c < m->cols(); ++c) (*m)(r, c) = flat(pos++);
    }
  }
}

double ml_objective(const MlModel& model, const Matrix& x, const Matrix& y, std::span<const SamplePair> pairs,
                    Vector* gradient) {
  if (pairs.empty()) throw std::invalid_argument("ml objective: no sample pairs");
  if (x.cols() != model.dim() || y.cols() != model.dim()) throw std::invalid_argument("ml objective: sample dim mismatch");
  const Codes cx = encode(model, x);
  const Codes cy = encode(model, y);
  const Matrix projected = model.anchors * model.transform.transpose();
  const Matrix cs = anchor_cost(model.space()).values();
  const Matrix zcs = cx.z * cs;  // n x k

  const double scale = model.c_weight / static_cast<double>(pairs.size());
  Matrix g = Matrix::Zero(x.rows(), y.rows());
  double loss = 0.0;
  for (const auto& p : pairs) {
    if (p.i < 0 || p.i >= x.rows() || p.j < 0 || p.j >= y.rows()) throw std::invalid_argument("ml objective: pair out of range");
    const double r = zcs.row(p.i).dot(cy.z.row(p.j)) - p.target;
    loss += r * r;
    g(p.i, p.j) += 2.0 * scale * r;
  }
  loss *= scale;
  if (!gradient) return loss;

  const Matrix gzy = g * cy.z;                     // n x k
  const Matrix dzx = gzy * cs;                     // C_s is symmetric
  const Matrix dzy = g.transpose() * zcs;          // m x k
  const Matrix dcs = cx.z.transpose() * gzy;       // k x k

  const Index k = model.k();
  Matrix danchors = Matrix::Zero(k, model.dim());
  Matrix dtransform = Matrix::Zero(model.transform.rows(), model.dim());
  for (Index u = 0; u < k; ++u) {
    for (Index v = 0; v < k; ++v) {
      if (u == v || cs(u, v) == 0.0) continue;
      const double w = dcs(u, v) / cs(u, v);
      if (w == 0.0) continue;
      const Vector delta = (model.anchors.row(u) - model.anchors.row(v)).transpose();
      const Vector md = (projected.row(u) - projected.row(v)).transpose();
      const Vector pull = model.transform.transpose() * md;
      danchors.row(u) += w * pull.transpose();
      danchors.row(v) -= w * pull.transpose();
      dtransform += w * md * delta.transpose();
    }
  }

  const nn::MlpGradients gx = model.mapper.backward(cx.cache, codes_backward(cx, dzx));
  const nn::MlpGradients gy = model.mapper.backward(cy.cache, codes_backward(cy, dzy));
  MlModel shaped = model;
  shaped.anchors = danchors;
  shaped.transform = dtransform;
  Vector out = ml_parameters(shaped);
  out.head(model.mapper.parameter_count()) = model.mapper.flatten(gx) + model.mapper.flatten(gy);
  *gradient = std::move(out);
  return loss;
}

MlTrainResult train_ml(std::span<const Matrix> graphs, MlModel init, const MlTrainConfig& cfg) {
  cfg.validate();
  init.validate();
  MlTrainResult result{std::move(init), {}, false, {}};
  if (cfg.epochs == 0) return result;
  if (graphs.size() < 2) throw std::invalid_argument("ml training: need at least two graphs");
  for (const auto& g : graphs) {
    if (g.rows() < 1 || g.cols() != result.model.dim()) throw std::invalid_argument("ml training: graph sample dim mismatch");
  }

  std::mt19937_64 rng(cfg.seed);
  nn::AdamState adam;
  adam.learning_rate = cfg.learning_rate;
  Vector params = ml_parameters(result.model);
  std::vector<std::size_t> order(graphs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  MlModel work = result.model;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    std::size_t epoch_pairs = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_graphs)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_graphs));
      std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                     order.begin() + static_cast<std::ptrdiff_t>(stop));
      if (batch.size() < 2) continue;
      std::shuffle(batch.begin(), batch.end(), rng);
      Vector grad_sum = Vector::Zero(params.size());
      std::size_t pair_count = 0;
      for (std::size_t b = 0; b + 1 < batch.size(); b += 2) {
        const Matrix& x = graphs[batch[b]];
        const Matrix& y = graphs[batch[b + 1]];
        std::vector<SamplePair> pairs;
        if (x.rows() * y.rows() <= cfg.pair_subsample) {
          pairs = all_sample_pairs(x, y);
        } else {
          std::uniform_int_distribution<Index> pi(0, x.rows() - 1);
          std::uniform_int_distribution<Index> pj(0, y.rows() - 1);
          pairs.resize(static_cast<std::size_t>(cfg.pair_subsample));
          for (auto& p : pairs) {
            p.i = pi(rng);
            p.j = pj(rng);
            p.target = (x.row(p.i) - y.row(p.j)).norm();
          }
        }
        Vector grad;
        try {
          epoch_loss += ml_objective(work, x, y, pairs, &grad);
        } catch (const NumericError& e) {
          result.aborted = true;
          result.message = std::string(e.what()) + " at epoch " + std::to_string(epoch);
          return result;
        }
        grad_sum += grad;
        ++pair_count;
        ++epoch_pairs;
      }
      grad_sum /= static_cast<double>(pair_count);
      if (!grad_sum.allFinite()) {
        result.aborted = true;
        result.message = "non-finite gradient at epoch " + std::to_string(epoch);
        return result;
      }
      nn::adam_step(adam, params, grad_sum);
      set_ml_parameters(work, params);
      if (!params.allFinite()) {
        result.aborted = true;
        result.message = "non-finite parameters at epoch " + std::to_string(epoch);
        return result;
      }
      result.model = work;
    }
    const double mean = epoch_pairs ? epoch_loss / static_cast<double>(epoch_pairs) : 0.0;
    if (!std::isfinite(mean)) {
      result.aborted = true;
      result.message = "non-finite loss at epoch " + std::to_string(epoch);
      return result;
    }
    result.loss_trace.push_back(mean);
  }
  return result;
}

nlohmann::json ml_to_json(const MlModel& model) {
  return {{"mapper", nn::to_json(model.mapper)},
          {"anchors", detail::matrix_json(model.anchors)},
          {"transform", detail::matrix_json(model.transform)},
          {"c_weight", model.c_weight}};
}

MlModel ml_from_json(const nlohmann::json& j) {
  MlModel m;
  m.mapper = nn::mlp_from_json(j.at("mapper"));
  m.anchors = detail::matrix_from_json(j.at("anchors"));
  m.transform = detail::matrix_from_json(j.at("transform"));
  m.c_weight = j.at("c_weight").get<double>();
  m.validate();
  return m;
}

}  // namespace asot
