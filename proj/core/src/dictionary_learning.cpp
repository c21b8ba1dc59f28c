#include "asot/dictionary_learning.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <Eigen/SVD>
#include <nlohmann/json.hpp>

#include "json_util.hpp"

namespace asot {

namespace {

constexpr double kInitialLambda = 0.01;

double softplus(double o) { return o > 0.0 ? o + std::log1p(std::exp(-o)) : std::log1p(std::exp(o)); }
double sigmoid(double o) { return o >= 0.0 ? 1.0 / (1.0 + std::exp(-o)) : std::exp(o) / (1.0 + std::exp(o)); }

}  // namespace

AnchorSpace DlModel::space() const {
  Matrix a = input_scale * dictionary.transpose();
  a.rowwise() += input_offset.transpose();
  return AnchorSpace(std::move(a));
}

void DlModel::validate() const {
  if (dictionary.rows() < 1 || dictionary.cols() < 1) throw std::invalid_argument("dl model: empty dictionary");
  if (!dictionary.allFinite()) throw std::invalid_argument("dl model: non-finite dictionary");
  if (!(input_scale > 0.0) || !std::isfinite(input_scale)) throw std::invalid_argument("dl model: bad input scale");
  if (input_offset.size() != dictionary.rows() || !input_offset.allFinite()) {
    throw std::invalid_argument("dl model: input offset must be a finite D-vector");
  }
  if (lambda_net.layers().empty() || lambda_net.input_dim() != dictionary.rows() || lambda_net.output_dim() != 1) {
    throw std::invalid_argument("dl model: lambda net must map D -> 1");
  }
  if (layers < 1) throw std::invalid_argument("dl model: need at least one layer");
  if (alpha < 0.0 || beta < 0.0 || gamma < 0.0) throw std::invalid_argument("dl model: loss weights must be >= 0");
  if (!(p > 1.0)) throw std::invalid_argument("dl model: p must be > 1");
}

bool operator==(const DlModel& l, const DlModel& r) {
  return detail::same_matrix(l.dictionary, r.dictionary) && l.input_scale == r.input_scale &&
         detail::same_matrix(l.input_offset, r.input_offset) &&
         l.lambda_net == r.lambda_net && l.layers == r.layers && l.alpha == r.alpha && l.beta == r.beta &&
         l.gamma == r.gamma && l.p == r.p;
}

DlModel make_dl_model(const Matrix& anchors, std::uint64_t seed, int layers) {
  if (anchors.rows() < 1 || anchors.cols() < 1) throw std::invalid_argument("dl model: no anchors");
  DlModel m;
  m.input_offset = anchors.colwise().mean().transpose();
  const Matrix w = (anchors.rowwise() - m.input_offset.transpose()).transpose();
  const double sigma = Eigen::JacobiSVD<Matrix>(w).singularValues()(0);
  m.input_scale = sigma > 0.0 ? sigma : 1.0;
  m.dictionary = w / m.input_scale;
  const Index d = anchors.cols();
  m.lambda_net = nn::Mlp({d, (d + 1) / 2, 1}, nn::Activation::relu, seed);
  auto& head = m.lambda_net.layers().back();
  head.weight *= 0.01;
  head.bias.setConstant(std::log(std::expm1(kInitialLambda)));
  m.layers = layers;
  m.validate();
  return m;
}

Vector simplex_project(const Vector& a, double theta) {
  if (!a.allFinite() || !std::isfinite(theta)) throw std::invalid_argument("simplex_project: non-finite input");
  return (a.array() - theta).cwiseMax(0.0).matrix();
}

Vector near_onehot_layer(const Vector& z, const Vector& x, const Matrix& w, double lambda) {
  if (w.rows() != x.size() || w.cols() != z.size()) throw std::invalid_argument("near_onehot_layer: dimension mismatch");
  if (!(lambda >= 0.0)) throw std::invalid_argument("near_onehot_layer: lambda must be >= 0");
  return simplex_project(z - w.transpose() * (w * z - x), lambda);
}

Matrix dl_scaled_inputs(const DlModel& model, const Matrix& samples) {
  return (samples.rowwise() - model.input_offset.transpose()) / model.input_scale;
}

namespace {

struct Unrolled {
  Matrix x;                  // scaled samples
  Vector out;                // net output before softplus
  Vector lambda;
  nn::ForwardCache net_cache;
  std::vector<Matrix> z;     // layers + 1 entries, n x k
  std::vector<Matrix> u;     // pre-projection values, n x k
};

Unrolled unroll(const DlModel& model, const Matrix& samples, bool keep) {
  if (samples.cols() != model.dim()) throw std::invalid_argument("dl: sample dim does not match dictionary");
  if (!samples.allFinite()) throw std::invalid_argument("dl: non-finite samples");
  Unrolled r;
  r.x = dl_scaled_inputs(model, samples);
  r.out = model.lambda_net.forward(r.x, r.net_cache).col(0);
  r.lambda = r.out.unaryExpr([](double o) { return softplus(o); });
  const Matrix& w = model.dictionary;
  const Matrix xw = r.x * w;
  const Matrix gram = w.transpose() * w;
  Matrix z = Matrix::Zero(samples.rows(), model.k());
  if (keep) r.z.push_back(z);
  for (int t = 0; t < model.layers; ++t) {
    Matrix u = z - z * gram + xw;
    u.colwise() -= r.lambda;
    z = u.cwiseMax(0.0);
    if (keep) {
      r.u.push_back(std::move(u));
      r.z.push_back(z);
    }
  }
  if (!keep) r.z.push_back(std::move(z));
  return r;
}

double lp_norm(const Eigen::Ref<const Eigen::RowVectorXd>& z, double p) {
  if (p == 2.0) return z.norm();
  return std::pow(z.cwiseAbs().array().pow(p).sum(), 1.0 / p);
}

DlLoss loss_scaled(const DlModel& model, const Matrix& xs, const Matrix& z) {
  const double n = static_cast<double>(xs.rows());
  DlLoss l;
  l.reconstruction = (z * model.dictionary.transpose() - xs).squaredNorm() / (2.0 * n);
  for (Index i = 0; i < z.rows(); ++i) {
    const double norm = lp_norm(z.row(i), model.p) - 1.0;
    const double sum = z.row(i).sum() - 1.0;
    l.lp_ball += norm * norm;
    l.simplex += sum * sum;
  }
  l.lp_ball /= n;
  l.simplex /= n;
  l.total = model.alpha * l.reconstruction + model.beta * l.lp_ball + model.gamma * l.simplex;
  return l;
}

}  // namespace

Vector dl_lambdas(const DlModel& model, const Matrix& samples) {
  const Matrix xs = dl_scaled_inputs(model, samples);
  return model.lambda_net.forward(xs).col(0).unaryExpr([](double o) { return softplus(o); });
}

Matrix dl_codes(const DlModel& model, const Matrix& samples) { return unroll(model, samples, false).z.back(); }

Encoding dl_encode(const DlModel& model, const Matrix& samples, std::vector<Index>* fallback_rows) {
  Matrix z = dl_codes(model, samples);
  std::vector<Index> fallback;
  for (Index i = 0; i < z.rows(); ++i) {
    const double s = z.row(i).sum();
    if (s > 0.0 && std::isfinite(s)) {
      z.row(i) /= s;
    } else {
      z.row(i).setConstant(1.0 / static_cast<double>(z.cols()));
      fallback.push_back(i);
    }
  }
  if (fallback_rows) *fallback_rows = std::move(fallback);
  return Encoding(std::move(z));
}

Vector dl_encode(const DlModel& model, const Vector& sample, bool* fallback) {
  std::vector<Index> rows;
  const Encoding e = dl_encode(model, Matrix(sample.transpose()), &rows);
  if (fallback) *fallback = !rows.empty();
  return e.codes().row(0).transpose();
}

DlLoss dl_loss(const DlModel& model, const Matrix& samples, const Matrix& z) {
  if (samples.rows() != z.rows() || samples.cols() != model.dim() || z.cols() != model.k()) {
    throw std::invalid_argument("dl_loss: shape mismatch");
  }
  if (samples.rows() == 0) throw std::invalid_argument("dl_loss: empty batch");
  return loss_scaled(model, dl_scaled_inputs(model, samples), z);
}

Vector dl_parameters(const DlModel& model) {
  const Vector net = model.lambda_net.parameters();
  Vector out(model.dictionary.size() + net.size());
  Index pos = 0;
  for (Index r = 0; r < model.dictionary.rows(); ++r) {
    for (Index c = 0; c < model.dictionary.cols(); ++c) out(pos++) = model.dictionary(r, c);
  }
  out.tail(net.size()) = net;
  return out;
}

void set_dl_parameters(DlModel& model, const Vector& flat) {
  const Index nd = model.dictionary.size();
  if (flat.size() != nd + model.lambda_net.parameter_count()) throw std::invalid_argument("dl parameters: wrong vector size");
  Index pos = 0;
  for (Index r = 0; r < model.dictionary.rows(); ++r) {
    for (Index c = 0; c < model.dictionary.cols(); ++c) model.dictionary(r, c) = flat(pos++);
  }
  model.lambda_net.set_parameters(flat.tail(flat.size() - nd));
}

DlLoss dl_objective(const DlModel& model, const Matrix& samples, Vector* gradient) {
  if (samples.rows() == 0) throw std::invalid_argument("dl objective: empty batch");
  const Unrolled r = unroll(model, samples, gradient != nullptr);
  const Matrix& zl = r.z.back();
  const DlLoss loss = loss_scaled(model, r.x, zl);
  if (!gradient) return loss;

  const double n = static_cast<double>(samples.rows());
  const Matrix& w = model.dictionary;
  const Matrix resid = zl * w.transpose() - r.x;  // n x D
  Matrix dw = model.alpha * resid.transpose() * zl / n;
  Matrix dz = model.alpha * resid * w / n;
  for (Index i = 0; i < zl.rows(); ++i) {
    const double norm = lp_norm(zl.row(i), model.p);
    if (norm > 0.0) {
      const double c = model.beta * 2.0 * (norm - 1.0) / n;
      for (Index u = 0; u < zl.cols(); ++u) {
        const double v = zl(i, u);
        if (v == 0.0) continue;
        const double s = v > 0.0 ? 1.0 : -1.0;
        dz(i, u) += c * s * std::pow(std::abs(v) / norm, model.p - 1.0);
      }
    }
    dz.row(i).array() += model.gamma * 2.0 * (zl.row(i).sum() - 1.0) / n;
  }

  Vector dlambda = Vector::Zero(samples.rows());
  for (int t = model.layers - 1; t >= 0; --t) {
    const auto ut = static_cast<std::size_t>(t);
    const Matrix du = dz.cwiseProduct((r.u[ut].array() > 0.0).cast<double>().matrix());
    const Matrix& zt = r.z[ut];
    const Matrix rt = zt * w.transpose() - r.x;  // n x D
    const Matrix duw = du * w.transpose();        // n x D
    dw -= rt.transpose() * du + duw.transpose() * zt;
    dlambda -= du.rowwise().sum();
    dz = du - duw * w;
  }

  const Vector dout = dlambda.cwiseProduct(r.out.unaryExpr([](double o) { return sigmoid(o); }));
  const nn::MlpGradients gnet = model.lambda_net.backward(r.net_cache, Matrix(dout));
  DlModel shaped = model;
  shaped.dictionary = dw;
  shaped.lambda_net.set_parameters(model.lambda_net.flatten(gnet));
  *gradient = dl_parameters(shaped);
  return loss;
}

void DlTrainConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("dl training: epochs must be >= 0");
  if (batch_graphs < 1) throw std::invalid_argument("dl training: batch_graphs must be >= 1");
  if (sample_subsample < 1) throw std::invalid_argument("dl training: sample_subsample must be >= 1");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("dl training: learning rate must be positive");
}

DlTrainResult train_dl(std::span<const Matrix> graphs, DlModel init, const DlTrainConfig& cfg) {
  cfg.validate();
  init.validate();
  DlTrainResult result{std::move(init), {}, false, {}};
  if (cfg.epochs == 0) return result;
  if (graphs.empty()) throw std::invalid_argument("dl training: no graphs");
  for (const auto& g : graphs) {
    if (g.cols() != result.model.dim()) throw std::invalid_argument("dl training: graph sample dim mismatch");
  }

  std::mt19937_64 rng(cfg.seed);
  nn::AdamState adam;
  adam.learning_rate = cfg.learning_rate;
  Vector params = dl_parameters(result.model);
  DlModel work = result.model;
  std::vector<std::size_t> order(graphs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    int steps = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_graphs)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_graphs));
      Index pooled = 0;
      for (std::size_t b = start; b < stop; ++b) pooled += graphs[order[b]].rows();
      if (pooled == 0) continue;
      Matrix pool(pooled, work.dim());
      Index row = 0;
      for (std::size_t b = start; b < stop; ++b) {
        const Matrix& g = graphs[order[b]];
        pool.middleRows(row, g.rows()) = g;
        row += g.rows();
      }
      Matrix batch;
      if (pooled <= cfg.sample_subsample) {
        batch = std::move(pool);
      } else {
        std::vector<Index> idx(static_cast<std::size_t>(pooled));
        std::iota(idx.begin(), idx.end(), Index{0});
        std::shuffle(idx.begin(), idx.end(), rng);
        batch.resize(cfg.sample_subsample, work.dim());
        for (Index i = 0; i < cfg.sample_subsample; ++i) batch.row(i) = pool.row(idx[static_cast<std::size_t>(i)]);
      }
      Vector grad;
      const DlLoss loss = dl_objective(work, batch, &grad);
      if (!std::isfinite(loss.total) || !grad.allFinite()) {
        result.aborted = true;
        result.message = "non-finite loss or gradient at epoch " + std::to_string(epoch);
        return result;
      }
      epoch_loss += loss.total;
      ++steps;
      nn::adam_step(adam, params, grad);
      if (!params.allFinite()) {
        result.aborted = true;
        result.message = "non-finite parameters at epoch " + std::to_string(epoch);
        return result;
      }
      set_dl_parameters(work, params);
      result.model = work;
    }
    result.loss_trace.push_back(steps ? epoch_loss / steps : 0.0);
  }
  return result;
}

nlohmann::json dl_to_json(const DlModel& model) {
  return {{"dictionary", detail::matrix_json(model.dictionary)},
          {"input_scale", model.input_scale},
          {"input_offset", detail::matrix_json(Matrix(model.input_offset))},
          {"lambda_net", nn::to_json(model.lambda_net)},
          {"layers", model.layers},
          {"alpha", model.alpha},
          {"beta", model.beta},
          {"gamma", model.gamma},
          {"p", model.p}};
}

DlModel dl_from_json(const nlohmann::json& j) {
  DlModel m;
  m.dictionary = detail::matrix_from_json(j.at("dictionary"));
  m.input_scale = j.at("input_scale").get<double>();
  m.input_offset = detail::matrix_from_json(j.at("input_offset")).reshaped();
  m.lambda_net = nn::mlp_from_json(j.at("lambda_net"));
  m.layers = j.at("layers").get<int>();
  m.alpha = j.at("alpha").get<double>();
  m.beta = j.at("beta").get<double>();
  m.gamma = j.at("gamma").get<double>();
  m.p = j.at("p").get<double>();
  m.validate();
  return m;
}

}  // namespace asot
