#include "asot/metric_learning.hpp"
#include "asot/datasets.hpp"
#include "asot/kmeans.hpp"

#include "../support/oracles.hpp"

#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include <cmath>

using namespace asot;
using asot::testing::random_matrix;

namespace {

MlModel random_model(Index d, Index k, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return make_ml_model(random_matrix(k, d, rng, -1, 1), std::max<Index>(1, d / 2), 100.0, seed);
}

// No ReLU pre-activation or mapper output within `margin` of zero.
bool interior(const MlModel& m, const Matrix& x, double margin) {
  nn::ForwardCache cache;
  const Matrix y = m.mapper.forward(x, cache);
  return cache.activations[0].cwiseAbs().minCoeff() > margin && y.cwiseAbs().minCoeff() > margin;
}

double rmse_vs_exact(const std::vector<Matrix>& graphs, const MlModel& model) {
  const CostMatrix cs = anchor_cost(model.space());
  double s = 0.0;
  int count = 0;
  for (std::size_t i = 0; i < graphs.size(); ++i) {
    for (std::size_t j = i + 1; j < graphs.size(); ++j) {
      const auto dx = DiscreteDistribution::uniform(graphs[i]);
      const auto dy = DiscreteDistribution::uniform(graphs[j]);
      const double w = asot_exact(map_distribution(dx, ml_encode(model, graphs[i])),
                                  map_distribution(dy, ml_encode(model, graphs[j])), cs);
      const double e = w - solve_exact(dx, dy).cost;
      s += e * e;
      ++count;
    }
  }
  return std::sqrt(s / count);
}

}  // namespace

TEST(MlEncode, RowsOnSimplex) {
  std::mt19937_64 rng(1);
  const MlModel m = random_model(4, 5, 2);
  const Encoding e = ml_encode(m, random_matrix(20, 4, rng, -2, 2));
  for (Index i = 0; i < e.rows(); ++i) {
    EXPECT_NEAR(e.codes().row(i).sum(), 1.0, 1e-9);
    EXPECT_GE(e.codes().row(i).minCoeff(), 0.0);
  }
}

TEST(MlEncode, ZeroMapperFallsBackToUniform) {
  MlModel m = random_model(3, 4, 3);
  m.mapper.set_parameters(Vector::Zero(m.mapper.parameter_count()));
  std::vector<Index> fallback;
  const Encoding e = ml_encode(m, Matrix::Ones(2, 3), &fallback);
  EXPECT_EQ(fallback.size(), 2u);
  EXPECT_EQ(e.codes(), Matrix::Constant(2, 4, 0.25));
}

TEST(MlEncode, MatchesScalarRecomputation) {
  std::mt19937_64 rng(4);
  const MlModel m = random_model(3, 4, 5);
  const Matrix x = random_matrix(6, 3, rng, -1, 1);
  const Encoding e = ml_encode(m, x);
  for (Index i = 0; i < 6; ++i) {
    const Vector y = m.mapper.forward(Matrix(x.row(i))).row(0).transpose();
    const Vector z = y.cwiseAbs() / y.cwiseAbs().sum();
    EXPECT_LE((e.codes().row(i).transpose() - z).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(MlPredictedCost, SelectionZeroDiagonalAndLoopOracle) {
  std::mt19937_64 rng(6);
  const MlModel m = random_model(3, 4, 7);
  const CostMatrix cs = anchor_cost(m.space());
  const Vector q1 = Vector::Unit(4, 1);
  const Vector q3 = Vector::Unit(4, 3);
  const Vector d = m.transform * (m.anchors.row(1) - m.anchors.row(3)).transpose();
  EXPECT_NEAR(ml_predicted_cost(m, q1, q3), d.norm(), 1e-12);
  EXPECT_EQ(ml_predicted_cost(m, q1, q1), 0.0);
  const Vector zi = asot::testing::random_simplex(4, rng);
  const Vector zj = asot::testing::random_simplex(4, rng);
  double s = 0.0;
  for (Index u = 0; u < 4; ++u) {
    for (Index v = 0; v < 4; ++v) s += zi(u) * zj(v) * cs(u, v);
  }
  EXPECT_NEAR(ml_predicted_cost(m, zi, zj), s, 1e-12);
  EXPECT_NEAR(ml_predicted_cost(m, zi, zj), ml_predicted_cost(m, zj, zi), 1e-12);
}

TEST(MlLoss, ZeroWhenPredictionMatches) {
  std::mt19937_64 rng(8);
  const MlModel m = random_model(3, 4, 9);
  const Matrix x = random_matrix(3, 3, rng);
  const Matrix y = random_matrix(2, 3, rng);
  const Matrix f = ml_encode(m, x).codes() * anchor_cost(m.space()).values() * ml_encode(m, y).codes().transpose();
  EXPECT_NEAR(ml_loss(m, x, y, CostMatrix(f)), 0.0, 1e-20);
}

TEST(MlLoss, SinglePairArithmetic) {
  MlModel m;
  m.mapper = nn::Mlp(std::vector<nn::DenseLayer>{nn::DenseLayer{Matrix::Identity(2, 2), Vector::Zero(2)}},
                     nn::Activation::relu);
  m.anchors = Matrix::Zero(2, 2);
  m.anchors(1, 0) = 3.0;
  m.transform = Matrix::Identity(2, 2);
  m.c_weight = 100.0;
  Matrix x(1, 2), y(1, 2);
  x << 1, 0;
  y << 0, 1;
  EXPECT_NEAR(ml_loss(m, x, y, CostMatrix(Matrix::Ones(1, 1))), 400.0, 1e-12);
  EXPECT_THROW(ml_loss(m, x, y, CostMatrix(Matrix::Ones(2, 1))), std::invalid_argument);
}

TEST(MlLoss, MatchesDoubleLoopOracle) {
  std::mt19937_64 rng(10);
  const MlModel m = random_model(4, 3, 11);
  const Matrix x = random_matrix(5, 4, rng);
  const Matrix y = random_matrix(3, 4, rng);
  const CostMatrix truth = euclidean_cost(x, y);
  const Matrix zx = ml_encode(m, x).codes();
  const Matrix zy = ml_encode(m, y).codes();
  double s = 0.0;
  for (Index i = 0; i < 5; ++i) {
    for (Index j = 0; j < 3; ++j) {
      const double f = ml_predicted_cost(m, zx.row(i).transpose(), zy.row(j).transpose());
      s += (f - truth(i, j)) * (f - truth(i, j));
    }
  }
  EXPECT_NEAR(ml_loss(m, x, y, truth), 100.0 * s / 15.0, 1e-10);
  EXPECT_GE(ml_loss(m, x, y, truth), 0.0);
  EXPECT_NEAR(ml_objective(m, x, y, all_sample_pairs(x, y), nullptr), ml_loss(m, x, y, truth), 1e-10);
}

TEST(MlGradient, MatchesFiniteDifferencesAtInteriorPoints) {
  int checked = 0;
  for (std::uint64_t seed = 0; checked < 10 && seed < 200; ++seed) {
    std::mt19937_64 rng(seed + 100);
    const Index d = 3 + static_cast<Index>(seed % 3);
    const MlModel m = random_model(d, 3, seed);
    const Matrix x = random_matrix(3, d, rng, -1, 1);
    const Matrix y = random_matrix(4, d, rng, -1, 1);
    if (!interior(m, x, 1e-3) || !interior(m, y, 1e-3)) continue;
    const auto pairs = all_sample_pairs(x, y);
    Vector grad;
    ml_objective(m, x, y, pairs, &grad);
    auto loss = [&](const Vector& p) {
      MlModel probe = m;
      set_ml_parameters(probe, p);
      return ml_objective(probe, x, y, pairs, nullptr);
    };
    EXPECT_LE(nn::grad_check(loss, ml_parameters(m), grad, 1e-6), 1e-4) << "seed " << seed;
    ++checked;
  }
  EXPECT_EQ(checked, 10);
}

TEST(MlParameters, RoundTripAndJson) {
  MlModel m = random_model(3, 4, 12);
  MlModel other = random_model(3, 4, 13);
  set_ml_parameters(other, ml_parameters(m));
  EXPECT_EQ(other, m);
  EXPECT_EQ(ml_from_json(ml_to_json(m)), m);
}

TEST(TrainMl, ZeroEpochsReturnsInitialModel) {
  const MlModel m = random_model(2, 3, 14);
  std::mt19937_64 rng(1);
  const std::vector<Matrix> graphs{random_matrix(3, 2, rng), random_matrix(4, 2, rng)};
  MlTrainConfig cfg;
  cfg.epochs = 0;
  const MlTrainResult r = train_ml(graphs, m, cfg);
  EXPECT_EQ(r.model, m);
  EXPECT_TRUE(r.loss_trace.empty());
}

TEST(TrainMl, DistinctPointDatasetImprovesLossAndBound) {
  // Every sample is one of k = 3 points.
  Matrix pts(3, 2);
  pts << 0, 0, 1, 0, 0, 1;
  std::mt19937_64 rng(2);
  std::vector<Matrix> graphs;
  for (int g = 0; g < 12; ++g) {
    const Index n = asot::testing::uniform_index(2, 5, rng);
    Matrix x(n, 2);
    for (Index i = 0; i < n; ++i) x.row(i) = pts.row(asot::testing::uniform_index(0, 2, rng));
    graphs.push_back(x);
  }
  const MlModel init = make_ml_model(pts, 2, 100.0, 3);
  MlTrainConfig cfg;
  cfg.epochs = 200;
  cfg.batch_graphs = 12;
  cfg.seed = 4;
  const MlTrainResult r = train_ml(graphs, init, cfg);
  ASSERT_FALSE(r.aborted) << r.message;
  EXPECT_LT(r.loss_trace.back(), r.loss_trace.front());
  Matrix hx(2, 2), hy(3, 2);
  hx << 0, 0, 1, 0;
  hy << 0, 1, 0, 1, 1, 0;
  const CostMatrix truth = euclidean_cost(hx, hy);
  auto bound = [&](const MlModel& m) {
    return prop1_bound(reconstructed_cost(ml_encode(m, hx), anchor_cost(m.space()), ml_encode(m, hy)), truth);
  };
  EXPECT_LT(bound(r.model), bound(init));
}

TEST(TrainMl, BlobsBeatUntrainedBaseline) {
  BlobConfig bc;
  bc.n_graphs = 10;
  bc.min_nodes = 4;
  bc.max_nodes = 8;
  bc.n_clusters = 2;
  bc.seed = 5;
  const auto graphs = feature_matrices(synth_blobs(bc));
  Matrix pool(0, 2);
  for (const auto& g : graphs) {
    pool.conservativeResize(pool.rows() + g.rows(), Eigen::NoChange);
    pool.bottomRows(g.rows()) = g;
  }
  const Index k = 4;
  const MlModel init = make_ml_model(fit_kmeans(pool, KmeansConfig{k, 1024, 300, 0, 1e-6}).space.anchors(), 2, 100.0, 6);
  MlTrainConfig cfg;
  cfg.epochs = 300;
  cfg.seed = 7;
  const MlTrainResult r = train_ml(graphs, init, cfg);
  ASSERT_FALSE(r.aborted) << r.message;
  EXPECT_LE(rmse_vs_exact(graphs, r.model), 0.5 * rmse_vs_exact(graphs, init));
}

TEST(TrainMl, DeterministicForSeed) {
  std::mt19937_64 rng(8);
  std::vector<Matrix> graphs;
  for (int g = 0; g < 6; ++g) graphs.push_back(random_matrix(4, 2, rng));
  const MlModel init = random_model(2, 3, 9);
  MlTrainConfig cfg;
  cfg.epochs = 5;
  cfg.pair_subsample = 5;
  const MlTrainResult a = train_ml(graphs, init, cfg);
  const MlTrainResult b = train_ml(graphs, init, cfg);
  EXPECT_EQ(a.model, b.model);
  EXPECT_EQ(a.loss_trace, b.loss_trace);
}
