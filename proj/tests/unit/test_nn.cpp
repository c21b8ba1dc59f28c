#include "asot/nn.hpp"

#include "../support/oracles.hpp"

#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

using namespace asot;
using namespace asot::nn;
using asot::testing::random_matrix;

namespace {

// sum(0.5 * out^2 .* weights) so that upstream = out .* weights.
struct QuadraticHead {
  Matrix weights;
  double loss(const Matrix& out) const { return 0.5 * out.cwiseAbs2().cwiseProduct(weights).sum(); }
  Matrix upstream(const Matrix& out) const { return out.cwiseProduct(weights); }
};

// Moves every ReLU pre-activation at least `margin` away from zero by adjusting biases.
void push_off_kinks(Mlp& net, const Matrix& batch, double margin) {
  for (int pass = 0; pass < 50; ++pass) {
    ForwardCache cache;
    net.forward(batch, cache);
    bool ok = true;
    for (std::size_t l = 0; l + 1 < net.layers().size(); ++l) {
      if (cache.activations[l].cwiseAbs().minCoeff() < margin) {
        net.layers()[l].bias.array() += 3.0 * margin;
        ok = false;
      }
    }
    if (ok) return;
  }
}

}  // namespace

TEST(Mlp, ZeroParametersGiveZeroOutput) {
  Mlp net({3, 4, 2}, Activation::relu, 1);
  net.set_parameters(Vector::Zero(net.parameter_count()));
  EXPECT_EQ(net.forward(Matrix::Ones(5, 3)).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Mlp, IdentityLayer) {
  Mlp net(std::vector<DenseLayer>{DenseLayer{Matrix::Identity(3, 3), Vector::Zero(3)}}, Activation::relu);
  std::mt19937_64 rng(1);
  const Matrix x = random_matrix(4, 3, rng, -1, 1);
  EXPECT_EQ(net.forward(x), x);
}

TEST(Mlp, BatchMatchesPerSampleLoop) {
  std::mt19937_64 rng(2);
  Mlp net({5, 10, 3}, Activation::relu, 7);
  const Matrix x = random_matrix(6, 5, rng, -1, 1);
  const Matrix out = net.forward(x);
  for (Index i = 0; i < 6; ++i) {
    Vector h(10);
    for (Index r = 0; r < 10; ++r) {
      double s = net.layers()[0].bias(r);
      for (Index c = 0; c < 5; ++c) s += net.layers()[0].weight(r, c) * x(i, c);
      h(r) = std::max(0.0, s);
    }
    for (Index r = 0; r < 3; ++r) {
      double s = net.layers()[1].bias(r);
      for (Index c = 0; c < 10; ++c) s += net.layers()[1].weight(r, c) * h(c);
      EXPECT_NEAR(out(i, r), s, 1e-12);
    }
  }
}

TEST(Mlp, RejectsBadShapes) {
  Mlp net({3, 2}, Activation::relu, 1);
  EXPECT_THROW(net.forward(Matrix::Ones(2, 4)), std::invalid_argument);
  EXPECT_THROW(Mlp(std::vector<DenseLayer>{DenseLayer{Matrix::Ones(2, 3), Vector::Zero(2)},
                                           DenseLayer{Matrix::Ones(1, 3), Vector::Zero(1)}},
                   Activation::relu),
               std::invalid_argument);
  EXPECT_THROW(Mlp({3}, Activation::relu, 1), std::invalid_argument);
}

TEST(Mlp, LinearNetQuadraticLossClosedForm) {
  // L = 0.5 ||X W^T + 1 b^T - Y||^2  => dW = R^T X, db = R^T 1.
  std::mt19937_64 rng(3);
  Mlp net({4, 2}, Activation::identity, 5);
  const Matrix x = random_matrix(7, 4, rng, -1, 1);
  const Matrix y = random_matrix(7, 2, rng, -1, 1);
  ForwardCache cache;
  const Matrix out = net.forward(x, cache);
  const Matrix r = out - y;
  const MlpGradients g = net.backward(cache, r);
  EXPECT_LE((g.weight[0] - r.transpose() * x).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LE((g.bias[0] - r.colwise().sum().transpose()).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Mlp, ZeroUpstreamGivesZeroGradients) {
  Mlp net({3, 5, 2}, Activation::relu, 4);
  std::mt19937_64 rng(4);
  ForwardCache cache;
  net.forward(random_matrix(3, 3, rng), cache);
  const MlpGradients g = net.backward(cache, Matrix::Zero(3, 2));
  EXPECT_EQ(net.flatten(g).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(g.input.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Mlp, BackwardMatchesFiniteDifferencesForLearnerArchitectures) {
  // ASOT-ML mapper D -> 2D -> k and ASOT-DL lambda net D -> ceil(D/2) -> 1.
  const std::vector<std::vector<Index>> shapes{{10, 20, 4}, {10, 5, 1}, {15, 30, 6}, {15, 8, 1}};
  std::mt19937_64 rng(5);
  for (const auto& dims : shapes) {
    Mlp net(dims, Activation::relu, 9);
    const Matrix x = random_matrix(4, dims.front(), rng, -1, 1);
    push_off_kinks(net, x, 1e-3);
    const QuadraticHead head{random_matrix(4, dims.back(), rng, 0.5, 1.5)};
    ForwardCache cache;
    const Matrix out = net.forward(x, cache);
    const Vector analytic = net.flatten(net.backward(cache, head.upstream(out)));
    auto loss = [&](const Vector& p) {
      Mlp probe = net;
      probe.set_parameters(p);
      return head.loss(probe.forward(x));
    };
    EXPECT_LE(grad_check(loss, net.parameters(), analytic, 1e-5), 1e-4);
  }
}

TEST(Mlp, InputGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(6);
  Mlp net({3, 6, 2}, Activation::relu, 3);
  const Matrix x = random_matrix(2, 3, rng, -1, 1);
  push_off_kinks(net, x, 1e-3);
  const QuadraticHead head{Matrix::Ones(2, 2)};
  ForwardCache cache;
  const Matrix out = net.forward(x, cache);
  const Matrix gin = net.backward(cache, head.upstream(out)).input;
  const Vector flat = Eigen::Map<const Vector>(x.data(), x.size());
  const Vector fd = asot::testing::numeric_gradient(
      [&](const Vector& v) { return head.loss(net.forward(Eigen::Map<const Matrix>(v.data(), 2, 3))); }, flat, 1e-6);
  EXPECT_LE((Eigen::Map<const Vector>(gin.data(), gin.size()) - fd).cwiseAbs().maxCoeff(), 1e-7);
}

TEST(Mlp, ParameterRoundTripAndJson) {
  Mlp net({3, 4, 2}, Activation::relu, 11);
  Mlp other({3, 4, 2}, Activation::relu, 12);
  EXPECT_FALSE(net == other);
  other.set_parameters(net.parameters());
  EXPECT_TRUE(net == other);
  EXPECT_TRUE(mlp_from_json(to_json(net)) == net);
  EXPECT_THROW(net.set_parameters(Vector::Zero(3)), std::invalid_argument);
}

TEST(Mlp, ForwardIsDeterministic) {
  std::mt19937_64 rng(7);
  Mlp a({4, 8, 3}, Activation::relu, 21);
  Mlp b({4, 8, 3}, Activation::relu, 21);
  const Matrix x = random_matrix(5, 4, rng);
  EXPECT_EQ(a.forward(x), b.forward(x));
}

TEST(Adam, ZeroGradientKeepsParametersAndDecaysMoments) {
  AdamState s;
  Vector p = Vector::Constant(3, 2.0);
  nn::adam_step(s, p, Vector::Constant(3, 1.0));
  const Vector m1 = s.first_moment;
  nn::adam_step(s, p, Vector::Zero(3));
  EXPECT_LT(s.first_moment.cwiseAbs().maxCoeff(), m1.cwiseAbs().maxCoeff());
  AdamState fresh;
  Vector q = Vector::Constant(3, 2.0);
  nn::adam_step(fresh, q, Vector::Zero(3));
  EXPECT_EQ(q, Vector::Constant(3, 2.0));
  EXPECT_EQ(fresh.step, 1);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  AdamState s;
  Vector p = Vector::Constant(1, 1.0);
  nn::adam_step(s, p, Vector::Constant(1, 3.7));
  EXPECT_NEAR(p(0), 1.0 - 0.01, 1e-8);
  AdamState t;
  Vector q = Vector::Constant(1, 1.0);
  nn::adam_step(t, q, Vector::Constant(1, -0.2));
  EXPECT_NEAR(q(0), 1.0 + 0.01, 1e-7);
}

TEST(Adam, ConvexQuadraticDecreases) {
  // f(p) = 0.5 p^T A p with A = diag(1..5).
  const Vector diag = Vector::LinSpaced(5, 1.0, 5.0);
  auto f = [&](const Vector& p) { return 0.5 * p.cwiseAbs2().dot(diag); };
  AdamState s;
  s.learning_rate = 0.1;
  Vector p = Vector::Constant(5, 1.0);
  const double initial = f(p);
  for (int i = 0; i < 100; ++i) nn::adam_step(s, p, diag.cwiseProduct(p));
  EXPECT_LT(f(p), 0.01 * initial);
}

TEST(Adam, ElementwisePermutationInvariance) {
  AdamState s1, s2;
  Vector p1(3), g1(3);
  p1 << 1, 2, 3;
  g1 << 0.5, -1, 2;
  Vector p2 = p1.reverse();
  const Vector g2 = g1.reverse();
  nn::adam_step(s1, p1, g1);
  nn::adam_step(s2, p2, g2);
  EXPECT_EQ(p1, Vector(p2.reverse()));
}

TEST(Adam, NanGradientThrows) {
  AdamState s;
  Vector p = Vector::Zero(2);
  Vector g(2);
  g << 1.0, std::nan("");
  EXPECT_THROW(nn::adam_step(s, p, g), NumericError);
  EXPECT_THROW(nn::adam_step(s, p, Vector::Zero(3)), std::invalid_argument);
}

TEST(GradCheck, QuadraticIsExact) {
  const Vector p = Vector::LinSpaced(4, -1.0, 2.0);
  auto f = [](const Vector& v) { return v.squaredNorm() + 3.0 * v.sum(); };
  const Vector g = 2.0 * p + Vector::Constant(4, 3.0);
  EXPECT_LE(grad_check(f, p, g, 1e-4), 1e-8);
  EXPECT_GT(grad_check(f, p, 1.1 * g, 1e-4), 1e-2);
}
