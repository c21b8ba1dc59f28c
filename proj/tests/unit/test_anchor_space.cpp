#include "asot/anchor_space.hpp"
#include "asot/batch.hpp"

#include "../support/oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include <nlohmann/json.hpp>

using namespace asot;
using asot::testing::random_matrix;
using asot::testing::random_simplex;
using asot::testing::random_simplex_rows;

TEST(AnchorCost, ThreeFourFive) {
  Matrix w(2, 2);
  w << 0, 0, 3, 4;
  const CostMatrix c = anchor_cost(AnchorSpace(w));
  EXPECT_EQ(c(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(c(0, 1), 5.0);
  EXPECT_DOUBLE_EQ(c(1, 0), 5.0);
}

TEST(AnchorCost, IdentityMahalanobisEqualsEuclidean) {
  std::mt19937_64 rng(1);
  const Matrix w = random_matrix(5, 3, rng);
  EXPECT_LE((anchor_cost(AnchorSpace(w, Matrix::Identity(3, 3))).values() - anchor_cost(AnchorSpace(w)).values())
                .cwiseAbs()
                .maxCoeff(),
            0.0);
}

TEST(AnchorCost, MahalanobisScalarOracleAndMetricAxioms) {
  std::mt19937_64 rng(2);
  const Matrix w = random_matrix(6, 4, rng, -1, 1);
  const Matrix m = random_matrix(2, 4, rng, -1, 1);
  const CostMatrix c = anchor_cost(AnchorSpace(w, m));
  for (Index u = 0; u < 6; ++u) {
    EXPECT_EQ(c(u, u), 0.0);
    for (Index v = 0; v < 6; ++v) {
      const Vector diff = m * (w.row(u) - w.row(v)).transpose();
      double s = 0.0;
      for (Index i = 0; i < diff.size(); ++i) s += diff(i) * diff(i);
      EXPECT_NEAR(c(u, v), std::sqrt(s), 1e-12);
      EXPECT_EQ(c(u, v), c(v, u));
      for (Index t = 0; t < 6; ++t) EXPECT_LE(c(u, v), c(u, t) + c(t, v) + 1e-12);
    }
  }
}

TEST(AnchorSpace, Validation) {
  EXPECT_THROW(AnchorSpace(Matrix(0, 2)), std::invalid_argument);
  EXPECT_THROW(AnchorSpace(Matrix::Ones(2, 2), Matrix::Ones(2, 3)), std::invalid_argument);
  Matrix bad = Matrix::Ones(2, 2);
  bad(1, 1) = INFINITY;
  EXPECT_THROW(AnchorSpace{bad}, std::invalid_argument);
}

TEST(Encoding, Validation) {
  Matrix z(1, 2);
  z << 0.5, 0.6;
  EXPECT_THROW(Encoding{z}, std::invalid_argument);
  z << 0.5, 0.5;
  EXPECT_THROW(Encoding(z, true), std::invalid_argument);
  const std::vector<Index> idx{1, 0};
  const Encoding e = Encoding::from_indices(idx, 3);
  EXPECT_TRUE(e.one_hot());
  EXPECT_EQ(e.codes()(0, 1), 1.0);
}

TEST(MapDistribution, OneHotAggregation) {
  const std::vector<Index> idx{0, 0, 1};
  const auto d = DiscreteDistribution::uniform(Matrix::Zero(3, 1));
  const MappedDistribution a = map_distribution(d, Encoding::from_indices(idx, 2));
  EXPECT_NEAR(a.mass()(0), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(a.mass()(1), 1.0 / 3.0, 1e-15);
}

TEST(MapDistribution, IdentityKeepsMass) {
  std::mt19937_64 rng(3);
  const Vector mass = random_simplex(4, rng);
  const DiscreteDistribution d(Matrix::Zero(4, 1), mass);
  const MappedDistribution a = map_distribution(d, Encoding(Matrix::Identity(4, 4), true));
  EXPECT_LE((a.mass() - mass).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(MapDistribution, MatrixVectorOracle) {
  std::mt19937_64 rng(4);
  const Vector mass = random_simplex(7, rng);
  const Matrix z = random_simplex_rows(7, 3, rng);
  const MappedDistribution a = map_distribution(DiscreteDistribution(Matrix::Zero(7, 1), mass), Encoding(z));
  EXPECT_NEAR(a.mass().sum(), 1.0, 1e-12);
  for (Index u = 0; u < 3; ++u) {
    double s = 0.0;
    for (Index i = 0; i < 7; ++i) s += z(i, u) * mass(i);
    EXPECT_NEAR(a.mass()(u), s, 1e-12);
  }
  EXPECT_THROW(map_distribution(DiscreteDistribution(Matrix::Zero(6, 1), random_simplex(6, rng)), Encoding(z)),
               std::invalid_argument);
}

TEST(AsotExact, SelfAndForcedPlan) {
  std::mt19937_64 rng(5);
  const CostMatrix cs = anchor_cost(AnchorSpace(random_matrix(4, 2, rng)));
  const MappedDistribution a(random_simplex(4, rng));
  EXPECT_NEAR(asot_exact(a, a, cs), 0.0, 1e-9);
  Vector e0(2), e1(2);
  e0 << 1, 0;
  e1 << 0, 1;
  Matrix c(2, 2);
  c << 0, 2.5, 2.5, 0;
  EXPECT_NEAR(asot_exact(MappedDistribution(e0), MappedDistribution(e1), CostMatrix(c)), 2.5, 1e-12);
}

TEST(Easot, SelfTransportAndConvergence) {
  std::mt19937_64 rng(6);
  // Anchors on a unit-spaced grid, well separated relative to epsilon.
  Matrix grid(5, 2);
  grid << 0, 0, 1, 0, 0, 1, 1, 1, 2, 0;
  const CostMatrix cs = anchor_cost(AnchorSpace(grid));
  const MappedDistribution a(random_simplex(5, rng));
  EXPECT_LE(easot(a, a, cs, SinkhornConfig{0.1, 50, 1e-300}).cost, 1e-3);
  for (int t = 0; t < 20; ++t) {
    const CostMatrix rc = anchor_cost(AnchorSpace(random_matrix(5, 2, rng)));
    const MappedDistribution x(random_simplex(5, rng));
    const MappedDistribution y(random_simplex(5, rng));
    EXPECT_NEAR(easot(x, y, rc, SinkhornConfig{0.01, 2000, 1e-300}).cost, asot_exact(x, y, rc), 1e-3);
  }
}

TEST(Easot, BatchedEqualsPerPair) {
  std::mt19937_64 rng(7);
  const CostMatrix cs = anchor_cost(AnchorSpace(random_matrix(6, 3, rng)));
  BatchedMarginals m{Matrix(6, 10), Matrix(6, 10)};
  for (Index i = 0; i < 10; ++i) {
    m.sources.col(i) = random_simplex(6, rng);
    m.targets.col(i) = random_simplex(6, rng);
  }
  const SinkhornConfig cfg;
  const BatchResult r = batched_sinkhorn_fixed(m, cs, cfg);
  for (Index i = 0; i < 10; ++i) {
    EXPECT_NEAR(r.costs(i), easot(MappedDistribution(m.sources.col(i)), MappedDistribution(m.targets.col(i)), cs, cfg).cost,
                1e-10);
  }
}

TEST(ReconstructedCost, IdentitySelectionAndLoopOracle) {
  std::mt19937_64 rng(8);
  const CostMatrix cs = anchor_cost(AnchorSpace(random_matrix(3, 2, rng)));
  const Encoding id(Matrix::Identity(3, 3), true);
  EXPECT_EQ(reconstructed_cost(id, cs, id).values(), cs.values());

  const std::vector<Index> ix{2, 0};
  const std::vector<Index> iy{1, 1, 0};
  const CostMatrix sel = reconstructed_cost(Encoding::from_indices(ix, 3), cs, Encoding::from_indices(iy, 3));
  for (Index i = 0; i < 2; ++i) {
    for (Index j = 0; j < 3; ++j) EXPECT_EQ(sel(i, j), cs(ix[static_cast<std::size_t>(i)], iy[static_cast<std::size_t>(j)]));
  }

  const Matrix zx = random_simplex_rows(4, 3, rng);
  const Matrix zy = random_simplex_rows(5, 3, rng);
  const CostMatrix c = reconstructed_cost(Encoding(zx), cs, Encoding(zy));
  for (Index i = 0; i < 4; ++i) {
    for (Index j = 0; j < 5; ++j) {
      double s = 0.0;
      for (Index u = 0; u < 3; ++u) {
        for (Index v = 0; v < 3; ++v) s += zx(i, u) * zy(j, v) * cs(u, v);
      }
      EXPECT_NEAR(c(i, j), s, 1e-12);
    }
  }
}

TEST(ReconstructionBound, ArithmeticAndCollapse) {
  const Matrix c = Matrix::Ones(2, 2);
  EXPECT_NEAR(prop1_bound(CostMatrix(Matrix(c.array() + 0.1)), CostMatrix(c)), 0.4, 1e-12);
  EXPECT_EQ(prop1_bound(CostMatrix(c), CostMatrix(c)), 0.0);
  EXPECT_THROW(prop1_bound(CostMatrix(c), CostMatrix(Matrix::Ones(2, 3))), std::invalid_argument);
}

TEST(ReconstructionBound, BoundHoldsOnRandomInstances) {
  std::mt19937_64 rng(9);
  for (int t = 0; t < 200; ++t) {
    const Index n = asot::testing::uniform_index(2, 8, rng);
    const Index m = asot::testing::uniform_index(2, 8, rng);
    const Index k = asot::testing::uniform_index(2, 5, rng);
    const DiscreteDistribution dx(random_matrix(n, 2, rng), random_simplex(n, rng));
    const DiscreteDistribution dy(random_matrix(m, 2, rng), random_simplex(m, rng));
    const AnchorSpace space(random_matrix(k, 2, rng));
    const Encoding zx(random_simplex_rows(n, k, rng));
    const Encoding zy(random_simplex_rows(m, k, rng));
    const CostMatrix cs = anchor_cost(space);
    const double was = asot_exact(map_distribution(dx, zx), map_distribution(dy, zy), cs);
    const double w1 = solve_exact(dx, dy).cost;
    const double bound = prop1_bound(reconstructed_cost(zx, cs, zy), euclidean_cost(dx.samples(), dy.samples()));
    ASSERT_GT(bound, 0.0);
    EXPECT_LT(std::abs(was - w1), bound);
  }
}

TEST(ResidualBound, ArithmeticAndValidation) {
  const std::vector<double> rx{0.3};
  const std::vector<double> ry{0.4};
  EXPECT_NEAR(prop2_bound(rx, ry), 0.7, 1e-15);
  const std::vector<double> neg{-0.1};
  EXPECT_THROW(prop2_bound(neg, ry), std::invalid_argument);
}

TEST(ResidualBound, ZeroResidualCollapse) {
  std::mt19937_64 rng(10);
  const Matrix pts = random_matrix(5, 2, rng);
  const AnchorSpace space(pts);
  std::vector<Index> ix{0, 1, 2};
  std::vector<Index> iy{2, 3, 4, 4};
  Matrix x(3, 2), y(4, 2);
  for (Index i = 0; i < 3; ++i) x.row(i) = pts.row(ix[static_cast<std::size_t>(i)]);
  for (Index j = 0; j < 4; ++j) y.row(j) = pts.row(iy[static_cast<std::size_t>(j)]);
  const DiscreteDistribution dx(x, random_simplex(3, rng));
  const DiscreteDistribution dy(y, random_simplex(4, rng));
  const Encoding zx = Encoding::from_indices(ix, 5);
  const Encoding zy = Encoding::from_indices(iy, 5);
  const auto rx = onehot_residuals(x, zx, space);
  const auto ry = onehot_residuals(y, zy, space);
  EXPECT_EQ(prop2_bound(rx, ry), 0.0);
  EXPECT_NEAR(asot_exact(map_distribution(dx, zx), map_distribution(dy, zy), anchor_cost(space)), solve_exact(dx, dy).cost,
              1e-9);
}

TEST(Equivalence, IdentityEncodingMatchesGroundTruth) {
  std::mt19937_64 rng(11);
  const Matrix pts = random_matrix(4, 2, rng);
  const DiscreteDistribution dx(pts, random_simplex(4, rng));
  const DiscreteDistribution dy(pts, random_simplex(4, rng));
  const Encoding id(Matrix::Identity(4, 4), true);
  const Equivalence e = equivalence_check(dx, dy, id, id, AnchorSpace(pts));
  const double truth = solve_exact(dx, dy).cost;
  EXPECT_NEAR(e.w_asot, truth, 1e-9);
  EXPECT_NEAR(e.w_reconstructed_lp, truth, 1e-9);
}

TEST(Equivalence, OneHotEncodings) {
  std::mt19937_64 rng(12);
  for (int t = 0; t < 30; ++t) {
    const Index n = asot::testing::uniform_index(2, 10, rng);
    const Index m = asot::testing::uniform_index(2, 10, rng);
    const Index k = asot::testing::uniform_index(2, 6, rng);
    std::vector<Index> ix(static_cast<std::size_t>(n)), iy(static_cast<std::size_t>(m));
    for (auto& v : ix) v = asot::testing::uniform_index(0, k - 1, rng);
    for (auto& v : iy) v = asot::testing::uniform_index(0, k - 1, rng);
    const Equivalence e = equivalence_check(DiscreteDistribution(random_matrix(n, 2, rng), random_simplex(n, rng)),
                                            DiscreteDistribution(random_matrix(m, 2, rng), random_simplex(m, rng)),
                                            Encoding::from_indices(ix, k), Encoding::from_indices(iy, k),
                                            AnchorSpace(random_matrix(k, 2, rng)));
    EXPECT_LE(std::abs(e.w_asot - e.w_reconstructed_lp), 1e-8 * std::max(1.0, e.w_asot));
  }
}

TEST(Serialization, BinaryAndJsonRoundTripBitExact) {
  std::mt19937_64 rng(13);
  const AnchorSpace euclid(random_matrix(4, 3, rng, -1, 1));
  const AnchorSpace maha(random_matrix(4, 3, rng, -1, 1), random_matrix(2, 3, rng, -1, 1));
  for (const auto* s : {&euclid, &maha}) {
    std::stringstream ss;
    write_binary(ss, *s);
    EXPECT_EQ(read_binary(ss), *s);
    EXPECT_EQ(anchor_space_from_json(to_json(*s)), *s);
  }
  const auto dir = std::filesystem::temp_directory_path();
  save_anchor_space((dir / "asot_space_test.bin").string(), maha);
  save_anchor_space((dir / "asot_space_test.json").string(), maha);
  EXPECT_EQ(load_anchor_space((dir / "asot_space_test.bin").string()), maha);
  EXPECT_EQ(load_anchor_space((dir / "asot_space_test.json").string()), maha);
}

TEST(Serialization, RejectsCorruptRecords) {
  std::stringstream ss("ASOTSPC");
  EXPECT_ANY_THROW(read_binary(ss));
  std::stringstream junk("not a record at all");
  EXPECT_ANY_THROW(read_binary(junk));
}
