#include "commands.hpp"
#include "io.hpp"
#include "pipeline.hpp"

#include "asot/checkpoint.hpp"
#include "asot/dictionary_learning.hpp"
#include "asot/kmeans.hpp"

#include "../support/oracles.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

using namespace asot;
using namespace asot::cli;
using asot::testing::random_matrix;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("asot_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

struct CliRun {
  int code = 0;
  std::string out;
  std::string err;
};

CliRun invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "asot");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  CliRun r;
  r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::vector<std::string> blobs(std::vector<std::string> extra, int graphs = 6) {
  std::vector<std::string> a{"--dataset", "blobs", "--blob-graphs", std::to_string(graphs), "--blob-min-nodes", "3",
                             "--blob-max-nodes", "6", "--threads", "1"};
  a.insert(a.end(), extra.begin(), extra.end());
  return a;
}

std::vector<std::string> cmd(const std::string& name, std::vector<std::string> args) {
  args.insert(args.begin(), name);
  return args;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::vector<std::string>> csv_rows(const std::string& path) {
  std::ifstream in(path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cells.push_back(c);
    rows.push_back(cells);
  }
  return rows;
}

double rmse_loop(const Matrix& a, const Matrix& b) {
  double s = 0.0;
  int n = 0;
  for (Index i = 0; i < a.rows(); ++i) {
    for (Index j = i + 1; j < a.cols(); ++j) {
      s += (a(i, j) - b(i, j)) * (a(i, j) - b(i, j));
      ++n;
    }
  }
  return std::sqrt(s / n);
}

std::string mutag_root() {
  const char* env = std::getenv("ASOT_DATA_ROOT");
  const std::string root = env && *env ? env : "/root/data";
  return fs::exists(fs::path(root) / "MUTAG" / "MUTAG_A.txt") ? root : "";
}

}  // namespace

TEST(Rmse, IdenticalMatricesGiveZero) {
  std::mt19937_64 rng(1);
  const Matrix m = random_matrix(5, 5, rng);
  EXPECT_EQ(rmse_upper(m, m).rmse, 0.0);
}

TEST(Rmse, SingleOffDiagonalEntry) {
  Matrix a{{0.0, 1.0}, {1.0, 0.0}};
  Matrix b{{0.0, 1.1}, {1.1, 0.0}};
  const RmseReport r = rmse_upper(a, b);
  EXPECT_NEAR(r.rmse, 0.1, 1e-15);
  EXPECT_EQ(r.pairs, 1u);
}

TEST(Rmse, MatchesScalarLoopAndIsPermutationCovariant) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Index n = asot::testing::uniform_index(2, 12, rng);
    const Matrix a = random_matrix(n, n, rng);
    const Matrix b = random_matrix(n, n, rng);
    const Matrix sa = (a + a.transpose()) / 2;
    const Matrix sb = (b + b.transpose()) / 2;
    EXPECT_NEAR(rmse_upper(a, b).rmse, rmse_loop(a, b), 1e-12);
    std::vector<Index> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), Index{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix pa(n, n), pb(n, n);
    for (Index i = 0; i < n; ++i) {
      for (Index j = 0; j < n; ++j) {
        pa(i, j) = sa(perm[i], perm[j]);
        pb(i, j) = sb(perm[i], perm[j]);
      }
    }
    EXPECT_NEAR(rmse_upper(pa, pb).rmse, rmse_upper(sa, sb).rmse, 1e-12);
  }
}

TEST(Rmse, CommandWritesReportAndRejectsShapeMismatch) {
  TempDir tmp;
  write_matrix_csv(tmp / "a.csv", Matrix{{0.0, 1.0}, {1.0, 0.0}});
  write_matrix_csv(tmp / "b.csv", Matrix{{0.0, 1.1}, {1.1, 0.0}});
  write_matrix_csv(tmp / "c.csv", Matrix::Zero(3, 3));
  const CliRun ok = invoke({"rmse", tmp / "a.csv", tmp / "b.csv", "--out", tmp / "r.json"});
  ASSERT_EQ(ok.code, kExitOk) << ok.err;
  EXPECT_NEAR(read_json(tmp / "r.json").at("rmse").get<double>(), 0.1, 1e-12);
  EXPECT_EQ(invoke({"rmse", tmp / "a.csv", tmp / "c.csv"}).code, kExitData);
}

TEST(Dist, ExactOnThreeGraphsIsSymmetricWithZeroDiagonal) {
  TempDir tmp;
  const CliRun r = invoke(cmd("dist", blobs({"--method", "ot-emd", "--out", tmp / "d.csv"}, 3)));
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const Matrix d = read_matrix_csv(tmp / "d.csv");
  ASSERT_EQ(d.rows(), 3);
  ASSERT_EQ(d.cols(), 3);
  for (Index i = 0; i < 3; ++i) {
    EXPECT_EQ(d(i, i), 0.0);
    for (Index j = 0; j < 3; ++j) {
      EXPECT_EQ(d(i, j), d(j, i));
      if (i != j) EXPECT_GT(d(i, j), 0.0);
    }
  }
}

TEST(Dist, EntropicAnchorMatchesExactAnchor) {
  TempDir tmp;
  ASSERT_EQ(invoke(cmd("train", blobs({"--method", "asot-k", "--k", "6", "--out", tmp / "k"}, 5))).code, kExitOk);
  const auto sk = {"--epsilon", "0.01", "--iterations", "2000", "--checkpoint"};
  std::vector<std::string> extra(sk.begin(), sk.end());
  extra.push_back(tmp / "k");
  auto with = [&](const std::string& method, const std::string& out) {
    auto a = extra;
    a.insert(a.end(), {"--method", method, "--out", out});
    return cmd("dist", blobs(a, 5));
  };
  ASSERT_EQ(invoke(with("asot-k", tmp / "a.csv")).code, kExitOk);
  const CliRun e = invoke(with("easot-k", tmp / "e.csv"));
  ASSERT_EQ(e.code, kExitOk) << e.err;
  const Matrix a = read_matrix_csv(tmp / "a.csv");
  const Matrix b = read_matrix_csv(tmp / "e.csv");
  EXPECT_LE((a - b).cwiseAbs().maxCoeff(), 1e-3);
}

TEST(Dist, SameSeedGivesIdenticalBytes) {
  TempDir tmp;
  for (const std::string method : {"easot-k", "eot", "asot-ml"}) {
    const auto args = [&](const std::string& out) {
      return cmd("dist", blobs({"--method", method, "--epochs", "3", "--seed", "9", "--out", out}));
    };
    ASSERT_EQ(invoke(args(tmp / "1.csv")).code, kExitOk) << method;
    ASSERT_EQ(invoke(args(tmp / "2.csv")).code, kExitOk) << method;
    EXPECT_EQ(slurp(tmp / "1.csv"), slurp(tmp / "2.csv")) << method;
  }
}

TEST(Dist, MetadataSplitsTimingAndReproducesRun) {
  TempDir tmp;
  ASSERT_EQ(invoke(cmd("dist", blobs({"--method", "easot-k", "--seed", "4", "--out", tmp / "d.csv"}))).code, kExitOk);
  const nlohmann::json meta = read_json(tmp / "d.csv.json");
  const double train = meta.at("train_time"), dist = meta.at("dist_time"), total = meta.at("total_time");
  EXPECT_GT(train, 0.0);
  EXPECT_GT(dist, 0.0);
  EXPECT_NEAR(total, train + dist, 1e-12);
  EXPECT_EQ(meta.at("seed").get<std::uint64_t>(), 4u);
  EXPECT_EQ(meta.at("hashes").at("output").get<std::string>(), hex(hash_file(tmp / "d.csv")));

  const RunConfig cfg = RunConfig::from_json(meta.at("config"));
  const Corpus corpus = load_corpus(cfg);
  EXPECT_EQ(meta.at("hashes").at("dataset").get<std::string>(), hex(corpus.hash));
  Trained t = train_method(corpus, cfg);
  const DistanceRun again = compute_distances(corpus, cfg, &t.checkpoint);
  write_matrix_csv(tmp / "again.csv", again.matrix);
  EXPECT_EQ(slurp(tmp / "again.csv"), slurp(tmp / "d.csv"));
}

TEST(Dist, ConfigFileSuppliesOptionsAndFlagsOverride) {
  TempDir tmp;
  {
    std::ofstream f(tmp / "run.toml");
    f << "[dist]\nmethod = \"eot\"\ndataset = \"blobs\"\nblob-graphs = 4\nepsilon = 0.5\n";
  }
  const CliRun r = invoke({"--config", tmp / "run.toml", "dist", "--epsilon", "0.2", "--out", tmp / "d.csv"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const nlohmann::json cfg = read_json(tmp / "d.csv.json").at("config");
  EXPECT_EQ(cfg.at("method"), "eot");
  EXPECT_EQ(cfg.at("blob_graphs"), 4);
  EXPECT_EQ(cfg.at("epsilon"), 0.2);
}

TEST(Train, KmeansWritesLoadableAnchors) {
  TempDir tmp;
  const CliRun r = invoke(cmd("train", blobs({"--method", "asot-k", "--k", "5", "--out", tmp / "t"})));
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const AnchorSpace s = load_anchor_space(tmp / "t/anchors.bin");
  EXPECT_EQ(s.k(), 5);
  EXPECT_EQ(s.dim(), 10);
  EXPECT_EQ(load_checkpoint(tmp / "t/checkpoint.json").space.anchors(), s.anchors());
  EXPECT_TRUE(fs::exists(tmp / "t/loss.csv"));
  EXPECT_EQ(read_json(tmp / "t/train.json").at("k"), 5);
}

TEST(Train, DlZeroEpochsKeepsInitialisation) {
  TempDir tmp;
  ASSERT_EQ(invoke(cmd("train", blobs({"--method", "asot-dl", "--k", "4", "--epochs", "0", "--seed", "3", "--out",
                                     tmp / "dl"})))
                .code,
            kExitOk);
  ASSERT_EQ(invoke(cmd("train", blobs({"--method", "asot-k", "--k", "4", "--seed", "3", "--out", tmp / "km"}))).code,
            kExitOk);
  const Checkpoint dl = load_checkpoint(tmp / "dl/checkpoint.json");
  const Checkpoint km = load_checkpoint(tmp / "km/checkpoint.json");
  ASSERT_TRUE(dl.dl.has_value());
  EXPECT_EQ(*dl.dl, make_dl_model(km.space.anchors(), 3, 20));
}

TEST(Train, RejectsDirectMethod) {
  TempDir tmp;
  EXPECT_EQ(invoke(cmd("train", blobs({"--method", "eot", "--out", tmp / "t"}))).code, kExitData);
}

TEST(AblateK, OneRowPerK) {
  TempDir tmp;
  const CliRun r = invoke(cmd("ablate-k", blobs({"--k-list", "2,5", "--out", tmp / "a.csv"})));
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto rows = csv_rows(tmp / "a.csv");
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0][0], "2");
  EXPECT_EQ(rows[1][0], "5");
  EXPECT_EQ(rows[0][4], "ok");
}

TEST(AblateK, NestedBlobsSweepIsNonIncreasing) {
  TempDir tmp;
  const CliRun r = invoke(cmd("ablate-k", blobs({"--k-list", "2,4,8", "--nested", "--blob-clusters", "4", "--fit-split",
                                          "all", "--out", tmp / "a.csv"},
                                         10)));
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto rows = csv_rows(tmp / "a.csv");
  ASSERT_EQ(rows.size(), 3u);
  for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_LE(std::stod(rows[i][1]), std::stod(rows[i - 1][1]) + 1e-12);
}

TEST(AblateK, AllDistinctSamplesCollapseToExact) {
  TempDir tmp;
  RunConfig cfg;
  cfg.dataset = "blobs";
  cfg.blob_graphs = 4;
  cfg.blob_min_nodes = 3;
  cfg.blob_max_nodes = 5;
  Index n = 0;
  for (const auto& g : load_corpus(cfg).samples) n += g.rows();
  const CliRun r = invoke({"ablate-k", "--dataset", "blobs", "--blob-graphs", "4", "--blob-min-nodes", "3", "--blob-max-nodes",
                     "5", "--fit-split", "all", "--k-list", std::to_string(n), "--out", tmp / "a.csv"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto rows = csv_rows(tmp / "a.csv");
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_LE(std::stod(rows[0][1]), 1e-9);
}

TEST(AblateK, FailingKIsRecordedAndSweepContinues) {
  TempDir tmp;
  const CliRun r = invoke(cmd("ablate-k", blobs({"--k-list", "0,3", "--out", tmp / "a.csv"})));
  EXPECT_EQ(r.code, kExitNumeric);
  const auto rows = csv_rows(tmp / "a.csv");
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0][4], "error");
  EXPECT_EQ(rows[1][4], "ok");
}

TEST(Bench, ReportsEveryMethodAgainstExact) {
  TempDir tmp;
  const CliRun r = invoke(cmd("bench", blobs({"--methods", "eot,easot-k", "--out", tmp / "b.csv"})));
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto rows = csv_rows(tmp / "b.csv");
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0][0], "ot-emd");
  EXPECT_EQ(std::stod(rows[0][4]), 0.0);
  EXPECT_EQ(rows[1][0], "eot");
  EXPECT_EQ(rows[2][0], "easot-k");
  EXPECT_GT(std::stod(rows[2][5]), 0.0);
}

TEST(ExitCodes, UsageDataAndNumeric) {
  TempDir tmp;
  EXPECT_EQ(invoke({}).code, kExitUsage);
  EXPECT_EQ(invoke({"dist", "--dataset", "blobs"}).code, kExitUsage);
  EXPECT_EQ(invoke({"dist", "--method", "nope", "--out", tmp / "x.csv"}).code, kExitUsage);
  EXPECT_EQ(invoke({"--help"}).code, kExitOk);

  const CliRun missing = invoke({"dist", "--dataset", "NO_SUCH_SET", "--out", tmp / "x.csv"});
  EXPECT_EQ(missing.code, kExitData);
  EXPECT_NE(missing.err.find("NO_SUCH_SET"), std::string::npos);
  EXPECT_EQ(invoke({"dist", "--method", "asot-k", "--dataset", "blobs", "--checkpoint", tmp / "none.json", "--out",
                 tmp / "x.csv"})
                .code,
            kExitData);

  const CliRun blowup = invoke(cmd("train", blobs({"--method", "asot-ml", "--lr", "1e300", "--epochs", "5", "--out", tmp / "m"})));
  EXPECT_EQ(blowup.code, kExitNumeric) << blowup.err;
  EXPECT_TRUE(read_json(tmp / "m/train.json").at("aborted").get<bool>());
}

TEST(MutagMl, LossTrendsDown) {
  const std::string root = mutag_root();
  if (root.empty()) GTEST_SKIP() << "MUTAG not found";
  TempDir tmp;
  ::setenv("ASOT_DATA_ROOT", root.c_str(), 1);
  const CliRun r = invoke({"train", "--dataset", "MUTAG", "--method", "asot-ml", "--k", "28", "--out", tmp / "ml"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const nlohmann::json meta = read_json(tmp / "ml/train.json");
  EXPECT_GT(meta.at("train_time").get<double>(), 0.0);
  std::vector<double> loss;
  for (const auto& row : csv_rows(tmp / "ml/loss.csv")) loss.push_back(std::stod(row[1]));
  ASSERT_EQ(loss.size(), 500u);
  std::vector<double> windows;
  for (std::size_t s = 0; s < loss.size(); s += 50) {
    windows.push_back(std::accumulate(loss.begin() + static_cast<std::ptrdiff_t>(s),
                                      loss.begin() + static_cast<std::ptrdiff_t>(s + 50), 0.0) /
                      50.0);
  }
  EXPECT_LT(windows.back(), windows.front());
  int rises = 0;
  for (std::size_t i = 1; i < windows.size(); ++i) rises += windows[i] > windows[i - 1];
  EXPECT_LE(rises, 2);
}
