#pragma once

// Run configuration, corpus loading, anchor training and pairwise distance
// computation shared by the asot commands and the acceptance harness.

#include "asot/batch.hpp"
#include "asot/checkpoint.hpp"
#include "asot/datasets.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace asot::cli {

/// Input or data problem; maps to exit code 2.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Method { ot_emd, eot, bds_eot, asot_ml, asot_dl, asot_k, easot_ml, easot_dl, easot_k };

std::string to_string(Method m);
Method parse_method(const std::string& name);
const std::vector<std::string>& method_names();

/// Learner behind an anchor-space method ("kmeans", "ml", "dl"), empty for
/// the direct solvers.
std::string learner_of(Method m);
bool is_learned(Method m);
bool is_entropic(Method m);

struct RunConfig {
  std::string dataset = "MUTAG";
  std::string data_root;
  std::string method = "asot-k";
  Index k = 0;  // 0: maximum node count of the corpus
  double epsilon = 0.1;
  int iterations = 50;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  std::size_t chunk_size = 1024;

  int gin_iters = 4;
  std::string scaling = "max_abs";
  std::string fit_split = "train";
  double train_fraction = 0.9;

  int epochs = 500;
  Index batch_graphs = 500;
  double learning_rate = 0.01;
  Index pair_subsample = 512;
  Index sample_subsample = 4096;
  int dl_layers = 20;
  Index kmeans_batch = 1024;
  int kmeans_iters = 300;

  Index blob_graphs = 10;
  Index blob_min_nodes = 5;
  Index blob_max_nodes = 10;
  Index blob_clusters = 2;
  Index blob_dim = 2;
  double blob_spread = 0.05;
  Index mnist_per_class = 50;

  /// Throws DataError on inconsistent values.
  void validate() const;
  Method parsed_method() const { return parse_method(method); }
  SinkhornConfig sinkhorn() const;
  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
};

/// Default data root: $ASOT_DATA_ROOT, else the build-time default.
std::string default_data_root();

/// One point cloud per graph or image, after preprocessing.
struct Corpus {
  std::string name;
  std::vector<Matrix> samples;
  Index raw_dim = 0;  // feature dimension before GIN concatenation
  Index max_nodes = 0;
  double feature_scale = 1.0;
  std::uint64_t hash = 0;

  std::vector<DiscreteDistribution> distributions() const;
};

/// "blobs" (synthetic), "mnist" (IDX files under data_root/MNIST) or a
/// TUDataset name under data_root. Throws DataError when files are missing.
Corpus load_corpus(const RunConfig& cfg);

/// Graph indices used for anchor fitting: the seeded train part of a 9:1
/// split, or every graph for fit_split = "all".
std::vector<std::size_t> fit_indices(std::size_t n, const RunConfig& cfg);

struct Trained {
  Checkpoint checkpoint;
  std::vector<double> loss_trace;
  double train_time = 0.0;
  bool aborted = false;
  std::string message;
};

/// Fits the anchors of a learned method. `nested_from` seeds k-means with
/// earlier anchors (k-ablation sweeps).
Trained train_method(const Corpus& corpus, const RunConfig& cfg, const AnchorSpace* nested_from = nullptr);

struct DistanceRun {
  DistanceMatrix matrix;
  double dist_time = 0.0;
  /// max entry of the shared anchor cost divided by epsilon (entropic anchor
  /// methods only).
  std::optional<double> cost_ratio;
  std::vector<std::string> warnings;
};

/// Pairwise matrix over the whole corpus. Learned methods need `checkpoint`.
DistanceRun compute_distances(const Corpus& corpus, const RunConfig& cfg, const Checkpoint* checkpoint);

/// Threshold on max(C_s) / epsilon above which the Gibbs kernel underflows.
inline constexpr double kUnderflowRatio = 700.0;

}  // namespace asot::cli
