#pragma once

// Graph corpora in the TUDataset flat-file layout, GIN-style feature
// propagation, MNIST-style images as point clouds, and synthetic blobs.

#include "asot/ot.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace asot {

using Edge = std::pair<Index, Index>;

/// Undirected graph; edges are stored once with first <= second.
struct Graph {
  Index node_count = 0;
  std::vector<Edge> edges;
  Matrix features;  // node_count x d

  void validate() const;
  friend bool operator==(const Graph& l, const Graph& r);
};

struct GraphDataset {
  std::string name;
  std::vector<Graph> graphs;
  std::vector<int> labels;  // graph labels, empty if unknown
  Index feature_dim = 0;
  /// Lines in the source edge file (directed listing), 0 when not parsed.
  std::size_t edge_lines = 0;

  Index max_nodes() const;
  Index total_nodes() const;
  void validate() const;
  friend bool operator==(const GraphDataset& l, const GraphDataset& r);
};

/// Reads {root}/{name}/{name}_A.txt, _graph_indicator.txt and either
/// _node_attributes.txt (used as features when present) or _node_labels.txt
/// (one-hot over the distinct labels in ascending order). _graph_labels.txt is
/// read when present. Directed duplicates collapse into one undirected edge.
/// Files may also sit directly in {root}. Throws ParseError with the line.
GraphDataset parse_tudataset(const std::filesystem::path& root, const std::string& name);

/// x' = (1 + eps) x + sum_{j in N(i)} x_j, repeated `iters` times; the result
/// concatenates the features of every iteration, n x (iters + 1) d.
Graph gin_preprocess(const Graph& g, int iters = 4, double eps = 0.0);
GraphDataset gin_preprocess(const GraphDataset& ds, int iters = 4, double eps = 0.0);

enum class FeatureScaling : std::uint8_t { none, max_abs, row_l2 };
std::string_view to_string(FeatureScaling s);
FeatureScaling parse_feature_scaling(std::string_view name);

/// Rescales node features in place. max_abs divides every feature by the
/// largest absolute entry of the dataset (returned); row_l2 divides each node
/// by its own norm (returns 1).
double scale_features(GraphDataset& ds, FeatureScaling mode);

/// One uniform-mass distribution per graph over its node features.
std::vector<DiscreteDistribution> to_distributions(const GraphDataset& ds);
std::vector<Matrix> feature_matrices(const GraphDataset& ds);

/// Points [i/28, j/28, p/256] for every nonzero pixel, uniform mass.
/// Throws std::invalid_argument for a wrong shape, out-of-range value or an
/// all-zero image.
DiscreteDistribution image_to_distribution(const Eigen::MatrixXi& pixels);

struct IdxImages {
  Index count = 0;
  Index rows = 0;
  Index cols = 0;
  std::vector<std::uint8_t> pixels;

  Eigen::MatrixXi image(Index i) const;
};

/// IDX image file (magic 0x00000803) and label file (magic 0x00000801).
IdxImages read_idx_images(const std::filesystem::path& path);
std::vector<int> read_idx_labels(const std::filesystem::path& path);

/// `per_class` seeded indices for each label 0..9, in ascending label order.
std::vector<Index> sample_per_class(const std::vector<int>& labels, Index per_class, std::uint64_t seed);

struct BlobConfig {
  Index n_graphs = 10;
  Index min_nodes = 5;
  Index max_nodes = 10;
  Index n_clusters = 2;
  Index dim = 2;
  double spread = 0.05;
  std::uint64_t seed = 0;
};

/// Node features drawn from Gaussian blobs around n_clusters random centers in
/// [0, 1]^dim; each node links to a random earlier node.
GraphDataset synth_blobs(const BlobConfig& cfg);

/// Binary cache of a preprocessed dataset ("ASOTDSET" header, version 1).
void save_dataset_cache(const std::filesystem::path& path, const GraphDataset& ds);
GraphDataset load_dataset_cache(const std::filesystem::path& path);

}  // namespace asot
