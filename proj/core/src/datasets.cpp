#include "asot/datasets.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>

namespace asot {

void Graph::validate() const {
  if (node_count < 0) throw std::invalid_argument("graph: negative node count");
  for (const auto& [u, v] : edges) {
    if (u < 0 || v < 0 || u >= node_count || v >= node_count) throw std::invalid_argument("graph: edge index out of range");
  }
  if (features.rows() != node_count) throw std::invalid_argument("graph: feature rows differ from node count");
  if (!features.allFinite()) throw std::invalid_argument("graph: non-finite features");
}

bool operator==(const Graph& l, const Graph& r) {
  return l.node_count == r.node_count && l.edges == r.edges && l.features.rows() == r.features.rows() &&
         l.features.cols() == r.features.cols() && l.features == r.features;
}

Index GraphDataset::max_nodes() const {
  Index m = 0;
  for (const auto& g : graphs) m = std::max(m, g.node_count);
  return m;
}

Index GraphDataset::total_nodes() const {
  Index n = 0;
  for (const auto& g : graphs) n += g.node_count;
  return n;
}

void GraphDataset::validate() const {
  for (const auto& g : graphs) {
    g.validate();
    if (g.features.cols() != feature_dim) throw std::invalid_argument("dataset: inconsistent feature dim");
  }
  if (!labels.empty() && labels.size() != graphs.size()) throw std::invalid_argument("dataset: label count mismatch");
}

bool operator==(const GraphDataset& l, const GraphDataset& r) {
  return l.name == r.name && l.graphs == r.graphs && l.labels == r.labels && l.feature_dim == r.feature_dim;
}

// ---------------------------------------------------------------------------
// TUDataset

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (pos < line.size()) {
    while (pos < line.size() && (line[pos] == ',' || line[pos] == ' ' || line[pos] == '\t' || line[pos] == '\r')) ++pos;
    std::size_t end = pos;
    while (end < line.size() && line[end] != ',' && line[end] != ' ' && line[end] != '\t' && line[end] != '\r') ++end;
    if (end > pos) out.push_back(line.substr(pos, end - pos));
    pos = end;
  }
  return out;
}

template <typename T>
T parse_number(std::string_view token, const std::string& file, std::size_t line) {
  T value{};
  const auto* first = token.data();
  const auto* last = token.data() + token.size();
  if (!token.empty() && token.front() == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) {
    throw ParseError(file, line, "expected a number, got '" + std::string(token) + "'");
  }
  return value;
}

// Non-empty lines as field lists, paired with their 1-based line numbers.
std::vector<std::pair<std::size_t, std::vector<std::string>>> read_rows(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string(), 0, "cannot open file");
  std::vector<std::pair<std::size_t, std::vector<std::string>>> rows;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto fields = split_fields(line);
    if (fields.empty()) continue;
    rows.emplace_back(number, std::vector<std::string>(fields.begin(), fields.end()));
  }
  return rows;
}

std::filesystem::path locate(const std::filesystem::path& root, const std::string& name, const std::string& suffix) {
  const std::string file = name + "_" + suffix + ".txt";
  const auto nested = root / name / file;
  if (std::filesystem::exists(nested)) return nested;
  return root / file;
}

}  // namespace

GraphDataset parse_tudataset(const std::filesystem::path& root, const std::string& name) {
  const auto a_path = locate(root, name, "A");
  const auto ind_path = locate(root, name, "graph_indicator");
  const auto attr_path = locate(root, name, "node_attributes");
  const auto lab_path = locate(root, name, "node_labels");
  const auto glab_path = locate(root, name, "graph_labels");

  const auto ind_rows = read_rows(ind_path);
  const std::string ind_file = ind_path.string();
  const auto total = static_cast<Index>(ind_rows.size());
  std::vector<Index> graph_of(ind_rows.size());
  Index n_graphs = 0;
  for (std::size_t i = 0; i < ind_rows.size(); ++i) {
    const auto& [line, fields] = ind_rows[i];
    if (fields.size() != 1) throw ParseError(ind_file, line, "expected one graph id");
    const auto g = parse_number<long long>(fields[0], ind_file, line);
    if (g < 1 || g > total) throw ParseError(ind_file, line, "graph id out of range");
    graph_of[i] = static_cast<Index>(g - 1);
    n_graphs = std::max(n_graphs, graph_of[i] + 1);
  }
  std::vector<Index> local(ind_rows.size());
  std::vector<Index> counts(static_cast<std::size_t>(n_graphs), 0);
  for (std::size_t i = 0; i < ind_rows.size(); ++i) local[i] = counts[static_cast<std::size_t>(graph_of[i])]++;
  for (Index g = 0; g < n_graphs; ++g) {
    if (counts[static_cast<std::size_t>(g)] == 0) {
      throw ParseError(ind_file, ind_rows.back().first, "graph " + std::to_string(g + 1) + " has no nodes");
    }
  }

  GraphDataset ds;
  ds.name = name;
  ds.graphs.resize(static_cast<std::size_t>(n_graphs));
  for (Index g = 0; g < n_graphs; ++g) ds.graphs[static_cast<std::size_t>(g)].node_count = counts[static_cast<std::size_t>(g)];

  // Node features.
  Matrix features;
  if (std::filesystem::exists(attr_path)) {
    const auto rows = read_rows(attr_path);
    const std::string file = attr_path.string();
    if (static_cast<Index>(rows.size()) != total) {
      throw ParseError(file, rows.empty() ? 0 : rows.back().first, "attribute count differs from node count");
    }
    const auto d = static_cast<Index>(rows.front().second.size());
    features.resize(total, d);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto& [line, fields] = rows[i];
      if (static_cast<Index>(fields.size()) != d) throw ParseError(file, line, "inconsistent attribute count");
      for (Index c = 0; c < d; ++c) {
        features(static_cast<Index>(i), c) = parse_number<double>(fields[static_cast<std::size_t>(c)], file, line);
      }
    }
  } else {
    const auto rows = read_rows(lab_path);
    const std::string file = lab_path.string();
    if (static_cast<Index>(rows.size()) != total) {
      throw ParseError(file, rows.empty() ? 0 : rows.back().first, "label count differs from node count");
    }
    std::vector<long long> labels(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto& [line, fields] = rows[i];
      if (fields.empty()) throw ParseError(file, line, "missing label");
      labels[i] = parse_number<long long>(fields[0], file, line);
    }
    std::vector<long long> distinct(labels);
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    features = Matrix::Zero(total, static_cast<Index>(distinct.size()));
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const auto col = std::lower_bound(distinct.begin(), distinct.end(), labels[i]) - distinct.begin();
      features(static_cast<Index>(i), static_cast<Index>(col)) = 1.0;
    }
  }
  ds.feature_dim = features.cols();
  for (auto& g : ds.graphs) g.features.resize(g.node_count, ds.feature_dim);
  for (Index i = 0; i < total; ++i) {
    ds.graphs[static_cast<std::size_t>(graph_of[static_cast<std::size_t>(i)])].features.row(local[static_cast<std::size_t>(i)]) =
        features.row(i);
  }

  // Edges.
  const auto a_rows = read_rows(a_path);
  const std::string a_file = a_path.string();
  ds.edge_lines = a_rows.size();
  std::vector<std::set<Edge>> edge_sets(ds.graphs.size());
  for (const auto& [line, fields] : a_rows) {
    if (fields.size() != 2) throw ParseError(a_file, line, "expected two node ids");
    const auto u = parse_number<long long>(fields[0], a_file, line);
    const auto v = parse_number<long long>(fields[1], a_file, line);
    if (u < 1 || v < 1 || u > total || v > total) throw ParseError(a_file, line, "node id out of range");
    const auto gu = graph_of[static_cast<std::size_t>(u - 1)];
    const auto gv = graph_of[static_cast<std::size_t>(v - 1)];
    if (gu != gv) throw ParseError(a_file, line, "edge joins two different graphs");
    const Index lu = local[static_cast<std::size_t>(u - 1)];
    const Index lv = local[static_cast<std::size_t>(v - 1)];
    edge_sets[static_cast<std::size_t>(gu)].insert({std::min(lu, lv), std::max(lu, lv)});
  }
  for (std::size_t g = 0; g < ds.graphs.size(); ++g) {
    ds.graphs[g].edges.assign(edge_sets[g].begin(), edge_sets[g].end());
  }

  if (std::filesystem::exists(glab_path)) {
    const auto rows = read_rows(glab_path);
    const std::string file = glab_path.string();
    if (static_cast<Index>(rows.size()) != n_graphs) {
      throw ParseError(file, rows.empty() ? 0 : rows.back().first, "graph label count differs from graph count");
    }
    for (const auto& [line, fields] : rows) ds.labels.push_back(parse_number<int>(fields[0], file, line));
  }
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// Preprocessing

Graph gin_preprocess(const Graph& g, int iters, double eps) {
  if (iters < 0) throw std::invalid_argument("gin_preprocess: iters must be >= 0");
  g.validate();
  const Index d = g.features.cols();
  Graph out{g.node_count, g.edges, Matrix(g.node_count, d * (iters + 1))};
  Matrix x = g.features;
  out.features.leftCols(d) = x;
  for (int t = 1; t <= iters; ++t) {
    Matrix next = (1.0 + eps) * x;
    for (const auto& [u, v] : g.edges) {
      next.row(u) += x.row(v);
      if (u != v) next.row(v) += x.row(u);
    }
    x = std::move(next);
    out.features.middleCols(d * t, d) = x;
  }
  return out;
}

GraphDataset gin_preprocess(const GraphDataset& ds, int iters, double eps) {
  GraphDataset out = ds;
  for (auto& g : out.graphs) g = gin_preprocess(g, iters, eps);
  out.feature_dim = ds.feature_dim * (iters + 1);
  return out;
}

std::string_view to_string(FeatureScaling s) {
  switch (s) {
    case FeatureScaling::none: return "none";
    case FeatureScaling::max_abs: return "max_abs";
    case FeatureScaling::row_l2: return "row_l2";
  }
  return "none";
}

FeatureScaling parse_feature_scaling(std::string_view name) {
  if (name == "none") return FeatureScaling::none;
  if (name == "max_abs") return FeatureScaling::max_abs;
  if (name == "row_l2") return FeatureScaling::row_l2;
  throw std::invalid_argument("unknown feature scaling '" + std::string(name) + "'");
}

double scale_features(GraphDataset& ds, FeatureScaling mode) {
  if (mode == FeatureScaling::max_abs) {
    double m = 0.0;
    for (const auto& g : ds.graphs) {
      if (g.features.size() > 0) m = std::max(m, g.features.cwiseAbs().maxCoeff());
    }
    if (m > 0.0) {
      for (auto& g : ds.graphs) g.features /= m;
      return m;
    }
    return 1.0;
  }
  if (mode == FeatureScaling::row_l2) {
    for (auto& g : ds.graphs) {
      for (Index i = 0; i < g.features.rows(); ++i) {
        const double n = g.features.row(i).norm();
        if (n > 0.0) g.features.row(i) /= n;
      }
    }
  }
  return 1.0;
}

std::vector<DiscreteDistribution> to_distributions(const GraphDataset& ds) {
  std::vector<DiscreteDistribution> out;
  out.reserve(ds.graphs.size());
  for (const auto& g : ds.graphs) out.push_back(DiscreteDistribution::uniform(g.features));
  return out;
}

std::vector<Matrix> feature_matrices(const GraphDataset& ds) {
  std::vector<Matrix> out;
  out.reserve(ds.graphs.size());
  for (const auto& g : ds.graphs) out.push_back(g.features);
  return out;
}

// ---------------------------------------------------------------------------
// Images

DiscreteDistribution image_to_distribution(const Eigen::MatrixXi& pixels) {
  if (pixels.rows() != 28 || pixels.cols() != 28) throw std::invalid_argument("image_to_distribution: image must be 28 x 28");
  if (pixels.minCoeff() < 0 || pixels.maxCoeff() > 255) throw std::invalid_argument("image_to_distribution: pixel out of [0, 255]");
  const Index count = (pixels.array() > 0).count();
  if (count == 0) throw std::invalid_argument("image_to_distribution: image has no nonzero pixel");
  Matrix points(count, 3);
  Index r = 0;
  for (Index i = 0; i < 28; ++i) {
    for (Index j = 0; j < 28; ++j) {
      if (pixels(i, j) == 0) continue;
      points(r, 0) = static_cast<double>(i) / 28.0;
      points(r, 1) = static_cast<double>(j) / 28.0;
      points(r, 2) = static_cast<double>(pixels(i, j)) / 256.0;
      ++r;
    }
  }
  return DiscreteDistribution::uniform(std::move(points));
}

namespace {

std::uint32_t read_be32(std::istream& in, const std::string& file) {
  std::array<unsigned char, 4> b{};
  in.read(reinterpret_cast<char*>(b.data()), 4);
  if (!in) throw ParseError(file, 0, "truncated IDX header");
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | std::uint32_t{b[3]};
}

}  // namespace

Eigen::MatrixXi IdxImages::image(Index i) const {
  if (i < 0 || i >= count) throw std::out_of_range("IDX image index out of range");
  Eigen::MatrixXi img(rows, cols);
  const auto base = static_cast<std::size_t>(i * rows * cols);
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) img(r, c) = pixels[base + static_cast<std::size_t>(r * cols + c)];
  }
  return img;
}

IdxImages read_idx_images(const std::filesystem::path& path) {
  const std::string file = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(file, 0, "cannot open file");
  if (read_be32(in, file) != 0x00000803u) throw ParseError(file, 0, "not an IDX image file");
  IdxImages out;
  out.count = read_be32(in, file);
  out.rows = read_be32(in, file);
  out.cols = read_be32(in, file);
  out.pixels.resize(static_cast<std::size_t>(out.count * out.rows * out.cols));
  in.read(reinterpret_cast<char*>(out.pixels.data()), static_cast<std::streamsize>(out.pixels.size()));
  if (!in) throw ParseError(file, 0, "truncated IDX pixel data");
  return out;
}

std::vector<int> read_idx_labels(const std::filesystem::path& path) {
  const std::string file = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(file, 0, "cannot open file");
  if (read_be32(in, file) != 0x00000801u) throw ParseError(file, 0, "not an IDX label file");
  const auto n = read_be32(in, file);
  std::vector<unsigned char> raw(n);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n));
  if (!in) throw ParseError(file, 0, "truncated IDX label data");
  return {raw.begin(), raw.end()};
}

std::vector<Index> sample_per_class(const std::vector<int>& labels, Index per_class, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Index> out;
  for (int digit = 0; digit <= 9; ++digit) {
    std::vector<Index> idx;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == digit) idx.push_back(static_cast<Index>(i));
    }
    if (static_cast<Index>(idx.size()) < per_class) {
      throw std::invalid_argument("not enough samples of class " + std::to_string(digit));
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(static_cast<std::size_t>(per_class));
    std::sort(idx.begin(), idx.end());
    out.insert(out.end(), idx.begin(), idx.end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic blobs

GraphDataset synth_blobs(const BlobConfig& cfg) {
  if (cfg.n_graphs < 1 || cfg.min_nodes < 1 || cfg.max_nodes < cfg.min_nodes || cfg.n_clusters < 1 || cfg.dim < 1 ||
      cfg.spread < 0.0) {
    throw std::invalid_argument("synth_blobs: invalid configuration");
  }
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, cfg.spread);
  Matrix centers(cfg.n_clusters, cfg.dim);
  for (Index c = 0; c < centers.rows(); ++c) {
    for (Index j = 0; j < cfg.dim; ++j) centers(c, j) = unit(rng);
  }
  std::uniform_int_distribution<Index> size(cfg.min_nodes, cfg.max_nodes);
  std::uniform_int_distribution<Index> cluster(0, cfg.n_clusters - 1);

  GraphDataset ds;
  ds.name = "blobs";
  ds.feature_dim = cfg.dim;
  for (Index g = 0; g < cfg.n_graphs; ++g) {
    Graph graph;
    graph.node_count = size(rng);
    graph.features.resize(graph.node_count, cfg.dim);
    for (Index i = 0; i < graph.node_count; ++i) {
      const Index c = cluster(rng);
      for (Index j = 0; j < cfg.dim; ++j) graph.features(i, j) = centers(c, j) + (cfg.spread > 0.0 ? noise(rng) : 0.0);
      if (i > 0) {
        std::uniform_int_distribution<Index> parent(0, i - 1);
        graph.edges.emplace_back(parent(rng), i);
      }
    }
    std::sort(graph.edges.begin(), graph.edges.end());
    ds.graphs.push_back(std::move(graph));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Cache

namespace {

constexpr std::array<char, 8> kCacheMagic = {'A', 'S', 'O', 'T', 'D', 'S', 'E', 'T'};
constexpr std::uint32_t kCacheVersion = 1;

static_assert(std::endian::native == std::endian::little, "binary records assume a little-endian host");

template <typename T>
void put(std::ostream& os, T value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T value{};
  is.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!is) throw std::runtime_error("dataset cache is truncated");
  return value;
}

}  // namespace

void save_dataset_cache(const std::filesystem::path& path, const GraphDataset& ds) {
  ds.validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os.write(kCacheMagic.data(), kCacheMagic.size());
  put<std::uint32_t>(os, kCacheVersion);
  put<std::uint64_t>(os, ds.name.size());
  os.write(ds.name.data(), static_cast<std::streamsize>(ds.name.size()));
  put<std::uint64_t>(os, ds.graphs.size());
  put<std::uint64_t>(os, static_cast<std::uint64_t>(ds.feature_dim));
  put<std::uint64_t>(os, ds.edge_lines);
  for (const auto& g : ds.graphs) {
    put<std::uint64_t>(os, static_cast<std::uint64_t>(g.node_count));
    put<std::uint64_t>(os, g.edges.size());
    for (const auto& [u, v] : g.edges) {
      put<std::uint64_t>(os, static_cast<std::uint64_t>(u));
      put<std::uint64_t>(os, static_cast<std::uint64_t>(v));
    }
    for (Index r = 0; r < g.features.rows(); ++r) {
      for (Index c = 0; c < g.features.cols(); ++c) put<double>(os, g.features(r, c));
    }
  }
  put<std::uint64_t>(os, ds.labels.size());
  for (int l : ds.labels) put<std::int64_t>(os, l);
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

GraphDataset load_dataset_cache(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::array<char, 8> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kCacheMagic) throw std::runtime_error(path.string() + " is not a dataset cache");
  if (get<std::uint32_t>(is) != kCacheVersion) throw std::runtime_error("unsupported dataset cache version");
  constexpr std::uint64_t kLimit = std::uint64_t{1} << 32;
  GraphDataset ds;
  const auto name_len = get<std::uint64_t>(is);
  if (name_len > 4096) throw std::runtime_error("dataset cache name is implausibly long");
  ds.name.resize(name_len);
  is.read(ds.name.data(), static_cast<std::streamsize>(name_len));
  const auto n_graphs = get<std::uint64_t>(is);
  ds.feature_dim = static_cast<Index>(get<std::uint64_t>(is));
  ds.edge_lines = get<std::uint64_t>(is);
  if (n_graphs > kLimit || static_cast<std::uint64_t>(ds.feature_dim) > kLimit) throw std::runtime_error("dataset cache header is implausible");
  for (std::uint64_t g = 0; g < n_graphs; ++g) {
    Graph graph;
    graph.node_count = static_cast<Index>(get<std::uint64_t>(is));
    const auto n_edges = get<std::uint64_t>(is);
    if (static_cast<std::uint64_t>(graph.node_count) > kLimit || n_edges > kLimit) throw std::runtime_error("dataset cache graph is implausible");
    for (std::uint64_t e = 0; e < n_edges; ++e) {
      const auto u = static_cast<Index>(get<std::uint64_t>(is));
      const auto v = static_cast<Index>(get<std::uint64_t>(is));
      graph.edges.emplace_back(u, v);
    }
    graph.features.resize(graph.node_count, ds.feature_dim);
    for (Index r = 0; r < graph.features.rows(); ++r) {
      for (Index c = 0; c < graph.features.cols(); ++c) graph.features(r, c) = get<double>(is);
    }
    ds.graphs.push_back(std::move(graph));
  }
  const auto n_labels = get<std::uint64_t>(is);
  if (n_labels > kLimit) throw std::runtime_error("dataset cache label count is implausible");
  for (std::uint64_t i = 0; i < n_labels; ++i) ds.labels.push_back(static_cast<int>(get<std::int64_t>(is)));
  ds.validate();
  return ds;
}

}  // namespace asot
