#include "pipeline.hpp"

#include "io.hpp"

#include "asot/dictionary_learning.hpp"
#include "asot/kmeans.hpp"
#include "asot/metric_learning.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <numeric>
#include <random>

#ifndef ASOT_DEFAULT_DATA_ROOT
#define ASOT_DEFAULT_DATA_ROOT ""
#endif

namespace asot::cli {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

const std::vector<std::pair<Method, std::string>>& method_table() {
  static const std::vector<std::pair<Method, std::string>> table = {
      {Method::ot_emd, "ot-emd"},     {Method::eot, "eot"},           {Method::bds_eot, "bds-eot"},
      {Method::asot_ml, "asot-ml"},   {Method::asot_dl, "asot-dl"},   {Method::asot_k, "asot-k"},
      {Method::easot_ml, "easot-ml"}, {Method::easot_dl, "easot-dl"}, {Method::easot_k, "easot-k"}};
  return table;
}

}  // namespace

std::string to_string(Method m) {
  for (const auto& [method, name] : method_table()) {
    if (method == m) return name;
  }
  return "unknown";
}

Method parse_method(const std::string& name) {
  for (const auto& [method, n] : method_table()) {
    if (n == name) return method;
  }
  throw DataError("unknown method '" + name + "'");
}

const std::vector<std::string>& method_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& entry : method_table()) out.push_back(entry.second);
    return out;
  }();
  return names;
}

std::string learner_of(Method m) {
  switch (m) {
    case Method::asot_k:
    case Method::easot_k:
      return "kmeans";
    case Method::asot_ml:
    case Method::easot_ml:
      return "ml";
    case Method::asot_dl:
    case Method::easot_dl:
      return "dl";
    default:
      return "";
  }
}

bool is_learned(Method m) { return !learner_of(m).empty(); }

bool is_entropic(Method m) {
  return m == Method::eot || m == Method::bds_eot || m == Method::easot_ml || m == Method::easot_dl ||
         m == Method::easot_k;
}

void RunConfig::validate() const {
  parse_method(method);
  if (k < 0) throw DataError("k must be >= 1 (0 selects the maximum node count)");
  if (!(epsilon > 0.0)) throw DataError("epsilon must be positive");
  if (iterations < 1) throw DataError("iterations must be >= 1");
  if (threads < 1) throw DataError("threads must be >= 1");
  if (gin_iters < 0) throw DataError("gin-iters must be >= 0");
  if (fit_split != "train" && fit_split != "all") throw DataError("fit-split must be 'train' or 'all'");
  if (!(train_fraction > 0.0 && train_fraction <= 1.0)) throw DataError("train-fraction must be in (0, 1]");
  if (epochs < 0) throw DataError("epochs must be >= 0");
  try {
    parse_feature_scaling(scaling);
  } catch (const std::invalid_argument& e) {
    throw DataError(e.what());
  }
}

SinkhornConfig RunConfig::sinkhorn() const {
  SinkhornConfig s;
  s.epsilon = epsilon;
  s.iterations = iterations;
  return s;
}

nlohmann::json RunConfig::to_json() const {
  return {{"dataset", dataset},
          {"data_root", data_root},
          {"method", method},
          {"k", k},
          {"epsilon", epsilon},
          {"iterations", iterations},
          {"seed", seed},
          {"threads", threads},
          {"chunk_size", chunk_size},
          {"gin_iters", gin_iters},
          {"scaling", scaling},
          {"fit_split", fit_split},
          {"train_fraction", train_fraction},
          {"epochs", epochs},
          {"batch_graphs", batch_graphs},
          {"learning_rate", learning_rate},
          {"pair_subsample", pair_subsample},
          {"sample_subsample", sample_subsample},
          {"dl_layers", dl_layers},
          {"kmeans_batch", kmeans_batch},
          {"kmeans_iters", kmeans_iters},
          {"blob_graphs", blob_graphs},
          {"blob_min_nodes", blob_min_nodes},
          {"blob_max_nodes", blob_max_nodes},
          {"blob_clusters", blob_clusters},
          {"blob_dim", blob_dim},
          {"blob_spread", blob_spread},
          {"mnist_per_class", mnist_per_class}};
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig c;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
  };
  get("dataset", c.dataset);
  get("data_root", c.data_root);
  get("method", c.method);
  get("k", c.k);
  get("epsilon", c.epsilon);
  get("iterations", c.iterations);
  get("seed", c.seed);
  get("threads", c.threads);
  get("chunk_size", c.chunk_size);
  get("gin_iters", c.gin_iters);
  get("scaling", c.scaling);
  get("fit_split", c.fit_split);
  get("train_fraction", c.train_fraction);
  get("epochs", c.epochs);
  get("batch_graphs", c.batch_graphs);
  get("learning_rate", c.learning_rate);
  get("pair_subsample", c.pair_subsample);
  get("sample_subsample", c.sample_subsample);
  get("dl_layers", c.dl_layers);
  get("kmeans_batch", c.kmeans_batch);
  get("kmeans_iters", c.kmeans_iters);
  get("blob_graphs", c.blob_graphs);
  get("blob_min_nodes", c.blob_min_nodes);
  get("blob_max_nodes", c.blob_max_nodes);
  get("blob_clusters", c.blob_clusters);
  get("blob_dim", c.blob_dim);
  get("blob_spread", c.blob_spread);
  get("mnist_per_class", c.mnist_per_class);
  return c;
}

std::string default_data_root() {
  if (const char* env = std::getenv("ASOT_DATA_ROOT"); env && *env) return env;
  return ASOT_DEFAULT_DATA_ROOT;
}

std::vector<DiscreteDistribution> Corpus::distributions() const {
  std::vector<DiscreteDistribution> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(DiscreteDistribution::uniform(s));
  return out;
}

namespace {

Corpus from_graphs(GraphDataset ds, const RunConfig& cfg) {
  Corpus c;
  c.name = ds.name;
  c.raw_dim = ds.feature_dim;
  c.max_nodes = ds.max_nodes();
  if (cfg.gin_iters > 0) ds = gin_preprocess(ds, cfg.gin_iters);
  c.feature_scale = scale_features(ds, parse_feature_scaling(cfg.scaling));
  c.samples = feature_matrices(ds);
  return c;
}

Corpus load_mnist(const RunConfig& cfg) {
  const std::filesystem::path dir = std::filesystem::path(cfg.data_root) / "MNIST";
  const auto images_path = dir / "train-images-idx3-ubyte";
  const auto labels_path = dir / "train-labels-idx1-ubyte";
  if (!std::filesystem::exists(images_path) || !std::filesystem::exists(labels_path)) {
    throw DataError("MNIST IDX files not found in " + dir.string());
  }
  const IdxImages images = read_idx_images(images_path);
  const auto labels = read_idx_labels(labels_path);
  Corpus c;
  c.name = "mnist";
  c.raw_dim = 3;
  for (const Index i : sample_per_class(labels, cfg.mnist_per_class, cfg.seed)) {
    c.samples.push_back(image_to_distribution(images.image(i)).samples());
    c.max_nodes = std::max(c.max_nodes, c.samples.back().rows());
  }
  return c;
}

}  // namespace

Corpus load_corpus(const RunConfig& cfg) {
  Corpus c;
  try {
    if (cfg.dataset == "blobs") {
      BlobConfig b;
      b.n_graphs = cfg.blob_graphs;
      b.min_nodes = cfg.blob_min_nodes;
      b.max_nodes = cfg.blob_max_nodes;
      b.n_clusters = cfg.blob_clusters;
      b.dim = cfg.blob_dim;
      b.spread = cfg.blob_spread;
      b.seed = cfg.seed;
      c = from_graphs(synth_blobs(b), cfg);
    } else if (cfg.dataset == "mnist") {
      c = load_mnist(cfg);
    } else {
      if (cfg.data_root.empty()) throw DataError("no data root: set ASOT_DATA_ROOT");
      const std::filesystem::path root(cfg.data_root);
      if (!std::filesystem::exists(root / cfg.dataset / (cfg.dataset + "_A.txt")) &&
          !std::filesystem::exists(root / (cfg.dataset + "_A.txt"))) {
        throw DataError("dataset '" + cfg.dataset + "' not found under " + cfg.data_root + " (set ASOT_DATA_ROOT)");
      }
      c = from_graphs(parse_tudataset(cfg.data_root, cfg.dataset), cfg);
    }
  } catch (const ParseError& e) {
    throw DataError(e.what());
  } catch (const std::invalid_argument& e) {
    throw DataError(e.what());
  }
  if (c.samples.size() < 2) throw DataError("dataset '" + cfg.dataset + "' has fewer than two items");
  std::uint64_t h = fnv1a(c.name);
  for (const auto& s : c.samples) h = hash_matrix(s, h);
  c.hash = h;
  return c;
}

std::vector<std::size_t> fit_indices(std::size_t n, const RunConfig& cfg) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (cfg.fit_split == "all") return idx;
  std::mt19937_64 rng(cfg.seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto keep = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(cfg.train_fraction * static_cast<double>(n))));
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());
  return idx;
}

Trained train_method(const Corpus& corpus, const RunConfig& cfg, const AnchorSpace* nested_from) {
  const Method method = cfg.parsed_method();
  if (!is_learned(method)) throw DataError("method '" + cfg.method + "' has no training step");
  const auto start = Clock::now();

  std::vector<Matrix> train;
  Index pooled = 0;
  for (const std::size_t i : fit_indices(corpus.samples.size(), cfg)) {
    train.push_back(corpus.samples[i]);
    pooled += corpus.samples[i].rows();
  }
  Matrix pool(pooled, train.front().cols());
  Index row = 0;
  for (const auto& g : train) {
    pool.middleRows(row, g.rows()) = g;
    row += g.rows();
  }

  KmeansConfig kc;
  kc.k = cfg.k > 0 ? cfg.k : corpus.max_nodes;
  kc.batch_size = cfg.kmeans_batch;
  kc.max_iters = cfg.kmeans_iters;
  kc.seed = cfg.seed;
  const KmeansResult km = nested_from ? fit_kmeans_nested(pool, *nested_from, kc) : fit_kmeans(pool, kc);

  Trained t;
  t.checkpoint.learner = learner_of(method);
  t.checkpoint.config = cfg.to_json();
  t.checkpoint.config["k"] = kc.k;
  const std::string learner = t.checkpoint.learner;
  if (learner == "kmeans") {
    t.checkpoint.space = km.space;
    t.loss_trace = km.inertia_trace;
  } else if (learner == "ml") {
    const Index h = std::max<Index>(1, corpus.raw_dim);
    MlTrainConfig mc;
    mc.epochs = cfg.epochs;
    mc.batch_graphs = cfg.batch_graphs;
    mc.pair_subsample = cfg.pair_subsample;
    mc.seed = cfg.seed;
    mc.learning_rate = cfg.learning_rate;
    MlTrainResult r = train_ml(train, make_ml_model(km.space.anchors(), h, 100.0, cfg.seed), mc);
    t.aborted = r.aborted;
    t.message = r.message;
    t.loss_trace = std::move(r.loss_trace);
    t.checkpoint.space = r.model.space();
    t.checkpoint.ml = std::move(r.model);
  } else {
    DlTrainConfig dc;
    dc.epochs = cfg.epochs;
    dc.batch_graphs = cfg.batch_graphs;
    dc.sample_subsample = cfg.sample_subsample;
    dc.seed = cfg.seed;
    dc.learning_rate = cfg.learning_rate;
    DlTrainResult r = train_dl(train, make_dl_model(km.space.anchors(), cfg.seed, cfg.dl_layers), dc);
    t.aborted = r.aborted;
    t.message = r.message;
    t.loss_trace = std::move(r.loss_trace);
    t.checkpoint.space = r.model.space();
    t.checkpoint.dl = std::move(r.model);
  }
  t.train_time = seconds_since(start);
  t.checkpoint.config["train_time"] = t.train_time;
  t.checkpoint.config["dataset_hash"] = hex(corpus.hash);
  return t;
}

DistanceRun compute_distances(const Corpus& corpus, const RunConfig& cfg, const Checkpoint* checkpoint) {
  const Method method = cfg.parsed_method();
  PairwiseOptions opt;
  opt.sinkhorn = cfg.sinkhorn();
  opt.threads = cfg.threads;
  opt.chunk_size = cfg.chunk_size;
  DistanceRun run;
  const auto start = Clock::now();

  if (!is_learned(method)) {
    opt.strategy = method == Method::ot_emd ? Strategy::exact
                   : method == Method::eot  ? Strategy::sinkhorn_one_by_one
                                            : Strategy::bds_sinkhorn;
    run.matrix = pairwise_matrix(ProblemSet::all_pairs(corpus.distributions()), opt);
    run.dist_time = seconds_since(start);
    return run;
  }

  if (!checkpoint) throw DataError("method '" + cfg.method + "' needs trained anchors");
  if (checkpoint->learner != learner_of(method)) {
    throw DataError("checkpoint holds '" + checkpoint->learner + "' anchors but method '" + cfg.method + "' needs '" +
                    learner_of(method) + "'");
  }
  const AnchorSpace& space = checkpoint->space;
  if (space.dim() != corpus.samples.front().cols()) {
    throw DataError("checkpoint anchors have dimension " + std::to_string(space.dim()) + ", data has " +
                    std::to_string(corpus.samples.front().cols()));
  }
  const CostMatrix shared = anchor_cost(space);
  if (is_entropic(method)) {
    const double ratio = shared.values().maxCoeff() / cfg.epsilon;
    run.cost_ratio = ratio;
    if (ratio > kUnderflowRatio) {
      run.warnings.push_back("max anchor cost / epsilon = " + std::to_string(ratio) + " exceeds " +
                             std::to_string(static_cast<int>(kUnderflowRatio)) +
                             "; the Gibbs kernel underflows and entropic costs are unreliable");
    }
  }

  std::vector<DiscreteDistribution> mapped(corpus.samples.size(), DiscreteDistribution::uniform(Matrix::Zero(1, 1)));
  parallel_for(corpus.samples.size(), cfg.threads, [&](std::size_t i) {
    const auto& x = corpus.samples[i];
    const Encoding z = checkpoint->encode(x);
    const MappedDistribution m = map_distribution(DiscreteDistribution::uniform(x), z);
    mapped[i] = DiscreteDistribution(space.anchors(), m.mass());
  });

  opt.strategy = is_entropic(method) ? Strategy::easot_batched : Strategy::exact;
  opt.shared_cost = shared;
  run.matrix = pairwise_matrix(ProblemSet::all_pairs(std::move(mapped)), opt);
  run.dist_time = seconds_since(start);
  return run;
}

}  // namespace asot::cli
