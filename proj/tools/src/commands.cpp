#include "commands.hpp"

#include "io.hpp"
#include "pipeline.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <optional>
#include <thread>

namespace asot::cli {

namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = kExitOk;
};

void add_run_options(CLI::App* app, RunConfig& c) {
  app->add_option("--dataset", c.dataset, "TUDataset name under $ASOT_DATA_ROOT, 'blobs' or 'mnist'")
      ->capture_default_str();
  app->add_option("--method", c.method, "Distance method")
      ->check(CLI::IsMember(method_names()))
      ->capture_default_str();
  app->add_option("--k", c.k, "Number of anchors (0 = maximum node count)")->capture_default_str();
  app->add_option("--epsilon", c.epsilon, "Sinkhorn regularisation")->capture_default_str();
  app->add_option("--iterations", c.iterations, "Sinkhorn iterations")->capture_default_str();
  app->add_option("--seed", c.seed, "Seed for every random choice")->capture_default_str();
  app->add_option("--threads", c.threads, "Worker threads (1 gives bit-identical output)")->capture_default_str();
  app->add_option("--chunk-size", c.chunk_size, "Pairs per batched Sinkhorn call")->capture_default_str();
  app->add_option("--gin-iters", c.gin_iters, "GIN propagation steps (0 keeps raw features)")->capture_default_str();
  app->add_option("--scaling", c.scaling, "Feature scaling: none, max_abs, row_l2")->capture_default_str();
  app->add_option("--fit-split", c.fit_split, "Graphs used for anchor fitting: train or all")
      ->check(CLI::IsMember({"train", "all"}))
      ->capture_default_str();
  app->add_option("--train-fraction", c.train_fraction, "Train share of the seeded split")->capture_default_str();
  app->add_option("--epochs", c.epochs, "Training epochs (ml, dl)")->capture_default_str();
  app->add_option("--batch-graphs", c.batch_graphs, "Graphs per training batch")->capture_default_str();
  app->add_option("--lr", c.learning_rate, "Adam learning rate")->capture_default_str();
  app->add_option("--pair-subsample", c.pair_subsample, "Sample pairs per graph pair (ml)")->capture_default_str();
  app->add_option("--sample-subsample", c.sample_subsample, "Samples per batch (dl)")->capture_default_str();
  app->add_option("--dl-layers", c.dl_layers, "Unrolled encoding layers (dl)")->capture_default_str();
  app->add_option("--kmeans-batch", c.kmeans_batch, "Mini-batch size for k-means")->capture_default_str();
  app->add_option("--kmeans-iters", c.kmeans_iters, "k-means iteration cap")->capture_default_str();
  app->add_option("--blob-graphs", c.blob_graphs)->capture_default_str();
  app->add_option("--blob-min-nodes", c.blob_min_nodes)->capture_default_str();
  app->add_option("--blob-max-nodes", c.blob_max_nodes)->capture_default_str();
  app->add_option("--blob-clusters", c.blob_clusters)->capture_default_str();
  app->add_option("--blob-dim", c.blob_dim)->capture_default_str();
  app->add_option("--blob-spread", c.blob_spread)->capture_default_str();
  app->add_option("--mnist-per-class", c.mnist_per_class)->capture_default_str();
}

nlohmann::json base_metadata(const std::string& command, const RunConfig& cfg) {
  return {{"command", command}, {"config", cfg.to_json()}, {"seed", cfg.seed}, {"hashes", nlohmann::json::object()}};
}

void emit_warnings(const std::vector<std::string>& warnings, std::ostream& err, nlohmann::json& meta) {
  for (const auto& w : warnings) err << "warning: " << w << '\n';
  meta["warnings"] = warnings;
}

nlohmann::json failures_json(const DistanceMatrix& m) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& [pair, reason] : m.failures()) out.push_back({{"i", pair.first}, {"j", pair.second}, {"reason", reason}});
  return out;
}

Matrix full_matrix(const DistanceMatrix& m) {
  Matrix out = m.values();
  for (std::size_t i = 0; i < m.size(); ++i) {
    for (std::size_t j = 0; j < m.size(); ++j) {
      if (i != j && !m.filled(i, j)) out(static_cast<Index>(i), static_cast<Index>(j)) = std::nan("");
    }
  }
  return out;
}

void write_loss_csv(const fs::path& path, const std::vector<double>& trace) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "step,loss\n";
  char buf[32];
  for (std::size_t i = 0; i < trace.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.12g", trace[i]);
    out << i << ',' << buf << '\n';
  }
}

/// Trained checkpoint for a learned method: loaded from `path` when given,
/// otherwise trained now. Returns the training time to report.
double obtain_checkpoint(const Corpus& corpus, const RunConfig& cfg, const std::string& given, Checkpoint& out,
                         nlohmann::json& meta, std::ostream& err) {
  if (!given.empty()) {
    const std::string path = fs::is_directory(given) ? (fs::path(given) / "checkpoint.json").string() : given;
    if (!fs::exists(path)) throw DataError("checkpoint " + path + " does not exist");
    out = load_checkpoint(path);
    meta["hashes"]["checkpoint"] = hex(hash_file(path));
    const std::string recorded = out.config.value("dataset_hash", "");
    if (!recorded.empty() && recorded != hex(corpus.hash)) {
      err << "warning: checkpoint was trained on a different corpus (hash " << recorded << ")\n";
    }
    return out.config.value("train_time", 0.0);
  }
  Trained t = train_method(corpus, cfg);
  if (t.aborted) throw NumericError("training aborted: " + t.message);
  out = std::move(t.checkpoint);
  return t.train_time;
}

Outcome cmd_train(RunConfig cfg, const std::string& out_dir, std::ostream& out, std::ostream& err) {
  cfg.validate();
  if (!is_learned(cfg.parsed_method())) throw DataError("train needs a learned method (asot-*/easot-*)");
  const Corpus corpus = load_corpus(cfg);
  Trained t = train_method(corpus, cfg);
  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  save_checkpoint(dir / "checkpoint.json", t.checkpoint);
  save_anchor_space((dir / "anchors.bin").string(), t.checkpoint.space);
  write_loss_csv(dir / "loss.csv", t.loss_trace);
  nlohmann::json meta = base_metadata("train", cfg);
  meta["hashes"]["dataset"] = hex(corpus.hash);
  meta["hashes"]["checkpoint"] = hex(hash_file(dir / "checkpoint.json"));
  meta["hashes"]["anchors"] = hex(hash_file(dir / "anchors.bin"));
  meta["train_time"] = t.train_time;
  meta["k"] = t.checkpoint.space.k();
  meta["aborted"] = t.aborted;
  if (t.aborted) meta["message"] = t.message;
  write_json(dir / "train.json", meta);
  out << "trained " << t.checkpoint.learner << " anchors (k=" << t.checkpoint.space.k() << ") in " << t.train_time
      << " s -> " << (dir / "checkpoint.json").string() << '\n';
  if (t.aborted) {
    err << "error: training aborted: " << t.message << " (last finite model saved)\n";
    return {kExitNumeric};
  }
  return {};
}

Outcome cmd_dist(RunConfig cfg, const std::string& out_path, const std::string& ckpt_path, std::ostream& out,
                 std::ostream& err) {
  cfg.validate();
  const Corpus corpus = load_corpus(cfg);
  nlohmann::json meta = base_metadata("dist", cfg);
  meta["hashes"]["dataset"] = hex(corpus.hash);
  double train_time = 0.0;
  Checkpoint ckpt;
  const bool learned = is_learned(cfg.parsed_method());
  if (learned) train_time = obtain_checkpoint(corpus, cfg, ckpt_path, ckpt, meta, err);
  const DistanceRun run = compute_distances(corpus, cfg, learned ? &ckpt : nullptr);
  emit_warnings(run.warnings, err, meta);
  write_matrix_csv(out_path, run.matrix);
  meta["hashes"]["output"] = hex(hash_file(out_path));
  meta["items"] = corpus.samples.size();
  if (learned) meta["k"] = ckpt.space.k();
  if (run.cost_ratio) meta["max_cost_over_epsilon"] = *run.cost_ratio;
  meta["train_time"] = train_time;
  meta["dist_time"] = run.dist_time;
  meta["total_time"] = train_time + run.dist_time;
  meta["failures"] = failures_json(run.matrix);
  write_json(out_path + ".json", meta);
  out << cfg.method << ": " << corpus.samples.size() << "x" << corpus.samples.size() << " matrix in " << run.dist_time
      << " s (train " << train_time << " s) -> " << out_path << '\n';
  if (!run.matrix.failures().empty()) {
    err << "error: " << run.matrix.failures().size() << " entries failed; first: "
        << run.matrix.failures().front().second << '\n';
    return {kExitNumeric};
  }
  return {};
}

Outcome cmd_rmse(const std::string& approx, const std::string& truth, const std::string& out_path, std::ostream& out) {
  Matrix a, t;
  try {
    a = read_matrix_csv(approx);
    t = read_matrix_csv(truth);
  } catch (const std::runtime_error& e) {
    throw DataError(e.what());
  }
  RmseReport r;
  try {
    r = rmse_upper(a, t);
  } catch (const std::invalid_argument& e) {
    throw DataError(e.what());
  }
  nlohmann::json j = r.to_json();
  j["approx"] = approx;
  j["truth"] = truth;
  j["hashes"] = {{"approx", hex(hash_file(approx))}, {"truth", hex(hash_file(truth))}};
  if (!out_path.empty()) write_json(out_path, j);
  out << j.dump(2) << '\n';
  return {std::isfinite(r.rmse) ? kExitOk : kExitNumeric};
}

Matrix truth_matrix(const Corpus& corpus, RunConfig cfg, const std::string& truth_path, nlohmann::json& meta) {
  if (!truth_path.empty()) {
    try {
      meta["hashes"]["truth"] = hex(hash_file(truth_path));
      return read_matrix_csv(truth_path);
    } catch (const std::runtime_error& e) {
      throw DataError(e.what());
    }
  }
  cfg.method = "ot-emd";
  const DistanceRun run = compute_distances(corpus, cfg, nullptr);
  meta["truth_time"] = run.dist_time;
  return full_matrix(run.matrix);
}

Outcome cmd_ablate(RunConfig cfg, const std::vector<Index>& ks, bool nested, const std::string& truth_path,
                   const std::string& out_path, std::ostream& out, std::ostream& err) {
  cfg.validate();
  if (!is_learned(cfg.parsed_method())) throw DataError("ablate-k needs a learned method (asot-*/easot-*)");
  if (nested && learner_of(cfg.parsed_method()) != "kmeans") throw DataError("--nested applies to k-means anchors only");
  const Corpus corpus = load_corpus(cfg);
  nlohmann::json meta = base_metadata("ablate-k", cfg);
  meta["hashes"]["dataset"] = hex(corpus.hash);
  meta["k_list"] = ks;
  meta["nested"] = nested;
  const Matrix truth = truth_matrix(corpus, cfg, truth_path, meta);

  std::vector<Index> order = ks;
  if (nested) std::sort(order.begin(), order.end());
  std::ofstream csv(out_path);
  if (!csv) throw std::runtime_error("cannot write " + out_path);
  csv << "k,rmse,train_time,dist_time,status\n";
  std::optional<AnchorSpace> previous;
  nlohmann::json rows = nlohmann::json::array();
  int failed = 0;
  for (const Index k : order) {
    RunConfig c = cfg;
    c.k = k;
    char line[160];
    try {
      if (k < 1) throw DataError("k must be >= 1");
      Trained t = train_method(corpus, c, nested && previous ? &*previous : nullptr);
      if (t.aborted) throw NumericError("training aborted: " + t.message);
      const DistanceRun run = compute_distances(corpus, c, &t.checkpoint);
      for (const auto& w : run.warnings) err << "warning (k=" << k << "): " << w << '\n';
      if (!run.matrix.failures().empty()) throw NumericError(run.matrix.failures().front().second);
      const RmseReport r = rmse_upper(full_matrix(run.matrix), truth);
      std::snprintf(line, sizeof(line), "%lld,%.12g,%.6g,%.6g,ok", static_cast<long long>(k), r.rmse, t.train_time,
                    run.dist_time);
      rows.push_back({{"k", k}, {"rmse", r.rmse}, {"train_time", t.train_time}, {"dist_time", run.dist_time}});
      previous = t.checkpoint.space;
    } catch (const std::exception& e) {
      ++failed;
      std::snprintf(line, sizeof(line), "%lld,nan,nan,nan,error", static_cast<long long>(k));
      rows.push_back({{"k", k}, {"error", e.what()}});
      err << "k=" << k << " failed: " << e.what() << '\n';
    }
    csv << line << '\n';
    out << line << '\n';
  }
  csv.close();
  meta["rows"] = rows;
  meta["hashes"]["output"] = hex(hash_file(out_path));
  write_json(out_path + ".json", meta);
  return {failed ? kExitNumeric : kExitOk};
}

Outcome cmd_bench(RunConfig cfg, const std::vector<std::string>& methods, const std::string& out_path,
                  std::ostream& out, std::ostream& err) {
  cfg.validate();
  const Corpus corpus = load_corpus(cfg);
  nlohmann::json meta = base_metadata("bench", cfg);
  meta["hashes"]["dataset"] = hex(corpus.hash);
  meta["methods"] = methods;
  RunConfig tc = cfg;
  tc.method = "ot-emd";
  const DistanceRun truth_run = compute_distances(corpus, tc, nullptr);
  const Matrix truth = full_matrix(truth_run.matrix);

  struct Row {
    std::string method;
    double train = 0.0;
    double dist = 0.0;
    double rmse = 0.0;
  };
  std::vector<Row> rows{{"ot-emd", 0.0, truth_run.dist_time, 0.0}};
  for (const auto& name : methods) {
    RunConfig c = cfg;
    c.method = name;
    c.validate();
    Row row{name};
    Checkpoint ckpt;
    const bool learned = is_learned(c.parsed_method());
    if (learned) {
      Trained t = train_method(corpus, c);
      if (t.aborted) throw NumericError(name + " training aborted: " + t.message);
      row.train = t.train_time;
      ckpt = std::move(t.checkpoint);
    }
    const DistanceRun run = compute_distances(corpus, c, learned ? &ckpt : nullptr);
    for (const auto& w : run.warnings) err << "warning (" << name << "): " << w << '\n';
    row.dist = run.dist_time;
    row.rmse = rmse_upper(full_matrix(run.matrix), truth).rmse;
    rows.push_back(row);
  }

  std::optional<double> eot_time;
  for (const auto& r : rows) {
    if (r.method == "eot") eot_time = r.dist;
  }
  std::ofstream csv(out_path);
  if (!csv) throw std::runtime_error("cannot write " + out_path);
  csv << "method,train_time,dist_time,total_time,rmse,dist_speedup_vs_eot\n";
  nlohmann::json jrows = nlohmann::json::array();
  for (const auto& r : rows) {
    char line[200];
    char speed[32] = "";
    if (eot_time && r.dist > 0.0) std::snprintf(speed, sizeof(speed), "%.6g", *eot_time / r.dist);
    std::snprintf(line, sizeof(line), "%s,%.6g,%.6g,%.6g,%.12g,%s", r.method.c_str(), r.train, r.dist, r.train + r.dist,
                  r.rmse, speed);
    csv << line << '\n';
    out << line << '\n';
    jrows.push_back({{"method", r.method}, {"train_time", r.train}, {"dist_time", r.dist}, {"rmse", r.rmse}});
  }
  csv.close();
  meta["rows"] = jrows;
  meta["hashes"]["output"] = hex(hash_file(out_path));
  write_json(out_path + ".json", meta);
  return {};
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Anchor-space optimal transport: train anchors, compute pairwise distance matrices, evaluate"};
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML/INI file with option values; command-line flags take precedence");

  RunConfig cfg;
  cfg.data_root = default_data_root();
  cfg.threads = std::max(1u, std::thread::hardware_concurrency());

  auto* train = app.add_subcommand("train", "Fit anchors; writes checkpoint.json, anchors.bin, loss.csv and train.json");
  add_run_options(train, cfg);
  std::string train_out;
  train->add_option("--out", train_out, "Output directory")->required();

  auto* dist = app.add_subcommand("dist", "Pairwise distance matrix (CSV) with a JSON sidecar");
  add_run_options(dist, cfg);
  std::string dist_out;
  std::string ckpt;
  dist->add_option("--out", dist_out, "Matrix CSV path; metadata goes to <out>.json")->required();
  dist->add_option("--checkpoint", ckpt, "Trained checkpoint file or train output directory (learned methods train inline without it)");

  auto* rmse = app.add_subcommand("rmse", "RMSE between two distance matrices over the strict upper triangle");
  std::string approx;
  std::string truth;
  std::string rmse_out;
  rmse->add_option("approx", approx, "Approximate matrix CSV")->required();
  rmse->add_option("truth", truth, "Reference matrix CSV")->required();
  rmse->add_option("--out", rmse_out, "Also write the report as JSON");

  auto* ablate = app.add_subcommand("ablate-k", "RMSE and timing for a list of anchor counts");
  add_run_options(ablate, cfg);
  std::vector<Index> k_list;
  bool nested = false;
  std::string ablate_truth;
  std::string ablate_out;
  ablate->add_option("--k-list", k_list, "Anchor counts")->required()->delimiter(',');
  ablate->add_flag("--nested", nested, "Seed each k-means fit with the anchors of the previous k (ascending)");
  ablate->add_option("--truth", ablate_truth, "Reference matrix CSV (computed with ot-emd when absent)");
  ablate->add_option("--out", ablate_out, "CSV path; metadata goes to <out>.json")->required();

  auto* bench = app.add_subcommand("bench", "Train and distance timings of several methods against ot-emd");
  add_run_options(bench, cfg);
  std::vector<std::string> bench_methods{"eot", "bds-eot", "asot-k", "easot-k"};
  std::string bench_out;
  bench->add_option("--methods", bench_methods, "Methods to time")
      ->delimiter(',')
      ->check(CLI::IsMember(method_names()))
      ->capture_default_str();
  bench->add_option("--out", bench_out, "CSV path; metadata goes to <out>.json")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    Outcome o;
    if (*train) o = cmd_train(cfg, train_out, out, err);
    if (*dist) o = cmd_dist(cfg, dist_out, ckpt, out, err);
    if (*rmse) o = cmd_rmse(approx, truth, rmse_out, out);
    if (*ablate) o = cmd_ablate(cfg, k_list, nested, ablate_truth, ablate_out, out, err);
    if (*bench) o = cmd_bench(cfg, bench_methods, bench_out, out, err);
    return o.code;
  } catch (const DataError& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const NumericError& e) {
    err << "error: numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const InfeasibleError& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
}

}  // namespace asot::cli
