#include "asot/batch.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <span>
#include <thread>

namespace asot {

ProblemSet::ProblemSet(std::vector<DiscreteDistribution> distributions, std::vector<IndexPair> pairs)
    : distributions_(std::move(distributions)), pairs_(std::move(pairs)) {
  std::set<IndexPair> seen;
  for (const auto& [i, j] : pairs_) {
    if (i >= distributions_.size() || j >= distributions_.size()) {
      throw std::invalid_argument("pair index out of range");
    }
    if (i == j) throw std::invalid_argument("self-pair in problem set");
    if (!seen.insert({i, j}).second) throw std::invalid_argument("duplicate pair in problem set");
  }
}

ProblemSet ProblemSet::all_pairs(std::vector<DiscreteDistribution> distributions) {
  std::vector<IndexPair> pairs;
  const std::size_t n = distributions.size();
  pairs.reserve(n * (n > 0 ? n - 1 : 0) / 2);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
  }
  return ProblemSet(std::move(distributions), std::move(pairs));
}

void BatchedMarginals::validate() const {
  if (sources.rows() != targets.rows() || sources.cols() != targets.cols()) {
    throw std::invalid_argument("batched marginals: A and B shapes differ");
  }
  for (Index c = 0; c < sources.cols(); ++c) {
    if (!on_simplex(sources.col(c), kSimplexTolerance) || !on_simplex(targets.col(c), kSimplexTolerance)) {
      throw std::invalid_argument("batched marginals: column " + std::to_string(c) +
                                  " is not on the probability simplex");
    }
  }
}

namespace {

// Elementwise a / max(floor, d); flags clamping and NaN for the caller.
struct GuardedDivide {
  double floor;
  bool clamped = false;
  bool nan = false;

  double operator()(double numerator, double d) {
    if (std::isnan(d)) {
      nan = true;
      return std::numeric_limits<double>::quiet_NaN();
    }
    if (!(d >= floor)) {
      clamped = true;
      d = floor;
    }
    return numerator / d;
  }
};

ColumnStatus status_of(const GuardedDivide& g) {
  if (g.nan) return ColumnStatus::numeric_failure;
  return g.clamped ? ColumnStatus::underflow_clamped : ColumnStatus::ok;
}

}  // namespace

BatchResult batched_sinkhorn_fixed(const BatchedMarginals& marginals, const CostMatrix& shared_cost,
                                   const SinkhornConfig& cfg) {
  cfg.validate();
  marginals.validate();
  const Index k = marginals.sources.rows();
  const Index n = marginals.sources.cols();
  if (shared_cost.rows() != k || shared_cost.cols() != k) {
    throw std::invalid_argument("batched sinkhorn: shared cost is not " + std::to_string(k) + "x" +
                                std::to_string(k));
  }
  // Rows with zero source mass in every column keep u = 0 throughout; the
  // updates only need the kernel rows of the source support.
  std::vector<Index> support;
  for (Index r = 0; r < k; ++r) {
    if ((marginals.sources.row(r).array() > 0.0).any()) support.push_back(r);
  }
  const auto ks = static_cast<Index>(support.size());
  Matrix a(ks, n);
  Matrix kernel(ks, k);
  Matrix weighted(ks, k);
  const Matrix full_kernel = (-shared_cost.values() / cfg.epsilon).array().exp().matrix();
  for (Index s = 0; s < ks; ++s) {
    const Index r = support[static_cast<std::size_t>(s)];
    a.row(s) = marginals.sources.row(r);
    kernel.row(s) = full_kernel.row(r);
    weighted.row(s) = full_kernel.row(r).cwiseProduct(shared_cost.values().row(r));
  }
  const Matrix& b = marginals.targets;
  Matrix u(ks, n);
  Matrix v = Matrix::Ones(k, n);
  std::vector<GuardedDivide> guards(static_cast<std::size_t>(n), GuardedDivide{cfg.underflow_floor});
  Matrix kv(ks, n);
  Matrix ktu(k, n);
  for (int it = 0; it < cfg.iterations; ++it) {
    kv.noalias() = kernel * v;
    for (Index c = 0; c < n; ++c) {
      auto& g = guards[static_cast<std::size_t>(c)];
      for (Index r = 0; r < ks; ++r) u(r, c) = g(a(r, c), kv(r, c));
    }
    ktu.noalias() = kernel.transpose() * u;
    for (Index c = 0; c < n; ++c) {
      auto& g = guards[static_cast<std::size_t>(c)];
      for (Index r = 0; r < k; ++r) v(r, c) = g(b(r, c), ktu(r, c));
    }
  }
  const Matrix kcv = weighted * v;
  BatchResult out;
  out.costs = u.cwiseProduct(kcv).colwise().sum().transpose();
  out.status.resize(static_cast<std::size_t>(n));
  for (Index c = 0; c < n; ++c) {
    auto& g = guards[static_cast<std::size_t>(c)];
    if (std::isnan(out.costs(c))) g.nan = true;
    out.status[static_cast<std::size_t>(c)] = status_of(g);
  }
  return out;
}

void BlockDiagonalKernel::add_block(Matrix block) {
  row_offsets_.push_back(total_rows_);
  col_offsets_.push_back(total_cols_);
  total_rows_ += block.rows();
  total_cols_ += block.cols();
  blocks_.push_back(std::move(block));
}

BlockDiagonalKernel BlockDiagonalKernel::from_dense(const Matrix& dense, const std::vector<Index>& row_sizes,
                                                    const std::vector<Index>& col_sizes) {
  if (row_sizes.size() != col_sizes.size()) throw std::invalid_argument("block size lists differ in length");
  BlockDiagonalKernel out;
  Index r = 0;
  Index c = 0;
  for (std::size_t b = 0; b < row_sizes.size(); ++b) {
    if (r + row_sizes[b] > dense.rows() || c + col_sizes[b] > dense.cols()) {
      throw std::invalid_argument("block sizes exceed the dense matrix");
    }
    out.add_block(dense.block(r, c, row_sizes[b], col_sizes[b]));
    r += row_sizes[b];
    c += col_sizes[b];
  }
  return out;
}

bool BlockDiagonalKernel::in_block(Index r, Index c) const {
  const auto it = std::upper_bound(row_offsets_.begin(), row_offsets_.end(), r);
  if (it == row_offsets_.begin()) return false;
  const auto b = static_cast<std::size_t>(std::distance(row_offsets_.begin(), it) - 1);
  if (r >= row_offsets_[b] + blocks_[b].rows()) return false;
  return c >= col_offsets_[b] && c < col_offsets_[b] + blocks_[b].cols();
}

Vector BlockDiagonalKernel::multiply(const Vector& v) const {
  Vector out(total_rows_);
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    out.segment(row_offsets_[b], blocks_[b].rows()).noalias() =
        blocks_[b] * v.segment(col_offsets_[b], blocks_[b].cols());
  }
  return out;
}

Vector BlockDiagonalKernel::multiply_transpose(const Vector& u) const {
  Vector out(total_cols_);
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    out.segment(col_offsets_[b], blocks_[b].cols()).noalias() =
        blocks_[b].transpose() * u.segment(row_offsets_[b], blocks_[b].rows());
  }
  return out;
}

BatchResult bds_sinkhorn_stacked(const BlockDiagonalKernel& kernel, const std::vector<CostMatrix>& costs,
                                 const Vector& stacked_a, const Vector& stacked_b,
                                 const SinkhornConfig& cfg) {
  cfg.validate();
  const std::size_t blocks = kernel.block_count();
  if (costs.size() != blocks) throw std::invalid_argument("bds: one cost block per kernel block required");
  if (stacked_a.size() != kernel.total_rows() || stacked_b.size() != kernel.total_cols()) {
    throw std::invalid_argument("bds: stacked marginals do not match the kernel");
  }
  std::vector<GuardedDivide> guards(blocks, GuardedDivide{cfg.underflow_floor});
  Vector u(kernel.total_rows());
  Vector v = Vector::Ones(kernel.total_cols());
  for (int it = 0; it < cfg.iterations; ++it) {
    const Vector kv = kernel.multiply(v);
    for (std::size_t b = 0; b < blocks; ++b) {
      const Index off = kernel.row_offset(b);
      for (Index r = 0; r < kernel.block(b).rows(); ++r) u(off + r) = guards[b](stacked_a(off + r), kv(off + r));
    }
    const Vector ktu = kernel.multiply_transpose(u);
    for (std::size_t b = 0; b < blocks; ++b) {
      const Index off = kernel.col_offset(b);
      for (Index c = 0; c < kernel.block(b).cols(); ++c) v(off + c) = guards[b](stacked_b(off + c), ktu(off + c));
    }
  }
  BatchResult out;
  out.costs.resize(static_cast<Index>(blocks));
  out.status.resize(blocks);
  for (std::size_t b = 0; b < blocks; ++b) {
    const Matrix& kb = kernel.block(b);
    const auto ub = u.segment(kernel.row_offset(b), kb.rows());
    const auto vb = v.segment(kernel.col_offset(b), kb.cols());
    const double cost = ub.dot(kb.cwiseProduct(costs[b].values()) * vb);
    out.costs(static_cast<Index>(b)) = cost;
    if (std::isnan(cost)) guards[b].nan = true;
    out.status[b] = status_of(guards[b]);
  }
  return out;
}

namespace {

CostMatrix pair_cost(const DiscreteDistribution& x, const DiscreteDistribution& y, const PairwiseOptions& opt) {
  if (opt.shared_cost) return *opt.shared_cost;
  return opt.metric ? opt.metric(x.samples(), y.samples()) : euclidean_cost(x.samples(), y.samples());
}

BatchResult bds_run(const std::vector<DiscreteDistribution>& dists, std::span<const IndexPair> pairs,
                    const std::function<CostMatrix(const DiscreteDistribution&, const DiscreteDistribution&)>& cost_of,
                    const SinkhornConfig& cfg) {
  cfg.validate();
  BlockDiagonalKernel kernel;
  std::vector<CostMatrix> costs;
  costs.reserve(pairs.size());
  Index rows = 0;
  Index cols = 0;
  for (const auto& [i, j] : pairs) {
    rows += dists[i].size();
    cols += dists[j].size();
  }
  Vector a(rows);
  Vector b(cols);
  rows = 0;
  cols = 0;
  for (const auto& [i, j] : pairs) {
    CostMatrix c = cost_of(dists[i], dists[j]);
    if (c.rows() != dists[i].size() || c.cols() != dists[j].size()) {
      throw std::invalid_argument("bds: cost block shape does not match the pair");
    }
    kernel.add_block((-c.values() / cfg.epsilon).array().exp().matrix());
    costs.push_back(std::move(c));
    a.segment(rows, dists[i].size()) = dists[i].mass();
    b.segment(cols, dists[j].size()) = dists[j].mass();
    rows += dists[i].size();
    cols += dists[j].size();
  }
  return bds_sinkhorn_stacked(kernel, costs, a, b, cfg);
}

}  // namespace

BatchResult bds_sinkhorn(const ProblemSet& problems, const GroundMetric& metric, const SinkhornConfig& cfg) {
  const GroundMetric m = metric ? metric : GroundMetric(euclidean_cost);
  return bds_run(problems.distributions(), problems.pairs(),
                 [&](const DiscreteDistribution& x, const DiscreteDistribution& y) {
                   return m(x.samples(), y.samples());
                 },
                 cfg);
}

DistanceMatrix::DistanceMatrix(std::size_t n) : n_(n), values_(Matrix::Zero(n, n)), mask_(n * n, 0) {}

void DistanceMatrix::set(std::size_t i, std::size_t j, double value) {
  if (i >= n_ || j >= n_) throw std::out_of_range("distance matrix index out of range");
  if (!(value >= 0.0)) throw std::invalid_argument("distance must be nonnegative");
  if (i == j && value != 0.0) throw std::invalid_argument("diagonal distance must be zero");
  values_(i, j) = value;
  values_(j, i) = value;
  mask_[i * n_ + j] = 1;
  mask_[j * n_ + i] = 1;
}

void DistanceMatrix::mark_failed(std::size_t i, std::size_t j, std::string reason) {
  failures_.push_back({{i, j}, std::move(reason)});
}

std::size_t DistanceMatrix::filled_count() const {
  return static_cast<std::size_t>(std::count(mask_.begin(), mask_.end(), char{1}));
}

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::exact: return "exact";
    case Strategy::sinkhorn_one_by_one: return "sinkhorn-one-by-one";
    case Strategy::bds_sinkhorn: return "bds-sinkhorn";
    case Strategy::easot_batched: return "easot-batched";
  }
  return "unknown";
}

Strategy parse_strategy(std::string_view name) {
  for (Strategy s : {Strategy::exact, Strategy::sinkhorn_one_by_one, Strategy::bds_sinkhorn, Strategy::easot_batched}) {
    if (to_string(s) == name) return s;
  }
  throw std::invalid_argument("unknown strategy '" + std::string(name) + "'");
}

void parallel_for(std::size_t count, unsigned threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(threads, count));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = count * w / workers;
    const std::size_t end = count * (w + 1) / workers;
    pool.emplace_back([&fn, begin, end] {
      for (std::size_t i = begin; i < end; ++i) fn(i);
    });
  }
}

namespace {

std::string describe(ColumnStatus s) {
  return s == ColumnStatus::numeric_failure ? "numeric failure" : "underflow clamped";
}

}  // namespace

DistanceMatrix pairwise_matrix(const ProblemSet& problems, const PairwiseOptions& options) {
  const auto& dists = problems.distributions();
  DistanceMatrix out(dists.size());

  // Each unordered pair once, in first-seen order.
  std::vector<IndexPair> pairs;
  {
    std::set<IndexPair> seen;
    for (auto [i, j] : problems.pairs()) {
      if (seen.insert({std::min(i, j), std::max(i, j)}).second) pairs.emplace_back(i, j);
    }
  }
  const SinkhornConfig& cfg = options.sinkhorn;
  if (options.strategy != Strategy::exact) cfg.validate();

  std::vector<double> values(pairs.size(), 0.0);
  std::vector<std::string> errors(pairs.size());

  switch (options.strategy) {
    case Strategy::exact:
    case Strategy::sinkhorn_one_by_one: {
      const bool exact = options.strategy == Strategy::exact;
      parallel_for(pairs.size(), options.threads, [&](std::size_t p) {
        const auto& x = dists[pairs[p].first];
        const auto& y = dists[pairs[p].second];
        try {
          const CostMatrix c = pair_cost(x, y, options);
          if (exact) {
            values[p] = solve_exact(x.mass(), y.mass(), c).cost;
          } else {
            const SinkhornResult r = sinkhorn(x.mass(), y.mass(), c, cfg);
            values[p] = r.cost;
          }
        } catch (const std::exception& e) {
          errors[p] = e.what();
        }
      });
      break;
    }
    case Strategy::bds_sinkhorn:
    case Strategy::easot_batched: {
      const bool batched = options.strategy == Strategy::easot_batched;
      if (batched) {
        if (!options.shared_cost) throw std::invalid_argument("easot-batched requires a shared anchor cost");
        const Index k = options.shared_cost->rows();
        for (const auto& d : dists) {
          if (d.size() != k) throw std::invalid_argument("easot-batched: every distribution must have k entries");
        }
      }
      // Chunks of at most chunk_size pairs. For the shared-cost solver a chunk
      // also never spans two source distributions, which keeps the source
      // support of each batched call small.
      const std::size_t chunk = std::max<std::size_t>(1, options.chunk_size);
      std::vector<std::size_t> starts;
      for (std::size_t p = 0; p < pairs.size(); ++p) {
        if (starts.empty() || p - starts.back() >= chunk || (batched && pairs[p].first != pairs[p - 1].first)) {
          starts.push_back(p);
        }
      }
      const std::size_t chunks = starts.size();
      parallel_for(chunks, options.threads, [&](std::size_t c) {
        const std::size_t begin = starts[c];
        const std::size_t end = c + 1 < chunks ? starts[c + 1] : pairs.size();
        const std::span<const IndexPair> slice(pairs.data() + begin, end - begin);
        try {
          BatchResult r;
          if (batched) {
            const Index k = options.shared_cost->rows();
            BatchedMarginals m{Matrix(k, static_cast<Index>(slice.size())), Matrix(k, static_cast<Index>(slice.size()))};
            for (std::size_t q = 0; q < slice.size(); ++q) {
              m.sources.col(static_cast<Index>(q)) = dists[slice[q].first].mass();
              m.targets.col(static_cast<Index>(q)) = dists[slice[q].second].mass();
            }
            r = batched_sinkhorn_fixed(m, *options.shared_cost, cfg);
          } else {
            r = bds_run(dists, slice,
                        [&](const DiscreteDistribution& x, const DiscreteDistribution& y) {
                          return pair_cost(x, y, options);
                        },
                        cfg);
          }
          for (std::size_t q = 0; q < slice.size(); ++q) {
            values[begin + q] = r.costs(static_cast<Index>(q));
            if (r.status[q] == ColumnStatus::numeric_failure) errors[begin + q] = describe(r.status[q]);
          }
        } catch (const std::exception& e) {
          for (std::size_t q = begin; q < end; ++q) errors[q] = e.what();
        }
      });
      break;
    }
  }

  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const auto [i, j] = pairs[p];
    if (!errors[p].empty()) {
      out.mark_failed(i, j, errors[p]);
    } else {
      out.set(i, j, std::max(0.0, values[p]));
    }
  }
  return out;
}

}  // namespace asot
