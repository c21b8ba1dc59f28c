#include "asot/kmeans.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <random>

namespace asot {

void KmeansConfig::validate() const {
  if (k < 1) throw std::invalid_argument("kmeans: k must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("kmeans: batch_size must be >= 1");
  if (max_iters < 1) throw std::invalid_argument("kmeans: max_iters must be >= 1");
  if (!(tol >= 0.0)) throw std::invalid_argument("kmeans: tol must be >= 0");
}

namespace {

Index nearest_row(const Vector& x, const Matrix& centers, double* dist2 = nullptr) {
  Index best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Index c = 0; c < centers.rows(); ++c) {
    const double d = (centers.row(c).transpose() - x).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  if (dist2) *dist2 = best_d;
  return best;
}

// Indices of the first occurrence of each distinct row, in sample order.
std::vector<Index> distinct_rows(const Matrix& samples) {
  std::vector<Index> order(static_cast<std::size_t>(samples.rows()));
  std::iota(order.begin(), order.end(), Index{0});
  auto less = [&](Index a, Index b) {
    for (Index c = 0; c < samples.cols(); ++c) {
      if (samples(a, c) != samples(b, c)) return samples(a, c) < samples(b, c);
    }
    return a < b;
  };
  std::sort(order.begin(), order.end(), less);
  std::vector<Index> firsts;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (i == 0 || samples.row(order[i]) != samples.row(order[i - 1])) firsts.push_back(order[i]);
  }
  std::sort(firsts.begin(), firsts.end());
  return firsts;
}

// Appends k-means++ seeds to `centers` until it has k rows.
Matrix plus_plus_seeds(const Matrix& samples, Matrix centers, Index k, std::mt19937_64& rng) {
  const Index s = samples.rows();
  Matrix out(k, samples.cols());
  Index have = centers.rows();
  out.topRows(have) = centers;
  if (have == 0) {
    std::uniform_int_distribution<Index> pick(0, s - 1);
    out.row(0) = samples.row(pick(rng));
    have = 1;
  }
  std::vector<double> d2(static_cast<std::size_t>(s));
  for (Index i = 0; i < s; ++i) nearest_row(samples.row(i).transpose(), out.topRows(have), &d2[static_cast<std::size_t>(i)]);
  while (have < k) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    Index chosen = 0;
    if (total > 0.0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double target = u(rng);
      chosen = s - 1;
      for (Index i = 0; i < s; ++i) {
        target -= d2[static_cast<std::size_t>(i)];
        if (target < 0.0 && d2[static_cast<std::size_t>(i)] > 0.0) {
          chosen = i;
          break;
        }
      }
      while (d2[static_cast<std::size_t>(chosen)] == 0.0 && chosen > 0) --chosen;
    }
    out.row(have) = samples.row(chosen);
    ++have;
    for (Index i = 0; i < s; ++i) {
      const double d = (samples.row(i) - out.row(have - 1)).squaredNorm();
      d2[static_cast<std::size_t>(i)] = std::min(d2[static_cast<std::size_t>(i)], d);
    }
  }
  return out;
}

void minibatch_phase(const Matrix& samples, Matrix& centers, const KmeansConfig& cfg, std::mt19937_64& rng) {
  const Index s = samples.rows();
  if (cfg.batch_size >= s) return;
  std::vector<double> counts(static_cast<std::size_t>(centers.rows()), 0.0);
  std::uniform_int_distribution<Index> pick(0, s - 1);
  std::vector<Index> batch(static_cast<std::size_t>(cfg.batch_size));
  std::vector<Index> assign(batch.size());
  for (int step = 0; step < cfg.max_iters; ++step) {
    for (auto& b : batch) b = pick(rng);
    for (std::size_t i = 0; i < batch.size(); ++i) assign[i] = nearest_row(samples.row(batch[i]).transpose(), centers);
    const Matrix before = centers;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto c = static_cast<std::size_t>(assign[i]);
      counts[c] += 1.0;
      const double eta = 1.0 / counts[c];
      centers.row(assign[i]) = (1.0 - eta) * centers.row(assign[i]) + eta * samples.row(batch[i]);
    }
    if ((centers - before).rowwise().norm().maxCoeff() <= cfg.tol) break;
  }
}

struct Assignment {
  std::vector<Index> label;
  std::vector<double> dist2;
  double inertia = 0.0;
};

Assignment assign_all(const Matrix& samples, const Matrix& centers) {
  Assignment a;
  a.label.resize(static_cast<std::size_t>(samples.rows()));
  a.dist2.resize(a.label.size());
  for (Index i = 0; i < samples.rows(); ++i) {
    const auto u = static_cast<std::size_t>(i);
    a.label[u] = nearest_row(samples.row(i).transpose(), centers, &a.dist2[u]);
    a.inertia += a.dist2[u];
  }
  return a;
}

// Means of the assigned samples; an empty cluster takes the sample that is
// currently worst served.
Matrix update_centers(const Matrix& samples, const Matrix& centers, const Assignment& a) {
  Matrix sums = Matrix::Zero(centers.rows(), centers.cols());
  std::vector<Index> counts(static_cast<std::size_t>(centers.rows()), 0);
  for (Index i = 0; i < samples.rows(); ++i) {
    const Index c = a.label[static_cast<std::size_t>(i)];
    sums.row(c) += samples.row(i);
    ++counts[static_cast<std::size_t>(c)];
  }
  Matrix out = centers;
  std::vector<char> taken(static_cast<std::size_t>(samples.rows()), 0);
  for (Index c = 0; c < centers.rows(); ++c) {
    const auto n = counts[static_cast<std::size_t>(c)];
    if (n > 0) {
      out.row(c) = sums.row(c) / static_cast<double>(n);
      continue;
    }
    Index worst = -1;
    double worst_d = -1.0;
    for (Index i = 0; i < samples.rows(); ++i) {
      const auto u = static_cast<std::size_t>(i);
      if (!taken[u] && a.dist2[u] > worst_d) {
        worst_d = a.dist2[u];
        worst = i;
      }
    }
    if (worst >= 0) {
      taken[static_cast<std::size_t>(worst)] = 1;
      out.row(c) = samples.row(worst);
    }
  }
  return out;
}

double mean_residual(const Matrix& samples, const Matrix& centers) {
  double total = 0.0;
  for (Index i = 0; i < samples.rows(); ++i) {
    double d2 = 0.0;
    nearest_row(samples.row(i).transpose(), centers, &d2);
    total += std::sqrt(d2);
  }
  return total / static_cast<double>(samples.rows());
}

// Fewer distinct samples than k: anchors are the distinct samples followed by
// jittered copies.
KmeansResult padded_space(const Matrix& samples, const std::vector<Index>& distinct, Index k) {
  Matrix anchors(k, samples.cols());
  const auto nd = static_cast<Index>(distinct.size());
  for (Index c = 0; c < k; ++c) {
    anchors.row(c) = samples.row(distinct[static_cast<std::size_t>(c % nd)]);
    const Index copy = c / nd;
    if (copy > 0) anchors.row(c).array() += 1e-9 * static_cast<double>(copy);
  }
  KmeansResult out{AnchorSpace(std::move(anchors)), {}, 0.0, 0};
  out.inertia = kmeans_inertia(samples, out.space);
  out.inertia_trace.push_back(out.inertia);
  return out;
}

template <typename Select>
KmeansResult lloyd(const Matrix& samples, Matrix centers, const KmeansConfig& cfg, Select&& on_pass) {
  KmeansResult out;
  for (int pass = 0; pass < cfg.max_iters; ++pass) {
    const Assignment a = assign_all(samples, centers);
    out.inertia_trace.push_back(a.inertia);
    on_pass(centers);
    Matrix next = update_centers(samples, centers, a);
    const double moved = (next - centers).rowwise().norm().maxCoeff();
    centers = std::move(next);
    ++out.full_passes;
    if (moved <= cfg.tol) break;
  }
  const Assignment final_assign = assign_all(samples, centers);
  if (out.inertia_trace.empty() || final_assign.inertia < out.inertia_trace.back()) {
    out.inertia_trace.push_back(final_assign.inertia);
  }
  on_pass(centers);
  out.inertia = final_assign.inertia;
  out.space = AnchorSpace(std::move(centers));
  return out;
}

void check_samples(const Matrix& samples) {
  if (samples.rows() < 1) throw std::invalid_argument("kmeans: no samples");
  if (samples.cols() < 1) throw std::invalid_argument("kmeans: samples have no features");
  if (!samples.allFinite()) throw std::invalid_argument("kmeans: samples must be finite");
}

}  // namespace

KmeansResult fit_kmeans(const Matrix& samples, const KmeansConfig& cfg) {
  cfg.validate();
  check_samples(samples);
  const std::vector<Index> distinct = distinct_rows(samples);
  if (static_cast<Index>(distinct.size()) <= cfg.k) return padded_space(samples, distinct, cfg.k);

  std::mt19937_64 rng(cfg.seed);
  Matrix centers = plus_plus_seeds(samples, Matrix(0, samples.cols()), cfg.k, rng);
  minibatch_phase(samples, centers, cfg, rng);
  return lloyd(samples, std::move(centers), cfg, [](const Matrix&) {});
}

KmeansResult fit_kmeans_nested(const Matrix& samples, const AnchorSpace& previous, const KmeansConfig& cfg) {
  cfg.validate();
  check_samples(samples);
  if (previous.metric() != AnchorMetric::euclidean || previous.dim() != samples.cols()) {
    throw std::invalid_argument("kmeans nested: previous space must be Euclidean with matching dim");
  }
  if (previous.k() > cfg.k) throw std::invalid_argument("kmeans nested: k must not shrink");
  const std::vector<Index> distinct = distinct_rows(samples);
  if (static_cast<Index>(distinct.size()) <= cfg.k) return padded_space(samples, distinct, cfg.k);

  std::mt19937_64 rng(cfg.seed);
  const Matrix seeds = plus_plus_seeds(samples, previous.anchors(), cfg.k, rng);
  Matrix best = seeds;
  double best_residual = std::numeric_limits<double>::infinity();
  KmeansResult out = lloyd(samples, seeds, cfg, [&](const Matrix& centers) {
    const double r = mean_residual(samples, centers);
    if (r < best_residual) {
      best_residual = r;
      best = centers;
    }
  });
  out.space = AnchorSpace(std::move(best));
  out.inertia = kmeans_inertia(samples, out.space);
  return out;
}

Index nearest_anchor(const Vector& x, const AnchorSpace& space) {
  if (space.metric() != AnchorMetric::euclidean) throw std::invalid_argument("one-hot encoding needs a Euclidean anchor metric");
  if (x.size() != space.dim()) throw std::invalid_argument("sample dimension does not match the anchor space");
  return nearest_row(x, space.anchors());
}

Encoding encode_onehot(const Vector& x, const AnchorSpace& space) {
  const Index idx = nearest_anchor(x, space);
  return Encoding::from_indices(std::span<const Index>(&idx, 1), space.k());
}

Encoding encode_onehot_rows(const Matrix& samples, const AnchorSpace& space) {
  std::vector<Index> idx(static_cast<std::size_t>(samples.rows()));
  for (Index i = 0; i < samples.rows(); ++i) idx[static_cast<std::size_t>(i)] = nearest_anchor(samples.row(i).transpose(), space);
  return Encoding::from_indices(idx, space.k());
}

double kmeans_inertia(const Matrix& samples, const AnchorSpace& space) {
  return assign_all(samples, space.anchors()).inertia;
}

double mean_residual_norm(const Matrix& samples, const AnchorSpace& space) {
  return mean_residual(samples, space.anchors());
}

}  // namespace asot
