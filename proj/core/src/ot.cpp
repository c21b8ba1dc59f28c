#include "asot/ot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace asot {

DiscreteDistribution::DiscreteDistribution(Matrix samples, Vector mass)
    : samples_(std::move(samples)) {
  if (samples_.rows() < 1) throw std::invalid_argument("distribution needs at least one sample");
  if (!samples_.allFinite()) throw std::invalid_argument("distribution samples must be finite");
  if (mass.size() != samples_.rows()) {
    throw std::invalid_argument("mass length " + std::to_string(mass.size()) +
                                " does not match sample count " + std::to_string(samples_.rows()));
  }
  mass_ = normalize_mass(mass);
}

DiscreteDistribution DiscreteDistribution::uniform(Matrix samples) {
  const Index n = samples.rows();
  if (n < 1) throw std::invalid_argument("distribution needs at least one sample");
  const Vector mass = Vector::Constant(n, 1.0 / static_cast<double>(n));
  DiscreteDistribution d(std::move(samples), mass);
  d.mass_ = mass;
  return d;
}

CostMatrix::CostMatrix(Matrix values) : values_(std::move(values)) {
  if (!values_.allFinite()) throw std::invalid_argument("cost matrix has non-finite entries");
  if ((values_.array() < 0.0).any()) throw std::invalid_argument("cost matrix has negative entries");
}

double TransportPlan::cost(const CostMatrix& c) const {
  return values.cwiseProduct(c.values()).sum();
}

double TransportPlan::marginal_error(const Vector& a, const Vector& b) const {
  const double row = (values.rowwise().sum() - a).cwiseAbs().maxCoeff();
  const double col = (values.colwise().sum().transpose() - b).cwiseAbs().maxCoeff();
  return std::max(row, col);
}

void SinkhornConfig::validate() const {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw std::invalid_argument("sinkhorn epsilon must be > 0");
  if (iterations < 1) throw std::invalid_argument("sinkhorn iterations must be >= 1");
  if (!(underflow_floor > 0.0)) throw std::invalid_argument("sinkhorn underflow floor must be > 0");
}

CostMatrix euclidean_cost(const Matrix& x, const Matrix& y) {
  if (x.cols() != y.cols()) {
    throw std::invalid_argument("euclidean_cost: dimension mismatch (" + std::to_string(x.cols()) +
                                " vs " + std::to_string(y.cols()) + ")");
  }
  Matrix out(x.rows(), y.rows());
  for (Index i = 0; i < x.rows(); ++i) {
    for (Index j = 0; j < y.rows(); ++j) {
      out(i, j) = (x.row(i) - y.row(j)).norm();
    }
  }
  return CostMatrix(std::move(out));
}

namespace {

void check_marginals(const Vector& a, const Vector& b, const CostMatrix& c) {
  if (a.size() == 0 || b.size() == 0) throw std::invalid_argument("empty marginal");
  if (c.rows() != a.size() || c.cols() != b.size()) {
    throw std::invalid_argument("cost matrix is " + std::to_string(c.rows()) + "x" +
                                std::to_string(c.cols()) + " but marginals are " +
                                std::to_string(a.size()) + " and " + std::to_string(b.size()));
  }
  if (!a.allFinite() || !b.allFinite()) throw std::invalid_argument("marginals must be finite");
  if ((a.array() < 0.0).any() || (b.array() < 0.0).any()) {
    throw std::invalid_argument("marginals must be nonnegative");
  }
}

// Transportation simplex on a spanning-tree basis of n + m - 1 cells. Row
// nodes are 0..n-1 and column nodes n..n+m-1.
class TransportationSimplex {
 public:
  TransportationSimplex(const Vector& a, const Vector& b, const Matrix& cost)
      : n_(a.size()), m_(b.size()), cost_(cost), basic_(n_ * m_, 0) {
    scale_ = std::max(1.0, cost_.cwiseAbs().maxCoeff());
    initial_basis(a, b);
  }

  void run() {
    const long max_pivots = 50 * static_cast<long>(n_ * m_) + 1000;
    int degenerate_streak = 0;
    const int bland_after = static_cast<int>(2 * (n_ + m_));
    for (long pivot = 0; pivot < max_pivots; ++pivot) {
      build_tree();
      compute_potentials();
      const bool bland = degenerate_streak > bland_after;
      Index ei = -1;
      Index ej = -1;
      if (!find_entering(bland, ei, ej)) return;
      const double theta = pivot_on(ei, ej);
      degenerate_streak = theta > 0.0 ? 0 : degenerate_streak + 1;
    }
    throw NumericError("transportation simplex did not converge within the pivot limit");
  }

  Matrix plan() const {
    Matrix t = Matrix::Zero(n_, m_);
    for (const Cell& c : cells_) t(c.i, c.j) = std::max(0.0, c.flow);
    return t;
  }

 private:
  struct Cell {
    Index i;
    Index j;
    double flow;
  };

  // Staircase (north-west corner) start: always n + m - 1 cells forming a tree,
  // zero-flow cells included where the supply and demand run out together.
  void initial_basis(const Vector& a, const Vector& b) {
    Vector supply = a;
    Vector demand = b;
    Index i = 0;
    Index j = 0;
    cells_.reserve(n_ + m_ - 1);
    while (true) {
      const double x = std::min(supply(i), demand(j));
      add_cell(i, j, x);
      supply(i) -= x;
      demand(j) -= x;
      if (i == n_ - 1 && j == m_ - 1) break;
      if (i == n_ - 1) {
        ++j;
      } else if (j == m_ - 1) {
        ++i;
      } else if (supply(i) <= demand(j)) {
        ++i;
      } else {
        ++j;
      }
    }
    // Rounding leftovers land on the last cell so both marginals stay exact.
    cells_.back().flow += std::max(supply(n_ - 1), demand(m_ - 1));
  }

  void add_cell(Index i, Index j, double flow) {
    cells_.push_back({i, j, flow});
    basic_[i * m_ + j] = 1;
  }

  void build_tree() {
    adjacency_.assign(n_ + m_, {});
    for (std::size_t e = 0; e < cells_.size(); ++e) {
      adjacency_[cells_[e].i].push_back(e);
      adjacency_[n_ + cells_[e].j].push_back(e);
    }
  }

  Index other_end(std::size_t e, Index node) const {
    const Cell& c = cells_[e];
    return node < n_ ? n_ + c.j : c.i;
  }

  void compute_potentials() {
    potential_.assign(n_ + m_, std::numeric_limits<double>::quiet_NaN());
    std::vector<Index> stack{0};
    potential_[0] = 0.0;
    while (!stack.empty()) {
      const Index node = stack.back();
      stack.pop_back();
      for (std::size_t e : adjacency_[node]) {
        const Index next = other_end(e, node);
        if (!std::isnan(potential_[next])) continue;
        potential_[next] = cost_(cells_[e].i, cells_[e].j) - potential_[node];
        stack.push_back(next);
      }
    }
  }

  bool find_entering(bool bland, Index& ei, Index& ej) const {
    const double tol = 1e-12 * scale_;
    double best = -tol;
    for (Index i = 0; i < n_; ++i) {
      for (Index j = 0; j < m_; ++j) {
        if (basic_[i * m_ + j]) continue;
        const double reduced = cost_(i, j) - potential_[i] - potential_[n_ + j];
        if (reduced < best) {
          best = reduced;
          ei = i;
          ej = j;
          if (bland) return true;
        }
      }
    }
    return ei >= 0;
  }

  // Adds (ei, ej) to the basis, pushes theta around the unique cycle and
  // drops the blocking cell. Returns theta.
  double pivot_on(Index ei, Index ej) {
    // Path in the tree from column node n+ej back to row node ei.
    const Index target = ei;
    std::vector<long> parent_edge(n_ + m_, -1);
    std::vector<char> seen(n_ + m_, 0);
    std::vector<Index> stack{n_ + ej};
    seen[n_ + ej] = 1;
    while (!stack.empty()) {
      const Index node = stack.back();
      stack.pop_back();
      if (node == target) break;
      for (std::size_t e : adjacency_[node]) {
        const Index next = other_end(e, node);
        if (seen[next]) continue;
        seen[next] = 1;
        parent_edge[next] = static_cast<long>(e);
        stack.push_back(next);
      }
    }
    // Walking from the row node ei towards n+ej the first edge loses flow and
    // the signs alternate from there.
    std::vector<std::size_t> path;
    for (Index node = target; node != n_ + ej;) {
      const auto e = static_cast<std::size_t>(parent_edge[node]);
      path.push_back(e);
      node = other_end(e, node);
    }
    double theta = std::numeric_limits<double>::infinity();
    std::size_t leaving = path.front();
    for (std::size_t k = 0; k < path.size(); k += 2) {
      const Cell& c = cells_[path[k]];
      const Cell& l = cells_[leaving];
      if (c.flow < theta || (c.flow == theta && (c.i * m_ + c.j) < (l.i * m_ + l.j))) {
        theta = c.flow;
        leaving = path[k];
      }
    }
    theta = std::max(0.0, theta);
    for (std::size_t k = 0; k < path.size(); ++k) {
      cells_[path[k]].flow += (k % 2 == 0) ? -theta : theta;
    }
    Cell& out = cells_[leaving];
    basic_[out.i * m_ + out.j] = 0;
    out = Cell{ei, ej, theta};
    basic_[ei * m_ + ej] = 1;
    return theta;
  }

  Index n_;
  Index m_;
  const Matrix& cost_;
  double scale_ = 1.0;
  std::vector<Cell> cells_;
  std::vector<char> basic_;
  std::vector<std::vector<std::size_t>> adjacency_;
  std::vector<double> potential_;
};

}  // namespace

OtResult solve_exact(const Vector& a, const Vector& b, const CostMatrix& c) {
  check_marginals(a, b, c);
  const double sa = a.sum();
  const double sb = b.sum();
  if (std::abs(sa - sb) > 1e-6) {
    throw InfeasibleError("marginals carry different mass: " + std::to_string(sa) + " vs " +
                          std::to_string(sb));
  }
  // Absorb the sub-tolerance mismatch into b so the polytope is nonempty.
  const Vector b_adj = (sb > 0.0) ? Vector(b * (sa / sb)) : b;
  std::vector<Index> rows;
  std::vector<Index> cols;
  for (Index i = 0; i < a.size(); ++i) {
    if (a(i) > 0.0) rows.push_back(i);
  }
  for (Index j = 0; j < b_adj.size(); ++j) {
    if (b_adj(j) > 0.0) cols.push_back(j);
  }
  OtResult out;
  out.plan.values = Matrix::Zero(a.size(), b.size());
  if (!rows.empty() && !cols.empty()) {
    // Zero-mass rows and columns carry no flow; solve on the support only.
    const auto n = static_cast<Index>(rows.size());
    const auto m = static_cast<Index>(cols.size());
    Vector as(n);
    Vector bs(m);
    Matrix cs(n, m);
    for (Index i = 0; i < n; ++i) {
      as(i) = a(rows[static_cast<std::size_t>(i)]);
      for (Index j = 0; j < m; ++j) cs(i, j) = c(rows[static_cast<std::size_t>(i)], cols[static_cast<std::size_t>(j)]);
    }
    for (Index j = 0; j < m; ++j) bs(j) = b_adj(cols[static_cast<std::size_t>(j)]);
    TransportationSimplex simplex(as, bs, cs);
    simplex.run();
    const Matrix plan = simplex.plan();
    for (Index i = 0; i < n; ++i) {
      for (Index j = 0; j < m; ++j) out.plan.values(rows[static_cast<std::size_t>(i)], cols[static_cast<std::size_t>(j)]) = plan(i, j);
    }
  }
  out.cost = out.plan.cost(c);
  return out;
}

OtResult solve_exact(const DiscreteDistribution& x, const DiscreteDistribution& y) {
  return solve_exact(x.mass(), y.mass(), euclidean_cost(x.samples(), y.samples()));
}

SinkhornResult sinkhorn(const Vector& a, const Vector& b, const CostMatrix& c,
                        const SinkhornConfig& cfg) {
  cfg.validate();
  check_marginals(a, b, c);
  const Matrix kernel = (-c.values() / cfg.epsilon).array().exp().matrix();
  Vector u(a.size());
  Vector v = Vector::Ones(b.size());
  SinkhornResult out;
  auto guard = [&](double d) {
    if (std::isnan(d)) throw NumericError("sinkhorn: NaN in scaling denominator");
    if (!(d >= cfg.underflow_floor)) {
      out.underflow_clamped = true;
      return cfg.underflow_floor;
    }
    return d;
  };
  for (int it = 0; it < cfg.iterations; ++it) {
    const Vector kv = kernel * v;
    for (Index i = 0; i < u.size(); ++i) u(i) = a(i) / guard(kv(i));
    const Vector ktu = kernel.transpose() * u;
    for (Index j = 0; j < v.size(); ++j) v(j) = b(j) / guard(ktu(j));
    if (u.hasNaN() || v.hasNaN()) throw NumericError("sinkhorn: NaN in scaling vectors");
  }
  out.plan.values = u.asDiagonal() * kernel * v.asDiagonal();
  if (out.plan.values.hasNaN()) throw NumericError("sinkhorn: NaN in transport plan");
  out.cost = out.plan.cost(c);
  out.marginal_error = out.plan.marginal_error(a, b);
  return out;
}

}  // namespace asot
