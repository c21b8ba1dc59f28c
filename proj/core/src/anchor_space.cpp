#include "asot/anchor_space.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include <nlohmann/json.hpp>

namespace asot {

namespace {

void check_anchors(const Matrix& anchors) {
  if (anchors.rows() < 1) throw std::invalid_argument("anchor space needs k >= 1 anchors");
  if (anchors.cols() < 1) throw std::invalid_argument("anchor space needs d >= 1");
  if (!anchors.allFinite()) throw std::invalid_argument("anchors must be finite");
}

}  // namespace

AnchorSpace::AnchorSpace(Matrix anchors) : anchors_(std::move(anchors)) { check_anchors(anchors_); }

AnchorSpace::AnchorSpace(Matrix anchors, Matrix transform)
    : anchors_(std::move(anchors)), metric_(AnchorMetric::mahalanobis), transform_(std::move(transform)) {
  check_anchors(anchors_);
  if (transform_.rows() < 1 || transform_.cols() != anchors_.cols()) {
    throw std::invalid_argument("mahalanobis transform must be h x " + std::to_string(anchors_.cols()));
  }
  if (!transform_.allFinite()) throw std::invalid_argument("mahalanobis transform must be finite");
}

double AnchorSpace::distance(const Vector& p, const Vector& q) const {
  if (metric_ == AnchorMetric::euclidean) return (p - q).norm();
  return (transform_ * (p - q)).norm();
}

bool operator==(const AnchorSpace& l, const AnchorSpace& r) {
  return l.metric_ == r.metric_ && l.anchors_.rows() == r.anchors_.rows() && l.anchors_.cols() == r.anchors_.cols() &&
         l.anchors_ == r.anchors_ && l.transform_.rows() == r.transform_.rows() &&
         l.transform_.cols() == r.transform_.cols() && l.transform_ == r.transform_;
}

Encoding::Encoding(Matrix codes, bool one_hot) : codes_(std::move(codes)), one_hot_(one_hot) {
  if (codes_.cols() < 1) throw std::invalid_argument("encoding needs k >= 1 columns");
  for (Index i = 0; i < codes_.rows(); ++i) {
    if (!on_simplex(codes_.row(i).transpose(), kNormalizeTolerance)) {
      throw std::invalid_argument("encoding row " + std::to_string(i) + " is not on the probability simplex");
    }
    if (one_hot_) {
      const auto row = codes_.row(i);
      const auto ones = (row.array() == 1.0).count();
      const auto zeros = (row.array() == 0.0).count();
      if (ones != 1 || ones + zeros != row.size()) {
        throw std::invalid_argument("encoding row " + std::to_string(i) + " is not one-hot");
      }
    }
  }
}

Encoding Encoding::from_indices(std::span<const Index> indices, Index k) {
  Matrix codes = Matrix::Zero(static_cast<Index>(indices.size()), k);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= k) throw std::invalid_argument("anchor index out of range");
    codes(static_cast<Index>(i), indices[i]) = 1.0;
  }
  return Encoding(std::move(codes), true);
}

MappedDistribution::MappedDistribution(Vector mass) : mass_(std::move(mass)) {
  if (!on_simplex(mass_, kNormalizeTolerance)) {
    throw std::invalid_argument("mapped distribution is not on the probability simplex");
  }
}

CostMatrix anchor_cost(const AnchorSpace& space) {
  const Index k = space.k();
  // Project once; the Mahalanobis distance is Euclidean in the projected space.
  const Matrix projected =
      space.metric() == AnchorMetric::euclidean ? space.anchors() : Matrix(space.anchors() * space.transform().transpose());
  Matrix c = Matrix::Zero(k, k);
  for (Index u = 0; u < k; ++u) {
    for (Index v = u + 1; v < k; ++v) {
      const double d = (projected.row(u) - projected.row(v)).norm();
      if (!std::isfinite(d)) throw NumericError("anchor cost overflows");
      c(u, v) = d;
      c(v, u) = d;
    }
  }
  return CostMatrix(std::move(c));
}

MappedDistribution map_distribution(const DiscreteDistribution& d, const Encoding& z) {
  if (z.rows() != d.size()) {
    throw std::invalid_argument("encoding has " + std::to_string(z.rows()) + " rows for " +
                                std::to_string(d.size()) + " samples");
  }
  Vector mass = z.codes().transpose() * d.mass();
  // Codes may sit up to 1e-6 off the simplex; renormalize the aggregate.
  mass = mass.cwiseMax(0.0);
  mass /= mass.sum();
  return MappedDistribution(std::move(mass));
}

namespace {

void check_anchor_problem(const MappedDistribution& ax, const MappedDistribution& bx, const CostMatrix& c) {
  if (ax.k() != bx.k() || c.rows() != ax.k() || c.cols() != bx.k()) {
    throw std::invalid_argument("mapped distributions and anchor cost disagree on k");
  }
}

}  // namespace

double asot_exact(const MappedDistribution& ax, const MappedDistribution& bx, const CostMatrix& anchor_costs) {
  check_anchor_problem(ax, bx, anchor_costs);
  return solve_exact(ax.mass(), bx.mass(), anchor_costs).cost;
}

SinkhornResult easot(const MappedDistribution& ax, const MappedDistribution& bx, const CostMatrix& anchor_costs,
                     const SinkhornConfig& cfg) {
  check_anchor_problem(ax, bx, anchor_costs);
  return sinkhorn(ax.mass(), bx.mass(), anchor_costs, cfg);
}

CostMatrix reconstructed_cost(const Encoding& zx, const CostMatrix& anchor_costs, const Encoding& zy) {
  if (zx.k() != anchor_costs.rows() || zy.k() != anchor_costs.cols()) {
    throw std::invalid_argument("encodings and anchor cost disagree on k");
  }
  Matrix c = zx.codes() * anchor_costs.values() * zy.codes().transpose();
  return CostMatrix(c.cwiseMax(0.0));
}

double prop1_bound(const CostMatrix& reconstructed, const CostMatrix& ground) {
  if (reconstructed.rows() != ground.rows() || reconstructed.cols() != ground.cols()) {
    throw std::invalid_argument("prop1_bound: shape mismatch");
  }
  return (reconstructed.values() - ground.values()).cwiseAbs().sum();
}

double prop2_bound(std::span<const double> residuals_x, std::span<const double> residuals_y) {
  double sx = 0.0;
  double sy = 0.0;
  for (double r : residuals_x) {
    if (!(r >= 0.0)) throw std::invalid_argument("prop2_bound: negative residual");
    sx += r;
  }
  for (double r : residuals_y) {
    if (!(r >= 0.0)) throw std::invalid_argument("prop2_bound: negative residual");
    sy += r;
  }
  const auto n = static_cast<double>(residuals_x.size());
  const auto m = static_cast<double>(residuals_y.size());
  return m * sx + n * sy;
}

std::vector<double> onehot_residuals(const Matrix& samples, const Encoding& z, const AnchorSpace& space) {
  if (!z.one_hot()) throw std::invalid_argument("onehot_residuals requires a one-hot encoding");
  if (z.rows() != samples.rows() || z.k() != space.k() || samples.cols() != space.dim()) {
    throw std::invalid_argument("onehot_residuals: shape mismatch");
  }
  std::vector<double> out(static_cast<std::size_t>(samples.rows()));
  for (Index i = 0; i < samples.rows(); ++i) {
    Index u = 0;
    z.codes().row(i).maxCoeff(&u);
    out[static_cast<std::size_t>(i)] = (space.anchors().row(u) - samples.row(i)).norm();
  }
  return out;
}

Equivalence equivalence_check(const DiscreteDistribution& dx, const DiscreteDistribution& dy, const Encoding& zx,
                              const Encoding& zy, const AnchorSpace& space) {
  const CostMatrix cs = anchor_cost(space);
  Equivalence out;
  out.w_asot = asot_exact(map_distribution(dx, zx), map_distribution(dy, zy), cs);
  out.w_reconstructed_lp = solve_exact(dx.mass(), dy.mass(), reconstructed_cost(zx, cs, zy)).cost;
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

constexpr std::array<char, 8> kMagic = {'A', 'S', 'O', 'T', 'S', 'P', 'C', '\0'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "binary records assume a little-endian host");

template <typename T>
void put(std::ostream& os, T value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T value{};
  is.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!is) throw std::runtime_error("anchor space record is truncated");
  return value;
}

void put_row_major(std::ostream& os, const Matrix& m) {
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) put<double>(os, m(r, c));
  }
}

Matrix get_row_major(std::istream& is, std::uint64_t rows, std::uint64_t cols) {
  constexpr std::uint64_t kMaxEntries = std::uint64_t{1} << 32;
  if (rows * cols > kMaxEntries) throw std::runtime_error("anchor space record has implausible dimensions");
  Matrix m(static_cast<Index>(rows), static_cast<Index>(cols));
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) m(r, c) = get<double>(is);
  }
  return m;
}

nlohmann::json flatten(const Matrix& m) {
  nlohmann::json out = nlohmann::json::array();
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) out.push_back(m(r, c));
  }
  return out;
}

Matrix unflatten(const nlohmann::json& j, Index rows, Index cols) {
  if (!j.is_array() || static_cast<Index>(j.size()) != rows * cols) {
    throw std::invalid_argument("anchor space JSON: array size does not match its dimensions");
  }
  Matrix m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) m(r, c) = j[static_cast<std::size_t>(r * cols + c)].get<double>();
  }
  return m;
}

}  // namespace

void write_binary(std::ostream& os, const AnchorSpace& space) {
  os.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(os, kVersion);
  put<std::uint64_t>(os, static_cast<std::uint64_t>(space.k()));
  put<std::uint64_t>(os, static_cast<std::uint64_t>(space.dim()));
  put<std::uint8_t>(os, static_cast<std::uint8_t>(space.metric()));
  if (space.metric() == AnchorMetric::mahalanobis) {
    put<std::uint64_t>(os, static_cast<std::uint64_t>(space.transform().rows()));
  }
  put_row_major(os, space.anchors());
  if (space.metric() == AnchorMetric::mahalanobis) put_row_major(os, space.transform());
}

AnchorSpace read_binary(std::istream& is) {
  std::array<char, 8> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kMagic) throw std::runtime_error("not an anchor space record (bad magic)");
  const auto version = get<std::uint32_t>(is);
  if (version != kVersion) throw std::runtime_error("unsupported anchor space record version " + std::to_string(version));
  const auto k = get<std::uint64_t>(is);
  const auto d = get<std::uint64_t>(is);
  const auto tag = get<std::uint8_t>(is);
  if (tag > 1) throw std::runtime_error("unknown anchor metric tag " + std::to_string(tag));
  std::uint64_t h = 0;
  if (tag == 1) h = get<std::uint64_t>(is);
  Matrix anchors = get_row_major(is, k, d);
  if (tag == 0) return AnchorSpace(std::move(anchors));
  Matrix transform = get_row_major(is, h, d);
  return AnchorSpace(std::move(anchors), std::move(transform));
}

nlohmann::json to_json(const AnchorSpace& space) {
  nlohmann::json j;
  j["k"] = space.k();
  j["d"] = space.dim();
  j["metric"] = space.metric() == AnchorMetric::euclidean ? "euclidean" : "mahalanobis";
  j["anchors"] = flatten(space.anchors());
  if (space.metric() == AnchorMetric::mahalanobis) {
    j["h"] = space.transform().rows();
    j["transform"] = flatten(space.transform());
  }
  return j;
}

AnchorSpace anchor_space_from_json(const nlohmann::json& j) {
  const auto k = j.at("k").get<Index>();
  const auto d = j.at("d").get<Index>();
  const auto metric = j.at("metric").get<std::string>();
  Matrix anchors = unflatten(j.at("anchors"), k, d);
  if (metric == "euclidean") return AnchorSpace(std::move(anchors));
  if (metric != "mahalanobis") throw std::invalid_argument("unknown anchor metric '" + metric + "'");
  const auto h = j.at("h").get<Index>();
  return AnchorSpace(std::move(anchors), unflatten(j.at("transform"), h, d));
}

void save_anchor_space(const std::string& path, const AnchorSpace& space) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  if (path.ends_with(".json")) {
    os << to_json(space).dump(2) << '\n';
  } else {
    write_binary(os, space);
  }
  if (!os) throw std::runtime_error("failed writing " + path);
}

AnchorSpace load_anchor_space(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  std::array<char, 8> head{};
  is.read(head.data(), head.size());
  is.clear();
  is.seekg(0);
  if (head == kMagic) return read_binary(is);
  return anchor_space_from_json(nlohmann::json::parse(is));
}

}  // namespace asot
