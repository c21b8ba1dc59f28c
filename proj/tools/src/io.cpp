#include "io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

namespace asot::cli {

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h) {
  for (const unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t hash_matrix(const Matrix& m, std::uint64_t h) {
  const Index dims[2] = {m.rows(), m.cols()};
  h = fnv1a(std::string_view(reinterpret_cast<const char*>(dims), sizeof(dims)), h);
  return fnv1a(std::string_view(reinterpret_cast<const char*>(m.data()), sizeof(double) * static_cast<std::size_t>(m.size())),
               h);
}

std::uint64_t hash_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return fnv1a(ss.str());
}

std::string hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

void write_rows(const std::filesystem::path& path, Index n, Index m, const auto& cell) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  char buf[32];
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < m; ++j) {
      if (j) out << ',';
      const double v = cell(i, j);
      if (std::isnan(v)) {
        out << "nan";
      } else {
        std::snprintf(buf, sizeof(buf), "%.12g", v);
        out << buf;
      }
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace

void write_matrix_csv(const std::filesystem::path& path, const DistanceMatrix& m) {
  const auto n = static_cast<Index>(m.size());
  write_rows(path, n, n, [&](Index i, Index j) {
    const auto a = static_cast<std::size_t>(i);
    const auto b = static_cast<std::size_t>(j);
    return i == j || m.filled(a, b) ? m(a, b) : std::nan("");
  });
}

void write_matrix_csv(const std::filesystem::path& path, const Matrix& m) {
  write_rows(path, m.rows(), m.cols(), [&](Index i, Index j) { return m(i, j); });
}

Matrix read_matrix_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
        if (cell.find_first_not_of(" \t\r", used) != std::string::npos) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": bad number '" + cell + "'");
      }
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": ragged row");
    }
    rows.push_back(std::move(row));
  }
  Matrix m(static_cast<Index>(rows.size()), rows.empty() ? 0 : static_cast<Index>(rows.front().size()));
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) m(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  }
  return m;
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return nlohmann::json::parse(in);
}

nlohmann::json RmseReport::to_json() const {
  return {{"rmse", rmse},
          {"mean_abs_error", mean_abs_error},
          {"max_abs_error", max_abs_error},
          {"mean_signed_error", mean_signed_error},
          {"pairs", pairs}};
}

RmseReport rmse_upper(const Matrix& approx, const Matrix& truth) {
  if (approx.rows() != truth.rows() || approx.cols() != truth.cols()) {
    throw std::invalid_argument("matrix shapes differ: " + std::to_string(approx.rows()) + "x" +
                                std::to_string(approx.cols()) + " vs " + std::to_string(truth.rows()) + "x" +
                                std::to_string(truth.cols()));
  }
  if (approx.rows() != approx.cols()) throw std::invalid_argument("distance matrices must be square");
  if (approx.rows() < 2) throw std::invalid_argument("need at least two items for an upper triangle");
  RmseReport r;
  double sq = 0.0;
  for (Index i = 0; i < approx.rows(); ++i) {
    for (Index j = i + 1; j < approx.cols(); ++j) {
      const double e = approx(i, j) - truth(i, j);
      sq += e * e;
      r.mean_abs_error += std::abs(e);
      r.mean_signed_error += e;
      r.max_abs_error = std::max(r.max_abs_error, std::abs(e));
      ++r.pairs;
    }
  }
  const auto p = static_cast<double>(r.pairs);
  r.rmse = std::sqrt(sq / p);
  r.mean_abs_error /= p;
  r.mean_signed_error /= p;
  return r;
}

}  // namespace asot::cli
