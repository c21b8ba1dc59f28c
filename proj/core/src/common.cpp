#include "asot/common.hpp"

#include <cmath>

namespace asot {

Vector normalize_mass(const Vector& mass) {
  if (mass.size() == 0) throw std::invalid_argument("mass vector is empty");
  if (!mass.allFinite()) throw std::invalid_argument("mass vector has non-finite entries");
  if ((mass.array() < 0.0).any()) throw std::invalid_argument("mass vector has negative entries");
  const double total = mass.sum();
  if (std::abs(total - 1.0) > kNormalizeTolerance) {
    throw std::invalid_argument("mass vector sums to " + std::to_string(total) + ", expected 1");
  }
  return mass / total;
}

bool on_simplex(const Vector& v, double tol) {
  if (v.size() == 0 || !v.allFinite()) return false;
  if ((v.array() < -tol).any()) return false;
  return std::abs(v.sum() - 1.0) <= tol;
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace asot
