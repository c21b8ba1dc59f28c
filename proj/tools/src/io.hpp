#pragma once

#include "asot/batch.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

namespace asot::cli {

/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL);
std::uint64_t hash_matrix(const Matrix& m, std::uint64_t h = 0xcbf29ce484222325ULL);
std::uint64_t hash_file(const std::filesystem::path& path);
std::string hex(std::uint64_t h);

/// Comma-separated, 12 significant digits, no header; unfilled entries are
/// written as "nan".
void write_matrix_csv(const std::filesystem::path& path, const DistanceMatrix& m);
void write_matrix_csv(const std::filesystem::path& path, const Matrix& m);
Matrix read_matrix_csv(const std::filesystem::path& path);

void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);

struct RmseReport {
  double rmse = 0.0;
  double mean_abs_error = 0.0;
  double max_abs_error = 0.0;
  double mean_signed_error = 0.0;
  std::size_t pairs = 0;

  nlohmann::json to_json() const;
};

/// Errors over the strict upper triangle. Throws std::invalid_argument on a
/// shape mismatch, a non-square input or fewer than two rows.
RmseReport rmse_upper(const Matrix& approx, const Matrix& truth);

}  // namespace asot::cli
