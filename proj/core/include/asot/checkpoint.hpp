#pragma once

// Trained-model checkpoints: one JSON document holding the anchor space, the
// learned networks (if any) and the training configuration.

#include "asot/anchor_space.hpp"
#include "asot/dictionary_learning.hpp"
#include "asot/metric_learning.hpp"

#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

namespace asot {

/// Which learner produced the anchors: "kmeans", "ml" or "dl".
struct Checkpoint {
  std::string learner;
  AnchorSpace space;
  std::optional<MlModel> ml;
  std::optional<DlModel> dl;
  nlohmann::json config = nlohmann::json::object();

  /// Encodes samples with the learner's mapping (nearest anchor for k-means).
  Encoding encode(const Matrix& samples) const;
};

nlohmann::json checkpoint_to_json(const Checkpoint& c);
Checkpoint checkpoint_from_json(const nlohmann::json& j);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace asot
