#include "asot/checkpoint.hpp"

#include "asot/kmeans.hpp"

#include <fstream>

namespace asot {

namespace {

constexpr const char* kFormat = "asot-checkpoint";
constexpr int kVersion = 1;

}  // namespace

Encoding Checkpoint::encode(const Matrix& samples) const {
  if (learner == "ml" && ml) return ml_encode(*ml, samples);
  if (learner == "dl" && dl) return dl_encode(*dl, samples);
  if (learner == "kmeans") return encode_onehot_rows(samples, space);
  throw std::invalid_argument("checkpoint has no model for learner '" + learner + "'");
}

nlohmann::json checkpoint_to_json(const Checkpoint& c) {
  nlohmann::json j{{"format", kFormat}, {"version", kVersion}, {"learner", c.learner},
                   {"anchor_space", to_json(c.space)}, {"config", c.config}};
  if (c.ml) j["ml"] = ml_to_json(*c.ml);
  if (c.dl) j["dl"] = dl_to_json(*c.dl);
  return j;
}

Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != kFormat) throw std::invalid_argument("not an asot checkpoint");
  if (j.at("version").get<int>() != kVersion) throw std::invalid_argument("unsupported checkpoint version");
  Checkpoint c;
  c.learner = j.at("learner").get<std::string>();
  if (c.learner != "kmeans" && c.learner != "ml" && c.learner != "dl") {
    throw std::invalid_argument("unknown learner '" + c.learner + "'");
  }
  c.space = anchor_space_from_json(j.at("anchor_space"));
  if (j.contains("ml")) c.ml = ml_from_json(j.at("ml"));
  if (j.contains("dl")) c.dl = dl_from_json(j.at("dl"));
  if (c.learner == "ml" && !c.ml) throw std::invalid_argument("checkpoint lacks the ml model");
  if (c.learner == "dl" && !c.dl) throw std::invalid_argument("checkpoint lacks the dl model");
  c.config = j.value("config", nlohmann::json::object());
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << checkpoint_to_json(c).dump(1) << '\n';
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace asot
