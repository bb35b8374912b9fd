#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vem/binary_io.hpp"
#include "vem/error.hpp"

namespace vem {

struct TrainConfig {
  int stage = 1;
  int epochs = 40;
  int batch_size = 64;
  double learning_rate = 3e-3;
  double weight_decay = 0.01;
  double dropout_rate = 0.1;
  double lambda = 0.0;
  double tau = 0.1;
  std::uint64_t seed = 0;
  int unfreeze_last_n_blocks = 2;
  int pca_k = 16;
  bool paper_defaults = false;
  // Surrogate extractor layout, used when stage 1 builds a fresh model.
  int extractor_depth = 3;
  std::vector<std::size_t> extractor_taps = {0, 2};
  double extractor_init_scale = 0.1;
  bool symmetric_alignment = false;

  bool operator==(const TrainConfig&) const = default;

  void validate() const {
    if (stage != 1 && stage != 2) throw PreconditionError("config: stage must be 1 or 2");
    if (epochs < 1) throw PreconditionError("config: epochs must be >= 1");
    if (batch_size < 1) throw PreconditionError("config: batch_size must be >= 1");
    if (!(learning_rate > 0)) throw PreconditionError("config: learning_rate must be > 0");
    if (!(weight_decay >= 0)) throw PreconditionError("config: weight_decay must be >= 0");
    if (!(dropout_rate >= 0 && dropout_rate < 1)) throw PreconditionError("config: dropout_rate outside [0, 1)");
    if (!(lambda >= 0)) throw PreconditionError("config: lambda must be >= 0");
    if (!(tau > 0)) throw PreconditionError("config: tau must be > 0");
    if (unfreeze_last_n_blocks < 0) throw PreconditionError("config: unfreeze_last_n_blocks must be >= 0");
    if (pca_k < 1) throw PreconditionError("config: pca_k must be >= 1");
    if (extractor_depth < 1) throw PreconditionError("config: extractor_depth must be >= 1");
    if (!(extractor_init_scale >= 0)) throw PreconditionError("config: extractor_init_scale must be >= 0");
  }
};

// Named presets. "desk" is sized for the synthetic benchmark; "paper" carries
// the published stage hyperparameters (epochs, batch, lr, weight decay,
// dropout) for large-scale runs.
inline TrainConfig preset(const std::string& name, int stage) {
  TrainConfig c;
  c.stage = stage;
  if (name == "desk") {
    if (stage == 2) {
      c.epochs = 6;
      c.learning_rate = 2e-3;
      c.lambda = 1e-3;
    }
  } else if (name == "paper") {
    c.paper_defaults = true;
    c.weight_decay = 0.8;
    c.dropout_rate = 0.9;
    if (stage == 1) {
      c.epochs = 40;
      c.batch_size = 512;
      c.learning_rate = 6.0e-4;
    } else {
      c.epochs = 6;
      c.batch_size = 184;
      c.learning_rate = 1.0e-5;
      c.lambda = 1e-3;
    }
  } else {
    throw PreconditionError("unknown preset '" + name + "'");
  }
  if (stage != 1 && stage != 2) throw PreconditionError("preset stage must be 1 or 2");
  return c;
}

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::size_t> parse_index_list(const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    std::size_t pos = 0;
    const auto value = std::stoull(item, &pos);
    if (pos != item.size()) throw std::invalid_argument(item);
    out.push_back(static_cast<std::size_t>(value));
  }
  return out;
}

inline bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument(v);
}

template <typename T>
T parse_number(const std::string& v) {
  std::size_t pos = 0;
  T out;
  if constexpr (std::is_same_v<T, int>) out = std::stoi(v, &pos);
  else if constexpr (std::is_same_v<T, std::uint64_t>) out = std::stoull(v, &pos);
  else out = std::stod(v, &pos);
  if (pos != v.size()) throw std::invalid_argument(v);
  return out;
}

}  // namespace detail

// Set one field from its textual value; unknown keys and bad values throw.
inline void set_config_value(TrainConfig& c, const std::string& key, const std::string& raw) {
  using namespace detail;
  const std::string v = trim(raw);
  try {
    if (key == "stage") c.stage = parse_number<int>(v);
    else if (key == "epochs") c.epochs = parse_number<int>(v);
    else if (key == "batch_size") c.batch_size = parse_number<int>(v);
    else if (key == "learning_rate") c.learning_rate = parse_number<double>(v);
    else if (key == "weight_decay") c.weight_decay = parse_number<double>(v);
    else if (key == "dropout_rate") c.dropout_rate = parse_number<double>(v);
    else if (key == "lambda") c.lambda = parse_number<double>(v);
    else if (key == "tau") c.tau = parse_number<double>(v);
    else if (key == "seed") c.seed = parse_number<std::uint64_t>(v);
    else if (key == "unfreeze_last_n_blocks") c.unfreeze_last_n_blocks = parse_number<int>(v);
    else if (key == "pca_k") c.pca_k = parse_number<int>(v);
    else if (key == "paper_defaults") c.paper_defaults = parse_bool(v);
    else if (key == "extractor_depth") c.extractor_depth = parse_number<int>(v);
    else if (key == "extractor_taps") c.extractor_taps = parse_index_list(v);
    else if (key == "extractor_init_scale") c.extractor_init_scale = parse_number<double>(v);
    else if (key == "symmetric_alignment") c.symmetric_alignment = parse_bool(v);
    else throw ValidationError("config: unknown key '" + key + "'");
  } catch (const std::invalid_argument&) {
    throw ValidationError("config: bad value '" + v + "' for key '" + key + "'");
  } catch (const std::out_of_range&) {
    throw ValidationError("config: value out of range for key '" + key + "'");
  }
}

// "key = value" per line; '#' starts a comment.
inline TrainConfig parse_config(const std::string& text, TrainConfig base = {}) {
  std::stringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ValidationError("config line " + std::to_string(lineno) + ": expected key = value");
    set_config_value(base, detail::trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return base;
}

inline TrainConfig load_config(const std::string& path, TrainConfig base = {}) {
  return parse_config(io::read_text(path), std::move(base));
}

inline nlohmann::ordered_json to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["stage"] = c.stage;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["learning_rate"] = c.learning_rate;
  j["weight_decay"] = c.weight_decay;
  j["dropout_rate"] = c.dropout_rate;
  j["lambda"] = c.lambda;
  j["tau"] = c.tau;
  j["seed"] = c.seed;
  j["unfreeze_last_n_blocks"] = c.unfreeze_last_n_blocks;
  j["pca_k"] = c.pca_k;
  j["paper_defaults"] = c.paper_defaults;
  j["extractor_depth"] = c.extractor_depth;
  j["extractor_taps"] = c.extractor_taps;
  j["extractor_init_scale"] = c.extractor_init_scale;
  j["symmetric_alignment"] = c.symmetric_alignment;
  return j;
}

inline TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.stage = j.at("stage").get<int>();
  c.epochs = j.at("epochs").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.dropout_rate = j.at("dropout_rate").get<double>();
  c.lambda = j.at("lambda").get<double>();
  c.tau = j.at("tau").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.unfreeze_last_n_blocks = j.at("unfreeze_last_n_blocks").get<int>();
  c.pca_k = j.at("pca_k").get<int>();
  c.paper_defaults = j.at("paper_defaults").get<bool>();
  c.extractor_depth = j.at("extractor_depth").get<int>();
  c.extractor_taps = j.at("extractor_taps").get<std::vector<std::size_t>>();
  c.extractor_init_scale = j.at("extractor_init_scale").get<double>();
  c.symmetric_alignment = j.at("symmetric_alignment").get<bool>();
  return c;
}

}  // namespace vem
