#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vem/binary_io.hpp"
#include "vem/config.hpp"
#include "vem/model.hpp"

namespace vem {

inline constexpr int kCheckpointSchemaVersion = 1;

struct Checkpoint {
  int stage = 1;
  int epoch = 0;
  ModelParams params;
  TrainConfig config;
  double best_validation_score = 0.0;
  std::uint64_t rng_state = 0;
};

// On-disk layout (a directory):
//   checkpoint.json   schema version, stage, epoch, score, rng state, config
//                     snapshot, extractor layout, tensor table
//   tensors/<name>.bin  one little-endian row-major float64 blob per tensor
namespace detail {

struct NamedTensor {
  std::string name;
  const Matrix* data;
};

inline std::vector<NamedTensor> checkpoint_tensors(const ModelParams& p, const Matrix& pca_mean,
                                                   const Matrix& pca_var) {
  std::vector<NamedTensor> out;
  for (const auto& [name, t] : p.tensors()) out.push_back({name, t});
  out.push_back({"head.pca.mean", &pca_mean});
  out.push_back({"head.pca.components", &p.head.output_stage.components});
  out.push_back({"head.pca.variances", &pca_var});
  return out;
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  c.params.validate();
  const Matrix pca_mean = c.params.head.output_stage.mean.transpose();
  const Matrix pca_var = c.params.head.output_stage.variances.transpose();

  nlohmann::ordered_json j;
  j["schema_version"] = kCheckpointSchemaVersion;
  j["stage"] = c.stage;
  j["epoch"] = c.epoch;
  j["best_validation_score"] = c.best_validation_score;
  j["rng_state"] = c.rng_state;
  j["config"] = to_json(c.config);
  std::vector<std::string> acts;
  for (const auto& b : c.params.extractor.blocks) acts.emplace_back(to_string(b.activation));
  j["extractor"] = {{"input_dim", c.params.extractor.input_dim},
                    {"taps", c.params.extractor.taps},
                    {"activations", acts}};
  j["head"] = {{"dropout_rate", c.params.head.dropout_rate}};

  // Write into a sibling temp directory, then swap it in.
  const fs::path tmp = path.string() + ".tmp";
  std::error_code ec;
  fs::remove_all(tmp, ec);
  fs::create_directories(tmp / "tensors", ec);
  if (ec) throw IoError("cannot create " + tmp.string() + ": " + ec.message());
  nlohmann::ordered_json table = nlohmann::ordered_json::array();
  for (const auto& t : detail::checkpoint_tensors(c.params, pca_mean, pca_var)) {
    const std::string file = "tensors/" + t.name + ".bin";
    table.push_back({{"name", t.name},
                     {"shape", {t.data->rows(), t.data->cols()}},
                     {"width", 64},
                     {"file", file}});
    io::write_file(tmp / file, t.data->data(), static_cast<std::size_t>(t.data->size()) * sizeof(double));
  }
  j["tensors"] = table;
  io::write_text(tmp / "checkpoint.json", j.dump(2) + "\n");

  fs::remove_all(path, ec);
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into " + path.string() + ": " + ec.message());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(path)) throw IoError("checkpoint not found: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_text(path / "checkpoint.json"));
  } catch (const nlohmann::json::parse_error& e) {
    throw CorruptFileError("checkpoint.json: " + std::string(e.what()));
  }

  Checkpoint c;
  try {
    const int version = j.at("schema_version").get<int>();
    if (version != kCheckpointSchemaVersion)
      throw VersionMismatchError("checkpoint schema version " + std::to_string(version) +
                                 ", expected " + std::to_string(kCheckpointSchemaVersion));
    c.stage = j.at("stage").get<int>();
    c.epoch = j.at("epoch").get<int>();
    c.best_validation_score = j.at("best_validation_score").get<double>();
    c.rng_state = j.at("rng_state").get<std::uint64_t>();
    c.config = config_from_json(j.at("config"));

    std::map<std::string, Matrix> blobs;
    for (const auto& t : j.at("tensors")) {
      const auto name = t.at("name").get<std::string>();
      const auto shape = t.at("shape").get<std::vector<Eigen::Index>>();
      if (shape.size() != 2 || t.at("width").get<int>() != 64)
        throw CorruptFileError("checkpoint tensor '" + name + "': bad shape or width");
      const auto bytes = io::read_file(path / t.at("file").get<std::string>());
      const auto expected = static_cast<std::size_t>(shape[0] * shape[1]) * sizeof(double);
      if (bytes.size() != expected)
        throw CorruptFileError("checkpoint tensor '" + name + "': expected " + std::to_string(expected) +
                               " bytes, found " + std::to_string(bytes.size()));
      Matrix m(shape[0], shape[1]);
      std::memcpy(m.data(), bytes.data(), expected);
      blobs.emplace(name, std::move(m));
    }
    const auto take = [&](const std::string& name) {
      auto it = blobs.find(name);
      if (it == blobs.end()) throw CorruptFileError("checkpoint is missing tensor '" + name + "'");
      return it->second;
    };

    const auto& ex = j.at("extractor");
    auto& p = c.params;
    p.extractor.input_dim = ex.at("input_dim").get<Eigen::Index>();
    p.extractor.taps = ex.at("taps").get<std::vector<std::size_t>>();
    const auto acts = ex.at("activations").get<std::vector<std::string>>();
    for (std::size_t i = 0; i < acts.size(); ++i) {
      Block b;
      b.weight = take(ModelParams::block_weight(i));
      b.bias = take(ModelParams::block_bias(i));
      b.activation = activation_from_string(acts[i]);
      p.extractor.blocks.push_back(std::move(b));
    }
    p.head.dropout_rate = j.at("head").at("dropout_rate").get<double>();
    p.head.proj_weight = take(ModelParams::kProjWeight);
    p.head.proj_bias = take(ModelParams::kProjBias);
    p.head.output_stage.mean = take("head.pca.mean").row(0).transpose();
    p.head.output_stage.components = take("head.pca.components");
    p.head.output_stage.variances = take("head.pca.variances").row(0).transpose();
    p.align.w = take(ModelParams::kAlign);
    p.validate();
  } catch (const nlohmann::json::exception& e) {
    throw CorruptFileError(std::string("checkpoint.json: ") + e.what());
  } catch (const ValidationError& e) {
    throw CorruptFileError(std::string("checkpoint: ") + e.what());
  } catch (const IoError& e) {
    throw CorruptFileError(std::string("checkpoint: ") + e.what());
  }
  return c;
}

}  // namespace vem
