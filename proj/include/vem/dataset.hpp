#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vem/binary_io.hpp"
#include "vem/linalg.hpp"
#include "vem/matrix.hpp"
#include "vem/rng.hpp"

namespace vem {

inline constexpr const char* kUnknownRoi = "unknown";

struct DatasetManifest {
  std::size_t n_samples = 0;
  std::size_t d_img = 0;
  std::size_t d_text = 0;
  std::size_t n_vertices = 0;
  int value_width = 64;
  std::vector<std::string> roi_names;
  std::string subject_id;

  bool operator==(const DatasetManifest&) const = default;

  void validate() const {
    if (n_samples < 1) throw ValidationError("manifest.n_samples must be >= 1");
    if (d_img < 1) throw ValidationError("manifest.d_img must be >= 1");
    if (d_text < 1) throw ValidationError("manifest.d_text must be >= 1");
    if (n_vertices < 1) throw ValidationError("manifest.n_vertices must be >= 1");
    if (value_width != 32 && value_width != 64)
      throw ValidationError("manifest.value_width must be 32 or 64");
    if (roi_names.empty()) throw ValidationError("manifest.roi_names must not be empty");
    std::set<std::string> seen(roi_names.begin(), roi_names.end());
    if (seen.size() != roi_names.size()) throw ValidationError("manifest.roi_names not unique");
  }
};

inline nlohmann::ordered_json to_json(const DatasetManifest& m) {
  nlohmann::ordered_json j;
  j["n_samples"] = m.n_samples;
  j["d_img"] = m.d_img;
  j["d_text"] = m.d_text;
  j["n_vertices"] = m.n_vertices;
  j["value_width"] = m.value_width;
  j["roi_names"] = m.roi_names;
  j["subject_id"] = m.subject_id;
  return j;
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  static const std::set<std::string> kFields = {"n_samples",  "d_img",     "d_text",
                                                "n_vertices", "value_width", "roi_names",
                                                "subject_id"};
  if (!j.is_object()) throw ValidationError("manifest.json: expected an object");
  for (const auto& [key, _] : j.items())
    if (!kFields.count(key)) throw ValidationError("manifest.json: unknown field '" + key + "'");
  DatasetManifest m;
  try {
    m.n_samples = j.at("n_samples").get<std::size_t>();
    m.d_img = j.at("d_img").get<std::size_t>();
    m.d_text = j.at("d_text").get<std::size_t>();
    m.n_vertices = j.at("n_vertices").get<std::size_t>();
    m.value_width = j.at("value_width").get<int>();
    m.roi_names = j.at("roi_names").get<std::vector<std::string>>();
    m.subject_id = j.at("subject_id").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("manifest.json: ") + e.what());
  }
  m.validate();
  return m;
}

// Aligned (image feature, text embedding, voxel target) triples plus
// per-vertex noise ceilings and ROI labels.
struct Dataset {
  DatasetManifest manifest;
  Matrix image_features;   // n x d_img
  Matrix text_embeddings;  // n x d_text
  Matrix voxel_targets;    // n x n_vertices
  Vector noise_ceiling;    // n_vertices, in [0, 1]
  std::vector<std::uint32_t> roi_labels;

  std::size_t size() const { return manifest.n_samples; }

  void validate() const {
    manifest.validate();
    const auto n = static_cast<Eigen::Index>(manifest.n_samples);
    const auto check = [&](const Matrix& m, std::size_t cols, const char* name) {
      if (m.rows() != n || m.cols() != static_cast<Eigen::Index>(cols))
        throw ValidationError(std::string(name) + ": shape " + shape_str(m) + " disagrees with manifest");
      require_finite(m, name);
    };
    check(image_features, manifest.d_img, "features");
    check(text_embeddings, manifest.d_text, "text_embeddings");
    check(voxel_targets, manifest.n_vertices, "voxels");
    if (noise_ceiling.size() != static_cast<Eigen::Index>(manifest.n_vertices))
      throw ValidationError("noise_ceiling: length disagrees with manifest");
    for (Eigen::Index i = 0; i < noise_ceiling.size(); ++i)
      if (!(noise_ceiling(i) >= 0.0 && noise_ceiling(i) <= 1.0))
        throw ValidationError("noise_ceiling: entry " + std::to_string(i) + " outside [0, 1]");
    if (roi_labels.size() != manifest.n_vertices)
      throw ValidationError("roi_labels: length disagrees with manifest");
    for (auto label : roi_labels)
      if (label >= manifest.roi_names.size())
        throw ValidationError("roi_labels: index " + std::to_string(label) + " out of range");
  }

  friend bool operator==(const Dataset& a, const Dataset& b) {
    const auto eq = [](const Matrix& x, const Matrix& y) {
      return x.rows() == y.rows() && x.cols() == y.cols() && x == y;
    };
    return a.manifest == b.manifest && eq(a.image_features, b.image_features) &&
           eq(a.text_embeddings, b.text_embeddings) && eq(a.voxel_targets, b.voxel_targets) &&
           a.noise_ceiling.size() == b.noise_ceiling.size() && a.noise_ceiling == b.noise_ceiling &&
           a.roi_labels == b.roi_labels;
  }
};

namespace detail {

inline Matrix read_matrix(const std::filesystem::path& path, std::size_t rows, std::size_t cols,
                          int width) {
  const auto values = io::decode_reals(io::read_file(path), rows * cols, width, path.filename().string());
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  std::copy(values.begin(), values.end(), m.data());
  return m;
}

inline void write_matrix(const std::filesystem::path& path, const double* data, std::size_t count,
                         int width) {
  const auto bytes = io::encode_reals(data, count, width);
  io::write_file(path, bytes.data(), bytes.size());
}

}  // namespace detail

inline Dataset load_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_text(manifest_path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("manifest.json: " + std::string(e.what()));
  }
  Dataset ds;
  ds.manifest = manifest_from_json(j);
  const auto& m = ds.manifest;
  ds.image_features = detail::read_matrix(dir / "features.bin", m.n_samples, m.d_img, m.value_width);
  ds.text_embeddings =
      detail::read_matrix(dir / "text_embeddings.bin", m.n_samples, m.d_text, m.value_width);
  ds.voxel_targets = detail::read_matrix(dir / "voxels.bin", m.n_samples, m.n_vertices, m.value_width);
  const auto nc = io::decode_reals(io::read_file(dir / "noise_ceiling.bin"), m.n_vertices,
                                   m.value_width, "noise_ceiling.bin");
  ds.noise_ceiling = Eigen::Map<const Vector>(nc.data(), static_cast<Eigen::Index>(nc.size()));

  const auto label_bytes = io::read_file(dir / "roi_labels.bin");
  if (label_bytes.size() != m.n_vertices * 4)
    throw ValidationError("roi_labels.bin: size mismatch, expected " +
                          std::to_string(m.n_vertices * 4) + " bytes, found " +
                          std::to_string(label_bytes.size()));
  ds.roi_labels.resize(m.n_vertices);
  std::memcpy(ds.roi_labels.data(), label_bytes.data(), label_bytes.size());
  ds.validate();
  return ds;
}

inline void write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  ds.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  const int w = ds.manifest.value_width;
  io::write_text(dir / "manifest.json", to_json(ds.manifest).dump(2) + "\n");
  detail::write_matrix(dir / "features.bin", ds.image_features.data(),
                       static_cast<std::size_t>(ds.image_features.size()), w);
  detail::write_matrix(dir / "text_embeddings.bin", ds.text_embeddings.data(),
                       static_cast<std::size_t>(ds.text_embeddings.size()), w);
  detail::write_matrix(dir / "voxels.bin", ds.voxel_targets.data(),
                       static_cast<std::size_t>(ds.voxel_targets.size()), w);
  detail::write_matrix(dir / "noise_ceiling.bin", ds.noise_ceiling.data(),
                       static_cast<std::size_t>(ds.noise_ceiling.size()), w);
  io::write_file(dir / "roi_labels.bin", ds.roi_labels.data(), ds.roi_labels.size() * 4);
}

// Rows of a dataset, in the given order.
inline Dataset subset(const Dataset& ds, std::span<const std::size_t> idx) {
  Dataset out = ds;
  out.manifest.n_samples = idx.size();
  out.image_features = gather_rows(ds.image_features, idx);
  out.text_embeddings = gather_rows(ds.text_embeddings, idx);
  out.voxel_targets = gather_rows(ds.voxel_targets, idx);
  return out;
}

// Concatenate samples of datasets that share feature and vertex layouts.
inline Dataset concat(std::span<const Dataset> parts) {
  if (parts.empty()) throw PreconditionError("concat: no datasets");
  Dataset out = parts[0];
  for (std::size_t p = 1; p < parts.size(); ++p) {
    const auto& d = parts[p];
    if (d.manifest.d_img != out.manifest.d_img || d.manifest.d_text != out.manifest.d_text ||
        d.manifest.n_vertices != out.manifest.n_vertices)
      throw ValidationError("concat: dataset " + std::to_string(p) + " has different dimensions");
    const auto stack = [](const Matrix& a, const Matrix& b) {
      Matrix m(a.rows() + b.rows(), a.cols());
      m << a, b;
      return m;
    };
    out.image_features = stack(out.image_features, d.image_features);
    out.text_embeddings = stack(out.text_embeddings, d.text_embeddings);
    out.voxel_targets = stack(out.voxel_targets, d.voxel_targets);
    out.manifest.n_samples += d.manifest.n_samples;
  }
  out.manifest.subject_id = "combined";
  return out;
}

struct SplitSpec {
  double train = 0.85;
  double val = 0.10;
  double test = 0.05;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(train > 0 && val > 0 && test > 0)) throw PreconditionError("split fractions must be positive");
    if (std::abs(train + val + test - 1.0) > 1e-12) throw PreconditionError("split fractions must sum to 1");
  }
};

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

// test = floor(test_frac * n), val = floor(val_frac * n), train takes the
// remainder. Each list is sorted ascending; membership comes from a seeded
// permutation.
inline Split split_dataset(std::size_t n, const SplitSpec& spec) {
  spec.validate();
  if (n < 3) throw PreconditionError("split_dataset: need at least 3 samples, got " + std::to_string(n));
  // The small slack keeps exact products like 0.1 * 30 from flooring down.
  const auto count = [n](double f) {
    return static_cast<std::size_t>(std::floor(f * static_cast<double>(n) + 1e-9));
  };
  const std::size_t n_test = count(spec.test);
  const std::size_t n_val = count(spec.val);
  Rng rng = Rng(spec.seed).fork("split");
  const auto perm = permutation(n, rng);
  Split s;
  s.test.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_test));
  s.val.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_test),
               perm.begin() + static_cast<std::ptrdiff_t>(n_test + n_val));
  s.train.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_test + n_val), perm.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.val.begin(), s.val.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

inline Split split_dataset(const Dataset& ds, const SplitSpec& spec) {
  return split_dataset(ds.size(), spec);
}

// Scatter vertices into a wider layout. Vertex j moves to column
// vertex_map[j]; columns nobody maps to are zero with NC 0 and the "unknown"
// ROI label.
inline Dataset pad_vertices(const Dataset& ds, std::size_t target,
                            std::span<const std::size_t> vertex_map) {
  const std::size_t v = ds.manifest.n_vertices;
  if (target < v) throw PreconditionError("pad_vertices: target narrower than dataset");
  if (vertex_map.size() != v) throw ValidationError("pad_vertices: map length differs from n_vertices");
  std::vector<bool> used(target, false);
  for (auto dst : vertex_map) {
    if (dst >= target) throw ValidationError("pad_vertices: map entry out of range");
    if (used[dst]) throw ValidationError("pad_vertices: map is not injective");
    used[dst] = true;
  }
  Dataset out = ds;
  auto& names = out.manifest.roi_names;
  auto it = std::find(names.begin(), names.end(), kUnknownRoi);
  const auto unknown = static_cast<std::uint32_t>(it - names.begin());
  if (it == names.end()) names.emplace_back(kUnknownRoi);

  out.manifest.n_vertices = target;
  out.voxel_targets = Matrix::Zero(ds.voxel_targets.rows(), static_cast<Eigen::Index>(target));
  out.noise_ceiling = Vector::Zero(static_cast<Eigen::Index>(target));
  out.roi_labels.assign(target, unknown);
  for (std::size_t j = 0; j < v; ++j) {
    const auto src = static_cast<Eigen::Index>(j);
    const auto dst = static_cast<Eigen::Index>(vertex_map[j]);
    out.voxel_targets.col(dst) = ds.voxel_targets.col(src);
    out.noise_ceiling(dst) = ds.noise_ceiling(src);
    out.roi_labels[vertex_map[j]] = ds.roi_labels[j];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic benchmark: latent linear-Gaussian model with a known optimum.

struct SyntheticSpec {
  std::size_t n_samples = 2000;
  std::size_t latent_dim = 8;
  std::size_t d_img = 32;
  std::size_t d_text = 16;
  std::size_t n_vertices = 64;
  double noise_std_img = 0.3;
  double noise_std_text = 0.3;
  double noise_std_voxel = 0.5;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_samples < 1 || latent_dim < 1 || d_img < 1 || d_text < 1 || n_vertices < 1)
      throw PreconditionError("synthetic spec: dimensions must be >= 1");
    if (!(noise_std_img >= 0 && noise_std_text >= 0 && noise_std_voxel >= 0))
      throw PreconditionError("synthetic spec: noise stds must be >= 0");
  }
};

struct SyntheticGroundTruth {
  Matrix image_loadings;   // A: d_img x r
  Matrix text_loadings;    // B: d_text x r
  Matrix voxel_loadings;   // C: n_vertices x r
  Matrix latents;          // n x r
  Vector noise_ceiling;    // analytic, per vertex
  SyntheticSpec spec;
};

inline const std::vector<std::string>& synthetic_roi_names() {
  static const std::vector<std::string> names = {"early", "ventral", "lateral", "parietal"};
  return names;
}

// NC_j = |C_j|^2 / (|C_j|^2 + sigma_vox^2); 1 in the noiseless limit.
inline Vector analytic_noise_ceiling(const Matrix& voxel_loadings, double noise_std_voxel) {
  const Vector signal = voxel_loadings.rowwise().squaredNorm();
  const double noise = noise_std_voxel * noise_std_voxel;
  Vector nc(signal.size());
  for (Eigen::Index j = 0; j < signal.size(); ++j) {
    const double total = signal(j) + noise;
    nc(j) = total > 0.0 ? signal(j) / total : 0.0;
  }
  return nc;
}

struct SyntheticDraw {
  Dataset dataset;
  SyntheticGroundTruth truth;
};

inline SyntheticDraw generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const auto n = static_cast<Eigen::Index>(spec.n_samples);
  const auto r = static_cast<Eigen::Index>(spec.latent_dim);
  const double scale = 1.0 / std::sqrt(static_cast<double>(spec.latent_dim));
  Rng root(spec.seed);
  Rng loadings = root.fork("loadings");
  Rng latent_rng = root.fork("latents");
  Rng noise = root.fork("noise");

  SyntheticGroundTruth gt;
  gt.spec = spec;
  gt.image_loadings = gaussian_matrix(static_cast<Eigen::Index>(spec.d_img), r, scale, loadings);
  gt.text_loadings = gaussian_matrix(static_cast<Eigen::Index>(spec.d_text), r, scale, loadings);
  gt.voxel_loadings = gaussian_matrix(static_cast<Eigen::Index>(spec.n_vertices), r, scale, loadings);
  gt.latents = gaussian_matrix(n, r, 1.0, latent_rng);
  gt.noise_ceiling = analytic_noise_ceiling(gt.voxel_loadings, spec.noise_std_voxel);

  Dataset ds;
  ds.manifest.n_samples = spec.n_samples;
  ds.manifest.d_img = spec.d_img;
  ds.manifest.d_text = spec.d_text;
  ds.manifest.n_vertices = spec.n_vertices;
  ds.manifest.value_width = 64;
  ds.manifest.roi_names = synthetic_roi_names();
  ds.manifest.subject_id = "synthetic";
  const auto observe = [&](const Matrix& loading, double std) -> Matrix {
    Matrix clean = gt.latents * loading.transpose();
    return clean + gaussian_matrix(n, loading.rows(), std, noise);
  };
  ds.image_features = observe(gt.image_loadings, spec.noise_std_img);
  ds.text_embeddings = observe(gt.text_loadings, spec.noise_std_text);
  ds.voxel_targets = observe(gt.voxel_loadings, spec.noise_std_voxel);
  ds.noise_ceiling = gt.noise_ceiling;
  ds.roi_labels.resize(spec.n_vertices);
  for (std::size_t j = 0; j < spec.n_vertices; ++j)
    ds.roi_labels[j] = static_cast<std::uint32_t>(j % synthetic_roi_names().size());
  return {std::move(ds), std::move(gt)};
}

// Population-optimal linear prediction of voxels from noisy image features:
// C * E[z | f] with E[z | f] = (A^T A + s^2 I)^-1 A^T f.
inline Matrix oracle_predict(const SyntheticGroundTruth& gt, const Matrix& image_features) {
  require_cols(image_features, gt.image_loadings.rows(), "oracle_predict");
  const auto& a = gt.image_loadings;
  const double s2 = gt.spec.noise_std_img * gt.spec.noise_std_img;
  Matrix gram = a.transpose() * a;
  gram.diagonal().array() += s2;
  const Matrix posterior = gram.ldlt().solve(a.transpose());  // r x d_img
  return image_features * posterior.transpose() * gt.voxel_loadings.transpose();
}

// Ground truth is stored next to a generated dataset so oracles can run
// without regenerating: ground_truth.json plus 64-bit blobs.
inline void write_ground_truth(const SyntheticGroundTruth& gt, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  nlohmann::ordered_json j;
  const auto& s = gt.spec;
  j["n_samples"] = s.n_samples;
  j["latent_dim"] = s.latent_dim;
  j["d_img"] = s.d_img;
  j["d_text"] = s.d_text;
  j["n_vertices"] = s.n_vertices;
  j["noise_std_img"] = s.noise_std_img;
  j["noise_std_text"] = s.noise_std_text;
  j["noise_std_voxel"] = s.noise_std_voxel;
  j["seed"] = s.seed;
  j["blobs"] = {"image_loadings.bin", "text_loadings.bin", "voxel_loadings.bin", "latents.bin",
                "noise_ceiling.bin"};
  io::write_text(dir / "ground_truth.json", j.dump(2) + "\n");
  const auto put = [&](const char* name, const double* data, Eigen::Index count) {
    detail::write_matrix(dir / name, data, static_cast<std::size_t>(count), 64);
  };
  put("image_loadings.bin", gt.image_loadings.data(), gt.image_loadings.size());
  put("text_loadings.bin", gt.text_loadings.data(), gt.text_loadings.size());
  put("voxel_loadings.bin", gt.voxel_loadings.data(), gt.voxel_loadings.size());
  put("latents.bin", gt.latents.data(), gt.latents.size());
  put("noise_ceiling.bin", gt.noise_ceiling.data(), gt.noise_ceiling.size());
}

inline SyntheticGroundTruth load_ground_truth(const std::filesystem::path& dir) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_text(dir / "ground_truth.json"));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("ground_truth.json: " + std::string(e.what()));
  }
  SyntheticGroundTruth gt;
  auto& s = gt.spec;
  try {
    s.n_samples = j.at("n_samples").get<std::size_t>();
    s.latent_dim = j.at("latent_dim").get<std::size_t>();
    s.d_img = j.at("d_img").get<std::size_t>();
    s.d_text = j.at("d_text").get<std::size_t>();
    s.n_vertices = j.at("n_vertices").get<std::size_t>();
    s.noise_std_img = j.at("noise_std_img").get<double>();
    s.noise_std_text = j.at("noise_std_text").get<double>();
    s.noise_std_voxel = j.at("noise_std_voxel").get<double>();
    s.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("ground_truth.json: ") + e.what());
  }
  gt.image_loadings = detail::read_matrix(dir / "image_loadings.bin", s.d_img, s.latent_dim, 64);
  gt.text_loadings = detail::read_matrix(dir / "text_loadings.bin", s.d_text, s.latent_dim, 64);
  gt.voxel_loadings = detail::read_matrix(dir / "voxel_loadings.bin", s.n_vertices, s.latent_dim, 64);
  gt.latents = detail::read_matrix(dir / "latents.bin", s.n_samples, s.latent_dim, 64);
  gt.noise_ceiling = detail::read_matrix(dir / "noise_ceiling.bin", s.n_vertices, 1, 64).col(0);
  return gt;
}

}  // namespace vem
