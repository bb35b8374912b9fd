#pragma once

#include <cmath>
#include <cstring>
#include <map>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "vem/linalg.hpp"
#include "vem/matrix.hpp"
#include "vem/rng.hpp"

namespace vem {

enum class Mode { train, eval };

enum class Activation { identity, gelu };

inline const char* to_string(Activation a) { return a == Activation::gelu ? "gelu" : "identity"; }

inline Activation activation_from_string(const std::string& s) {
  if (s == "gelu") return Activation::gelu;
  if (s == "identity") return Activation::identity;
  throw ValidationError("unknown activation '" + s + "'");
}

// Exact (erf) GELU and its derivative.
inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

inline double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

struct Block {
  Matrix weight;  // out x in
  Matrix bias;    // 1 x out
  Activation activation = Activation::identity;
};

// Surrogate feature extractor: a stack of affine + activation blocks. The
// feature is the concatenation of the outputs of the tapped blocks.
struct ExtractorParams {
  Eigen::Index input_dim = 0;
  std::vector<Block> blocks;
  std::vector<std::size_t> taps;

  void validate() const {
    if (blocks.empty()) throw ValidationError("extractor: no blocks");
    Eigen::Index in = input_dim;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const auto& b = blocks[i];
      if (b.weight.cols() != in)
        throw ValidationError("extractor block " + std::to_string(i) + ": expects input width " +
                              std::to_string(b.weight.cols()) + ", previous width is " +
                              std::to_string(in));
      if (b.bias.rows() != 1 || b.bias.cols() != b.weight.rows())
        throw ValidationError("extractor block " + std::to_string(i) + ": bias shape " +
                              shape_str(b.bias));
      in = b.weight.rows();
    }
    if (taps.empty()) throw ValidationError("extractor: no taps");
    for (std::size_t i = 0; i < taps.size(); ++i) {
      if (taps[i] >= blocks.size()) throw ValidationError("extractor: tap index out of range");
      if (i > 0 && taps[i] <= taps[i - 1])
        throw ValidationError("extractor: taps must be strictly increasing");
    }
  }

  Eigen::Index feature_dim() const {
    Eigen::Index d = 0;
    for (auto t : taps) d += blocks[t].weight.rows();
    return d;
  }
};

// Identity-plus-noise blocks of constant width. The first block is a linear
// stem (like a patch embedding), the last is linear, and the ones between use
// gelu. A single block is linear.
inline ExtractorParams make_extractor(Eigen::Index input_dim, std::size_t depth,
                                      std::vector<std::size_t> taps, double init_noise, Rng& rng) {
  ExtractorParams p;
  p.input_dim = input_dim;
  for (std::size_t i = 0; i < depth; ++i) {
    Block b;
    b.weight = Matrix::Identity(input_dim, input_dim) +
               gaussian_matrix(input_dim, input_dim,
                               init_noise / std::sqrt(static_cast<double>(input_dim)), rng);
    b.bias = Matrix::Zero(1, input_dim);
    b.activation = (i == 0 || i + 1 == depth) ? Activation::identity : Activation::gelu;
    p.blocks.push_back(std::move(b));
  }
  p.taps = std::move(taps);
  p.validate();
  return p;
}

// Intermediate values kept for backpropagation.
struct ExtractorTrace {
  Matrix input;
  std::vector<Matrix> pre;   // affine outputs
  std::vector<Matrix> post;  // activation outputs
};

inline Matrix apply_activation(const Matrix& pre, Activation a) {
  if (a == Activation::identity) return pre;
  return pre.unaryExpr([](double x) { return gelu(x); });
}

inline Matrix forward_extract(const ExtractorParams& p, const Matrix& x, ExtractorTrace* trace = nullptr) {
  require_cols(x, p.input_dim, "forward_extract input");
  Matrix h = x;
  if (trace) {
    trace->input = x;
    trace->pre.clear();
    trace->post.clear();
  }
  std::vector<Matrix> outputs;
  outputs.reserve(p.blocks.size());
  for (const auto& b : p.blocks) {
    Matrix pre = (h * b.weight.transpose()).rowwise() + b.bias.row(0);
    h = apply_activation(pre, b.activation);
    if (trace) {
      trace->pre.push_back(std::move(pre));
      trace->post.push_back(h);
    }
    outputs.push_back(h);
  }
  Matrix feature(x.rows(), p.feature_dim());
  Eigen::Index col = 0;
  for (auto t : p.taps) {
    feature.middleCols(col, outputs[t].cols()) = outputs[t];
    col += outputs[t].cols();
  }
  return feature;
}

// The extractor has no stochastic layers; mode and rng exist so every forward
// entry point shares one calling convention.
inline Matrix forward_extract(const ExtractorParams& p, const Matrix& x, Mode, Rng&) {
  return forward_extract(p, x);
}

// Trainable projection to PCA coefficients followed by a fixed PCA
// reconstruction stage (weight = components, bias = mean).
struct VoxelHead {
  Matrix proj_weight;  // k x d_feat
  Matrix proj_bias;    // 1 x k
  double dropout_rate = 0.0;
  PcaModel output_stage;

  void validate() const {
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
      throw ValidationError("voxel head: dropout rate outside [0, 1)");
    if (proj_weight.rows() != output_stage.k())
      throw ValidationError("voxel head: projection width " + std::to_string(proj_weight.rows()) +
                            " != PCA k " + std::to_string(output_stage.k()));
    if (proj_bias.rows() != 1 || proj_bias.cols() != proj_weight.rows())
      throw ValidationError("voxel head: bias shape " + shape_str(proj_bias));
  }
};

// Inverted dropout mask (0 or 1/(1-rate)), drawn row-major from rng.
inline Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng) {
  Matrix mask(rows, cols);
  const double keep = 1.0 / (1.0 - rate);
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = rng.uniform() < rate ? 0.0 : keep;
  return mask;
}

// The fixed output stage: PCA of the training-split voxel targets.
inline PcaModel init_voxel_head_pca(const Matrix& train_targets, Eigen::Index k) {
  return pca_fit(train_targets, k);
}

struct HeadTrace {
  Matrix mask;     // empty in eval mode
  Matrix dropped;  // features after dropout
};

inline Matrix predict_voxels(const VoxelHead& h, const Matrix& f, Mode mode, Rng& rng,
                             HeadTrace* trace = nullptr) {
  require_cols(f, h.proj_weight.cols(), "predict_voxels features");
  Matrix dropped;
  Matrix mask;
  if (mode == Mode::train && h.dropout_rate > 0.0) {
    mask = dropout_mask(f.rows(), f.cols(), h.dropout_rate, rng);
    dropped = f.cwiseProduct(mask);
  } else {
    dropped = f;
  }
  Matrix coeffs = (dropped * h.proj_weight.transpose()).rowwise() + h.proj_bias.row(0);
  if (trace) {
    trace->mask = std::move(mask);
    trace->dropped = dropped;
  }
  return pca_reconstruct(h.output_stage, coeffs);
}

// W maps image features into the text-embedding space.
struct AlignmentMatrix {
  Matrix w;  // d_text x d_feat
};

inline AlignmentMatrix make_alignment(Eigen::Index d_text, Eigen::Index d_feat, Rng& rng) {
  if (d_text == d_feat) return {Matrix::Identity(d_text, d_feat)};
  return {gaussian_matrix(d_text, d_feat, 1.0 / std::sqrt(static_cast<double>(d_feat)), rng)};
}

inline Vector row_norms_checked(const Matrix& m, const char* what) {
  Vector norms = m.rowwise().norm();
  for (Eigen::Index i = 0; i < norms.size(); ++i)
    if (!(norms(i) > 0.0))
      throw ValidationError(std::string("align_scores: zero-norm row ") + std::to_string(i) + " in " + what);
  return norms;
}

// s_ij = normalize(t_i) . normalize(W f_j).
inline Matrix align_scores(const AlignmentMatrix& a, const Matrix& text, const Matrix& features) {
  require_cols(text, a.w.rows(), "align_scores text");
  require_cols(features, a.w.cols(), "align_scores features");
  if (text.rows() != features.rows())
    throw ValidationError("align_scores: batch sizes differ");
  const Matrix mapped = features * a.w.transpose();
  const Vector tn = row_norms_checked(text, "text");
  const Vector un = row_norms_checked(mapped, "mapped features");
  const Matrix t_hat = tn.cwiseInverse().asDiagonal() * text;
  const Matrix u_hat = un.cwiseInverse().asDiagonal() * mapped;
  return t_hat * u_hat.transpose();
}

// Full encoding model.
struct ModelParams {
  ExtractorParams extractor;
  VoxelHead head;
  AlignmentMatrix align;

  static std::string block_weight(std::size_t i) { return "extractor.block" + std::to_string(i) + ".weight"; }
  static std::string block_bias(std::size_t i) { return "extractor.block" + std::to_string(i) + ".bias"; }
  static constexpr const char* kProjWeight = "head.proj.weight";
  static constexpr const char* kProjBias = "head.proj.bias";
  static constexpr const char* kAlign = "align.weight";

  // Every trainable-capable tensor in a fixed order. The PCA output stage is
  // not a parameter: nothing ever updates it.
  std::vector<std::pair<std::string, Matrix*>> tensors() {
    std::vector<std::pair<std::string, Matrix*>> out;
    for (std::size_t i = 0; i < extractor.blocks.size(); ++i) {
      out.emplace_back(block_weight(i), &extractor.blocks[i].weight);
      out.emplace_back(block_bias(i), &extractor.blocks[i].bias);
    }
    out.emplace_back(kProjWeight, &head.proj_weight);
    out.emplace_back(kProjBias, &head.proj_bias);
    out.emplace_back(kAlign, &align.w);
    return out;
  }

  std::vector<std::pair<std::string, const Matrix*>> tensors() const {
    std::vector<std::pair<std::string, const Matrix*>> out;
    for (auto& [name, ptr] : const_cast<ModelParams*>(this)->tensors()) out.emplace_back(name, ptr);
    return out;
  }

  Matrix* find(const std::string& name) {
    for (auto& [n, ptr] : tensors())
      if (n == name) return ptr;
    return nullptr;
  }

  void validate() const {
    extractor.validate();
    head.validate();
    if (head.proj_weight.cols() != extractor.feature_dim())
      throw ValidationError("voxel head expects " + std::to_string(head.proj_weight.cols()) +
                            " features, extractor yields " + std::to_string(extractor.feature_dim()));
    if (align.w.cols() != extractor.feature_dim())
      throw ValidationError("alignment matrix expects " + std::to_string(align.w.cols()) + " features");
    for (const auto& [name, t] : tensors()) require_finite(*t, name);
  }

  // Eval-mode prediction for a whole matrix of image features.
  Matrix predict(const Matrix& images) const {
    Rng unused(0);
    return predict_voxels(head, forward_extract(extractor, images), Mode::eval, unused);
  }
};

inline bool bitwise_equal(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), static_cast<std::size_t>(a.size()) * sizeof(double)) == 0;
}

using GradMap = std::map<std::string, Matrix>;

// frozen[name] == true means the tensor receives no update.
struct FreezeMask {
  std::map<std::string, bool> frozen;

  bool is_frozen(const std::string& name) const {
    auto it = frozen.find(name);
    if (it == frozen.end()) throw ValidationError("freeze mask does not cover tensor '" + name + "'");
    return it->second;
  }

  std::vector<std::string> trainable() const {
    std::vector<std::string> out;
    for (const auto& [name, f] : frozen)
      if (!f) out.push_back(name);
    return out;
  }

  // Throws unless the mask names exactly the tensors of `params`.
  void check_covers(const ModelParams& params) const {
    std::size_t count = 0;
    for (const auto& [name, _] : params.tensors()) {
      is_frozen(name);
      ++count;
    }
    if (count != frozen.size()) throw ValidationError("freeze mask names tensors the model does not have");
  }

  static FreezeMask all(const ModelParams& params, bool frozen_state) {
    FreezeMask m;
    for (const auto& [name, _] : params.tensors()) m.frozen[name] = frozen_state;
    return m;
  }
};

// Stage 1: only the voxel-head projection learns.
inline FreezeMask stage1_mask(const ModelParams& params) {
  FreezeMask m = FreezeMask::all(params, true);
  m.frozen[ModelParams::kProjWeight] = false;
  m.frozen[ModelParams::kProjBias] = false;
  return m;
}

// Stage 2: the last `n` extractor blocks and W learn; the head is frozen.
inline FreezeMask stage2_mask(const ModelParams& params, std::size_t n) {
  FreezeMask m = FreezeMask::all(params, true);
  const std::size_t depth = params.extractor.blocks.size();
  if (n > depth) throw PreconditionError("cannot unfreeze " + std::to_string(n) + " of " +
                                         std::to_string(depth) + " blocks");
  for (std::size_t i = depth - n; i < depth; ++i) {
    m.frozen[ModelParams::block_weight(i)] = false;
    m.frozen[ModelParams::block_bias(i)] = false;
  }
  m.frozen[ModelParams::kAlign] = false;
  return m;
}

inline GradMap apply_freeze(const FreezeMask& mask, GradMap grads) {
  for (auto& [name, g] : grads)
    if (mask.is_frozen(name)) g.setZero();
  return grads;
}

}  // namespace vem
