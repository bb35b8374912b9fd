#pragma once

#include <algorithm>
#include <set>
#include <string>

#include "vem/losses.hpp"
#include "vem/model.hpp"

namespace vem {

struct Batch {
  Matrix images;  // B x d_img
  Matrix texts;   // B x d_text
  Matrix voxels;  // B x V
};

struct ObjectiveResult {
  double total = 0.0;
  double mse = 0.0;
  double alignment = 0.0;  // 0 when lambda == 0 (not evaluated)
  GradMap grads;           // only the requested tensors
};

// Backward pass through row-wise L2 normalization u_hat = u / |u|.
inline Matrix normalize_rows_backward(const Matrix& u, const Matrix& d_u_hat) {
  Matrix out(u.rows(), u.cols());
  for (Eigen::Index i = 0; i < u.rows(); ++i) {
    const double norm = u.row(i).norm();
    const auto u_hat = u.row(i) / norm;
    out.row(i) = (d_u_hat.row(i) - u_hat * u_hat.dot(d_u_hat.row(i))) / norm;
  }
  return out;
}

// Training objective L = MSE(T(F(x)), v) + lambda * InfoNCE(t, W F(x)) with
// analytic gradients for the tensors named in `wanted`. In train mode the
// head's dropout mask is drawn from `rng`.
inline ObjectiveResult evaluate_objective(const ModelParams& params, const Batch& batch,
                                          const AlignConfig& cfg, Mode mode, Rng& rng,
                                          const std::set<std::string>& wanted) {
  cfg.validate();
  const auto& ex = params.extractor;
  const auto& head = params.head;
  const bool need_extractor_grad = std::any_of(wanted.begin(), wanted.end(), [](const std::string& n) {
    return n.rfind("extractor.", 0) == 0;
  });

  ExtractorTrace trace;
  const Matrix feature = forward_extract(ex, batch.images, need_extractor_grad ? &trace : nullptr);
  HeadTrace head_trace;
  const Matrix pred = predict_voxels(head, feature, mode, rng, &head_trace);
  const LossValue mse = mse_loss(pred, batch.voxels);

  ObjectiveResult out;
  out.mse = mse.value;
  out.total = mse.value;

  // d/d coefficients through the fixed PCA stage: v = c * components + mean.
  const Matrix& d_pred = mse.grads.at("pred");
  const Matrix d_coeff = d_pred * head.output_stage.components.transpose();
  if (wanted.count(ModelParams::kProjWeight))
    out.grads[ModelParams::kProjWeight] = d_coeff.transpose() * head_trace.dropped;
  if (wanted.count(ModelParams::kProjBias))
    out.grads[ModelParams::kProjBias] = d_coeff.colwise().sum();

  Matrix d_feature;
  if (need_extractor_grad) {
    d_feature = d_coeff * head.proj_weight;
    if (head_trace.mask.size() > 0) d_feature = d_feature.cwiseProduct(head_trace.mask);
  }

  if (cfg.lambda > 0.0) {
    const Matrix scores = align_scores(params.align, batch.texts, feature);
    const LossValue align = alignment_loss(scores, cfg);
    out.alignment = align.value;
    out.total = total_loss(mse, align, cfg).value;

    const bool want_w = wanted.count(ModelParams::kAlign) > 0;
    if (want_w || need_extractor_grad) {
      const Matrix d_scores = cfg.lambda * align.grads.at("scores");
      const Matrix mapped = feature * params.align.w.transpose();
      const Vector tn = batch.texts.rowwise().norm();
      const Matrix t_hat = tn.cwiseInverse().asDiagonal() * batch.texts;
      const Matrix d_mapped = normalize_rows_backward(mapped, d_scores.transpose() * t_hat);
      if (want_w) out.grads[ModelParams::kAlign] = d_mapped.transpose() * feature;
      if (need_extractor_grad) d_feature += d_mapped * params.align.w;
    }
  } else if (wanted.count(ModelParams::kAlign)) {
    out.grads[ModelParams::kAlign] = Matrix::Zero(params.align.w.rows(), params.align.w.cols());
  }

  if (need_extractor_grad) {
    const std::size_t depth = ex.blocks.size();
    std::size_t lowest = depth;
    for (std::size_t i = 0; i < depth; ++i)
      if (wanted.count(ModelParams::block_weight(i)) || wanted.count(ModelParams::block_bias(i))) {
        lowest = i;
        break;
      }
    // Route feature gradient back to the tapped block outputs.
    std::vector<Matrix> d_post(depth);
    Eigen::Index col = 0;
    for (auto t : ex.taps) {
      const auto width = ex.blocks[t].weight.rows();
      d_post[t] = d_feature.middleCols(col, width);
      col += width;
    }
    for (std::size_t l = depth; l-- > lowest;) {
      if (d_post[l].size() == 0) continue;
      const auto& blk = ex.blocks[l];
      Matrix d_pre = d_post[l];
      if (blk.activation == Activation::gelu)
        d_pre = d_pre.cwiseProduct(trace.pre[l].unaryExpr([](double x) { return gelu_grad(x); }));
      const Matrix& input = l == 0 ? trace.input : trace.post[l - 1];
      if (wanted.count(ModelParams::block_weight(l)))
        out.grads[ModelParams::block_weight(l)] = d_pre.transpose() * input;
      if (wanted.count(ModelParams::block_bias(l)))
        out.grads[ModelParams::block_bias(l)] = d_pre.colwise().sum();
      if (l > lowest) {
        Matrix back = d_pre * blk.weight;
        if (d_post[l - 1].size() == 0)
          d_post[l - 1] = std::move(back);
        else
          d_post[l - 1] += back;
      }
    }
    // Wanted blocks the gradient never reaches (after the last tap) get zeros.
    for (std::size_t l = lowest; l < depth; ++l) {
      const auto& blk = ex.blocks[l];
      if (wanted.count(ModelParams::block_weight(l)) && !out.grads.count(ModelParams::block_weight(l)))
        out.grads[ModelParams::block_weight(l)] = Matrix::Zero(blk.weight.rows(), blk.weight.cols());
      if (wanted.count(ModelParams::block_bias(l)) && !out.grads.count(ModelParams::block_bias(l)))
        out.grads[ModelParams::block_bias(l)] = Matrix::Zero(1, blk.bias.cols());
    }
  }
  return out;
}

// Finite-difference check of evaluate_objective for every unfrozen tensor,
// in eval mode (dropout off). `corrupt_scale` != 1 scales the analytic
// gradients as a negative control.
inline GradCheckReport model_grad_check(ModelParams params, const Batch& batch, const AlignConfig& cfg,
                                        const FreezeMask& mask, const GradCheckOptions& opts = {},
                                        double corrupt_scale = 1.0) {
  mask.check_covers(params);
  const auto names = mask.trainable();
  const std::set<std::string> wanted(names.begin(), names.end());
  std::vector<std::pair<std::string, Matrix*>> tensors;
  for (const auto& n : names) tensors.emplace_back(n, params.find(n));
  const auto loss_fn = [&]() {
    Rng unused(0);
    auto r = evaluate_objective(params, batch, cfg, Mode::eval, unused, wanted);
    LossValue v;
    v.value = r.total;
    v.grads = std::move(r.grads);
    if (corrupt_scale != 1.0)
      for (auto& [_, g] : v.grads) g *= corrupt_scale;
    return v;
  };
  return grad_check(loss_fn, tensors, opts);
}

}  // namespace vem
