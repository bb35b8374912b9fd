#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "vem/matrix.hpp"
#include "vem/model.hpp"
#include "vem/rng.hpp"

namespace vem {

struct LossValue {
  double value = 0.0;
  GradMap grads;
};

struct AlignConfig {
  double tau = 0.1;
  double lambda = 0.0;
  // Average text->image and image->text InfoNCE instead of text->image only.
  bool symmetric = false;

  void validate() const {
    if (!(tau > 0.0)) throw PreconditionError("alignment: tau must be > 0");
    if (!(lambda >= 0.0)) throw PreconditionError("alignment: lambda must be >= 0");
  }
};

// Mean squared error over every element; gradient keyed "pred".
inline LossValue mse_loss(const Matrix& pred, const Matrix& target) {
  require_same_shape(pred, target, "mse_loss");
  const Matrix diff = pred - target;
  const double count = static_cast<double>(diff.size());
  LossValue out;
  out.value = diff.squaredNorm() / count;
  out.grads["pred"] = (2.0 / count) * diff;
  return out;
}

namespace detail {

// Row-wise InfoNCE with the positive on the diagonal. Returns the mean loss and
// writes (softmax - I) / (B * tau) into grad.
inline double infonce_rows(const Matrix& scores, double tau, Matrix& grad) {
  const Eigen::Index b = scores.rows();
  grad.resize(b, b);
  double total = 0.0;
  for (Eigen::Index i = 0; i < b; ++i) {
    const double row_max = scores.row(i).maxCoeff() / tau;
    double denom = 0.0;
    for (Eigen::Index j = 0; j < b; ++j) {
      const double e = std::exp(scores(i, j) / tau - row_max);
      grad(i, j) = e;
      denom += e;
    }
    grad.row(i) /= denom;
    total += -(scores(i, i) / tau - row_max - std::log(denom));
    grad(i, i) -= 1.0;
  }
  grad /= static_cast<double>(b) * tau;
  return total / static_cast<double>(b);
}

}  // namespace detail

// L = -(1/B) sum_i log softmax(s_i / tau)[i]; gradient keyed "scores".
inline LossValue alignment_loss(const Matrix& scores, const AlignConfig& cfg) {
  cfg.validate();
  if (scores.rows() < 1 || scores.rows() != scores.cols())
    throw PreconditionError("alignment_loss: scores must be a non-empty square matrix, got " +
                            shape_str(scores));
  require_finite(scores, "alignment_loss scores");
  LossValue out;
  Matrix grad;
  out.value = detail::infonce_rows(scores, cfg.tau, grad);
  if (cfg.symmetric) {
    Matrix grad_t;
    const double other = detail::infonce_rows(scores.transpose(), cfg.tau, grad_t);
    out.value = 0.5 * (out.value + other);
    grad = 0.5 * (grad + grad_t.transpose());
  }
  out.grads["scores"] = std::move(grad);
  return out;
}

// L = L_mse + lambda * L_alignment, gradients combined with the same weight.
inline LossValue total_loss(const LossValue& mse, const LossValue& align, const AlignConfig& cfg) {
  LossValue out;
  out.value = mse.value + cfg.lambda * align.value;
  out.grads = mse.grads;
  if (cfg.lambda == 0.0) return out;
  for (const auto& [name, g] : align.grads) {
    auto it = out.grads.find(name);
    if (it == out.grads.end())
      out.grads.emplace(name, cfg.lambda * g);
    else
      it->second += cfg.lambda * g;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check.

struct GradCheckReport {
  std::map<std::string, double> per_tensor;  // max relative error per checked tensor
  double max_relative_error = 0.0;
};

struct GradCheckOptions {
  double epsilon = 1e-5;
  // Coordinates sampled per tensor; tensors with fewer are checked in full.
  std::size_t coords_per_tensor = 200;
  std::uint64_t seed = 0;
};

// Compares central differences of `loss_fn` against the analytic gradients it
// returns, for each named tensor. Relative error uses the denominator
// max(|analytic|, |numeric|, 1e-8). Tensors missing from `tensors` (frozen
// ones) are not reported.
inline GradCheckReport grad_check(const std::function<LossValue()>& loss_fn,
                                  const std::vector<std::pair<std::string, Matrix*>>& tensors,
                                  const GradCheckOptions& opts = {}) {
  if (!(opts.epsilon >= 1e-8 && opts.epsilon <= 1e-4))
    throw PreconditionError("grad_check: epsilon outside [1e-8, 1e-4]");
  const LossValue base = loss_fn();
  if (!std::isfinite(base.value)) throw ValidationError("grad_check: non-finite loss");
  GradCheckReport report;
  Rng rng = Rng(opts.seed).fork("grad-check");
  for (const auto& [name, tensor] : tensors) {
    auto it = base.grads.find(name);
    if (it == base.grads.end()) throw ValidationError("grad_check: no analytic gradient for '" + name + "'");
    const Matrix& analytic = it->second;
    require_same_shape(analytic, *tensor, "grad_check " + name);

    const auto size = static_cast<std::size_t>(tensor->size());
    std::vector<std::size_t> coords;
    if (size <= opts.coords_per_tensor) {
      for (std::size_t i = 0; i < size; ++i) coords.push_back(i);
    } else {
      auto perm = permutation(size, rng);
      coords.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(opts.coords_per_tensor));
      std::sort(coords.begin(), coords.end());
    }
    double worst = 0.0;
    for (auto c : coords) {
      double& x = tensor->data()[c];
      const double saved = x;
      x = saved + opts.epsilon;
      const double up = loss_fn().value;
      x = saved - opts.epsilon;
      const double down = loss_fn().value;
      x = saved;
      if (!std::isfinite(up) || !std::isfinite(down))
        throw ValidationError("grad_check: non-finite loss while perturbing '" + name + "'");
      const double numeric = (up - down) / (2.0 * opts.epsilon);
      const double a = analytic.data()[c];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
    report.per_tensor[name] = worst;
    report.max_relative_error = std::max(report.max_relative_error, worst);
  }
  return report;
}

}  // namespace vem
