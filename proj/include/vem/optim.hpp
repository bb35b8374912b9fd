#pragma once

#include <cmath>
#include <map>
#include <string>

#include "vem/model.hpp"

namespace vem {

struct AdamConfig {
  double learning_rate = 1e-3;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// First/second moment estimates per tensor plus the shared step counter.
struct AdamState {
  long step = 0;
  std::map<std::string, Matrix> m;
  std::map<std::string, Matrix> v;
};

// Decoupled decay only touches tensors named "*.weight".
inline bool decays(const std::string& name) {
  constexpr std::string_view suffix = ".weight";
  return name.size() >= suffix.size() &&
         name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// One Adam step with decoupled weight decay:
//   theta <- theta - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * theta
// Frozen tensors are skipped entirely (no moment update, no decay).
inline void optimizer_step(ModelParams& params, const GradMap& grads, const FreezeMask& mask,
                           AdamState& state, const AdamConfig& cfg) {
  for (const auto& [name, g] : grads) {
    if (!g.allFinite()) throw DivergenceError("non-finite gradient for '" + name + "'");
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (const auto& [name, g] : grads) {
    if (mask.is_frozen(name)) continue;
    Matrix* theta = params.find(name);
    if (!theta) throw ValidationError("optimizer: unknown tensor '" + name + "'");
    require_same_shape(*theta, g, "optimizer " + name);
    auto [mit, m_new] = state.m.try_emplace(name, Matrix::Zero(g.rows(), g.cols()));
    auto [vit, v_new] = state.v.try_emplace(name, Matrix::Zero(g.rows(), g.cols()));
    Matrix& m = mit->second;
    Matrix& v = vit->second;
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    const double wd = decays(name) ? cfg.weight_decay : 0.0;
    for (Eigen::Index i = 0; i < theta->size(); ++i) {
      const double m_hat = m.data()[i] / bc1;
      const double v_hat = v.data()[i] / bc2;
      double& x = theta->data()[i];
      x = x - cfg.learning_rate * (m_hat / (std::sqrt(v_hat) + cfg.epsilon)) - cfg.learning_rate * wd * x;
    }
  }
}

}  // namespace vem
