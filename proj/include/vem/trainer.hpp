#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "vem/checkpoint.hpp"
#include "vem/config.hpp"
#include "vem/dataset.hpp"
#include "vem/eval.hpp"
#include "vem/objective.hpp"
#include "vem/optim.hpp"

namespace vem {

struct EpochLog {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_m = 0.0;
  double seconds = 0.0;
};

struct TrainRecord {
  std::vector<EpochLog> epochs;
  std::size_t best_epoch = 0;  // index into epochs
};

struct TrainHooks {
  // Called after every epoch with the live parameters.
  std::function<void(const EpochLog&, const ModelParams&)> on_epoch;
};

struct TrainResult {
  Checkpoint checkpoint;
  TrainRecord record;
};

inline EvalReport evaluate_model(const ModelParams& params, const Dataset& ds,
                                 std::span<const std::size_t> rows, double nc_epsilon = kDefaultNcEpsilon) {
  const Matrix images = gather_rows(ds.image_features, rows);
  const Matrix targets = gather_rows(ds.voxel_targets, rows);
  return evaluate_predictions(params.predict(images), targets, ds.noise_ceiling, ds.roi_labels,
                              ds.manifest.roi_names, nc_epsilon);
}

namespace detail {

// Shared epoch loop: seeded shuffle per epoch, last partial batch kept,
// best-validation checkpoint retained.
inline TrainResult run_epochs(ModelParams params, const TrainConfig& cfg, const FreezeMask& mask,
                              const Dataset& ds, const Split& split, const TrainHooks& hooks) {
  mask.check_covers(params);
  const std::vector<std::string> trainable = mask.trainable();
  const std::set<std::string> wanted(trainable.begin(), trainable.end());
  AlignConfig align{cfg.tau, cfg.stage == 1 ? 0.0 : cfg.lambda, cfg.symmetric_alignment};
  AdamConfig adam{cfg.learning_rate, cfg.weight_decay};
  AdamState state;

  Rng root(cfg.seed);
  Rng shuffle = root.fork("shuffle");
  Rng dropout = root.fork("dropout");
  params.head.dropout_rate = cfg.dropout_rate;

  TrainResult result;
  bool have_best = false;
  const auto n_train = split.train.size();
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto order = permutation(n_train, shuffle);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    std::vector<std::size_t> rows;
    for (std::size_t start = 0; start < n_train; start += batch) {
      const std::size_t end = std::min(n_train, start + batch);
      rows.clear();
      for (std::size_t i = start; i < end; ++i) rows.push_back(split.train[order[i]]);
      Batch b{gather_rows(ds.image_features, rows), gather_rows(ds.text_embeddings, rows),
              gather_rows(ds.voxel_targets, rows)};
      auto obj = evaluate_objective(params, b, align, Mode::train, dropout, wanted);
      if (!std::isfinite(obj.total))
        throw DivergenceError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch starting " +
                              std::to_string(start) + " (mse=" + std::to_string(obj.mse) +
                              ", alignment=" + std::to_string(obj.alignment) + ")");
      optimizer_step(params, apply_freeze(mask, std::move(obj.grads)), mask, state, adam);
      loss_sum += obj.total * static_cast<double>(rows.size());
      seen += rows.size();
    }
    EpochLog log;
    log.epoch = epoch;
    log.train_loss = loss_sum / static_cast<double>(seen);
    log.val_m = evaluate_model(params, ds, split.val).overall_m;
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.record.epochs.push_back(log);
    if (!have_best || log.val_m > result.checkpoint.best_validation_score) {
      have_best = true;
      result.record.best_epoch = result.record.epochs.size() - 1;
      result.checkpoint.stage = cfg.stage;
      result.checkpoint.epoch = epoch;
      result.checkpoint.params = params;
      result.checkpoint.config = cfg;
      result.checkpoint.best_validation_score = log.val_m;
      result.checkpoint.rng_state = shuffle.state();
    }
    if (hooks.on_epoch) hooks.on_epoch(log, params);
  }
  return result;
}

inline void require_split(const Split& split) {
  if (split.train.empty()) throw PreconditionError("training split is empty");
  if (split.val.size() < 2) throw PreconditionError("validation split needs at least 2 samples");
}

}  // namespace detail

// Fresh model for a dataset: surrogate extractor, PCA output stage fitted on
// the training rows, zero projection, W per make_alignment.
inline ModelParams init_model(const TrainConfig& cfg, const Dataset& ds, const Split& split) {
  Rng init = Rng(cfg.seed).fork("init");
  ModelParams p;
  p.extractor = make_extractor(static_cast<Eigen::Index>(ds.manifest.d_img),
                               static_cast<std::size_t>(cfg.extractor_depth), cfg.extractor_taps,
                               cfg.extractor_init_scale, init);
  const Matrix train_targets = gather_rows(ds.voxel_targets, split.train);
  p.head.output_stage = init_voxel_head_pca(train_targets, cfg.pca_k);
  p.head.proj_weight = Matrix::Zero(cfg.pca_k, p.extractor.feature_dim());
  p.head.proj_bias = Matrix::Zero(1, cfg.pca_k);
  p.head.dropout_rate = cfg.dropout_rate;
  p.align = make_alignment(static_cast<Eigen::Index>(ds.manifest.d_text), p.extractor.feature_dim(), init);
  p.validate();
  return p;
}

// Stage 1: frozen extractor, MSE only, the voxel-head projection learns.
inline TrainResult train_stage1(const TrainConfig& cfg, const Dataset& ds, const Split& split,
                                const TrainHooks& hooks = {}) {
  cfg.validate();
  if (cfg.stage != 1) throw PreconditionError("train_stage1: config is for stage " + std::to_string(cfg.stage));
  detail::require_split(split);
  ModelParams params = init_model(cfg, ds, split);
  const FreezeMask mask = stage1_mask(params);
  return detail::run_epochs(std::move(params), cfg, mask, ds, split, hooks);
}

// Stage 2: resume from the stage-1 best checkpoint; the last N extractor
// blocks and W learn under MSE + lambda * alignment.
inline TrainResult train_stage2(const TrainConfig& cfg, const Checkpoint& stage1, const Dataset& ds,
                                const Split& split, const TrainHooks& hooks = {}) {
  cfg.validate();
  if (cfg.stage != 2) throw ValidationError("train_stage2: config is for stage " + std::to_string(cfg.stage));
  if (stage1.stage != 1) throw ValidationError("train_stage2: checkpoint is from stage " + std::to_string(stage1.stage));
  detail::require_split(split);
  if (stage1.params.extractor.input_dim != static_cast<Eigen::Index>(ds.manifest.d_img) ||
      stage1.params.head.output_stage.dim() != static_cast<Eigen::Index>(ds.manifest.n_vertices) ||
      stage1.params.align.w.rows() != static_cast<Eigen::Index>(ds.manifest.d_text))
    throw ValidationError("train_stage2: checkpoint dimensions do not match the dataset");
  const FreezeMask mask = stage2_mask(stage1.params, static_cast<std::size_t>(cfg.unfreeze_last_n_blocks));
  return detail::run_epochs(stage1.params, cfg, mask, ds, split, hooks);
}

// ---------------------------------------------------------------------------
// Lambda ablation.

struct AblationRow {
  double lambda = 0.0;
  std::uint64_t seed = 0;
  double m = 0.0;
};

struct AblationReport {
  std::vector<AblationRow> rows;
  std::vector<std::pair<double, double>> medians;  // (lambda, median m), input order
  std::vector<double> ordering;                    // lambdas by descending median m

  double median_for(double lambda) const {
    for (const auto& [l, m] : medians)
      if (l == lambda) return m;
    throw PreconditionError("ablation: lambda not in report");
  }
};

inline AblationReport run_lambda_ablation(const TrainConfig& base, const Checkpoint& stage1, const Dataset& ds,
                                          const Split& split, std::span<const double> lambdas,
                                          std::span<const std::uint64_t> seeds) {
  if (lambdas.empty() || seeds.empty()) throw PreconditionError("ablation: lambdas and seeds must be non-empty");
  AblationReport rep;
  for (double lambda : lambdas) {
    std::vector<double> scores;
    for (auto seed : seeds) {
      TrainConfig cfg = base;
      cfg.stage = 2;
      cfg.lambda = lambda;
      cfg.seed = seed;
      const double m = train_stage2(cfg, stage1, ds, split).checkpoint.best_validation_score;
      rep.rows.push_back({lambda, seed, m});
      scores.push_back(m);
    }
    rep.medians.emplace_back(lambda, median(scores));
  }
  auto sorted = rep.medians;
  std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  for (const auto& [l, _] : sorted) rep.ordering.push_back(l);
  return rep;
}

// lambda,seed,m rows followed by "#median,<lambda>,<m>" rows.
inline std::string ablation_csv(const AblationReport& rep) {
  std::string out = "lambda,seed,m\n";
  for (const auto& r : rep.rows)
    out += detail::fmt_real(r.lambda) + "," + std::to_string(r.seed) + "," + detail::fmt_real(r.m) + "\n";
  for (const auto& [l, m] : rep.medians) out += "#median," + detail::fmt_real(l) + "," + detail::fmt_real(m) + "\n";
  return out;
}

}  // namespace vem
