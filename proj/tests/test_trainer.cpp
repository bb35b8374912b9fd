#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "oracles.hpp"
#include "vem/trainer.hpp"

using vem::Matrix;

namespace {

struct Benchmark {
  vem::SyntheticDraw draw;
  vem::Split split;
};

const Benchmark& benchmark() {
  static const Benchmark b = [] {
    vem::SyntheticSpec spec;  // n=2000, r=8, noise_std_voxel=0.5
    auto draw = vem::generate_synthetic(spec);
    auto split = vem::split_dataset(draw.dataset, {});
    return Benchmark{std::move(draw), std::move(split)};
  }();
  return b;
}

const vem::TrainResult& stage1_result() {
  static const vem::TrainResult r = vem::train_stage1(vem::preset("desk", 1), benchmark().draw.dataset, benchmark().split);
  return r;
}

vem::ModelParams scalar_model() {
  vem::ModelParams p;
  p.extractor.input_dim = 1;
  p.extractor.blocks.push_back({Matrix::Constant(1, 1, 1.0), Matrix::Zero(1, 1), vem::Activation::identity});
  p.extractor.taps = {0};
  p.head.proj_weight = Matrix::Zero(1, 1);
  p.head.proj_bias = Matrix::Zero(1, 1);
  p.head.output_stage.mean = vem::Vector::Zero(1);
  p.head.output_stage.components = Matrix::Identity(1, 1);
  p.head.output_stage.variances = vem::Vector::Ones(1);
  p.align.w = Matrix::Identity(1, 1);
  return p;
}

bool same_tensors(const vem::ModelParams& a, const vem::ModelParams& b) {
  const auto x = a.tensors(), y = b.tensors();
  if (x.size() != y.size()) return false;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (!vem::bitwise_equal(*x[i].second, *y[i].second)) return false;
  return a.head.output_stage == b.head.output_stage;
}

}  // namespace

TEST(Optimizer, ZeroLearningRateLeavesParameters) {
  auto p = scalar_model();
  const auto before = p;
  const auto mask = vem::FreezeMask::all(p, false);
  vem::AdamState state;
  vem::GradMap g{{vem::ModelParams::kProjWeight, Matrix::Constant(1, 1, 3.0)}};
  vem::optimizer_step(p, g, mask, state, {0.0, 0.5});
  EXPECT_TRUE(same_tensors(p, before));
}

TEST(Optimizer, ZeroGradientWithoutDecayLeavesParameters) {
  auto p = scalar_model();
  p.head.proj_weight(0, 0) = 0.7;
  const auto before = p;
  const auto mask = vem::FreezeMask::all(p, false);
  vem::AdamState state;
  vem::GradMap g{{vem::ModelParams::kProjWeight, Matrix::Zero(1, 1)}};
  vem::optimizer_step(p, g, mask, state, {0.1, 0.0});
  EXPECT_TRUE(same_tensors(p, before));
}

TEST(Optimizer, FirstStepMovesByLearningRate) {
  auto p = scalar_model();
  p.head.proj_weight(0, 0) = 1.0;
  const auto mask = vem::FreezeMask::all(p, false);
  vem::AdamState state;
  vem::GradMap g{{vem::ModelParams::kProjWeight, Matrix::Constant(1, 1, 1.0)}};
  vem::optimizer_step(p, g, mask, state, {0.1, 0.0});
  // m_hat = v_hat = 1: theta = 1 - 0.1 * 1 / (1 + 1e-8).
  EXPECT_NEAR(p.head.proj_weight(0, 0), 1.0 - 0.1 / (1.0 + 1e-8), 1e-15);
  EXPECT_NEAR(p.head.proj_weight(0, 0), 0.9, 1e-8);
}

TEST(Optimizer, DecayOnlyOnWeightsAndNeverOnFrozen) {
  auto p = scalar_model();
  p.head.proj_weight(0, 0) = 1.0;
  p.head.proj_bias(0, 0) = 1.0;
  auto mask = vem::FreezeMask::all(p, false);
  mask.frozen[vem::ModelParams::kAlign] = true;
  vem::AdamState state;
  vem::GradMap g{{vem::ModelParams::kProjWeight, Matrix::Zero(1, 1)},
                 {vem::ModelParams::kProjBias, Matrix::Zero(1, 1)},
                 {vem::ModelParams::kAlign, Matrix::Zero(1, 1)}};
  vem::optimizer_step(p, g, mask, state, {0.1, 0.5});
  EXPECT_DOUBLE_EQ(p.head.proj_weight(0, 0), 1.0 - 0.1 * 0.5);
  EXPECT_EQ(p.head.proj_bias(0, 0), 1.0);
  EXPECT_EQ(p.align.w(0, 0), 1.0);
}

TEST(Optimizer, NonFiniteGradientAborts) {
  auto p = scalar_model();
  vem::AdamState state;
  vem::GradMap g{{vem::ModelParams::kProjWeight, Matrix::Constant(1, 1, std::nan(""))}};
  EXPECT_THROW(vem::optimizer_step(p, g, vem::FreezeMask::all(p, false), state, {}), vem::DivergenceError);
}

TEST(Stage1, RecoversSyntheticSignal) {
  const auto& r = stage1_result();
  EXPECT_EQ(r.record.epochs.size(), 40u);
  EXPECT_GE(r.checkpoint.best_validation_score, 0.75);
  EXPECT_EQ(r.checkpoint.stage, 1);
}

TEST(Stage1, BestCheckpointIsMaxValidationEpoch) {
  const auto& r = stage1_result();
  double best = -1e300;
  for (const auto& e : r.record.epochs) best = std::max(best, e.val_m);
  EXPECT_EQ(r.checkpoint.best_validation_score, best);
  EXPECT_EQ(r.record.epochs[r.record.best_epoch].val_m, best);
  EXPECT_EQ(r.checkpoint.epoch, r.record.epochs[r.record.best_epoch].epoch);
  // The stored parameters reproduce the recorded score.
  const auto rep = vem::evaluate_model(r.checkpoint.params, benchmark().draw.dataset, benchmark().split.val);
  EXPECT_EQ(rep.overall_m, best);
}

TEST(Stage1, ZeroEpochsRejected) {
  auto cfg = vem::preset("desk", 1);
  cfg.epochs = 0;
  EXPECT_THROW(vem::train_stage1(cfg, benchmark().draw.dataset, benchmark().split), vem::PreconditionError);
}

TEST(Stage1, EmptySplitRejected) {
  vem::Split empty = benchmark().split;
  empty.train.clear();
  EXPECT_THROW(vem::train_stage1(vem::preset("desk", 1), benchmark().draw.dataset, empty), vem::PreconditionError);
}

TEST(Stage1, DeterministicAndFreezesExtractor) {
  auto cfg = vem::preset("desk", 1);
  cfg.epochs = 4;
  const auto& ds = benchmark().draw.dataset;
  const auto& split = benchmark().split;
  const auto initial = vem::init_model(cfg, ds, split);
  int epochs_seen = 0;
  vem::TrainHooks hooks{[&](const vem::EpochLog&, const vem::ModelParams& p) {
    ++epochs_seen;
    for (std::size_t i = 0; i < p.extractor.blocks.size(); ++i) {
      EXPECT_TRUE(vem::bitwise_equal(p.extractor.blocks[i].weight, initial.extractor.blocks[i].weight));
      EXPECT_TRUE(vem::bitwise_equal(p.extractor.blocks[i].bias, initial.extractor.blocks[i].bias));
    }
    EXPECT_TRUE(p.head.output_stage == initial.head.output_stage);
    EXPECT_TRUE(vem::bitwise_equal(p.align.w, initial.align.w));
  }};
  const auto a = vem::train_stage1(cfg, ds, split, hooks);
  const auto b = vem::train_stage1(cfg, ds, split);
  EXPECT_EQ(epochs_seen, 4);
  EXPECT_TRUE(same_tensors(a.checkpoint.params, b.checkpoint.params));
  EXPECT_EQ(a.checkpoint.rng_state, b.checkpoint.rng_state);
  for (const auto& e : a.record.epochs) EXPECT_TRUE(std::isfinite(e.train_loss));
}

TEST(Stage2, RejectsStageMismatch) {
  const auto& ds = benchmark().draw.dataset;
  EXPECT_THROW(vem::train_stage2(vem::preset("desk", 1), stage1_result().checkpoint, ds, benchmark().split),
               vem::ValidationError);
  auto not_stage1 = stage1_result().checkpoint;
  not_stage1.stage = 2;
  EXPECT_THROW(vem::train_stage2(vem::preset("desk", 2), not_stage1, ds, benchmark().split), vem::ValidationError);
}

TEST(Stage2, FreezesHeadAndEarlyBlocks) {
  const auto& s1 = stage1_result().checkpoint;
  auto cfg = vem::preset("desk", 2);
  cfg.epochs = 2;
  cfg.lambda = 0.1;
  const auto mask = vem::stage2_mask(s1.params, static_cast<std::size_t>(cfg.unfreeze_last_n_blocks));
  vem::TrainHooks hooks{[&](const vem::EpochLog&, const vem::ModelParams& p) {
    const auto before = s1.params.tensors();
    const auto now = p.tensors();
    for (std::size_t i = 0; i < now.size(); ++i) {
      const bool changed = !vem::bitwise_equal(*before[i].second, *now[i].second);
      if (mask.is_frozen(now[i].first)) EXPECT_FALSE(changed) << now[i].first;
      else EXPECT_TRUE(changed) << now[i].first;
    }
    EXPECT_TRUE(p.head.output_stage == s1.params.head.output_stage);
  }};
  vem::train_stage2(cfg, s1, benchmark().draw.dataset, benchmark().split, hooks);
}

TEST(Stage2, ZeroLambdaStaysCloseToStageOne) {
  const auto& s1 = stage1_result().checkpoint;
  for (std::uint64_t seed : {1, 2, 3}) {
    auto cfg = vem::preset("desk", 2);
    cfg.lambda = 0.0;
    cfg.seed = seed;
    const auto r = vem::train_stage2(cfg, s1, benchmark().draw.dataset, benchmark().split);
    EXPECT_LT(std::abs(r.checkpoint.best_validation_score - s1.best_validation_score), 0.01) << "seed " << seed;
    EXPECT_EQ(r.checkpoint.stage, 2);
  }
}

TEST(Ablation, SingleRunReportAndCsv) {
  auto cfg = vem::preset("desk", 2);
  cfg.epochs = 1;
  const double lambdas[] = {1e-3};
  const std::uint64_t seeds[] = {7};
  const auto rep = vem::run_lambda_ablation(cfg, stage1_result().checkpoint, benchmark().draw.dataset,
                                            benchmark().split, lambdas, seeds);
  ASSERT_EQ(rep.rows.size(), 1u);
  EXPECT_EQ(rep.rows[0].lambda, 1e-3);
  EXPECT_EQ(rep.rows[0].seed, 7u);
  EXPECT_EQ(rep.median_for(1e-3), rep.rows[0].m);
  const auto csv = vem::ablation_csv(rep);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}

TEST(Ablation, MediansRecomputableFromRows) {
  auto cfg = vem::preset("desk", 2);
  cfg.epochs = 1;
  const double lambdas[] = {1.0, 1e-3};
  const std::uint64_t seeds[] = {1, 2, 3};
  const auto rep = vem::run_lambda_ablation(cfg, stage1_result().checkpoint, benchmark().draw.dataset,
                                            benchmark().split, lambdas, seeds);
  ASSERT_EQ(rep.rows.size(), 6u);
  for (double l : lambdas) {
    std::vector<double> ms;
    for (const auto& r : rep.rows)
      if (r.lambda == l) ms.push_back(r.m);
    EXPECT_EQ(rep.median_for(l), oracle::brute_median(ms));
  }
  EXPECT_EQ(rep.ordering.size(), 2u);
  EXPECT_THROW(vem::run_lambda_ablation(cfg, stage1_result().checkpoint, benchmark().draw.dataset, benchmark().split,
                                        std::span<const double>{}, seeds),
               vem::PreconditionError);
}
