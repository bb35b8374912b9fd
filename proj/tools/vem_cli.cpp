// vem: command-line driver for the voxel encoding pipeline.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vem/vem.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Flags shared by every command that builds a TrainConfig.
struct ConfigFlags {
  std::string preset = "desk";
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;

  void attach(CLI::App& cmd) {
    cmd.add_option("--preset", preset, "Named preset: desk or paper")->check(CLI::IsMember({"desk", "paper"}));
    cmd.add_option("--config", config_path, "Config file (key = value lines)");
    cmd.add_option("--set", overrides, "Config override key=value (repeatable)");
    cmd.add_option("--seed", seed, "Training seed");
  }

  // preset < config file < --set < --seed; the stage is fixed by the caller.
  vem::TrainConfig build(int stage) const {
    vem::TrainConfig c = vem::preset(preset, stage);
    if (!config_path.empty()) c = vem::load_config(config_path, c);
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
      try {
        vem::set_config_value(c, vem::detail::trim(kv.substr(0, eq)), kv.substr(eq + 1));
      } catch (const vem::ValidationError& e) {
        throw UsageError(e.what());
      }
    }
    if (seed) c.seed = *seed;
    c.stage = stage;
    return c;
  }
};

template <typename T>
std::vector<T> parse_list(const std::string& text, const char* flag) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = vem::detail::trim(item);
    try {
      out.push_back(vem::detail::parse_number<T>(item));
    } catch (const std::exception&) {
      throw UsageError(std::string(flag) + ": bad entry '" + item + "'");
    }
  }
  if (out.empty()) throw UsageError(std::string(flag) + ": empty list");
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

void print_manifest(const vem::DatasetManifest& m) {
  std::cout << "n_samples=" << m.n_samples << " d_img=" << m.d_img << " d_text=" << m.d_text
            << " n_vertices=" << m.n_vertices << " value_width=" << m.value_width << " rois=" << m.roi_names.size()
            << "\n";
}

void require_compatible(const vem::ModelParams& p, const vem::Dataset& ds) {
  const auto d_img = static_cast<std::size_t>(p.extractor.input_dim);
  const auto n_vert = static_cast<std::size_t>(p.head.output_stage.dim());
  const auto d_text = static_cast<std::size_t>(p.align.w.rows());
  if (d_img != ds.manifest.d_img || n_vert != ds.manifest.n_vertices || d_text != ds.manifest.d_text)
    throw vem::ValidationError("dimension mismatch: checkpoint has d_img=" + std::to_string(d_img) +
                               " n_vertices=" + std::to_string(n_vert) + " d_text=" + std::to_string(d_text) +
                               ", dataset has d_img=" + std::to_string(ds.manifest.d_img) +
                               " n_vertices=" + std::to_string(ds.manifest.n_vertices) +
                               " d_text=" + std::to_string(ds.manifest.d_text));
}

const std::vector<std::size_t>& split_rows(const vem::Split& s, const std::string& name) {
  if (name == "train") return s.train;
  if (name == "test") return s.test;
  return s.val;
}

// ---------------------------------------------------------------------------

struct GenSynth {
  vem::SyntheticSpec spec;
  std::string out;

  void attach(CLI::App& app) {
    auto* cmd = app.add_subcommand("gen-synth", "Write a synthetic dataset plus its ground truth");
    cmd->add_option("--out", out, "Output directory")->required();
    cmd->add_option("--n-samples", spec.n_samples);
    cmd->add_option("--latent-dim", spec.latent_dim);
    cmd->add_option("--d-img", spec.d_img);
    cmd->add_option("--d-text", spec.d_text);
    cmd->add_option("--n-vertices", spec.n_vertices);
    cmd->add_option("--noise-std-img", spec.noise_std_img);
    cmd->add_option("--noise-std-text", spec.noise_std_text);
    cmd->add_option("--noise-std-voxel", spec.noise_std_voxel);
    cmd->add_option("--seed", spec.seed);
    cmd->callback([this] { run(); });
  }

  void run() {
    try {
      spec.validate();
    } catch (const vem::PreconditionError& e) {
      throw UsageError(e.what());
    }
    const auto draw = vem::generate_synthetic(spec);
    vem::write_dataset(draw.dataset, out);
    vem::write_ground_truth(draw.truth, fs::path(out) / "ground_truth");
    std::cout << "wrote " << out << ": ";
    print_manifest(draw.dataset.manifest);
  }
};

struct ValidateData {
  std::string dir;

  void attach(CLI::App& app) {
    auto* cmd = app.add_subcommand("validate-data", "Check an interchange dataset directory");
    cmd->add_option("dir", dir, "Dataset directory")->required();
    cmd->callback([this] { run(); });
  }

  void run() {
    const auto ds = vem::load_dataset(dir);
    std::cout << "ok: ";
    print_manifest(ds.manifest);
  }
};

struct Train {
  ConfigFlags flags;
  std::string data, out, from, log;
  int stage = 1;
  std::uint64_t split_seed = 0;

  void attach(CLI::App& app) {
    auto* cmd = app.add_subcommand("train", "Run stage 1 or stage 2 training");
    cmd->add_option("--data", data, "Dataset directory")->required();
    cmd->add_option("--out", out, "Checkpoint directory to write")->required();
    cmd->add_option("--stage", stage, "Training stage")->check(CLI::IsMember({1, 2}));
    cmd->add_option("--from", from, "Stage-1 checkpoint (required for stage 2)");
    cmd->add_option("--log", log, "Epoch log path (default <out>.log)");
    cmd->add_option("--split-seed", split_seed, "Seed for the train/val/test split");
    flags.attach(*cmd);
    cmd->callback([this] { run(); });
  }

  void run() {
    if (stage == 2 && from.empty()) throw UsageError("train --stage 2 requires --from <stage-1 checkpoint>");
    if (stage == 1 && !from.empty()) throw UsageError("--from only applies to --stage 2");
    const auto cfg = flags.build(stage);
    const auto ds = vem::load_dataset(data);
    vem::SplitSpec split_spec;
    split_spec.seed = split_seed;
    const auto split = vem::split_dataset(ds, split_spec);

    const fs::path log_path = log.empty() ? fs::path(out + ".log") : fs::path(log);
    std::string log_text;
    vem::TrainHooks hooks{[&](const vem::EpochLog& e, const vem::ModelParams&) {
      std::ostringstream line;
      line.precision(17);
      line << "epoch=" << e.epoch << " train_loss=" << e.train_loss << " val_m=" << e.val_m
           << " seconds=" << e.seconds << "\n";
      log_text += line.str();
      std::cout << "epoch " << e.epoch << "  loss " << fmt(e.train_loss) << "  val_m " << fmt(e.val_m) << "\n";
    }};

    vem::TrainResult result;
    if (stage == 1) {
      result = vem::train_stage1(cfg, ds, split, hooks);
    } else {
      const auto start = vem::load_checkpoint(from);
      require_compatible(start.params, ds);
      result = vem::train_stage2(cfg, start, ds, split, hooks);
    }
    vem::io::write_text(log_path, log_text);
    vem::save_checkpoint(result.checkpoint, out);
    std::cout << "final validation m " << fmt(result.checkpoint.best_validation_score) << " (best epoch "
              << result.checkpoint.epoch << ")\n";
  }
};

struct Eval {
  std::string checkpoint, data, split = "val", out, format = "csv";
  std::uint64_t split_seed = 0;

  void attach(CLI::App& app) {
    auto* cmd = app.add_subcommand("eval", "Score a checkpoint on a dataset split");
    cmd->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
    cmd->add_option("--data", data, "Dataset directory")->required();
    cmd->add_option("--split", split, "Split to score")->check(CLI::IsMember({"train", "val", "test"}));
    cmd->add_option("--out", out, "Report path");
    cmd->add_option("--format", format, "Report format")->check(CLI::IsMember({"csv", "json"}));
    cmd->add_option("--split-seed", split_seed, "Seed for the train/val/test split");
    cmd->callback([this] { run(); });
  }

  void run() {
    const auto ckpt = vem::load_checkpoint(checkpoint);
    const auto ds = vem::load_dataset(data);
    require_compatible(ckpt.params, ds);
    vem::SplitSpec split_spec;
    split_spec.seed = split_seed;
    const auto s = vem::split_dataset(ds, split_spec);
    const auto report = vem::evaluate_model(ckpt.params, ds, split_rows(s, split));
    if (!out.empty())
      vem::emit_report(report, out, format == "json" ? vem::ReportFormat::json : vem::ReportFormat::csv);
    std::cout << "overall_m " << vem::detail::fmt_real(report.overall_m) << "\n";
    std::cout << "n_excluded_vertices " << report.n_excluded_vertices << "\n";
    for (const auto& [roi, m] : report.per_roi_median) std::cout << "roi " << roi << " median " << fmt(m) << "\n";
  }
};

struct Ablate {
  ConfigFlags flags;
  std::string data, out, from, lambdas = "1,0.1,0.01,0.001", seeds = "1,2,3";
  std::uint64_t split_seed = 0;

  void attach(CLI::App& app) {
    auto* cmd = app.add_subcommand("ablate", "Sweep the alignment weight over seeds");
    cmd->add_option("--data", data, "Dataset directory")->required();
    cmd->add_option("--out", out, "CSV output path")->required();
    cmd->add_option("--from", from, "Shared stage-1 checkpoint (trained here if omitted)");
    cmd->add_option("--lambdas", lambdas, "Comma-separated lambda values");
    cmd->add_option("--seeds", seeds, "Comma-separated stage-2 seeds");
    cmd->add_option("--split-seed", split_seed, "Seed for the train/val/test split");
    flags.attach(*cmd);
    cmd->callback([this] { run(); });
  }

  void run() {
    const auto lambda_list = parse_list<double>(lambdas, "--lambdas");
    const auto seed_list = parse_list<std::uint64_t>(seeds, "--seeds");
    const auto cfg = flags.build(2);
    const auto ds = vem::load_dataset(data);
    vem::SplitSpec split_spec;
    split_spec.seed = split_seed;
    const auto split = vem::split_dataset(ds, split_spec);

    vem::Checkpoint stage1;
    if (!from.empty()) {
      stage1 = vem::load_checkpoint(from);
      require_compatible(stage1.params, ds);
    } else {
      auto c1 = vem::preset(flags.preset, 1);
      c1.seed = cfg.seed;
      stage1 = vem::train_stage1(c1, ds, split).checkpoint;
      std::cout << "stage-1 validation m " << fmt(stage1.best_validation_score) << "\n";
    }
    const auto rep = vem::run_lambda_ablation(cfg, stage1, ds, split, lambda_list, seed_list);
    vem::io::write_text(out, vem::ablation_csv(rep));
    for (const auto& [l, m] : rep.medians) std::cout << "lambda " << l << " median m " << fmt(m) << "\n";
    std::cout << "ordering";
    for (double l : rep.ordering) std::cout << " " << l;
    std::cout << "\n";
  }
};

struct GradCheck {
  ConfigFlags flags;
  std::string data;
  int batch = 8;
  double corrupt = 1.0;
  std::uint64_t split_seed = 0;
  bool passed = true;

  void attach(CLI::App& app) {
    auto* cmd = app.add_subcommand("grad-check", "Compare analytic gradients with finite differences");
    cmd->add_option("--data", data, "Dataset directory (default: generated synthetic benchmark)");
    cmd->add_option("--batch", batch, "Batch size")->check(CLI::PositiveNumber);
    cmd->add_option("--split-seed", split_seed, "Seed for the train/val/test split");
    // Test hook: scales every analytic gradient so the check must fail.
    cmd->add_option("--corrupt-gradient", corrupt)->group("");
    flags.attach(*cmd);
    cmd->callback([this] { run(); });
  }

  void check(const char* label, const vem::ModelParams& params, const vem::Batch& b, const vem::AlignConfig& align,
             const vem::FreezeMask& mask) {
    vem::GradCheckOptions opts;
    const auto rep = vem::model_grad_check(params, b, align, mask, opts, corrupt);
    std::vector<std::string> bad;
    for (const auto& [name, err] : rep.per_tensor) {
      std::printf("%s %-28s max_rel_err %.3e\n", label, name.c_str(), err);
      if (!(err < 1e-5)) bad.push_back(name);
    }
    if (!bad.empty()) {
      passed = false;
      std::cerr << label << ": gradient check failed for";
      for (const auto& n : bad) std::cerr << " " << n;
      std::cerr << "\n";
    }
  }

  void run() {
    const auto c1 = flags.build(1);
    const auto c2 = flags.build(2);
    const vem::Dataset ds = data.empty() ? vem::generate_synthetic({}).dataset : vem::load_dataset(data);
    vem::SplitSpec split_spec;
    split_spec.seed = split_seed;
    const auto split = vem::split_dataset(ds, split_spec);
    if (static_cast<std::size_t>(batch) > split.train.size())
      throw UsageError("--batch exceeds the training split size");
    const std::vector<std::size_t> rows(split.train.begin(), split.train.begin() + batch);
    const vem::Batch b{vem::gather_rows(ds.image_features, rows), vem::gather_rows(ds.text_embeddings, rows),
                       vem::gather_rows(ds.voxel_targets, rows)};

    // A fresh model has a zero projection; give it small random values so
    // gradients reach the extractor in stage 2.
    auto params = vem::init_model(c1, ds, split);
    vem::Rng rng = vem::Rng(c1.seed).fork("grad-check");
    params.head.proj_weight = vem::gaussian_matrix(params.head.proj_weight.rows(), params.head.proj_weight.cols(),
                                                   0.1 / std::sqrt(static_cast<double>(params.head.proj_weight.cols())),
                                                   rng);
    params.head.proj_bias = vem::gaussian_matrix(1, params.head.proj_bias.cols(), 0.1, rng);

    check("stage1", params, b, {c1.tau, 0.0, c1.symmetric_alignment}, vem::stage1_mask(params));
    check("stage2", params, b, {c2.tau, c2.lambda, c2.symmetric_alignment},
          vem::stage2_mask(params, static_cast<std::size_t>(c2.unfreeze_last_n_blocks)));
    std::cout << (passed ? "gradient check passed" : "gradient check FAILED") << "\n";
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vem: two-stage voxel encoding model"};
  app.require_subcommand(1);
  GenSynth gen;
  ValidateData validate;
  Train train;
  Eval eval;
  Ablate ablate;
  GradCheck grad;
  gen.attach(app);
  validate.attach(app);
  train.attach(app);
  eval.attach(app);
  ablate.attach(app);
  grad.attach(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return grad.passed ? kOk : kFailure;
}
