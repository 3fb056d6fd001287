// iast: command-line front end for the self-training lab.
//
// Exit codes: 0 success, 2 usage or configuration error, 3 runtime failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "iast/iast.hpp"

namespace fs = std::filesystem;
using namespace iast;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;

// Writes the config snapshot and a manifest marked "running". The manifest
// is rewritten with the artifact list once the command finishes (or fails).
struct RunDir {
  fs::path dir;
  ExperimentConfig cfg;
  RunManifest manifest;

  RunDir(fs::path d, const ExperimentConfig& c) : dir(std::move(d)), cfg(c) {
    fs::create_directories(dir);
    config_to_flat(cfg).save(dir / "config.txt");
    manifest.config_hash = config_hash(cfg);
    manifest.seed = cfg.seed;
    manifest.started_at = utc_timestamp();
    save_manifest(dir, manifest);
  }

  void finish(const std::string& status) {
    manifest.status = status;
    manifest.finished_at = utc_timestamp();
    manifest.artifacts = list_artifacts(dir);
    save_manifest(dir, manifest);
  }
};

ExperimentConfig load_config(const std::string& path) { return config_from_flat(FlatConfig::load(path)); }

std::vector<double> parse_values(const std::string& text) {
  FlatConfig f;
  f.set("values", text);
  auto v = f.get_double_list("values", {});
  if (v.empty()) throw ConfigError("--values is empty");
  return v;
}

UdaBenchmark benchmark_for(const ExperimentConfig& cfg, const std::string& data_dir) {
  if (data_dir.empty()) return make_benchmark(cfg);
  auto b = load_benchmark(data_dir);
  if (!(b.source.spec == cfg.data.spec))
    throw ConfigError(data_dir + ": dataset scene spec differs from the config's data.* keys");
  return b;
}

int cmd_gen_data(const std::string& config_path, const std::string& out) {
  // No manifest here: the directory is a pure function of the config.
  const auto cfg = load_config(config_path);
  fs::create_directories(out);
  config_to_flat(cfg).save(fs::path(out) / "config.txt");
  save_benchmark(out, make_benchmark(cfg));
  std::cout << "wrote benchmark to " << out << "\n";
  return 0;
}

int cmd_run(const std::string& config_path, const std::string& out, std::optional<std::size_t> rounds,
            bool carry, const std::string& data_dir) {
  auto cfg = load_config(config_path);
  if (rounds) cfg.rounds = *rounds;
  if (carry) cfg.carry_thresholds = true;
  cfg.validate();
  const auto bench = benchmark_for(cfg, data_dir);
  RunDir run(out, cfg);
  try {
    const auto res = run_experiment(cfg, bench, fs::path(out));
    run.finish("ok");
    std::cout << iou_table(res, cfg.data.spec.num_classes);
    std::printf("warm-up mIoU %.4f -> final mIoU %.4f\n", res.warmup_target_miou, res.final_target_miou());
  } catch (...) {
    run.finish("failed");
    throw;
  }
  return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& axis_s, const std::string& values_s,
              const std::string& out, bool keep_runs) {
  const auto cfg = load_config(config_path);
  const auto axis = parse_axis(axis_s);
  const auto values = parse_values(values_s);
  for (double v : values) with_axis(cfg, axis, v);  // reject before any run
  RunDir run(out, cfg);
  try {
    const auto res = run_sweep(cfg, axis, values, keep_runs ? std::optional<fs::path>(fs::path(out) / "runs")
                                                            : std::nullopt);
    write_sweep_report(out, res);
    run.finish("ok");
    std::cout << sweep_csv(res);
  } catch (...) {
    run.finish("failed");
    throw;
  }
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data, const std::string& gt, const std::string& out,
             const std::string& probs_out) {
  const auto model = load_checkpoint(checkpoint);
  const auto ds = load_dataset(data);
  MiouResult r;
  if (!gt.empty())
    r = evaluate(model, ds, load_hidden_masks(gt));
  else if (ds.labeled())
    r = evaluate(model, ds);
  else if (probs_out.empty())
    throw ConfigError("dataset " + data + " is unlabeled; pass --gt");
  if (!probs_out.empty()) {
    fs::create_directories(probs_out);
    for (std::size_t i = 0; i < ds.size(); ++i) save_array(fs::path(probs_out) / indexed_name("prob", i), model.predict(ds.images[i]));
  }
  if (!gt.empty() || ds.labeled()) {
    if (!out.empty()) write_iou_csv(out, r);
    std::printf("mIoU %.4f\n", r.miou);
  }
  return 0;
}

int cmd_pseudo_label(const std::string& probs_dir, const std::string& out, const std::string& config_path,
                     const std::string& mode, std::optional<double> alpha, std::optional<double> beta,
                     std::optional<double> gamma, std::optional<double> threshold, const std::string& gt) {
  SelectorConfig sc;
  if (!config_path.empty()) sc = load_config(config_path).selector;
  if (!mode.empty()) sc.mode = parse_mode(mode);
  if (alpha) sc.alpha = *alpha;
  if (beta) sc.beta = *beta;
  if (gamma) sc.gamma = *gamma;
  if (threshold) sc.constant_threshold = *threshold;
  sc.validate();

  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(probs_dir))
    if (e.is_regular_file() && e.path().extension() == ".iast") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ConfigError(probs_dir + " contains no .iast probability maps");
  std::vector<ProbMap<float>> probs;
  for (const auto& f : files) probs.push_back(load_array<float>(f));
  const std::size_t C = probs.front().dim(0);
  const auto res = generate_pseudo_labels<float>(std::span<const ProbMap<float>>(probs), sc, C);
  FlatConfig extra;
  if (!gt.empty()) {
    const auto stats = pseudo_label_stats(res.batch, load_hidden_masks(gt), C);
    extra.set("p_miou", fmt_opt(stats.p_miou));
  }
  save_pseudo_labels(out, res, sc, extra);
  std::printf("labeled proportion %.4f over %zu maps\n", res.batch.proportion(), probs.size());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Instance-adaptive self-training lab"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);

  std::string config, out, data, axis, values, checkpoint, gt, probs, probs_out, mode;
  std::optional<std::size_t> rounds;
  std::optional<double> alpha, beta, gamma, threshold;
  bool carry = false, keep_runs = false;

  auto* gen = app.add_subcommand("gen-data", "Generate source/target datasets and hidden ground truth");
  gen->add_option("--config", config, "Config file")->required();
  gen->add_option("--out", out, "Output directory")->required();

  auto* run = app.add_subcommand("run", "Warm-up plus self-training rounds");
  run->add_option("--config", config, "Config file")->required();
  run->add_option("--out", out, "Run directory")->required();
  run->add_option("--rounds", rounds, "Override train.rounds")->check(CLI::PositiveNumber);
  run->add_flag("--carry-thresholds", carry, "Carry EMA thresholds across rounds");
  run->add_option("--data", data, "Benchmark directory written by gen-data (default: generate in memory)");

  auto* sweep = app.add_subcommand("sweep", "One run per value of a hyperparameter");
  sweep->add_option("--config", config, "Config file")->required();
  sweep->add_option("--axis", axis, "alpha | beta | gamma | lambda_i | lambda_c")->required();
  sweep->add_option("--values", values, "Comma-separated values")->required();
  sweep->add_option("--out", out, "Report directory")->required();
  sweep->add_flag("--keep-runs", keep_runs, "Also write every run's artifacts");

  auto* ev = app.add_subcommand("eval", "Score a checkpoint on a dataset");
  ev->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
  ev->add_option("--data", data, "Dataset directory")->required();
  ev->add_option("--gt", gt, "Hidden ground-truth directory (for unlabeled data)");
  ev->add_option("--out", out, "Per-class IoU CSV");
  ev->add_option("--save-probs", probs_out, "Also write probability maps here");

  auto* pl = app.add_subcommand("pseudo-label", "Run the selector on saved probability maps");
  pl->add_option("--probs", probs, "Directory of [C,H,W] float maps")->required();
  pl->add_option("--out", out, "Output directory")->required();
  pl->add_option("--config", config, "Take selector.* from this config");
  pl->add_option("--mode", mode, "constant | class_balanced | instance_adaptive");
  pl->add_option("--alpha", alpha);
  pl->add_option("--beta", beta);
  pl->add_option("--gamma", gamma);
  pl->add_option("--threshold", threshold, "Constant-mode threshold");
  pl->add_option("--gt", gt, "Ground truth for P-mIoU");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Error& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*gen) return cmd_gen_data(config, out);
    if (*run) return cmd_run(config, out, rounds, carry, data);
    if (*sweep) return cmd_sweep(config, axis, values, out, keep_runs);
    if (*ev) return cmd_eval(checkpoint, data, gt, out, probs_out);
    if (*pl) return cmd_pseudo_label(probs, out, config, mode, alpha, beta, gamma, threshold, gt);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const TrainingAborted& e) {
    std::cerr << "training aborted: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
