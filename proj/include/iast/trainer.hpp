#pragma once

// Three-phase self-training: warm-up on the labelled source, then rounds of
// (pseudo-label generation with the frozen generator G, self-training of M
// on target images), copying M into G after every round.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "iast/error.hpp"
#include "iast/losses.hpp"
#include "iast/metrics.hpp"
#include "iast/parallel.hpp"
#include "iast/random.hpp"
#include "iast/seg_model.hpp"
#include "iast/selector.hpp"
#include "iast/synth_data.hpp"

namespace iast {

enum class WarmupMode { SourceOnly, Adversarial };

inline std::string warmup_mode_name(WarmupMode m) { return m == WarmupMode::SourceOnly ? "source_only" : "adversarial"; }

struct DataConfig {
  SceneSpec spec;
  DomainShift shift{{-0.12, 0.198, -0.262}, 0.25, 0.9};
  std::size_t n_source = 48;
  std::size_t n_target = 48;
  std::size_t n_val = 32;
};

struct WarmupConfig {
  WarmupMode mode = WarmupMode::SourceOnly;
  std::size_t epochs = 60;
  /// Segmenter learning rate during warm-up; self-training rounds use optim.lr.
  double lr = 5e-3;
  double disc_lr = 1e-3;
};

struct SslConfig {
  double labeled_fraction = 0.125;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  DataConfig data;
  std::vector<std::size_t> hidden{32};
  bool local_mean_pool = true;
  WarmupConfig warmup;
  std::size_t rounds = 3;
  std::size_t epochs_per_round = 4;
  std::size_t batch_size = 4;
  SelectorConfig selector;
  LossConfig loss;
  AdamConfig optim;
  /// Keep the warm-up (source CE) loss during self-training.
  bool retain_warmup_loss = false;
  /// Carry EMA thresholds across rounds instead of resetting to theta_init.
  bool carry_thresholds = false;
  std::optional<SslConfig> ssl;

  Architecture architecture() const {
    return Architecture{kFeatureChannels, hidden, data.spec.num_classes, local_mean_pool};
  }

  void validate() const {
    data.spec.validate();
    data.shift.validate();
    if (data.n_source < 1 || data.n_target < 1 || data.n_val < 1)
      throw ConfigError("dataset sizes must be >= 1");
    if (rounds < 1) throw ConfigError("rounds must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(optim.lr >= 0.0) || !(warmup.lr >= 0.0) || !(warmup.disc_lr >= 0.0))
      throw ConfigError("learning rates must be >= 0");
    for (auto h : hidden)
      if (h == 0) throw ConfigError("hidden layer widths must be positive");
    selector.validate();
    loss.validate();
    if (ssl && !(ssl->labeled_fraction > 0.0 && ssl->labeled_fraction <= 1.0))
      throw ConfigError("ssl.labeled_fraction must be in (0,1]");
  }
};

struct LossPoint {
  std::size_t step = 0;
  double total = 0.0;
  double ce = 0.0;
  double r_i = 0.0;
  double r_c = 0.0;
  double adversarial = 0.0;
};

struct RoundRecord {
  std::size_t round = 0;
  double proportion = 0.0;
  std::vector<double> class_proportion;
  std::optional<double> p_miou;
  /// Precision of pseudo-labels vs. pixel accuracy of G's raw argmax.
  double label_precision = 0.0;
  double generator_pixel_accuracy = 0.0;
  double generator_target_miou = 0.0;
  double diversity = 0.0;
  double target_miou = 0.0;        // held-out target split, after the round
  double target_train_miou = 0.0;  // target images used for self-training
  std::vector<std::optional<double>> target_iou;
  std::vector<LossPoint> curve;
  std::vector<std::vector<double>> theta_trajectory;
  std::uint64_t generator_hash_before = 0;
  std::uint64_t generator_hash_after = 0;
  std::uint64_t model_hash = 0;
  std::uint64_t generator_hash_after_copy = 0;
  std::size_t source_images_in_self_training = 0;
};

struct WarmupResult {
  SegModel<float> model;
  std::vector<LossPoint> curve;
};

struct ExperimentResult {
  double warmup_target_miou = 0.0;
  double warmup_source_miou = 0.0;
  std::vector<std::optional<double>> warmup_target_iou;
  std::vector<LossPoint> warmup_curve;
  std::vector<RoundRecord> rounds;
  SegModel<float> final_model;
  std::vector<PseudoLabelResult> pseudo_labels;

  double final_target_miou() const { return rounds.empty() ? warmup_target_miou : rounds.back().target_miou; }
};

namespace detail {

enum class Phase : std::uint64_t { Init = 10, Warmup = 11, WarmupTarget = 12, SelfTrain = 13, Disc = 14 };

inline std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

inline void check_finite(double v, const std::string& where) {
  if (!std::isfinite(v)) throw TrainingAborted("non-finite loss during " + where);
}

/// Sums per-image gradients in index order and divides by the batch size.
inline std::vector<float> reduce_mean(const std::vector<std::vector<float>>& parts, std::size_t n) {
  std::vector<float> g(n, 0.0f);
  for (const auto& p : parts)
    for (std::size_t i = 0; i < n; ++i) g[i] += p[i];
  const float inv = 1.0f / static_cast<float>(parts.size());
  for (auto& v : g) v *= inv;
  return g;
}

struct BatchTerms {
  std::vector<float> grad;
  LossPoint loss;
};

/// Mean source CE gradient over a batch of labelled images.
inline BatchTerms supervised_batch(const SegModel<float>& model, const std::vector<const Image<float>*>& images,
                                   const std::vector<const LabelMask*>& masks) {
  const std::size_t B = images.size(), P = model.param_count();
  std::vector<std::vector<float>> parts(B);
  std::vector<double> values(B);
  parallel_for(B, [&](std::size_t i) {
    auto pass = model.forward(*images[i]);
    auto ce = masked_ce(pass.probs, *masks[i]);
    values[i] = ce.value;
    parts[i] = model.backward(pass, ce.grad);
  });
  BatchTerms out{reduce_mean(parts, P), {}};
  for (double v : values) out.loss.ce += v / static_cast<double>(B);
  out.loss.total = out.loss.ce;
  return out;
}

}  // namespace detail

/// Phase (a): trains M_0 on the labelled source, optionally aligned to the
/// target output distribution with a least-squares discriminator.
inline WarmupResult warmup(const ExperimentConfig& cfg, const Dataset& source, const Dataset& target) {
  cfg.validate();
  if (!source.labeled()) throw ConfigError("warm-up needs a labelled source dataset");
  WarmupResult res{SegModel<float>(cfg.architecture()), {}};
  auto& model = res.model;
  model.init(derive_seed(cfg.seed, {static_cast<std::uint64_t>(detail::Phase::Init)}));
  AdamConfig wopt = cfg.optim;
  wopt.lr = cfg.warmup.lr;
  OptimState opt(model.param_count(), wopt);

  const bool adversarial = cfg.warmup.mode == WarmupMode::Adversarial;
  Discriminator<float> disc(model.num_classes());
  disc.init(derive_seed(cfg.seed, {static_cast<std::uint64_t>(detail::Phase::Disc)}));
  OptimState disc_opt(disc.param_count(), AdamConfig{cfg.warmup.disc_lr, 0.9, 0.99, 1e-8});
  if (adversarial && target.size() == 0) throw ConfigError("adversarial warm-up needs target images");

  std::size_t step = 0;
  const std::size_t B = cfg.batch_size;
  for (std::size_t epoch = 0; epoch < cfg.warmup.epochs; ++epoch) {
    const auto order = detail::shuffled(
        source.size(), derive_seed(cfg.seed, {static_cast<std::uint64_t>(detail::Phase::Warmup), epoch}));
    const auto tgt_order =
        adversarial ? detail::shuffled(target.size(), derive_seed(cfg.seed, {static_cast<std::uint64_t>(
                                                                                  detail::Phase::WarmupTarget),
                                                                              epoch}))
                    : std::vector<std::size_t>{};
    for (std::size_t start = 0; start < order.size(); start += B) {
      const std::size_t end = std::min(order.size(), start + B);
      std::vector<const Image<float>*> imgs;
      std::vector<const LabelMask*> masks;
      for (std::size_t k = start; k < end; ++k) {
        imgs.push_back(&source.images[order[k]]);
        masks.push_back(&source.masks[order[k]]);
      }
      if (!adversarial) {
        auto terms = detail::supervised_batch(model, imgs, masks);
        terms.loss.step = step++;
        detail::check_finite(terms.loss.total, "warm-up step " + std::to_string(terms.loss.step));
        opt_step(model, opt, std::span<const float>(terms.grad));
        res.curve.push_back(terms.loss);
        continue;
      }
      // Alternate: one segmenter step, then one discriminator step on the
      // same (detached) outputs.
      const std::size_t n = end - start, P = model.param_count();
      std::vector<std::vector<float>> parts(n);
      std::vector<std::vector<float>> dparts(n);
      std::vector<AdversarialLoss<float>> seg(n);
      std::vector<double> dvalues(n);
      parallel_for(n, [&](std::size_t i) {
        const auto& timg = target.images[tgt_order[(start + i) % tgt_order.size()]];
        auto spass = model.forward(*imgs[i]);
        auto tpass = model.forward(timg);
        seg[i] = adversarial_losses(spass.probs, *masks[i], tpass.probs, disc, cfg.loss.lambda_adv,
                                    AdversarialSide::Segmenter);
        parts[i] = model.backward(spass, seg[i].grad_source_logits);
        model.backward(tpass, seg[i].grad_target_logits, parts[i]);
        auto d = adversarial_losses(spass.probs, *masks[i], tpass.probs, disc, cfg.loss.lambda_adv,
                                    AdversarialSide::Discriminator);
        dvalues[i] = d.value;
        dparts[i] = std::move(d.grad_disc);
      });
      LossPoint lp;
      lp.step = step++;
      for (std::size_t i = 0; i < n; ++i) {
        lp.ce += seg[i].source_ce / static_cast<double>(n);
        lp.adversarial += seg[i].adversarial / static_cast<double>(n);
      }
      lp.total = lp.ce + cfg.loss.lambda_adv * lp.adversarial;
      detail::check_finite(lp.total, "adversarial warm-up step " + std::to_string(lp.step));
      const auto g = detail::reduce_mean(parts, P);
      opt_step(model, opt, std::span<const float>(g));
      const auto gd = detail::reduce_mean(dparts, disc.param_count());
      opt_step(disc.params(), disc_opt, std::span<const float>(gd));
      res.curve.push_back(lp);
    }
  }
  return res;
}

struct RoundOptions {
  /// Replace pseudo-labels with target ground truth (oracle/debug runs).
  bool ground_truth_labels = false;
  std::optional<ThresholdState> carried_thresholds;
};

struct RoundOutcome {
  RoundRecord record;
  PseudoLabelResult labels;
};

/// Phases (b) and (c) of one round. `model` is trained in place; `generator`
/// is only read. The caller copies model into generator afterwards.
inline RoundOutcome run_round(SegModel<float>& model, const SegModel<float>& generator, const ExperimentConfig& cfg,
                              std::size_t round_idx, const Dataset& target, const HiddenMasks& target_gt,
                              const Dataset& target_val, const HiddenMasks& target_val_gt,
                              const Dataset* source = nullptr, const RoundOptions& options = {}) {
  RoundOutcome out;
  auto& rec = out.record;
  rec.round = round_idx;
  const std::size_t C = model.num_classes();

  // (b) generation with a frozen generator.
  rec.generator_hash_before = weight_hash(generator.params());
  out.labels = generate_pseudo_labels(generator, target, cfg.selector, C, options.carried_thresholds);
  auto gen_pred = predict_labels(generator, target);
  rec.generator_hash_after = weight_hash(generator.params());
  if (rec.generator_hash_before != rec.generator_hash_after)
    throw Error("generator weights changed during pseudo-label generation");
  if (options.ground_truth_labels) out.labels.batch.masks = reveal_ground_truth(target_gt);

  const auto& labels = out.labels.batch.masks;
  const auto stats = pseudo_label_stats(labels, reveal_ground_truth(target_gt), C);
  rec.proportion = stats.proportion;
  rec.class_proportion = stats.class_proportion;
  rec.p_miou = stats.p_miou;
  rec.label_precision = pseudo_label_precision(labels, target_gt);
  rec.generator_pixel_accuracy = pixel_accuracy(gen_pred, target_gt);
  rec.generator_target_miou = miou(confusion(reveal_ground_truth(target_gt), gen_pred, C)).miou;
  rec.diversity = stats.proportion > 0.0 ? label_diversity(labels, C) : 0.0;
  rec.theta_trajectory = out.labels.batch.thresholds_used;

  // (c) self-training on target images with the combined objective.
  std::vector<RegionMasks> regions;
  regions.reserve(labels.size());
  for (const auto& m : labels) regions.push_back(RegionMasks::from_labels(m));
  OptimState opt(model.param_count(), cfg.optim);
  const bool retain = cfg.retain_warmup_loss && source && source->labeled();
  const std::size_t B = cfg.batch_size, P = model.param_count();
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs_per_round; ++epoch) {
    const auto order = detail::shuffled(
        target.size(),
        derive_seed(cfg.seed, {static_cast<std::uint64_t>(detail::Phase::SelfTrain), round_idx, epoch}));
    for (std::size_t start = 0; start < order.size(); start += B) {
      const std::size_t end = std::min(order.size(), start + B), n = end - start;
      std::vector<std::vector<float>> parts(n);
      std::vector<CombinedLoss<float>> terms(n);
      parallel_for(n, [&](std::size_t i) {
        const std::size_t idx = order[start + i];
        auto pass = model.forward(target.images[idx]);
        terms[i] = combined_objective(pass.probs, labels[idx], regions[idx], cfg.loss);
        parts[i] = model.backward(pass, terms[i].grad);
        terms[i].grad = {};
      });
      LossPoint lp;
      lp.step = step++;
      for (const auto& t : terms) {
        lp.ce += t.ce / static_cast<double>(n);
        lp.r_i += t.r_i / static_cast<double>(n);
        lp.r_c += t.r_c / static_cast<double>(n);
      }
      lp.total = lp.ce + cfg.loss.lambda_i * lp.r_i + cfg.loss.lambda_c * lp.r_c;
      auto g = detail::reduce_mean(parts, P);
      if (retain) {
        std::vector<const Image<float>*> imgs;
        std::vector<const LabelMask*> masks;
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t s = order[start + i] % source->size();
          imgs.push_back(&source->images[s]);
          masks.push_back(&source->masks[s]);
          ++rec.source_images_in_self_training;
        }
        auto sup = detail::supervised_batch(model, imgs, masks);
        for (std::size_t k = 0; k < P; ++k) g[k] += sup.grad[k];
        lp.total += sup.loss.ce;
      }
      detail::check_finite(lp.total, "self-training round " + std::to_string(round_idx) + " step " +
                                         std::to_string(lp.step));
      opt_step(model, opt, std::span<const float>(g));
      rec.curve.push_back(lp);
    }
  }

  const auto val = evaluate(model, target_val, target_val_gt);
  rec.target_miou = val.miou;
  rec.target_iou = val.iou;
  rec.target_train_miou = evaluate(model, target, target_gt).miou;
  rec.model_hash = weight_hash(model.params());
  return out;
}

// ---------------------------------------------------------------------------
// Persistence of run artifacts.

inline void write_curve_csv(const fs::path& path, const std::vector<LossPoint>& curve) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "step,total,ce,r_i,r_c,adversarial\n";
  for (const auto& p : curve)
    out << p.step << "," << FlatConfig::format_double(p.total) << "," << FlatConfig::format_double(p.ce) << ","
        << FlatConfig::format_double(p.r_i) << "," << FlatConfig::format_double(p.r_c) << ","
        << FlatConfig::format_double(p.adversarial) << "\n";
}

inline std::string fmt_opt(const std::optional<double>& v) { return v ? FlatConfig::format_double(*v) : "N/A"; }

inline void write_records_csv(const fs::path& path, const ExperimentResult& r) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "round,proportion,p_miou,label_precision,generator_pixel_accuracy,generator_target_miou,diversity,"
         "target_miou,target_train_miou\n";
  out << "0,,,,,,," << FlatConfig::format_double(r.warmup_target_miou) << ",\n";
  for (const auto& rec : r.rounds)
    out << rec.round << "," << FlatConfig::format_double(rec.proportion) << "," << fmt_opt(rec.p_miou) << ","
        << FlatConfig::format_double(rec.label_precision) << ","
        << FlatConfig::format_double(rec.generator_pixel_accuracy) << ","
        << FlatConfig::format_double(rec.generator_target_miou) << "," << FlatConfig::format_double(rec.diversity)
        << "," << FlatConfig::format_double(rec.target_miou) << ","
        << FlatConfig::format_double(rec.target_train_miou) << "\n";
}

/// Per-class IoU table: one row per stage, percentages with one decimal.
inline std::string iou_table(const ExperimentResult& r, std::size_t num_classes) {
  auto cell = [](const std::optional<double>& v) {
    char buf[16];
    if (!v) return std::string("  -  ");
    std::snprintf(buf, sizeof buf, "%5.1f", 100.0 * *v);
    return std::string(buf);
  };
  std::string s = "Method    ";
  for (std::size_t c = 0; c < num_classes; ++c) {
    char buf[24];
    std::snprintf(buf, sizeof buf, " | %-5s", ("c" + std::to_string(c)).c_str());
    s += buf;
  }
  s += " | mIoU\n";
  auto row = [&](const std::string& name, const std::vector<std::optional<double>>& iou, double m) {
    char head[16];
    std::snprintf(head, sizeof head, "%-10s", name.c_str());
    std::string line = head;
    for (std::size_t c = 0; c < num_classes; ++c) line += " | " + cell(c < iou.size() ? iou[c] : std::nullopt);
    line += " | " + cell(m) + "\n";
    return line;
  };
  s += row("warm-up", r.warmup_target_iou, r.warmup_target_miou);
  for (const auto& rec : r.rounds) s += row("round " + std::to_string(rec.round), rec.target_iou, rec.target_miou);
  return s;
}

inline void write_report(const fs::path& path, const ExperimentResult& r, std::size_t num_classes) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "warmup_target_miou = " << FlatConfig::format_double(r.warmup_target_miou) << "\n";
  out << "warmup_source_miou = " << FlatConfig::format_double(r.warmup_source_miou) << "\n";
  for (const auto& rec : r.rounds) {
    out << "round." << rec.round << ".target_miou = " << FlatConfig::format_double(rec.target_miou) << "\n";
    out << "round." << rec.round << ".proportion = " << FlatConfig::format_double(rec.proportion) << "\n";
    out << "round." << rec.round << ".p_miou = " << fmt_opt(rec.p_miou) << "\n";
  }
  out << "final_target_miou = " << FlatConfig::format_double(r.final_target_miou()) << "\n";
  out << "\n" << iou_table(r, num_classes);
}

/// Full pipeline. With an output directory, artifacts are written as they
/// are produced, so a failure leaves everything completed so far on disk.
/// `warm`, when given, must come from warmup() with this config's data,
/// model, warm-up and optimiser settings; sweeps use it to share phase (a).
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const UdaBenchmark& bench,
                                       const std::optional<fs::path>& out_dir = std::nullopt,
                                       const WarmupResult* warm = nullptr) {
  cfg.validate();
  ExperimentResult res;
  const std::size_t C = cfg.data.spec.num_classes;
  auto persist = [&] {
    if (!out_dir) return;
    write_records_csv(*out_dir / "records.csv", res);
    write_report(*out_dir / "report.txt", res, C);
  };
  if (out_dir) fs::create_directories(*out_dir);

  const WarmupResult wu = warm ? *warm : warmup(cfg, bench.source, bench.target);
  if (!(wu.model.arch() == cfg.architecture())) throw ConfigError("precomputed warm-up has a different architecture");
  res.warmup_curve = wu.curve;
  const auto wval = evaluate(wu.model, bench.target_val, bench.target_val_gt);
  res.warmup_target_miou = wval.miou;
  res.warmup_target_iou = wval.iou;
  res.warmup_source_miou = evaluate(wu.model, bench.source).miou;
  if (out_dir) {
    save_checkpoint(*out_dir / "warmup" / "checkpoint", wu.model);
    write_curve_csv(*out_dir / "warmup" / "curve.csv", wu.curve);
  }

  SegModel<float> model = wu.model;
  SegModel<float> generator(cfg.architecture());
  copy_weights(model, generator);
  std::optional<ThresholdState> carried;
  try {
    for (std::size_t r = 1; r <= cfg.rounds; ++r) {
      RoundOptions opts;
      if (cfg.carry_thresholds) opts.carried_thresholds = carried;
      auto outcome = run_round(model, generator, cfg, r, bench.target, bench.target_gt, bench.target_val,
                               bench.target_val_gt, &bench.source, opts);
      carried = outcome.labels.state;
      copy_weights(model, generator);
      outcome.record.generator_hash_after_copy = weight_hash(generator.params());
      if (out_dir) {
        const auto rdir = *out_dir / ("round_" + std::to_string(r));
        FlatConfig extra;
        extra.set("round", static_cast<std::uint64_t>(r));
        extra.set("p_miou", fmt_opt(outcome.record.p_miou));
        save_pseudo_labels(rdir / "pseudo_labels", outcome.labels, cfg.selector, extra);
        save_checkpoint(rdir / "checkpoint", model);
        write_curve_csv(rdir / "curve.csv", outcome.record.curve);
      }
      res.rounds.push_back(std::move(outcome.record));
      res.pseudo_labels.push_back(std::move(outcome.labels));
      persist();
    }
  } catch (...) {
    persist();
    throw;
  }
  res.final_model = model;
  if (out_dir) save_checkpoint(*out_dir / "final" / "checkpoint", model);
  persist();
  return res;
}

inline UdaBenchmark make_benchmark(const ExperimentConfig& cfg) {
  return make_uda_benchmark(cfg.data.spec, cfg.data.shift, cfg.data.n_source, cfg.data.n_target, cfg.seed,
                            cfg.data.n_val);
}

inline ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                       const std::optional<fs::path>& out_dir = std::nullopt) {
  return run_experiment(cfg, make_benchmark(cfg), out_dir);
}

// ---------------------------------------------------------------------------
// Semi-supervised mode: one domain; a labelled subset trains with CE, the
// rest enters the self-training loop as the "target".

struct SslResult {
  double baseline_miou = 0.0;  // supervised on the labelled subset only
  std::size_t labeled_images = 0;
  std::vector<RoundRecord> rounds;
  double final_miou = 0.0;
  std::vector<LossPoint> baseline_curve;
};

inline SslResult run_ssl(const ExperimentConfig& cfg) {
  cfg.validate();
  if (!cfg.ssl) throw ConfigError("run_ssl needs ssl.labeled_fraction");
  const double frac = cfg.ssl->labeled_fraction;
  const auto pool =
      generate_split(cfg.data.spec, DomainShift::identity(), cfg.data.n_source, cfg.seed, SplitStream::Source);
  auto val = generate_split(cfg.data.spec, DomainShift::identity(), cfg.data.n_val, cfg.seed, SplitStream::SourceVal);
  const auto n_lab = std::max<std::size_t>(
      1, std::min(pool.size(), static_cast<std::size_t>(std::ceil(frac * static_cast<double>(pool.size()) - 1e-9))));

  Dataset labeled{Domain::Source, pool.spec, pool.seed, {}, {}};
  Dataset unlabeled{Domain::Target, pool.spec, pool.seed, {}, {}};
  std::vector<LabelMask> unlabeled_gt;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (i < n_lab) {
      labeled.images.push_back(pool.images[i]);
      labeled.masks.push_back(pool.masks[i]);
    } else {
      unlabeled.images.push_back(pool.images[i]);
      unlabeled_gt.push_back(pool.masks[i]);
    }
  }
  HiddenMasks hidden_unlabeled(std::move(unlabeled_gt));
  HiddenMasks hidden_val(std::move(val.masks));
  val.masks.clear();

  // The baseline gets as many optimiser steps as a warm-up on the whole
  // pool, so it is a converged supervised model rather than a short run.
  ExperimentConfig base_cfg = cfg;
  base_cfg.warmup.mode = WarmupMode::SourceOnly;
  base_cfg.warmup.epochs = (cfg.warmup.epochs * pool.size() + n_lab - 1) / n_lab;
  auto wu = warmup(base_cfg, labeled, unlabeled);
  SslResult res;
  res.labeled_images = n_lab;
  res.baseline_curve = wu.curve;
  res.baseline_miou = evaluate(wu.model, val, hidden_val).miou;
  res.final_miou = res.baseline_miou;
  if (unlabeled.size() == 0) return res;

  // The labelled subset keeps supervising through every round.
  ExperimentConfig st_cfg = cfg;
  st_cfg.retain_warmup_loss = true;
  SegModel<float> model = wu.model;
  SegModel<float> generator(cfg.architecture());
  copy_weights(model, generator);
  std::optional<ThresholdState> carried;
  for (std::size_t r = 1; r <= cfg.rounds; ++r) {
    RoundOptions opts;
    if (cfg.carry_thresholds) opts.carried_thresholds = carried;
    auto outcome = run_round(model, generator, st_cfg, r, unlabeled, hidden_unlabeled, val, hidden_val, &labeled, opts);
    carried = outcome.labels.state;
    copy_weights(model, generator);
    outcome.record.generator_hash_after_copy = weight_hash(generator.params());
    res.rounds.push_back(std::move(outcome.record));
  }
  res.final_miou = res.rounds.back().target_miou;
  return res;
}

}  // namespace iast
