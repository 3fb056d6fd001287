#include <gtest/gtest.h>

#include <fstream>
#include <limits>
#include <sstream>

#include "iast/iast.hpp"
#include "test_util.hpp"

using namespace iast;

namespace {

// Seconds, not minutes: small images, few epochs.
ExperimentConfig small_cfg() {
  ExperimentConfig c;
  c.seed = 21;
  c.data.spec.height = c.data.spec.width = 24;
  c.data.spec.num_classes = 4;
  c.data.n_source = 12;
  c.data.n_target = 12;
  c.data.n_val = 8;
  c.warmup.epochs = 10;
  c.optim.lr = c.warmup.lr = 0.005;
  c.rounds = 2;
  c.epochs_per_round = 1;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<LossPoint> supervised_reference(SegModel<float>& model, const ExperimentConfig& cfg,
                                            const Dataset& data, const std::vector<LabelMask>& masks,
                                            std::size_t round_idx) {
  // Plain fine-tuning loop written independently of run_round: same seeds,
  // same batches, CE only.
  OptimState opt(model.param_count(), cfg.optim);
  std::vector<LossPoint> curve;
  for (std::size_t epoch = 0; epoch < cfg.epochs_per_round; ++epoch) {
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(cfg.seed, {13, round_idx, epoch}));
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t s = 0; s < order.size(); s += cfg.batch_size) {
      std::vector<const Image<float>*> imgs;
      std::vector<const LabelMask*> ms;
      for (std::size_t k = s; k < std::min(order.size(), s + cfg.batch_size); ++k) {
        imgs.push_back(&data.images[order[k]]);
        ms.push_back(&masks[order[k]]);
      }
      auto t = detail::supervised_batch(model, imgs, ms);
      opt_step(model, opt, std::span<const float>(t.grad));
      curve.push_back(t.loss);
    }
  }
  return curve;
}

}  // namespace

TEST(Warmup, ZeroEpochsReturnsInitialisedModel) {
  auto cfg = small_cfg();
  cfg.warmup.epochs = 0;
  const auto bench = make_benchmark(cfg);
  const auto wu = warmup(cfg, bench.source, bench.target);
  SegModel<float> fresh(cfg.architecture());
  fresh.init(derive_seed(cfg.seed, {10}));
  EXPECT_EQ(wu.model.params(), fresh.params());
  EXPECT_TRUE(wu.curve.empty());
}

TEST(Warmup, AdversarialWithZeroWeightEqualsSourceOnly) {
  auto cfg = small_cfg();
  cfg.warmup.epochs = 3;
  const auto bench = make_benchmark(cfg);
  const auto plain = warmup(cfg, bench.source, bench.target);
  cfg.warmup.mode = WarmupMode::Adversarial;
  cfg.loss.lambda_adv = 0.0;
  const auto adv = warmup(cfg, bench.source, bench.target);
  ASSERT_EQ(plain.curve.size(), adv.curve.size());
  for (std::size_t i = 0; i < plain.curve.size(); ++i) EXPECT_EQ(plain.curve[i].ce, adv.curve[i].ce) << i;
  EXPECT_EQ(plain.model.params(), adv.model.params());
}

TEST(Warmup, AdversarialRunsAndDiffers) {
  auto cfg = small_cfg();
  cfg.warmup.epochs = 3;
  cfg.warmup.mode = WarmupMode::Adversarial;
  cfg.loss.lambda_adv = 0.05;
  const auto bench = make_benchmark(cfg);
  const auto adv = warmup(cfg, bench.source, bench.target);
  cfg.warmup.mode = WarmupMode::SourceOnly;
  const auto plain = warmup(cfg, bench.source, bench.target);
  EXPECT_NE(adv.model.params(), plain.model.params());
  for (const auto& p : adv.curve) {
    EXPECT_TRUE(std::isfinite(p.total));
    EXPECT_GE(p.adversarial, 0.0);
  }
}

TEST(Warmup, RejectsUnlabeledSource) {
  auto cfg = small_cfg();
  const auto bench = make_benchmark(cfg);
  EXPECT_THROW(warmup(cfg, bench.target, bench.target), ConfigError);
}

TEST(Warmup, DefaultReachesNinetyPercentOfCeiling) {
  // Identity shift; the ceiling run trains three times as long.
  ExperimentConfig cfg;
  cfg.data.shift = DomainShift::identity();
  const auto src = generate_split(cfg.data.spec, cfg.data.shift, cfg.data.n_source, cfg.seed, SplitStream::Source);
  const auto val = generate_split(cfg.data.spec, cfg.data.shift, cfg.data.n_val, cfg.seed, SplitStream::SourceVal);
  const auto wu = warmup(cfg, src, Dataset{});
  auto ceil_cfg = cfg;
  ceil_cfg.warmup.epochs *= 3;
  const auto ceiling = warmup(ceil_cfg, src, Dataset{});
  const double m = evaluate(wu.model, val).miou, mc = evaluate(ceiling.model, val).miou;
  EXPECT_GE(m, 0.90 * mc) << m << " vs ceiling " << mc;
}

TEST(Round, ThresholdOneGivesEntropyOnlyTraining) {
  auto cfg = small_cfg();
  cfg.selector.mode = SelectorMode::Constant;
  cfg.selector.constant_threshold = 1.0;
  const auto bench = make_benchmark(cfg);
  auto wu = warmup(cfg, bench.source, bench.target);
  SegModel<float> model = wu.model, gen = wu.model;
  auto out = run_round(model, gen, cfg, 1, bench.target, bench.target_gt, bench.target_val, bench.target_val_gt);
  EXPECT_EQ(out.record.proportion, 0.0);
  EXPECT_FALSE(out.record.p_miou.has_value());
  ASSERT_FALSE(out.record.curve.empty());
  for (const auto& p : out.record.curve) {
    EXPECT_EQ(p.ce, 0.0);
    EXPECT_EQ(p.r_c, 0.0);
    EXPECT_GT(p.r_i, 0.0);
    EXPECT_DOUBLE_EQ(p.total, cfg.loss.lambda_i * p.r_i);
  }
  // End-of-round predictions are sharper than the generator's.
  double h_before = 0, h_after = 0;
  for (std::size_t i = 0; i < bench.target.size(); ++i) {
    const auto all = RegionMasks::from_labels(LabelMask(Shape{24, 24}, std::vector<std::int32_t>(576, kVoid)));
    h_before += entropy_ignored(gen.predict(bench.target.images[i]), all).value;
    h_after += entropy_ignored(model.predict(bench.target.images[i]), all).value;
  }
  EXPECT_LT(h_after, h_before);
}

TEST(Round, GroundTruthLabelsWithoutRegularisersIsSupervisedFineTuning) {
  auto cfg = small_cfg();
  cfg.loss.lambda_i = cfg.loss.lambda_c = 0.0;
  const auto bench = make_benchmark(cfg);
  const auto wu = warmup(cfg, bench.source, bench.target);
  SegModel<float> model = wu.model, gen = wu.model;
  RoundOptions opts;
  opts.ground_truth_labels = true;
  auto out = run_round(model, gen, cfg, 1, bench.target, bench.target_gt, bench.target_val, bench.target_val_gt,
                       nullptr, opts);
  SegModel<float> ref = wu.model;
  const auto curve = supervised_reference(ref, cfg, bench.target, reveal_ground_truth(bench.target_gt), 1);
  EXPECT_EQ(model.params(), ref.params());
  ASSERT_EQ(curve.size(), out.record.curve.size());
  for (std::size_t i = 0; i < curve.size(); ++i) EXPECT_EQ(curve[i].ce, out.record.curve[i].ce);
  EXPECT_DOUBLE_EQ(out.record.proportion, 1.0);
  EXPECT_DOUBLE_EQ(*out.record.p_miou, 1.0);
}

TEST(Round, GeneratorFrozenAndTargetOnlyByDefault) {
  auto cfg = small_cfg();
  const auto bench = make_benchmark(cfg);
  const auto res = run_experiment(cfg, bench);
  ASSERT_EQ(res.rounds.size(), cfg.rounds);
  for (const auto& r : res.rounds) {
    EXPECT_EQ(r.generator_hash_before, r.generator_hash_after);
    EXPECT_EQ(r.generator_hash_after_copy, r.model_hash);
    EXPECT_EQ(r.source_images_in_self_training, 0u);
    EXPECT_EQ(r.theta_trajectory.size(), bench.target.size());
  }
  // Round r+1 generates with round r's model.
  EXPECT_EQ(res.rounds[1].generator_hash_before, res.rounds[0].model_hash);
  EXPECT_EQ(weight_hash(res.final_model.params()), res.rounds.back().model_hash);
}

TEST(Round, RetainFlagAddsSourceBatches) {
  auto cfg = small_cfg();
  cfg.retain_warmup_loss = true;
  const auto res = run_experiment(cfg);
  const std::size_t steps = (cfg.data.n_target + cfg.batch_size - 1) / cfg.batch_size;
  for (const auto& r : res.rounds) EXPECT_EQ(r.source_images_in_self_training, cfg.data.n_target * cfg.epochs_per_round);
  EXPECT_EQ(res.rounds[0].curve.size(), steps * cfg.epochs_per_round);
}

TEST(Round, ThresholdsResetUnlessCarried) {
  auto cfg = small_cfg();
  const auto bench = make_benchmark(cfg);
  const auto wu = warmup(cfg, bench.source, bench.target);
  const auto reset = run_experiment(cfg, bench, std::nullopt, &wu);
  cfg.carry_thresholds = true;
  const auto carried = run_experiment(cfg, bench, std::nullopt, &wu);
  // Round 1 is identical; round 2 starts from round 1's final state.
  EXPECT_EQ(reset.rounds[0].theta_trajectory, carried.rounds[0].theta_trajectory);
  EXPECT_NE(carried.rounds[1].theta_trajectory.front(), reset.rounds[1].theta_trajectory.front());
  EXPECT_NE(reset.pseudo_labels[0].state.theta, ThresholdState::initial(4, cfg.selector.theta_init).theta);
}

TEST(Experiment, DeterministicArtifacts) {
  auto cfg = small_cfg();
  iast::testing::TempDir a, b;
  run_experiment(cfg, a.path());
  run_experiment(cfg, b.path());
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a.path())) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), a.path());
    ASSERT_TRUE(fs::exists(b.path() / rel)) << rel;
    EXPECT_EQ(slurp(e.path()), slurp(b.path() / rel)) << rel;
    ++files;
  }
  EXPECT_GT(files, 10u);
  for (const char* f : {"records.csv", "report.txt", "warmup/checkpoint/arch.txt", "final/checkpoint/arch.txt",
                        "round_1/pseudo_labels/report.txt", "round_2/curve.csv"})
    EXPECT_TRUE(fs::exists(a.path() / f)) << f;
}

TEST(Experiment, ParallelWorkersDoNotChangeResults) {
  auto cfg = small_cfg();
  cfg.rounds = 1;
  const auto serial = run_experiment(cfg);
  setenv("IAST_THREADS", "3", 1);
  const auto par = run_experiment(cfg);
  unsetenv("IAST_THREADS");
  EXPECT_EQ(serial.final_model.params(), par.final_model.params());
}

TEST(Experiment, FewerRoundsIsAPrefix) {
  auto cfg = small_cfg();
  const auto two = run_experiment(cfg);
  cfg.rounds = 1;
  const auto one = run_experiment(cfg);
  EXPECT_EQ(one.rounds[0].model_hash, two.rounds[0].model_hash);
  EXPECT_EQ(one.rounds[0].target_miou, two.rounds[0].target_miou);
}

TEST(Experiment, PartialResultsSurviveAbort) {
  auto cfg = small_cfg();
  auto bench = make_benchmark(cfg);
  bench.target.images[3].at(0, 5, 5) = std::numeric_limits<float>::quiet_NaN();
  iast::testing::TempDir dir;
  EXPECT_THROW(run_experiment(cfg, bench, dir.path()), TrainingAborted);
  EXPECT_TRUE(fs::exists(dir / "warmup/checkpoint/arch.txt"));
  const auto records = slurp(dir / "records.csv");
  EXPECT_EQ(records.rfind("round,", 0), 0u);
  EXPECT_NE(records.find("\n0,"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "report.txt"));
}

TEST(Experiment, PrecomputedWarmupMustMatch) {
  auto cfg = small_cfg();
  const auto bench = make_benchmark(cfg);
  auto other = cfg;
  other.hidden = {8};
  const auto wu = warmup(other, bench.source, bench.target);
  EXPECT_THROW(run_experiment(cfg, bench, std::nullopt, &wu), ConfigError);
}

// Default benchmark: derived, seeded properties of the real pipeline.

TEST(DefaultBenchmark, RoundOneLabelsBeatRawArgmax) {
  ExperimentConfig cfg;
  cfg.rounds = 1;
  const auto res = run_experiment(cfg);
  const auto& r = res.rounds[0];
  EXPECT_GT(r.label_precision, r.generator_pixel_accuracy);
  ASSERT_TRUE(r.p_miou);
  EXPECT_GT(*r.p_miou, r.generator_target_miou);
}

TEST(DefaultBenchmark, LaterRoundsDoNotRegress) {
  ExperimentConfig cfg;
  const auto res = run_experiment(cfg);
  ASSERT_EQ(res.rounds.size(), 3u);
  EXPECT_GE(res.rounds[2].target_miou, res.rounds[0].target_miou);
  EXPECT_GT(res.final_target_miou(), res.warmup_target_miou);
}

TEST(Ssl, FullFractionIsTheSupervisedBaseline) {
  auto cfg = small_cfg();
  cfg.ssl = SslConfig{1.0};
  const auto r = run_ssl(cfg);
  EXPECT_EQ(r.labeled_images, cfg.data.n_source);
  EXPECT_TRUE(r.rounds.empty());
  EXPECT_EQ(r.final_miou, r.baseline_miou);

  // Identical to warm-up on the whole pool.
  const auto pool =
      generate_split(cfg.data.spec, DomainShift::identity(), cfg.data.n_source, cfg.seed, SplitStream::Source);
  const auto wu = warmup(cfg, pool, Dataset{});
  ASSERT_EQ(wu.curve.size(), r.baseline_curve.size());
  for (std::size_t i = 0; i < wu.curve.size(); ++i) EXPECT_EQ(wu.curve[i].ce, r.baseline_curve[i].ce);
}

TEST(Ssl, ZeroFractionRejected) {
  auto cfg = small_cfg();
  cfg.ssl = SslConfig{0.0};
  EXPECT_THROW(run_ssl(cfg), ConfigError);
  cfg.ssl.reset();
  EXPECT_THROW(run_ssl(cfg), ConfigError);
}

TEST(Ssl, PartialFractionRunsRounds) {
  auto cfg = small_cfg();
  cfg.ssl = SslConfig{0.25};
  const auto r = run_ssl(cfg);
  EXPECT_EQ(r.labeled_images, 3u);
  ASSERT_EQ(r.rounds.size(), cfg.rounds);
  for (const auto& rec : r.rounds) EXPECT_GT(rec.source_images_in_self_training, 0u);
  EXPECT_EQ(r.final_miou, r.rounds.back().target_miou);
}
