#include <cmath>
#include <functional>

#include <gtest/gtest.h>

#include "iast/losses.hpp"

using namespace iast;

namespace {

ProbMap<double> softmax_map(const Array<double>& z) {
  const std::size_t C = z.dim(0), N = z.size() / C;
  ProbMap<double> p(z.shape());
  std::vector<double> row(C);
  for (std::size_t q = 0; q < N; ++q) {
    for (std::size_t c = 0; c < C; ++c) row[c] = z[c * N + q];
    softmax_inplace<double>(row);
    for (std::size_t c = 0; c < C; ++c) p[c * N + q] = row[c];
  }
  return p;
}

ProbMap<double> single_pixel(std::vector<double> p) {
  const std::size_t C = p.size();
  return ProbMap<double>(Shape{C, 1, 1}, std::move(p));
}

Array<double> random_logits(std::size_t C, std::size_t H, std::size_t W, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, 1.5);
  Array<double> z(Shape{C, H, W});
  for (auto& v : z.values()) v = n(rng);
  return z;
}

/// Labels on a 4x4 fixture: 7 labeled pixels, the rest VOID.
LabelMask fixture_labels() {
  LabelMask y(Shape{4, 4}, kVoid);
  const int lab[][3] = {{0, 0, 0}, {0, 3, 2}, {1, 1, 1}, {2, 0, 2}, {2, 2, 0}, {3, 1, 1}, {3, 3, 2}};
  for (const auto& l : lab) y.at(l[0], l[1]) = l[2];
  return y;
}

/// Central differences on the logits; relative error against the analytic gradient.
double worst_logit_fd(const Array<double>& z0, const std::function<double(const ProbMap<double>&)>& value,
                      const Array<double>& analytic) {
  double worst = 0.0;
  const double h = 1e-3;
  for (std::size_t k = 0; k < z0.size(); ++k) {
    auto up = z0, down = z0;
    up[k] += h;
    down[k] -= h;
    const double fd = (value(softmax_map(up)) - value(softmax_map(down))) / (2 * h);
    if (std::abs(fd) < 1e-9 && std::abs(analytic[k]) < 1e-9) continue;
    worst = std::max(worst, std::abs(analytic[k] - fd) / (std::abs(fd) + 1e-8));
  }
  return worst;
}

}  // namespace

TEST(MaskedCe, ClosedFormValues) {
  EXPECT_NEAR(masked_ce(single_pixel({0.5, 0.5}), LabelMask(Shape{1, 1}, 0)).value, std::log(2.0), 1e-12);
  EXPECT_NEAR(masked_ce(single_pixel({1.0 - 1e-12, 1e-12}), LabelMask(Shape{1, 1}, 0)).value, 0.0, 1e-9);
}

TEST(MaskedCe, VoidPixelsAreExcludedFromTheMean) {
  ProbMap<double> p(Shape{2, 1, 2}, {0.8, 0.3, 0.2, 0.7});
  LabelMask y(Shape{1, 2}, {0, kVoid});
  const auto ce = masked_ce(p, y);
  EXPECT_NEAR(ce.value, -std::log(0.8), 1e-12);
  EXPECT_EQ(ce.grad[1], 0.0);
  EXPECT_EQ(ce.grad[3], 0.0);
}

TEST(MaskedCe, AllVoidIsZeroWithZeroGradient) {
  const auto ce = masked_ce(softmax_map(random_logits(3, 2, 2, 1)), LabelMask(Shape{2, 2}, kVoid));
  EXPECT_EQ(ce.value, 0.0);
  for (double g : ce.grad.values()) EXPECT_EQ(g, 0.0);
}

TEST(Kld, ClosedFormValues) {
  LabelMask y(Shape{1, 1}, 0);
  const auto m = RegionMasks::from_labels(y);
  EXPECT_NEAR(kld_confident(single_pixel({0.5, 0.5}), m).value, std::log(2.0), 1e-12);
  EXPECT_NEAR(kld_confident(single_pixel({0.9, 0.1}), m).value, -0.5 * (std::log(0.9) + std::log(0.1)), 1e-12);
  EXPECT_NEAR(kld_confident(single_pixel({0.9, 0.1}), m).value, 1.2040, 1e-4);
  const auto empty = RegionMasks::from_labels(LabelMask(Shape{1, 1}, kVoid));
  EXPECT_EQ(kld_confident(single_pixel({0.9, 0.1}), empty).value, 0.0);
}

TEST(Entropy, ClosedFormValues) {
  const auto m = RegionMasks::from_labels(LabelMask(Shape{1, 1}, kVoid));
  EXPECT_NEAR(entropy_ignored(single_pixel({1.0, 0.0}), m).value, 0.0, 1e-9);
  EXPECT_NEAR(entropy_ignored(single_pixel({0.5, 0.5}), m).value, std::log(2.0), 1e-12);
  const double h = -(0.7 * std::log(0.7) + 0.2 * std::log(0.2) + 0.1 * std::log(0.1));
  EXPECT_NEAR(entropy_ignored(single_pixel({0.7, 0.2, 0.1}), m).value, h, 1e-12);
  EXPECT_NEAR(h, 0.8018, 1e-4);
  const auto none = RegionMasks::from_labels(LabelMask(Shape{1, 1}, 1));
  EXPECT_EQ(entropy_ignored(single_pixel({0.5, 0.5}), none).value, 0.0);
}

TEST(Regularizers, UniformAndOneHotClosedForms) {
  for (std::size_t C : {2u, 3u, 7u}) {
    const auto u = single_pixel(std::vector<double>(C, 1.0 / static_cast<double>(C)));
    EXPECT_NEAR(kld_confident(u, RegionMasks::from_labels(LabelMask(Shape{1, 1}, 0))).value, std::log(C), 1e-6);
    EXPECT_NEAR(entropy_ignored(u, RegionMasks::from_labels(LabelMask(Shape{1, 1}, kVoid))).value, std::log(C), 1e-6);
    std::vector<double> one(C, 0.0);
    one[C - 1] = 1.0;
    EXPECT_NEAR(entropy_ignored(single_pixel(one), RegionMasks::from_labels(LabelMask(Shape{1, 1}, kVoid))).value,
                0.0, 1e-6);
  }
}

TEST(Regularizers, Bounds) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto p = softmax_map(random_logits(4, 3, 3, s));
    const auto all_conf = RegionMasks::from_labels(LabelMask(Shape{3, 3}, 0));
    const auto all_ign = RegionMasks::from_labels(LabelMask(Shape{3, 3}, kVoid));
    const double h = entropy_ignored(p, all_ign).value;
    EXPECT_GE(h, 0.0);
    EXPECT_LE(h, std::log(4.0) + 1e-12);
    EXPECT_GE(kld_confident(p, all_conf).value, std::log(4.0) - 1e-12);
  }
}

TEST(RegionMasks, PartitionPixels) {
  const auto m = RegionMasks::from_labels(fixture_labels());
  for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(m.confident[i] + m.ignored[i], 1);
}

TEST(Gradients, EachTermMatchesFiniteDifferences) {
  const auto y = fixture_labels();
  const auto m = RegionMasks::from_labels(y);
  LossConfig cfg;
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto z = random_logits(3, 4, 4, 40 + s);
    const auto p = softmax_map(z);
    EXPECT_LT(worst_logit_fd(z, [&](const auto& q) { return masked_ce(q, y).value; }, masked_ce(p, y).grad), 1e-4);
    EXPECT_LT(worst_logit_fd(z, [&](const auto& q) { return kld_confident(q, m).value; }, kld_confident(p, m).grad),
              1e-4);
    EXPECT_LT(
        worst_logit_fd(z, [&](const auto& q) { return entropy_ignored(q, m).value; }, entropy_ignored(p, m).grad),
        1e-4);
    EXPECT_LT(worst_logit_fd(z, [&](const auto& q) { return combined_objective(q, y, m, cfg).value; },
                             combined_objective(p, y, m, cfg).grad),
              1e-4);
  }
}

TEST(Combined, Reductions) {
  const auto y = fixture_labels();
  const auto m = RegionMasks::from_labels(y);
  const auto p = softmax_map(random_logits(3, 4, 4, 9));
  const auto ce = combined_objective(p, y, m, LossConfig{0.0, 0.0, 0.0});
  EXPECT_EQ(ce.value, masked_ce(p, y).value);
  EXPECT_EQ(ce.grad, masked_ce(p, y).grad);
  const LabelMask void_y(Shape{4, 4}, kVoid);
  const auto vm = RegionMasks::from_labels(void_y);
  const auto ent = combined_objective(p, void_y, vm, LossConfig{1.0, 0.0, 0.0});
  EXPECT_EQ(ent.value, entropy_ignored(p, vm).value);
  EXPECT_EQ(ent.grad, entropy_ignored(p, vm).grad);
}

TEST(Combined, HandSumOnSmallFixture) {
  ProbMap<double> p(Shape{2, 2, 2}, {0.7, 0.4, 0.55, 0.1, 0.3, 0.6, 0.45, 0.9});
  LabelMask y(Shape{2, 2}, {kVoid, 1, kVoid, kVoid});
  const auto m = RegionMasks::from_labels(y);
  const double ce = -std::log(0.6);
  const double rc = -0.5 * (std::log(0.4) + std::log(0.6));
  auto ent = [](double a) { return -(a * std::log(a) + (1 - a) * std::log(1 - a)); };
  const double ri = (ent(0.7) + ent(0.55) + ent(0.1)) / 3.0;
  const auto out = combined_objective(p, y, m, LossConfig{3.0, 0.1, 0.0});
  EXPECT_NEAR(out.value, ce + 3.0 * ri + 0.1 * rc, 1e-12);
  EXPECT_NEAR(out.value, out.ce + 3.0 * out.r_i + 0.1 * out.r_c, 1e-7);
}

TEST(Combined, InconsistentMasksThrow) {
  const auto y = fixture_labels();
  auto m = RegionMasks::from_labels(y);
  m.confident[0] = 0;
  EXPECT_THROW(combined_objective(softmax_map(random_logits(3, 4, 4, 1)), y, m, LossConfig{}), Error);
  EXPECT_THROW(combined_objective(softmax_map(random_logits(3, 4, 4, 1)), y, m, LossConfig{-1.0, 0.0, 0.0}),
               ConfigError);
}

TEST(Adversarial, DiscriminatorOutputOneGivesZeroAdversarialTerm) {
  Discriminator<double> d(3, 4);  // zero weights: output = bias of last layer
  d.params().back() = 1.0;
  const auto src = softmax_map(random_logits(3, 2, 2, 1));
  const auto tgt = softmax_map(random_logits(3, 2, 2, 2));
  LabelMask y(Shape{2, 2}, 1);
  const auto seg = adversarial_losses(src, y, tgt, d, 0.5, AdversarialSide::Segmenter);
  EXPECT_EQ(seg.adversarial, 0.0);
  EXPECT_NEAR(seg.value, masked_ce(src, y).value, 1e-15);
}

TEST(Adversarial, LambdaZeroIsSourceCe) {
  Discriminator<double> d(3, 4);
  d.init(1);
  const auto src = softmax_map(random_logits(3, 2, 2, 1));
  const auto tgt = softmax_map(random_logits(3, 2, 2, 2));
  LabelMask y(Shape{2, 2}, {0, 1, 2, kVoid});
  const auto seg = adversarial_losses(src, y, tgt, d, 0.0, AdversarialSide::Segmenter);
  EXPECT_EQ(seg.value, masked_ce(src, y).value);
  for (double g : seg.grad_target_logits.values()) EXPECT_EQ(g, 0.0);
}

TEST(Adversarial, ConstantOutputClosedForm) {
  Discriminator<double> d(3, 4);
  d.params().back() = 0.3;
  const auto src = softmax_map(random_logits(3, 2, 2, 1));
  const auto tgt = softmax_map(random_logits(3, 2, 2, 2));
  LabelMask y(Shape{2, 2}, 0);
  const double lam = 0.01;
  const auto seg = adversarial_losses(src, y, tgt, d, lam, AdversarialSide::Segmenter);
  EXPECT_NEAR(seg.value - seg.source_ce, lam * 0.49, 1e-14);
  const auto dis = adversarial_losses(src, y, tgt, d, lam, AdversarialSide::Discriminator);
  EXPECT_NEAR(dis.value, 0.5 * (0.49 + 0.09), 1e-14);
  EXPECT_TRUE(dis.grad_source_logits.empty());
}

TEST(Adversarial, GradientsMatchFiniteDifferences) {
  Discriminator<double> d(3, 5);
  d.init(7);
  const auto zs = random_logits(3, 4, 4, 11), zt = random_logits(3, 4, 4, 12);
  const auto y = fixture_labels();
  const double lam = 0.7;
  const auto seg = adversarial_losses(softmax_map(zs), y, softmax_map(zt), d, lam, AdversarialSide::Segmenter);
  EXPECT_LT(worst_logit_fd(zt,
                           [&](const auto& q) {
                             return adversarial_losses(softmax_map(zs), y, q, d, lam, AdversarialSide::Segmenter).value;
                           },
                           seg.grad_target_logits),
            1e-4);
  EXPECT_LT(worst_logit_fd(zs,
                           [&](const auto& q) {
                             return adversarial_losses(q, y, softmax_map(zt), d, lam, AdversarialSide::Segmenter).value;
                           },
                           seg.grad_source_logits),
            1e-4);
  const auto dis = adversarial_losses(softmax_map(zs), y, softmax_map(zt), d, lam, AdversarialSide::Discriminator);
  const double h = 1e-3;
  for (std::size_t i = 0; i < d.param_count(); ++i) {
    auto up = d, down = d;
    up.params()[i] += h;
    down.params()[i] -= h;
    const double fd = (adversarial_losses(softmax_map(zs), y, softmax_map(zt), up, lam, AdversarialSide::Discriminator).value -
                       adversarial_losses(softmax_map(zs), y, softmax_map(zt), down, lam, AdversarialSide::Discriminator).value) /
                      (2 * h);
    EXPECT_LT(std::abs(dis.grad_disc[i] - fd) / (std::abs(fd) + 1e-8), 1e-4) << "param " << i;
  }
}
