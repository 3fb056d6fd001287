#pragma once

// Objective terms on a single image. Every term returns its value together
// with the gradient on the pre-softmax logits, laid out like the ProbMap.
// Values are means over the pixels of the region each term covers; batch
// means are taken by the caller.

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "iast/error.hpp"
#include "iast/seg_model.hpp"
#include "iast/tensor.hpp"

namespace iast {

/// Probabilities are clamped to at least this before any logarithm.
inline constexpr double kProbFloor = 1e-12;

template <typename S>
inline S safe_log(S p) {
  return std::log(std::max(p, static_cast<S>(kProbFloor)));
}

struct LossConfig {
  double lambda_i = 3.0;
  double lambda_c = 0.1;
  double lambda_adv = 0.001;

  void validate() const {
    if (lambda_i < 0 || lambda_c < 0 || lambda_adv < 0) throw ConfigError("loss weights must be non-negative");
  }
};

template <typename S>
struct LossTerm {
  double value = 0.0;
  Array<S> grad;  // d value / d logits, [C,H,W]
};

/// Confident region = pixels carrying a pseudo-label; ignored = the rest.
struct RegionMasks {
  Array<std::uint8_t> confident;
  Array<std::uint8_t> ignored;

  static RegionMasks from_labels(const LabelMask& labels) {
    RegionMasks m{Array<std::uint8_t>(labels.shape()), Array<std::uint8_t>(labels.shape())};
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const bool conf = labels[i] != kVoid;
      m.confident[i] = conf;
      m.ignored[i] = !conf;
    }
    return m;
  }
};

namespace detail {

inline void check_prob_and_plane(const Shape& prob, const Shape& plane) {
  if (prob.size() != 3 || plane.size() != 2 || prob[1] != plane[0] || prob[2] != plane[1])
    throw ShapeError("probability map " + shape_str(prob) + " does not match mask " + shape_str(plane));
}

}  // namespace detail

/// Mean of -log p(label) over non-VOID pixels. An all-VOID mask yields 0.
template <typename S>
LossTerm<S> masked_ce(const ProbMap<S>& prob, const LabelMask& labels) {
  detail::check_prob_and_plane(prob.shape(), labels.shape());
  const std::size_t C = prob.dim(0), N = labels.size();
  LossTerm<S> out{0.0, Array<S>(prob.shape())};
  std::size_t n = 0;
  for (std::size_t p = 0; p < N; ++p) n += labels[p] != kVoid;
  if (n == 0) return out;
  const S inv = S{1} / static_cast<S>(n);
  double total = 0.0;
  for (std::size_t p = 0; p < N; ++p) {
    const auto y = labels[p];
    if (y == kVoid) continue;
    if (y < 0 || static_cast<std::size_t>(y) >= C) throw ShapeError("label outside class range");
    total -= static_cast<double>(safe_log(prob[static_cast<std::size_t>(y) * N + p]));
    for (std::size_t c = 0; c < C; ++c)
      out.grad[c * N + p] = (prob[c * N + p] - (static_cast<std::size_t>(y) == c ? S{1} : S{0})) * inv;
  }
  out.value = total / static_cast<double>(n);
  return out;
}

/// Confident-region KLD to the uniform distribution, up to its constant:
/// mean over confident pixels of -(1/C) sum_c log p(c). Minimum ln C.
template <typename S>
LossTerm<S> kld_confident(const ProbMap<S>& prob, const RegionMasks& masks) {
  detail::check_prob_and_plane(prob.shape(), masks.confident.shape());
  const std::size_t C = prob.dim(0), N = masks.confident.size();
  LossTerm<S> out{0.0, Array<S>(prob.shape())};
  std::size_t n = 0;
  for (std::size_t p = 0; p < N; ++p) n += masks.confident[p] != 0;
  if (n == 0) return out;
  const S inv = S{1} / static_cast<S>(n);
  const S uniform = S{1} / static_cast<S>(C);
  double total = 0.0;
  for (std::size_t p = 0; p < N; ++p) {
    if (!masks.confident[p]) continue;
    double s = 0.0;
    for (std::size_t c = 0; c < C; ++c) s += static_cast<double>(safe_log(prob[c * N + p]));
    total -= s / static_cast<double>(C);
    for (std::size_t c = 0; c < C; ++c) out.grad[c * N + p] = (prob[c * N + p] - uniform) * inv;
  }
  out.value = total / static_cast<double>(n);
  return out;
}

/// Mean Shannon entropy (nats) over ignored pixels.
template <typename S>
LossTerm<S> entropy_ignored(const ProbMap<S>& prob, const RegionMasks& masks) {
  detail::check_prob_and_plane(prob.shape(), masks.ignored.shape());
  const std::size_t C = prob.dim(0), N = masks.ignored.size();
  LossTerm<S> out{0.0, Array<S>(prob.shape())};
  std::size_t n = 0;
  for (std::size_t p = 0; p < N; ++p) n += masks.ignored[p] != 0;
  if (n == 0) return out;
  const S inv = S{1} / static_cast<S>(n);
  double total = 0.0;
  std::vector<S> logp(C);
  for (std::size_t p = 0; p < N; ++p) {
    if (!masks.ignored[p]) continue;
    S h{0};
    for (std::size_t c = 0; c < C; ++c) {
      logp[c] = safe_log(prob[c * N + p]);
      h -= prob[c * N + p] * logp[c];
    }
    total += static_cast<double>(h);
    // dH/dz_k = -p_k (log p_k + H)
    for (std::size_t c = 0; c < C; ++c) out.grad[c * N + p] = -prob[c * N + p] * (logp[c] + h) * inv;
  }
  out.value = total / static_cast<double>(n);
  return out;
}

template <typename S>
struct CombinedLoss {
  double value = 0.0;
  double ce = 0.0;
  double r_i = 0.0;
  double r_c = 0.0;
  Array<S> grad;
};

/// L_CE + lambda_i * R_i + lambda_c * R_c on one target image.
template <typename S>
CombinedLoss<S> combined_objective(const ProbMap<S>& prob, const LabelMask& labels, const RegionMasks& masks,
                                   const LossConfig& cfg) {
  cfg.validate();
  if (masks.confident.shape() != labels.shape() || masks.ignored.shape() != labels.shape())
    throw ShapeError("region masks do not match label mask");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool conf = labels[i] != kVoid;
    if ((masks.confident[i] != 0) != conf || (masks.ignored[i] != 0) == conf)
      throw Error("region masks are inconsistent with labels at pixel " + std::to_string(i));
  }
  auto ce = masked_ce(prob, labels);
  auto ri = entropy_ignored(prob, masks);
  auto rc = kld_confident(prob, masks);
  CombinedLoss<S> out;
  out.ce = ce.value;
  out.r_i = ri.value;
  out.r_c = rc.value;
  out.value = ce.value + cfg.lambda_i * ri.value + cfg.lambda_c * rc.value;
  out.grad = std::move(ce.grad);
  const S li = static_cast<S>(cfg.lambda_i), lc = static_cast<S>(cfg.lambda_c);
  for (std::size_t k = 0; k < out.grad.size(); ++k) out.grad[k] += li * ri.grad[k] + lc * rc.grad[k];
  return out;
}

/// Maps a gradient on probabilities [C, N] to one on logits.
template <typename S>
Array<S> softmax_backward(const ProbMap<S>& prob, std::span<const S> grad_prob) {
  const std::size_t C = prob.dim(0), N = prob.size() / C;
  Array<S> out(prob.shape());
  for (std::size_t p = 0; p < N; ++p) {
    S dot{0};
    for (std::size_t c = 0; c < C; ++c) dot += prob[c * N + p] * grad_prob[c * N + p];
    for (std::size_t c = 0; c < C; ++c) out[c * N + p] = prob[c * N + p] * (grad_prob[c * N + p] - dot);
  }
  return out;
}

enum class AdversarialSide { Segmenter, Discriminator };

template <typename S>
struct AdversarialLoss {
  AdversarialSide side = AdversarialSide::Segmenter;
  double value = 0.0;
  double source_ce = 0.0;       // segmenter side
  double adversarial = 0.0;     // segmenter side, before lambda_adv
  Array<S> grad_source_logits;  // segmenter side
  Array<S> grad_target_logits;  // segmenter side
  std::vector<S> grad_disc;     // discriminator side
};

/// Least-squares adversarial objective. Segmenter side: source CE plus
/// lambda_adv * mean (D(target) - 1)^2. Discriminator side:
/// 0.5 * [mean (D(source) - 1)^2 + mean D(target)^2]. Only the requested
/// side's gradients are produced.
template <typename S>
AdversarialLoss<S> adversarial_losses(const ProbMap<S>& src_prob, const LabelMask& src_labels,
                                      const ProbMap<S>& tgt_prob, const Discriminator<S>& disc, double lambda_adv,
                                      AdversarialSide side) {
  if (src_prob.dim(0) != disc.num_classes() || tgt_prob.dim(0) != disc.num_classes())
    throw ShapeError("discriminator input dimension does not match class count");
  AdversarialLoss<S> out;
  out.side = side;
  if (side == AdversarialSide::Segmenter) {
    auto ce = masked_ce(src_prob, src_labels);
    const auto pass = disc.forward(tgt_prob);
    const std::size_t N = pass.scores.size();
    std::vector<S> gscore(N);
    double mse = 0.0;
    const S scale = static_cast<S>(2.0 * lambda_adv / static_cast<double>(N));
    for (std::size_t p = 0; p < N; ++p) {
      const S d = pass.scores[p] - S{1};
      mse += static_cast<double>(d * d);
      gscore[p] = scale * d;
    }
    out.source_ce = ce.value;
    out.adversarial = mse / static_cast<double>(N);
    out.value = ce.value + lambda_adv * out.adversarial;
    out.grad_source_logits = std::move(ce.grad);
    const auto gprob = disc.backward(pass, gscore, {});
    out.grad_target_logits = softmax_backward<S>(tgt_prob, gprob);
  } else {
    out.grad_disc.assign(disc.param_count(), S{0});
    const auto side_term = [&](const ProbMap<S>& prob, S target) {
      const auto pass = disc.forward(prob);
      const std::size_t N = pass.scores.size();
      std::vector<S> gscore(N);
      double mse = 0.0;
      for (std::size_t p = 0; p < N; ++p) {
        const S d = pass.scores[p] - target;
        mse += static_cast<double>(d * d);
        gscore[p] = d / static_cast<S>(N);  // d/dD of 0.5 * mean d^2
      }
      disc.backward(pass, gscore, out.grad_disc);
      return 0.5 * mse / static_cast<double>(N);
    };
    out.value = side_term(src_prob, S{1}) + side_term(tgt_prob, S{0});
  }
  return out;
}

}  // namespace iast
