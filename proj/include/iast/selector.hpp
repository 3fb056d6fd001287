#pragma once

// Pseudo-label generation. Three threshold policies share one labelling rule
// (a pixel keeps its argmax class iff its max probability strictly exceeds
// that class's threshold, otherwise it is VOID):
//   constant           one fixed threshold for every class and image
//   class_balanced     per-class alpha-quantile of confidences pooled over the
//                      whole target set
//   instance_adaptive  per-image per-class quantile, rank scaled by
//                      theta^gamma, folded into a running EMA threshold

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "iast/error.hpp"
#include "iast/flat_config.hpp"
#include "iast/parallel.hpp"
#include "iast/seg_model.hpp"
#include "iast/synth_data.hpp"
#include "iast/tensor.hpp"
#include "iast/tensor_io.hpp"

namespace iast {

enum class SelectorMode { Constant, ClassBalanced, InstanceAdaptive };

inline std::string mode_name(SelectorMode m) {
  switch (m) {
    case SelectorMode::Constant:
      return "constant";
    case SelectorMode::ClassBalanced:
      return "class_balanced";
    case SelectorMode::InstanceAdaptive:
      return "instance_adaptive";
  }
  return "?";
}

inline SelectorMode parse_mode(const std::string& s) {
  if (s == "constant") return SelectorMode::Constant;
  if (s == "class_balanced") return SelectorMode::ClassBalanced;
  if (s == "instance_adaptive") return SelectorMode::InstanceAdaptive;
  throw ConfigError("unknown selector mode '" + s + "'");
}

struct SelectorConfig {
  SelectorMode mode = SelectorMode::InstanceAdaptive;
  double alpha = 0.2;
  double beta = 0.9;
  double gamma = 8.0;
  double constant_threshold = 0.9;
  double theta_init = 0.9;

  void validate() const {
    if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("selector alpha must be in (0,1]");
    if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("selector beta must be in [0,1]");
    if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw ConfigError("selector gamma must be >= 0");
    if (!(theta_init > 0.0 && theta_init <= 1.0)) throw ConfigError("selector theta_init must be in (0,1]");
    // 1.0 is accepted: it is the degenerate "label nothing" threshold.
    if (mode == SelectorMode::Constant && !(constant_threshold > 0.0 && constant_threshold <= 1.0))
      throw ConfigError("selector constant_threshold must be in (0,1]");
  }
};

struct ThresholdState {
  std::vector<double> theta;
  std::size_t instances_seen = 0;
  std::vector<std::size_t> update_counts;

  static ThresholdState initial(std::size_t num_classes, double theta_init) {
    return {std::vector<double>(num_classes, theta_init), 0, std::vector<std::size_t>(num_classes, 0)};
  }
  std::size_t num_classes() const { return theta.size(); }
};

/// Per-class threshold; nullopt marks a class with no argmax pixels.
using ClassThresholds = std::vector<std::optional<double>>;

/// Argmax class (lowest index on ties) and its probability, per pixel.
template <typename S>
struct ArgmaxMap {
  std::vector<std::int32_t> index;
  std::vector<S> value;
};

template <typename S>
ArgmaxMap<S> argmax_map(const ProbMap<S>& prob) {
  if (prob.ndim() != 3 || prob.dim(0) < 2) throw ShapeError("expected a [C>=2,H,W] probability map");
  const std::size_t C = prob.dim(0), N = prob.dim(1) * prob.dim(2);
  ArgmaxMap<S> m{std::vector<std::int32_t>(N, 0), std::vector<S>(N)};
  for (std::size_t p = 0; p < N; ++p) {
    S best = prob[p];
    std::int32_t arg = 0;
    for (std::size_t c = 1; c < C; ++c)
      if (prob[c * N + p] > best) {
        best = prob[c * N + p];
        arg = static_cast<std::int32_t>(c);
      }
    m.index[p] = arg;
    m.value[p] = best;
  }
  return m;
}

/// 0-based rank into a descending list of n confidences:
/// clamp(floor(fraction * n), 0, n - 1).
inline std::size_t quantile_rank(double fraction, std::size_t n) {
  const double raw = std::floor(fraction * static_cast<double>(n));
  if (!(raw > 0.0)) return 0;
  return std::min(static_cast<std::size_t>(raw), n - 1);
}

/// Confidences of pixels whose argmax is `c`, sorted descending; equal values
/// keep pixel order.
template <typename S>
std::vector<S> sorted_class_confidences(const ArgmaxMap<S>& m, std::int32_t c) {
  std::vector<S> out;
  for (std::size_t p = 0; p < m.index.size(); ++p)
    if (m.index[p] == c) out.push_back(m.value[p]);
  std::stable_sort(out.begin(), out.end(), std::greater<>{});
  return out;
}

template <typename S>
ClassThresholds local_threshold(const ArgmaxMap<S>& m, const ThresholdState& state, const SelectorConfig& cfg) {
  const std::size_t C = state.num_classes();
  ClassThresholds out(C);
  for (std::size_t c = 0; c < C; ++c) {
    const auto conf = sorted_class_confidences(m, static_cast<std::int32_t>(c));
    if (conf.empty()) continue;
    const double fraction = cfg.alpha * std::pow(state.theta[c], cfg.gamma);
    out[c] = static_cast<double>(conf[quantile_rank(fraction, conf.size())]);
  }
  return out;
}

/// Instance threshold: for each class, the confidence at rank
/// alpha * theta_prev^gamma * N_c of the descending per-class list.
template <typename S>
ClassThresholds local_threshold(const ProbMap<S>& prob, const ThresholdState& state, const SelectorConfig& cfg) {
  if (prob.dim(0) != state.num_classes()) throw ShapeError("threshold state class count mismatch");
  return local_threshold(argmax_map(prob), state, cfg);
}

/// theta_t = beta * theta_{t-1} + (1 - beta) * theta_x for every class that
/// has a local threshold; absent classes are left untouched.
inline ThresholdState ema_update(ThresholdState state, const ClassThresholds& local, double beta) {
  if (local.size() != state.num_classes()) throw ShapeError("local threshold class count mismatch");
  for (std::size_t c = 0; c < local.size(); ++c) {
    if (!local[c]) continue;
    state.theta[c] = beta * state.theta[c] + (1.0 - beta) * *local[c];
    ++state.update_counts[c];
  }
  ++state.instances_seen;
  return state;
}

template <typename S>
LabelMask select_labels(const ArgmaxMap<S>& m, std::span<const double> theta, std::size_t H, std::size_t W) {
  LabelMask out(Shape{H, W}, kVoid);
  for (std::size_t p = 0; p < m.index.size(); ++p) {
    const auto c = m.index[p];
    if (static_cast<double>(m.value[p]) > theta[static_cast<std::size_t>(c)]) out[p] = c;
  }
  return out;
}

/// Keeps the argmax class where its probability strictly exceeds theta of
/// that class. Use +infinity to label nothing for a class.
template <typename S>
LabelMask select_labels(const ProbMap<S>& prob, std::span<const double> theta) {
  if (theta.size() != prob.dim(0)) throw ShapeError("threshold vector length does not match class count");
  return select_labels(argmax_map(prob), theta, prob.dim(1), prob.dim(2));
}

inline std::vector<double> resolve_absent(const ClassThresholds& t) {
  std::vector<double> out(t.size());
  for (std::size_t c = 0; c < t.size(); ++c) out[c] = t[c] ? *t[c] : std::numeric_limits<double>::infinity();
  return out;
}

struct PseudoLabelBatch {
  std::vector<LabelMask> masks;
  /// Threshold vector used to label each image, in input order.
  std::vector<std::vector<double>> thresholds_used;
  /// Labeled pixels of class c over pixels whose argmax is c, whole batch.
  std::vector<double> class_labeled_fraction;
  /// Labeled pixels per class and pixels predicted per class.
  std::vector<std::size_t> labeled_per_class;
  std::vector<std::size_t> argmax_per_class;
  std::size_t total_pixels = 0;

  double proportion() const {
    const auto labeled = std::accumulate(labeled_per_class.begin(), labeled_per_class.end(), std::size_t{0});
    return total_pixels ? static_cast<double>(labeled) / static_cast<double>(total_pixels) : 0.0;
  }
};

struct PseudoLabelResult {
  PseudoLabelBatch batch;
  /// Final EMA state (instance_adaptive); initial state otherwise.
  ThresholdState state;
};

template <typename S>
PseudoLabelResult generate_pseudo_labels(std::span<const ProbMap<S>> probs, const SelectorConfig& cfg,
                                         std::size_t num_classes,
                                         std::optional<ThresholdState> carried = std::nullopt) {
  cfg.validate();
  const std::size_t C = num_classes;
  for (const auto& p : probs)
    if (p.ndim() != 3 || p.dim(0) != C)
      throw ShapeError("probability map has " + std::to_string(p.ndim() ? p.dim(0) : 0) +
                       " classes, selector expects " + std::to_string(C));
  if (carried && carried->num_classes() != C) throw ShapeError("carried threshold state class count mismatch");

  PseudoLabelResult res;
  res.state = carried ? *carried : ThresholdState::initial(C, cfg.theta_init);
  auto& batch = res.batch;
  const std::size_t n = probs.size();
  batch.masks.resize(n);
  batch.thresholds_used.resize(n);

  std::vector<ArgmaxMap<S>> maps(n);
  parallel_for(n, [&](std::size_t i) { maps[i] = argmax_map(probs[i]); });

  switch (cfg.mode) {
    case SelectorMode::Constant: {
      const std::vector<double> theta(C, cfg.constant_threshold);
      for (std::size_t i = 0; i < n; ++i) batch.thresholds_used[i] = theta;
      break;
    }
    case SelectorMode::ClassBalanced: {
      std::vector<double> theta(C, std::numeric_limits<double>::infinity());
      for (std::size_t c = 0; c < C; ++c) {
        std::vector<S> pooled;
        for (const auto& m : maps) {
          auto part = sorted_class_confidences(m, static_cast<std::int32_t>(c));
          pooled.insert(pooled.end(), part.begin(), part.end());
        }
        if (pooled.empty()) continue;
        std::stable_sort(pooled.begin(), pooled.end(), std::greater<>{});
        theta[c] = static_cast<double>(pooled[quantile_rank(cfg.alpha, pooled.size())]);
      }
      for (std::size_t i = 0; i < n; ++i) batch.thresholds_used[i] = theta;
      break;
    }
    case SelectorMode::InstanceAdaptive: {
      // Sequential fold in input order: update the EMA state with the
      // instance's local thresholds, then label against the updated state.
      for (std::size_t i = 0; i < n; ++i) {
        const auto local = local_threshold(maps[i], res.state, cfg);
        res.state = ema_update(std::move(res.state), local, cfg.beta);
        batch.thresholds_used[i] = res.state.theta;
      }
      break;
    }
  }

  parallel_for(n, [&](std::size_t i) {
    batch.masks[i] = select_labels(maps[i], batch.thresholds_used[i], probs[i].dim(1), probs[i].dim(2));
  });

  batch.labeled_per_class.assign(C, 0);
  batch.argmax_per_class.assign(C, 0);
  for (std::size_t i = 0; i < n; ++i) {
    batch.total_pixels += batch.masks[i].size();
    for (std::size_t p = 0; p < maps[i].index.size(); ++p) {
      ++batch.argmax_per_class[static_cast<std::size_t>(maps[i].index[p])];
      if (batch.masks[i][p] != kVoid) ++batch.labeled_per_class[static_cast<std::size_t>(batch.masks[i][p])];
    }
  }
  batch.class_labeled_fraction.assign(C, 0.0);
  for (std::size_t c = 0; c < C; ++c)
    if (batch.argmax_per_class[c])
      batch.class_labeled_fraction[c] =
          static_cast<double>(batch.labeled_per_class[c]) / static_cast<double>(batch.argmax_per_class[c]);
  return res;
}

/// Runs `generator` over every image (read-only, parallel) and selects labels.
template <typename S>
PseudoLabelResult generate_pseudo_labels(const SegModel<S>& generator, const Dataset& target,
                                         const SelectorConfig& cfg, std::size_t num_classes,
                                         std::optional<ThresholdState> carried = std::nullopt) {
  if (generator.num_classes() != num_classes)
    throw ConfigError("generator predicts " + std::to_string(generator.num_classes()) +
                      " classes but the selector is configured for " + std::to_string(num_classes));
  std::vector<ProbMap<S>> probs(target.size());
  parallel_for(target.size(), [&](std::size_t i) { probs[i] = generator.predict(target.images[i]); });
  return generate_pseudo_labels<S>(std::span<const ProbMap<S>>(probs), cfg, num_classes, std::move(carried));
}

/// Writes masks as IAST-TENSOR files, the per-image threshold trajectory as
/// CSV and a flat-text report. `extra` is merged into the report.
inline void save_pseudo_labels(const std::filesystem::path& dir, const PseudoLabelResult& res,
                               const SelectorConfig& cfg, const FlatConfig& extra = {}) {
  std::filesystem::create_directories(dir);
  const auto& b = res.batch;
  for (std::size_t i = 0; i < b.masks.size(); ++i) {
    char name[40];
    std::snprintf(name, sizeof name, "label_%05zu.iast", i);
    save_array(dir / name, b.masks[i]);
  }
  {
    std::ofstream csv(dir / "theta_trajectory.csv", std::ios::trunc);
    csv << "instance";
    const std::size_t C = res.state.num_classes();
    for (std::size_t c = 0; c < C; ++c) csv << ",theta_" << c;
    csv << "\n";
    for (std::size_t i = 0; i < b.thresholds_used.size(); ++i) {
      csv << i;
      for (double t : b.thresholds_used[i]) csv << "," << FlatConfig::format_double(t);
      csv << "\n";
    }
  }
  FlatConfig report = extra;
  report.set("selector.mode", mode_name(cfg.mode));
  report.set("selector.alpha", cfg.alpha);
  report.set("selector.beta", cfg.beta);
  report.set("selector.gamma", cfg.gamma);
  report.set("count", static_cast<std::uint64_t>(b.masks.size()));
  report.set("proportion", b.proportion());
  for (std::size_t c = 0; c < b.class_labeled_fraction.size(); ++c) {
    report.set("class." + std::to_string(c) + ".labeled_fraction", b.class_labeled_fraction[c]);
    report.set("class." + std::to_string(c) + ".labeled_pixels", static_cast<std::uint64_t>(b.labeled_per_class[c]));
    report.set("class." + std::to_string(c) + ".final_theta", res.state.theta[c]);
  }
  report.save(dir / "report.txt");
}

}  // namespace iast
