#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "iast/dataset_io.hpp"
#include "iast/error.hpp"
#include "iast/parallel.hpp"
#include "iast/seg_model.hpp"
#include "iast/selector.hpp"
#include "iast/synth_data.hpp"
#include "iast/tensor.hpp"

namespace iast {

/// The only reader of HiddenMasks.
struct GroundTruthAccess {
  static const std::vector<LabelMask>& masks(const HiddenMasks& h) { return h.masks_; }
};

/// Rows are ground truth, columns predictions. Pixels that are VOID in either
/// are not counted.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_classes) : c_(num_classes), counts_(num_classes * num_classes, 0) {}

  std::size_t num_classes() const { return c_; }
  std::uint64_t operator()(std::size_t gt, std::size_t pred) const { return counts_[gt * c_ + pred]; }

  void add(const LabelMask& gt, const LabelMask& pred) {
    if (gt.shape() != pred.shape())
      throw ShapeError("confusion matrix: gt " + shape_str(gt.shape()) + " vs prediction " + shape_str(pred.shape()));
    for (std::size_t i = 0; i < gt.size(); ++i) {
      const auto g = gt[i], p = pred[i];
      if (g == kVoid || p == kVoid) continue;
      if (g < 0 || p < 0 || static_cast<std::size_t>(g) >= c_ || static_cast<std::size_t>(p) >= c_)
        throw ShapeError("confusion matrix: label outside class range");
      ++counts_[static_cast<std::size_t>(g) * c_ + static_cast<std::size_t>(p)];
    }
  }

  void merge(const ConfusionMatrix& other) {
    if (other.c_ != c_) throw ShapeError("confusion matrix class count mismatch");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  }

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto v : counts_) t += v;
    return t;
  }

 private:
  std::size_t c_;
  std::vector<std::uint64_t> counts_;
};

struct MiouResult {
  double miou = 0.0;
  /// nullopt for classes absent from both ground truth and prediction.
  std::vector<std::optional<double>> iou;
};

/// IoU_c = TP / (TP + FP + FN), averaged over classes that appear in the
/// ground truth or the prediction.
inline MiouResult miou(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw Error("mIoU of an empty confusion matrix");
  const std::size_t C = cm.num_classes();
  MiouResult r;
  r.iou.resize(C);
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t c = 0; c < C; ++c) {
    std::uint64_t tp = cm(c, c), fp = 0, fn = 0;
    for (std::size_t k = 0; k < C; ++k) {
      if (k == c) continue;
      fp += cm(k, c);
      fn += cm(c, k);
    }
    const auto denom = tp + fp + fn;
    if (denom == 0) continue;
    r.iou[c] = static_cast<double>(tp) / static_cast<double>(denom);
    sum += *r.iou[c];
    ++n;
  }
  r.miou = sum / static_cast<double>(n);
  return r;
}

template <typename S>
LabelMask argmax_labels(const ProbMap<S>& prob) {
  auto m = argmax_map(prob);
  return LabelMask(Shape{prob.dim(1), prob.dim(2)}, std::move(m.index));
}

inline ConfusionMatrix confusion(const std::vector<LabelMask>& gt, const std::vector<LabelMask>& pred,
                                 std::size_t num_classes) {
  if (gt.size() != pred.size())
    throw ShapeError("ground truth has " + std::to_string(gt.size()) + " masks, prediction " +
                     std::to_string(pred.size()));
  std::vector<ConfusionMatrix> parts(gt.size(), ConfusionMatrix(num_classes));
  parallel_for(gt.size(), [&](std::size_t i) { parts[i].add(gt[i], pred[i]); });
  ConfusionMatrix cm(num_classes);
  for (const auto& p : parts) cm.merge(p);
  return cm;
}

/// Argmax predictions of `model` on every image.
template <typename S>
std::vector<LabelMask> predict_labels(const SegModel<S>& model, const Dataset& ds) {
  std::vector<LabelMask> out(ds.size());
  parallel_for(ds.size(), [&](std::size_t i) { out[i] = argmax_labels(model.predict(ds.images[i])); });
  return out;
}

template <typename S>
MiouResult evaluate(const SegModel<S>& model, const Dataset& ds, const HiddenMasks& gt) {
  return miou(confusion(GroundTruthAccess::masks(gt), predict_labels(model, ds), model.num_classes()));
}

/// For labelled datasets (source, or SSL splits).
template <typename S>
MiouResult evaluate(const SegModel<S>& model, const Dataset& ds) {
  if (!ds.labeled()) throw Error("evaluate: dataset has no masks; pass hidden ground truth");
  return miou(confusion(ds.masks, predict_labels(model, ds), model.num_classes()));
}

struct PseudoLabelStats {
  double proportion = 0.0;
  std::vector<double> class_proportion;  // labeled pixels of class c / all pixels
  std::optional<double> p_miou;          // nullopt when nothing is labeled
  std::vector<std::optional<double>> p_iou;
};

inline PseudoLabelStats pseudo_label_stats(const std::vector<LabelMask>& labels, const std::vector<LabelMask>& gt,
                                           std::size_t num_classes) {
  if (labels.size() != gt.size()) throw ShapeError("pseudo-label batch and ground truth differ in size");
  PseudoLabelStats s;
  s.class_proportion.assign(num_classes, 0.0);
  std::uint64_t total = 0, labeled = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i].shape() != gt[i].shape()) throw ShapeError("pseudo-label " + std::to_string(i) + " size mismatch");
    total += labels[i].size();
    for (auto v : labels[i].values())
      if (v != kVoid) {
        ++labeled;
        s.class_proportion.at(static_cast<std::size_t>(v)) += 1.0;
      }
  }
  if (total == 0) throw Error("pseudo-label stats of an empty batch");
  s.proportion = static_cast<double>(labeled) / static_cast<double>(total);
  for (auto& v : s.class_proportion) v /= static_cast<double>(total);
  if (labeled > 0) {
    auto r = miou(confusion(gt, labels, num_classes));
    s.p_miou = r.miou;
    s.p_iou = std::move(r.iou);
  }
  return s;
}

inline PseudoLabelStats pseudo_label_stats(const PseudoLabelBatch& batch, const HiddenMasks& gt,
                                           std::size_t num_classes) {
  return pseudo_label_stats(batch.masks, GroundTruthAccess::masks(gt), num_classes);
}

/// Fraction of labeled pixels whose pseudo-label matches ground truth.
inline double pseudo_label_precision(const std::vector<LabelMask>& labels, const HiddenMasks& gt) {
  const auto& g = GroundTruthAccess::masks(gt);
  std::uint64_t hit = 0, n = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    for (std::size_t p = 0; p < labels[i].size(); ++p)
      if (labels[i][p] != kVoid) {
        ++n;
        hit += labels[i][p] == g[i][p];
      }
  return n ? static_cast<double>(hit) / static_cast<double>(n) : 0.0;
}

/// Fraction of all pixels where `pred` matches ground truth.
inline double pixel_accuracy(const std::vector<LabelMask>& pred, const HiddenMasks& gt) {
  const auto& g = GroundTruthAccess::masks(gt);
  std::uint64_t hit = 0, n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    for (std::size_t p = 0; p < pred[i].size(); ++p) {
      ++n;
      hit += pred[i][p] == g[i][p];
    }
  return n ? static_cast<double>(hit) / static_cast<double>(n) : 0.0;
}

/// Shannon entropy (nats) of the class histogram of labeled pixels.
inline double label_diversity(const std::vector<LabelMask>& labels, std::size_t num_classes) {
  std::vector<double> hist(num_classes, 0.0);
  double n = 0.0;
  for (const auto& m : labels)
    for (auto v : m.values())
      if (v != kVoid) {
        hist.at(static_cast<std::size_t>(v)) += 1.0;
        n += 1.0;
      }
  if (n == 0.0) throw Error("label diversity needs at least one labeled pixel");
  double h = 0.0;
  for (double c : hist)
    if (c > 0.0) h -= (c / n) * std::log(c / n);
  return h;
}

inline double label_diversity(const PseudoLabelBatch& batch, std::size_t num_classes) {
  return label_diversity(batch.masks, num_classes);
}

/// Debug/oracle hook: exposes ground truth as if it were a pseudo-label batch.
inline std::vector<LabelMask> reveal_ground_truth(const HiddenMasks& gt) { return GroundTruthAccess::masks(gt); }

inline void save_hidden_masks(const fs::path& dir, const HiddenMasks& gt, std::uint64_t seed) {
  fs::create_directories(dir);
  FlatConfig manifest;
  manifest.set("domain", std::string("ground_truth"));
  manifest.set("count", static_cast<std::uint64_t>(gt.size()));
  manifest.set("seed", seed);
  const auto& masks = GroundTruthAccess::masks(gt);
  for (std::size_t i = 0; i < masks.size(); ++i) {
    const auto name = indexed_name("mask", i);
    save_array(dir / name, masks[i]);
    manifest.set("mask." + std::to_string(i), name);
  }
  manifest.save(dir / "manifest.txt");
}

inline HiddenMasks load_hidden_masks(const fs::path& dir) {
  const auto manifest = FlatConfig::load(dir / "manifest.txt");
  if (manifest.require("domain") != "ground_truth") throw ConfigError(dir.string() + " is not a ground-truth directory");
  std::vector<LabelMask> masks;
  for (std::size_t i = 0; i < manifest.get_u64("count"); ++i)
    masks.push_back(load_array<std::int32_t>(dir / manifest.require("mask." + std::to_string(i))));
  return HiddenMasks(std::move(masks));
}

/// CSV: one row per class with IoU (empty when excluded) and an mIoU row.
inline void write_iou_csv(const fs::path& path, const MiouResult& r) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "class,iou\n";
  for (std::size_t c = 0; c < r.iou.size(); ++c)
    out << c << "," << (r.iou[c] ? FlatConfig::format_double(*r.iou[c]) : "") << "\n";
  out << "mIoU," << FlatConfig::format_double(r.miou) << "\n";
}

}  // namespace iast
