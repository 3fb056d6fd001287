#pragma once

// Synthetic two-domain segmentation scenes. Each scene is a background plane
// with axis-aligned rectangles and discs painted per foreground class; pixel
// features are a class-conditional colour (3 channels) plus normalised
// column/row coordinates (2 channels).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "iast/error.hpp"
#include "iast/parallel.hpp"
#include "iast/random.hpp"
#include "iast/tensor.hpp"

namespace iast {

inline constexpr std::size_t kColorChannels = 3;
inline constexpr std::size_t kFeatureChannels = 5;
inline constexpr int kBackgroundClass = 0;
/// Shifted features are clamped into [-kFeatureLimit, kFeatureLimit].
inline constexpr float kFeatureLimit = 10.0f;

struct SceneSpec {
  std::size_t height = 48;
  std::size_t width = 48;
  std::size_t num_classes = 5;
  /// Ratio of the expected area of the most frequent class (background) to
  /// the least frequent one. Intermediate classes are spaced geometrically.
  double class_frequency_skew = 4.0;
  /// Shapes painted for each foreground class in every image.
  std::size_t shapes_per_image = 2;
  /// Scales every foreground coverage; 0 leaves only the background plane.
  double foreground_scale = 1.0;
  /// Colour distance of the easiest class mean from the background mean.
  double class_separation = 1.6;
  /// Fraction by which the rarest class's colour distance shrinks toward the
  /// background ("hard" classes are rarer and overlap the background more).
  double hard_class_overlap = 0.45;
  double pixel_noise = 0.25;
  double shape_color_jitter = 0.08;

  void validate() const {
    if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
    if (num_classes > 254) throw ConfigError("num_classes must be <= 254");
    if (class_frequency_skew < 1.0) throw ConfigError("class_frequency_skew must be >= 1");
    if (shapes_per_image < 1) throw ConfigError("shapes_per_image must be >= 1");
    if (foreground_scale < 0.0) throw ConfigError("foreground_scale must be >= 0");
    if (pixel_noise < 0.0 || shape_color_jitter < 0.0) throw ConfigError("noise levels must be >= 0");
    if (hard_class_overlap < 0.0 || hard_class_overlap >= 1.0)
      throw ConfigError("hard_class_overlap must be in [0,1)");
  }

  friend bool operator==(const SceneSpec&, const SceneSpec&) = default;
};

struct DomainShift {
  /// Additive offset per colour channel; missing entries are 0.
  std::vector<double> channel_bias;
  double noise_sigma = 0.0;
  double contrast_scale = 1.0;

  static DomainShift identity() { return {}; }

  bool is_identity() const {
    return noise_sigma == 0.0 && contrast_scale == 1.0 &&
           std::all_of(channel_bias.begin(), channel_bias.end(), [](double b) { return b == 0.0; });
  }

  void validate() const {
    if (noise_sigma < 0.0) throw ConfigError("noise_sigma must be >= 0");
    if (!(contrast_scale > 0.0)) throw ConfigError("contrast_scale must be > 0");
    if (channel_bias.size() > kColorChannels) throw ConfigError("channel_bias has more than 3 entries");
  }

  friend bool operator==(const DomainShift&, const DomainShift&) = default;
};

enum class Domain { Source, Target };

inline std::string domain_name(Domain d) { return d == Domain::Source ? "source" : "target"; }

struct Scene {
  Image<float> image;
  LabelMask mask;
};

struct Dataset {
  Domain domain = Domain::Source;
  SceneSpec spec;
  std::uint64_t seed = 0;
  std::vector<Image<float>> images;
  /// Empty for unlabelled target data.
  std::vector<LabelMask> masks;

  std::size_t size() const { return images.size(); }
  bool labeled() const { return !masks.empty(); }

  void validate() const {
    if (!masks.empty() && masks.size() != images.size())
      throw ShapeError("dataset has " + std::to_string(images.size()) + " images but " +
                       std::to_string(masks.size()) + " masks");
    for (std::size_t i = 0; i < masks.size(); ++i)
      if (masks[i].dim(0) != images[i].dim(1) || masks[i].dim(1) != images[i].dim(2))
        throw ShapeError("mask " + std::to_string(i) + " does not match its image");
  }
};

struct GroundTruthAccess;

/// Target-domain ground truth. Only evaluation code (via GroundTruthAccess)
/// can read it back; training code can only carry it around.
class HiddenMasks {
 public:
  HiddenMasks() = default;
  explicit HiddenMasks(std::vector<LabelMask> masks) : masks_(std::move(masks)) {}
  std::size_t size() const { return masks_.size(); }

 private:
  friend struct GroundTruthAccess;
  std::vector<LabelMask> masks_;
};

struct UdaBenchmark {
  Dataset source;
  Dataset target;
  HiddenMasks target_gt;
  /// Held-out shifted images used for reporting target mIoU.
  Dataset target_val;
  HiddenMasks target_val_gt;
};

namespace detail {

/// Expected visible area fraction of each class, background first.
inline std::vector<double> class_area_targets(const SceneSpec& spec) {
  const std::size_t c = spec.num_classes;
  std::vector<double> w(c);
  for (std::size_t k = 0; k < c; ++k)
    w[k] = std::pow(spec.class_frequency_skew, -static_cast<double>(k) / static_cast<double>(c - 1));
  double total = 0.0;
  for (double v : w) total += v;
  for (double& v : w) v /= total;
  return w;
}

/// Coverage of each foreground layer (classes painted in index order, later
/// layers on top) such that visible areas match class_area_targets under
/// independent placement.
inline std::vector<double> layer_coverages(const SceneSpec& spec) {
  const auto visible = class_area_targets(spec);
  const std::size_t c = spec.num_classes;
  std::vector<double> cover(c, 0.0);
  double above = 1.0;  // product of (1 - cover) over layers painted later
  for (std::size_t k = c - 1; k >= 1; --k) {
    cover[k] = std::min(0.95, visible[k] / above);
    above *= (1.0 - cover[k]);
  }
  for (auto& v : cover) v = std::min(0.95, v * spec.foreground_scale);
  return cover;
}

/// Unit colour direction for class k (k >= 1), spread on a sphere.
inline std::array<double, kColorChannels> class_direction(std::size_t k, std::size_t num_classes) {
  const double n = static_cast<double>(num_classes - 1);
  const double i = static_cast<double>(k - 1) + 0.5;
  const double z = 1.0 - 2.0 * i / n;
  const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
  const double phi = i * std::numbers::pi * (3.0 - std::sqrt(5.0));
  return {r * std::cos(phi), r * std::sin(phi), z};
}

}  // namespace detail

/// Mean colour of class `k`; background sits at the origin.
inline std::array<double, kColorChannels> class_color_mean(const SceneSpec& spec, std::size_t k) {
  if (k == 0) return {0.0, 0.0, 0.0};
  const double hardness =
      spec.num_classes > 2 ? static_cast<double>(k - 1) / static_cast<double>(spec.num_classes - 2) : 0.0;
  const double dist = spec.class_separation * (1.0 - spec.hard_class_overlap * hardness);
  auto d = detail::class_direction(k, spec.num_classes);
  for (auto& v : d) v *= dist;
  return d;
}

inline Scene generate_scene(const SceneSpec& spec, std::uint64_t seed) {
  spec.validate();
  const std::size_t H = spec.height, W = spec.width;
  if (H < 4 || W < 4) throw ConfigError("scene must be at least 4x4 pixels");
  const auto cover = detail::layer_coverages(spec);
  const double pixels = static_cast<double>(H * W);

  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  LabelMask mask(Shape{H, W}, kBackgroundClass);
  std::vector<std::array<double, kColorChannels>> shape_colors;  // per painted shape
  std::vector<int> shape_of_pixel(H * W, -1);
  std::vector<std::array<double, kColorChannels>> base;
  base.push_back({gauss(rng) * spec.shape_color_jitter, gauss(rng) * spec.shape_color_jitter,
                  gauss(rng) * spec.shape_color_jitter});

  const double k_shapes = static_cast<double>(spec.shapes_per_image);
  for (std::size_t cls = 1; cls < spec.num_classes; ++cls) {
    if (cover[cls] <= 0.0) continue;
    // Per-shape fraction so that the union of k independent shapes has the layer coverage.
    const double per_shape = 1.0 - std::pow(1.0 - cover[cls], 1.0 / k_shapes);
    const double mean_area = per_shape * pixels;
    if (mean_area < 1.0)
      throw ConfigError("scene " + std::to_string(H) + "x" + std::to_string(W) +
                        " is too small to place shapes for class " + std::to_string(cls));
    const auto mean = class_color_mean(spec, cls);
    for (std::size_t s = 0; s < spec.shapes_per_image; ++s) {
      std::array<double, kColorChannels> color{};
      for (std::size_t ch = 0; ch < kColorChannels; ++ch) color[ch] = mean[ch] + gauss(rng) * spec.shape_color_jitter;
      const int shape_id = static_cast<int>(base.size());
      base.push_back(color);
      const bool disc = unit(rng) < 0.5;
      if (disc) {
        const double r = std::min(std::sqrt(mean_area / std::numbers::pi), 0.5 * static_cast<double>(std::min(H, W)));
        const double cy = r + unit(rng) * (static_cast<double>(H) - 2.0 * r);
        const double cx = r + unit(rng) * (static_cast<double>(W) - 2.0 * r);
        for (std::size_t h = 0; h < H; ++h)
          for (std::size_t w = 0; w < W; ++w) {
            const double dy = static_cast<double>(h) + 0.5 - cy, dx = static_cast<double>(w) + 0.5 - cx;
            if (dy * dy + dx * dx <= r * r) {
              mask.at(h, w) = static_cast<std::int32_t>(cls);
              shape_of_pixel[h * W + w] = shape_id;
            }
          }
      } else {
        const double aspect = std::exp((unit(rng) - 0.5) * std::log(4.0));  // [1/2, 2]
        const auto rh = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(std::sqrt(mean_area / aspect))), 1, H);
        const auto rw = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(std::sqrt(mean_area * aspect))), 1, W);
        const auto y0 = static_cast<std::size_t>(unit(rng) * static_cast<double>(H - rh + 1));
        const auto x0 = static_cast<std::size_t>(unit(rng) * static_cast<double>(W - rw + 1));
        for (std::size_t h = y0; h < std::min(H, y0 + rh); ++h)
          for (std::size_t w = x0; w < std::min(W, x0 + rw); ++w) {
            mask.at(h, w) = static_cast<std::int32_t>(cls);
            shape_of_pixel[h * W + w] = shape_id;
          }
      }
    }
  }

  Image<float> image(Shape{kFeatureChannels, H, W});
  for (std::size_t h = 0; h < H; ++h)
    for (std::size_t w = 0; w < W; ++w) {
      const int sid = shape_of_pixel[h * W + w];
      const auto& color = base[static_cast<std::size_t>(sid < 0 ? 0 : sid)];
      for (std::size_t ch = 0; ch < kColorChannels; ++ch)
        image.at(ch, h, w) = static_cast<float>(color[ch] + gauss(rng) * spec.pixel_noise);
      image.at(3, h, w) = static_cast<float>(2.0 * static_cast<double>(w) / static_cast<double>(W - 1) - 1.0);
      image.at(4, h, w) = static_cast<float>(2.0 * static_cast<double>(h) / static_cast<double>(H - 1) - 1.0);
    }
  return {std::move(image), std::move(mask)};
}

/// out = contrast * x + bias + N(0, sigma) on the colour channels; coordinate
/// channels pass through. Results are clamped to +-kFeatureLimit.
inline Image<float> apply_domain_shift(const Image<float>& image, const DomainShift& shift, std::uint64_t seed) {
  shift.validate();
  if (shift.is_identity()) return image;
  if (image.ndim() != 3 || image.dim(0) < kColorChannels)
    throw ShapeError("domain shift expects a [F>=3,H,W] image, got " + shape_str(image.shape()));
  Image<float> out = image;
  Rng rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (std::size_t ch = 0; ch < kColorChannels; ++ch) {
    const double bias = ch < shift.channel_bias.size() ? shift.channel_bias[ch] : 0.0;
    for (auto& v : out.plane(ch)) {
      double x = shift.contrast_scale * static_cast<double>(v) + bias;
      if (shift.noise_sigma > 0.0) x += shift.noise_sigma * gauss(rng);
      v = static_cast<float>(std::clamp(x, -static_cast<double>(kFeatureLimit), static_cast<double>(kFeatureLimit)));
    }
  }
  return out;
}

/// Stream ids keep source, target and validation draws independent.
enum class SplitStream : std::uint64_t { Source = 1, Target = 2, TargetVal = 3, SourceVal = 4 };

inline std::uint64_t scene_seed(std::uint64_t run_seed, SplitStream stream, std::size_t index) {
  return derive_seed(run_seed, {static_cast<std::uint64_t>(stream), index, 0});
}
inline std::uint64_t shift_seed(std::uint64_t run_seed, SplitStream stream, std::size_t index) {
  return derive_seed(run_seed, {static_cast<std::uint64_t>(stream), index, 1});
}

/// Generates `n` labelled scenes of one split. Parallel over images; each
/// image depends only on (spec, shift, run_seed, stream, index).
inline Dataset generate_split(const SceneSpec& spec, const DomainShift& shift, std::size_t n, std::uint64_t run_seed,
                              SplitStream stream) {
  spec.validate();
  shift.validate();
  Dataset ds;
  ds.domain = (stream == SplitStream::Source || stream == SplitStream::SourceVal) ? Domain::Source : Domain::Target;
  ds.spec = spec;
  ds.seed = run_seed;
  ds.images.resize(n);
  ds.masks.resize(n);
  parallel_for(n, [&](std::size_t i) {
    auto scene = generate_scene(spec, scene_seed(run_seed, stream, i));
    ds.images[i] = apply_domain_shift(scene.image, shift, shift_seed(run_seed, stream, i));
    ds.masks[i] = std::move(scene.mask);
  });
  return ds;
}

inline UdaBenchmark make_uda_benchmark(const SceneSpec& spec, const DomainShift& shift, std::size_t n_source,
                                       std::size_t n_target, std::uint64_t seed, std::size_t n_val = 0) {
  if (n_source < 1) throw ConfigError("n_source must be >= 1");
  if (n_target < 1) throw ConfigError("n_target must be >= 1");
  if (n_val == 0) n_val = n_target;
  UdaBenchmark b;
  b.source = generate_split(spec, DomainShift::identity(), n_source, seed, SplitStream::Source);
  b.target = generate_split(spec, shift, n_target, seed, SplitStream::Target);
  b.target_gt = HiddenMasks(std::move(b.target.masks));
  b.target.masks.clear();
  b.target_val = generate_split(spec, shift, n_val, seed, SplitStream::TargetVal);
  b.target_val_gt = HiddenMasks(std::move(b.target_val.masks));
  b.target_val.masks.clear();
  return b;
}

}  // namespace iast
