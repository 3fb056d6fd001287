#pragma once

// Dataset directories: `manifest.txt` (flat key = value) plus one
// IAST-TENSOR file per image and per mask.

#include <cstdio>
#include <filesystem>
#include <string>

#include "iast/flat_config.hpp"
#include "iast/synth_data.hpp"
#include "iast/tensor_io.hpp"

namespace iast {

namespace fs = std::filesystem;

inline std::string indexed_name(const std::string& stem, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "_%05zu.iast", i);
  return stem + buf;
}

inline void write_scene_spec(FlatConfig& cfg, const std::string& prefix, const SceneSpec& s) {
  cfg.set(prefix + "height", static_cast<std::uint64_t>(s.height));
  cfg.set(prefix + "width", static_cast<std::uint64_t>(s.width));
  cfg.set(prefix + "num_classes", static_cast<std::uint64_t>(s.num_classes));
  cfg.set(prefix + "class_frequency_skew", s.class_frequency_skew);
  cfg.set(prefix + "shapes_per_image", static_cast<std::uint64_t>(s.shapes_per_image));
  cfg.set(prefix + "foreground_scale", s.foreground_scale);
  cfg.set(prefix + "class_separation", s.class_separation);
  cfg.set(prefix + "hard_class_overlap", s.hard_class_overlap);
  cfg.set(prefix + "pixel_noise", s.pixel_noise);
  cfg.set(prefix + "shape_color_jitter", s.shape_color_jitter);
}

inline SceneSpec read_scene_spec(const FlatConfig& cfg, const std::string& prefix, SceneSpec s = {}) {
  s.height = cfg.get_u64(prefix + "height", s.height);
  s.width = cfg.get_u64(prefix + "width", s.width);
  s.num_classes = cfg.get_u64(prefix + "num_classes", s.num_classes);
  s.class_frequency_skew = cfg.get_double(prefix + "class_frequency_skew", s.class_frequency_skew);
  s.shapes_per_image = cfg.get_u64(prefix + "shapes_per_image", s.shapes_per_image);
  s.foreground_scale = cfg.get_double(prefix + "foreground_scale", s.foreground_scale);
  s.class_separation = cfg.get_double(prefix + "class_separation", s.class_separation);
  s.hard_class_overlap = cfg.get_double(prefix + "hard_class_overlap", s.hard_class_overlap);
  s.pixel_noise = cfg.get_double(prefix + "pixel_noise", s.pixel_noise);
  s.shape_color_jitter = cfg.get_double(prefix + "shape_color_jitter", s.shape_color_jitter);
  return s;
}

inline void save_dataset(const fs::path& dir, const Dataset& ds) {
  ds.validate();
  fs::create_directories(dir);
  FlatConfig manifest;
  manifest.set("domain", domain_name(ds.domain));
  manifest.set("count", static_cast<std::uint64_t>(ds.size()));
  manifest.set("seed", ds.seed);
  manifest.set("labeled", ds.labeled());
  write_scene_spec(manifest, "spec.", ds.spec);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto img = indexed_name("image", i);
    save_array(dir / img, ds.images[i]);
    manifest.set("image." + std::to_string(i), img);
    if (ds.labeled()) {
      const auto m = indexed_name("mask", i);
      save_array(dir / m, ds.masks[i]);
      manifest.set("mask." + std::to_string(i), m);
    }
  }
  manifest.save(dir / "manifest.txt");
}

inline Dataset load_dataset(const fs::path& dir) {
  const auto manifest = FlatConfig::load(dir / "manifest.txt");
  Dataset ds;
  const auto domain = manifest.require("domain");
  if (domain != "source" && domain != "target")
    throw ConfigError(dir.string() + ": manifest domain '" + domain + "' is not a dataset");
  ds.domain = domain == "source" ? Domain::Source : Domain::Target;
  ds.seed = manifest.get_u64("seed");
  ds.spec = read_scene_spec(manifest, "spec.");
  const auto n = manifest.get_u64("count");
  for (std::size_t i = 0; i < n; ++i) {
    ds.images.push_back(load_array<float>(dir / manifest.require("image." + std::to_string(i))));
    if (manifest.get_bool("labeled", false))
      ds.masks.push_back(load_array<std::int32_t>(dir / manifest.require("mask." + std::to_string(i))));
  }
  ds.validate();
  return ds;
}

}  // namespace iast
