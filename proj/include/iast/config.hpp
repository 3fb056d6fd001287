#pragma once

// ExperimentConfig <-> flat `key = value` text. Unknown keys are rejected.

#include <set>
#include <string>
#include <vector>

#include "iast/dataset_io.hpp"
#include "iast/flat_config.hpp"
#include "iast/trainer.hpp"

namespace iast {

inline const std::set<std::string>& known_config_keys() {
  static const std::set<std::string> keys{
      "seed",
      "data.height",
      "data.width",
      "data.num_classes",
      "data.class_frequency_skew",
      "data.shapes_per_image",
      "data.foreground_scale",
      "data.class_separation",
      "data.hard_class_overlap",
      "data.pixel_noise",
      "data.shape_color_jitter",
      "data.n_source",
      "data.n_target",
      "data.n_val",
      "shift.bias",
      "shift.noise_sigma",
      "shift.contrast_scale",
      "model.hidden",
      "model.local_mean_pool",
      "warmup.mode",
      "warmup.epochs",
      "warmup.lr",
      "warmup.disc_lr",
      "train.rounds",
      "train.epochs_per_round",
      "train.batch_size",
      "train.lr",
      "train.beta1",
      "train.beta2",
      "train.eps",
      "train.retain_warmup_loss",
      "train.carry_thresholds",
      "selector.mode",
      "selector.alpha",
      "selector.beta",
      "selector.gamma",
      "selector.constant_threshold",
      "selector.theta_init",
      "loss.lambda_i",
      "loss.lambda_c",
      "loss.lambda_adv",
      "ssl.labeled_fraction",
  };
  return keys;
}

/// Keys every config file must set.
inline const std::vector<std::string>& required_config_keys() {
  static const std::vector<std::string> keys{"seed", "data.num_classes", "data.height", "data.width"};
  return keys;
}

inline std::string join_doubles(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + FlatConfig::format_double(v[i]);
  return s;
}

inline ExperimentConfig config_from_flat(const FlatConfig& f) {
  if (auto unknown = f.unknown_keys(known_config_keys()); !unknown.empty())
    throw ConfigError("unknown config key '" + unknown.front() + "'");
  for (const auto& k : required_config_keys()) f.require(k);

  ExperimentConfig c;
  c.seed = f.get_u64("seed");
  // Reject C < 2 before any unsigned arithmetic touches it.
  if (f.get_int("data.num_classes") < 2) throw ConfigError("data.num_classes must be >= 2");
  c.data.spec = read_scene_spec(f, "data.", c.data.spec);
  c.data.n_source = f.get_u64("data.n_source", c.data.n_source);
  c.data.n_target = f.get_u64("data.n_target", c.data.n_target);
  c.data.n_val = f.get_u64("data.n_val", c.data.n_val);
  c.data.shift.channel_bias = f.get_double_list("shift.bias", c.data.shift.channel_bias);
  c.data.shift.noise_sigma = f.get_double("shift.noise_sigma", c.data.shift.noise_sigma);
  c.data.shift.contrast_scale = f.get_double("shift.contrast_scale", c.data.shift.contrast_scale);

  if (f.has("model.hidden")) {
    c.hidden.clear();
    for (double h : f.get_double_list("model.hidden", {})) {
      if (h < 1 || h != static_cast<double>(static_cast<std::size_t>(h)))
        throw ConfigError("model.hidden entries must be positive integers");
      c.hidden.push_back(static_cast<std::size_t>(h));
    }
  }
  c.local_mean_pool = f.get_bool("model.local_mean_pool", c.local_mean_pool);

  const auto wmode = f.get("warmup.mode", warmup_mode_name(c.warmup.mode));
  if (wmode == "source_only")
    c.warmup.mode = WarmupMode::SourceOnly;
  else if (wmode == "adversarial")
    c.warmup.mode = WarmupMode::Adversarial;
  else
    throw ConfigError("warmup.mode must be source_only or adversarial, got '" + wmode + "'");
  c.warmup.epochs = f.get_u64("warmup.epochs", c.warmup.epochs);
  c.warmup.lr = f.get_double("warmup.lr", c.warmup.lr);
  c.warmup.disc_lr = f.get_double("warmup.disc_lr", c.warmup.disc_lr);

  c.rounds = f.get_u64("train.rounds", c.rounds);
  c.epochs_per_round = f.get_u64("train.epochs_per_round", c.epochs_per_round);
  c.batch_size = f.get_u64("train.batch_size", c.batch_size);
  c.optim.lr = f.get_double("train.lr", c.optim.lr);
  c.optim.beta1 = f.get_double("train.beta1", c.optim.beta1);
  c.optim.beta2 = f.get_double("train.beta2", c.optim.beta2);
  c.optim.eps = f.get_double("train.eps", c.optim.eps);
  c.retain_warmup_loss = f.get_bool("train.retain_warmup_loss", c.retain_warmup_loss);
  c.carry_thresholds = f.get_bool("train.carry_thresholds", c.carry_thresholds);

  c.selector.mode = parse_mode(f.get("selector.mode", mode_name(c.selector.mode)));
  c.selector.alpha = f.get_double("selector.alpha", c.selector.alpha);
  c.selector.beta = f.get_double("selector.beta", c.selector.beta);
  c.selector.gamma = f.get_double("selector.gamma", c.selector.gamma);
  c.selector.constant_threshold = f.get_double("selector.constant_threshold", c.selector.constant_threshold);
  c.selector.theta_init = f.get_double("selector.theta_init", c.selector.theta_init);

  c.loss.lambda_i = f.get_double("loss.lambda_i", c.loss.lambda_i);
  c.loss.lambda_c = f.get_double("loss.lambda_c", c.loss.lambda_c);
  c.loss.lambda_adv = f.get_double("loss.lambda_adv", c.loss.lambda_adv);

  if (f.has("ssl.labeled_fraction")) c.ssl = SslConfig{f.get_double("ssl.labeled_fraction")};
  c.validate();
  return c;
}

inline FlatConfig config_to_flat(const ExperimentConfig& c) {
  FlatConfig f;
  f.set("seed", c.seed);
  write_scene_spec(f, "data.", c.data.spec);
  f.set("data.n_source", static_cast<std::uint64_t>(c.data.n_source));
  f.set("data.n_target", static_cast<std::uint64_t>(c.data.n_target));
  f.set("data.n_val", static_cast<std::uint64_t>(c.data.n_val));
  f.set("shift.bias", join_doubles(c.data.shift.channel_bias));
  f.set("shift.noise_sigma", c.data.shift.noise_sigma);
  f.set("shift.contrast_scale", c.data.shift.contrast_scale);
  std::vector<double> hidden(c.hidden.begin(), c.hidden.end());
  f.set("model.hidden", join_doubles(hidden));
  f.set("model.local_mean_pool", c.local_mean_pool);
  f.set("warmup.mode", warmup_mode_name(c.warmup.mode));
  f.set("warmup.epochs", static_cast<std::uint64_t>(c.warmup.epochs));
  f.set("warmup.lr", c.warmup.lr);
  f.set("warmup.disc_lr", c.warmup.disc_lr);
  f.set("train.rounds", static_cast<std::uint64_t>(c.rounds));
  f.set("train.epochs_per_round", static_cast<std::uint64_t>(c.epochs_per_round));
  f.set("train.batch_size", static_cast<std::uint64_t>(c.batch_size));
  f.set("train.lr", c.optim.lr);
  f.set("train.beta1", c.optim.beta1);
  f.set("train.beta2", c.optim.beta2);
  f.set("train.eps", c.optim.eps);
  f.set("train.retain_warmup_loss", c.retain_warmup_loss);
  f.set("train.carry_thresholds", c.carry_thresholds);
  f.set("selector.mode", mode_name(c.selector.mode));
  f.set("selector.alpha", c.selector.alpha);
  f.set("selector.beta", c.selector.beta);
  f.set("selector.gamma", c.selector.gamma);
  f.set("selector.constant_threshold", c.selector.constant_threshold);
  f.set("selector.theta_init", c.selector.theta_init);
  f.set("loss.lambda_i", c.loss.lambda_i);
  f.set("loss.lambda_c", c.loss.lambda_c);
  f.set("loss.lambda_adv", c.loss.lambda_adv);
  if (c.ssl) f.set("ssl.labeled_fraction", c.ssl->labeled_fraction);
  return f;
}

/// FNV-1a of the canonical serialisation.
inline std::uint64_t config_hash(const ExperimentConfig& c) {
  const auto text = config_to_flat(c).serialize();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace iast
