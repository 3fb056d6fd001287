#pragma once

// On-disk benchmark layout:
//   source/  target/  target_val/      dataset directories
//   hidden/target/  hidden/target_val/ ground truth, evaluation only

#include "iast/dataset_io.hpp"
#include "iast/metrics.hpp"

namespace iast {

inline void save_benchmark(const fs::path& dir, const UdaBenchmark& b) {
  save_dataset(dir / "source", b.source);
  save_dataset(dir / "target", b.target);
  save_dataset(dir / "target_val", b.target_val);
  save_hidden_masks(dir / "hidden" / "target", b.target_gt, b.target.seed);
  save_hidden_masks(dir / "hidden" / "target_val", b.target_val_gt, b.target_val.seed);
}

inline UdaBenchmark load_benchmark(const fs::path& dir) {
  UdaBenchmark b;
  b.source = load_dataset(dir / "source");
  b.target = load_dataset(dir / "target");
  b.target_val = load_dataset(dir / "target_val");
  b.target_gt = load_hidden_masks(dir / "hidden" / "target");
  b.target_val_gt = load_hidden_masks(dir / "hidden" / "target_val");
  if (!b.source.labeled()) throw ConfigError(dir.string() + ": source split has no masks");
  if (b.target.labeled() || b.target_val.labeled()) throw ConfigError(dir.string() + ": target splits must be unlabeled");
  if (b.target_gt.size() != b.target.size() || b.target_val_gt.size() != b.target_val.size())
    throw ShapeError(dir.string() + ": hidden ground truth count does not match the target splits");
  return b;
}

}  // namespace iast
