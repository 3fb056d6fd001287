#pragma once

// One-dimensional hyperparameter sweeps and their CSV/SVG reports. All points
// share the seed, hence the benchmark and the warm-up model; only the swept
// parameter changes between runs.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "iast/trainer.hpp"

namespace iast {

enum class SweepAxis { Alpha, Beta, Gamma, LambdaI, LambdaC };

inline SweepAxis parse_axis(const std::string& s) {
  if (s == "alpha") return SweepAxis::Alpha;
  if (s == "beta") return SweepAxis::Beta;
  if (s == "gamma") return SweepAxis::Gamma;
  if (s == "lambda_i") return SweepAxis::LambdaI;
  if (s == "lambda_c") return SweepAxis::LambdaC;
  throw ConfigError("unknown sweep axis '" + s + "' (alpha, beta, gamma, lambda_i, lambda_c)");
}

inline std::string axis_name(SweepAxis a) {
  switch (a) {
    case SweepAxis::Alpha: return "alpha";
    case SweepAxis::Beta: return "beta";
    case SweepAxis::Gamma: return "gamma";
    case SweepAxis::LambdaI: return "lambda_i";
    case SweepAxis::LambdaC: return "lambda_c";
  }
  return "?";
}

/// Copy of `base` with the axis set to `v`; throws ConfigError if illegal.
inline ExperimentConfig with_axis(const ExperimentConfig& base, SweepAxis a, double v) {
  ExperimentConfig c = base;
  switch (a) {
    case SweepAxis::Alpha: c.selector.alpha = v; break;
    case SweepAxis::Beta: c.selector.beta = v; break;
    case SweepAxis::Gamma: c.selector.gamma = v; break;
    case SweepAxis::LambdaI: c.loss.lambda_i = v; break;
    case SweepAxis::LambdaC: c.loss.lambda_c = v; break;
  }
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(axis_name(a) + "=" + FlatConfig::format_double(v) + " is illegal: " + e.what());
  }
  return c;
}

struct SweepPoint {
  double value = 0.0;
  /// Round-1 pseudo-labels, i.e. the selector applied to the warm-up model.
  double proportion = 0.0;
  std::optional<double> p_miou;
  double final_miou = 0.0;
};

struct SweepResult {
  SweepAxis axis{};
  double warmup_miou = 0.0;
  std::vector<SweepPoint> points;
};

/// Validates every value first, then runs one experiment per value.
/// `per_run_dir(i)` (optional) receives each run's artifacts.
inline SweepResult run_sweep(const ExperimentConfig& base, SweepAxis axis, const std::vector<double>& values,
                             const std::optional<fs::path>& out_dir = std::nullopt) {
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  std::vector<ExperimentConfig> cfgs;
  for (double v : values) cfgs.push_back(with_axis(base, axis, v));

  const auto bench = make_benchmark(base);
  const auto wu = warmup(base, bench.source, bench.target);
  SweepResult res{axis, evaluate(wu.model, bench.target_val, bench.target_val_gt).miou, {}};
  for (std::size_t i = 0; i < cfgs.size(); ++i) {
    std::optional<fs::path> run_dir;
    if (out_dir) run_dir = *out_dir / ("run_" + std::to_string(i));
    const auto r = run_experiment(cfgs[i], bench, run_dir, &wu);
    SweepPoint p;
    p.value = values[i];
    p.proportion = r.rounds.front().proportion;
    p.p_miou = r.rounds.front().p_miou;
    p.final_miou = r.final_target_miou();
    res.points.push_back(p);
  }
  return res;
}

inline std::string sweep_csv(const SweepResult& r) {
  std::string s = axis_name(r.axis) + ",proportion,p_miou,final_miou\n";
  for (const auto& p : r.points)
    s += FlatConfig::format_double(p.value) + "," + FlatConfig::format_double(p.proportion) + "," +
         fmt_opt(p.p_miou) + "," + FlatConfig::format_double(p.final_miou) + "\n";
  return s;
}

/// Minimal self-contained line plot. Points are placed at equal spacing
/// (sweep values are often log-like) and labelled with their value.
inline std::string line_plot_svg(const std::string& title, const std::vector<double>& xs,
                                 const std::vector<double>& ys) {
  const double W = 480, H = 320, L = 60, R = 20, T = 40, B = 50;
  double lo = ys.empty() ? 0 : ys.front(), hi = lo;
  for (double y : ys)
    if (std::isfinite(y)) lo = std::min(lo, y), hi = std::max(hi, y);
  if (hi - lo < 1e-9) lo -= 0.5, hi += 0.5;
  auto px = [&](std::size_t i) { return xs.size() < 2 ? L + (W - L - R) / 2 : L + (W - L - R) * i / (xs.size() - 1.0); };
  auto py = [&](double y) { return T + (H - T - B) * (hi - y) / (hi - lo); };
  auto num = [](double v) {
    char b[32];
    std::snprintf(b, sizeof b, "%.4g", v);
    return std::string(b);
  };
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(W) + "\" height=\"" + num(H) + "\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + num(W / 2) + "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">" +
       title + "</text>\n";
  s += "<line x1=\"" + num(L) + "\" y1=\"" + num(H - B) + "\" x2=\"" + num(W - R) + "\" y2=\"" + num(H - B) +
       "\" stroke=\"black\"/>\n";
  s += "<line x1=\"" + num(L) + "\" y1=\"" + num(T) + "\" x2=\"" + num(L) + "\" y2=\"" + num(H - B) +
       "\" stroke=\"black\"/>\n";
  for (double y : {lo, hi})
    s += "<text x=\"" + num(L - 6) + "\" y=\"" + num(py(y) + 4) +
         "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" + num(y) + "</text>\n";
  std::string pts;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    s += "<text x=\"" + num(px(i)) + "\" y=\"" + num(H - B + 18) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" + num(xs[i]) + "</text>\n";
    if (!std::isfinite(ys[i])) continue;
    pts += (pts.empty() ? "" : " ") + num(px(i)) + "," + num(py(ys[i]));
    s += "<circle cx=\"" + num(px(i)) + "\" cy=\"" + num(py(ys[i])) + "\" r=\"3\" fill=\"steelblue\"/>\n";
  }
  s += "<polyline points=\"" + pts + "\" fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\"/>\n";
  s += "</svg>\n";
  return s;
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

/// sweep.csv plus one SVG per reported column.
inline void write_sweep_report(const fs::path& dir, const SweepResult& r) {
  fs::create_directories(dir);
  write_text(dir / "sweep.csv", sweep_csv(r));
  std::vector<double> xs, prop, pm, fin;
  for (const auto& p : r.points) {
    xs.push_back(p.value);
    prop.push_back(p.proportion);
    pm.push_back(p.p_miou ? *p.p_miou : std::nan(""));
    fin.push_back(p.final_miou);
  }
  const auto a = axis_name(r.axis);
  write_text(dir / "proportion.svg", line_plot_svg("proportion vs " + a, xs, prop));
  write_text(dir / "p_miou.svg", line_plot_svg("P-mIoU vs " + a, xs, pm));
  write_text(dir / "final_miou.svg", line_plot_svg("final mIoU vs " + a, xs, fin));
}

}  // namespace iast
