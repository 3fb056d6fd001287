#pragma once

// Per-pixel segmentation network (optional 3x3 mean pool, then an MLP with
// tanh hidden units and a softmax head), a per-pixel domain discriminator,
// and the Adam optimiser. Gradients are analytic; there is no autograd.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "iast/error.hpp"
#include "iast/flat_config.hpp"
#include "iast/random.hpp"
#include "iast/tensor.hpp"
#include "iast/tensor_io.hpp"

namespace iast {

/// Fully connected stack applied row-wise to an [N, in] matrix. Parameters
/// are one flat vector: for each layer, the [out, in] weight block followed
/// by the [out] bias.
template <typename S>
class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
    if (dims_.size() < 2) throw ConfigError("an MLP needs at least an input and an output dimension");
    for (auto d : dims_)
      if (d == 0) throw ConfigError("MLP layer dimensions must be positive");
    params_.assign(param_count(dims_), S{0});
  }

  static std::size_t param_count(const std::vector<std::size_t>& dims) {
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) n += (dims[l] + 1) * dims[l + 1];
    return n;
  }

  const std::vector<std::size_t>& dims() const { return dims_; }
  std::size_t num_layers() const { return dims_.size() - 1; }
  std::size_t in_dim() const { return dims_.front(); }
  std::size_t out_dim() const { return dims_.back(); }

  std::vector<S>& params() { return params_; }
  const std::vector<S>& params() const { return params_; }

  std::size_t weight_offset(std::size_t layer) const {
    std::size_t off = 0;
    for (std::size_t l = 0; l < layer; ++l) off += (dims_[l] + 1) * dims_[l + 1];
    return off;
  }
  std::size_t bias_offset(std::size_t layer) const { return weight_offset(layer) + dims_[layer] * dims_[layer + 1]; }

  /// Glorot-uniform weights, zero biases.
  void init(std::uint64_t seed) {
    Rng rng(seed);
    for (std::size_t l = 0; l < num_layers(); ++l) {
      const double limit = std::sqrt(6.0 / static_cast<double>(dims_[l] + dims_[l + 1]));
      std::uniform_real_distribution<double> u(-limit, limit);
      const std::size_t w0 = weight_offset(l), b0 = bias_offset(l);
      for (std::size_t i = w0; i < b0; ++i) params_[i] = static_cast<S>(u(rng));
      for (std::size_t i = b0; i < b0 + dims_[l + 1]; ++i) params_[i] = S{0};
    }
  }

  /// Cached activations: acts[0] is the input, acts[l+1] the output of layer
  /// l (tanh applied for hidden layers, raw for the last).
  struct Pass {
    std::size_t rows = 0;
    std::vector<std::vector<S>> acts;
    bool valid() const { return !acts.empty(); }
  };

  Pass forward(std::vector<S> input, std::size_t rows) const {
    if (input.size() != rows * in_dim()) throw ShapeError("MLP input size mismatch");
    Pass pass;
    pass.rows = rows;
    pass.acts.reserve(dims_.size());
    pass.acts.push_back(std::move(input));
    for (std::size_t l = 0; l < num_layers(); ++l) {
      const std::size_t in = dims_[l], out = dims_[l + 1];
      const S* w = params_.data() + weight_offset(l);
      const S* b = params_.data() + bias_offset(l);
      const auto& x = pass.acts.back();
      std::vector<S> y(rows * out);
      const bool hidden = l + 1 < num_layers();
      for (std::size_t r = 0; r < rows; ++r) {
        const S* xr = x.data() + r * in;
        S* yr = y.data() + r * out;
        for (std::size_t o = 0; o < out; ++o) {
          S acc = b[o];
          const S* wo = w + o * in;
          for (std::size_t i = 0; i < in; ++i) acc += wo[i] * xr[i];
          yr[o] = hidden ? std::tanh(acc) : acc;
        }
      }
      pass.acts.push_back(std::move(y));
    }
    return pass;
  }

  /// Accumulates dL/dparams into `grad` given dL/d(output) [rows, out]. When
  /// `grad_input` is non-null it receives dL/d(input) [rows, in].
  void backward(const Pass& pass, std::span<const S> grad_out, std::span<S> grad,
                std::vector<S>* grad_input = nullptr) const {
    if (!pass.valid()) throw Error("backward called without a forward pass");
    if (grad.size() != params_.size()) throw ShapeError("gradient buffer size mismatch");
    const std::size_t rows = pass.rows;
    if (grad_out.size() != rows * out_dim()) throw ShapeError("upstream gradient size mismatch");
    std::vector<S> delta(grad_out.begin(), grad_out.end());
    for (std::size_t l = num_layers(); l-- > 0;) {
      const std::size_t in = dims_[l], out = dims_[l + 1];
      const auto& x = pass.acts[l];
      const S* w = params_.data() + weight_offset(l);
      S* gw = grad.data() + weight_offset(l);
      S* gb = grad.data() + bias_offset(l);
      const bool need_prev = l > 0 || grad_input != nullptr;
      std::vector<S> prev(need_prev ? rows * in : 0, S{0});
      for (std::size_t r = 0; r < rows; ++r) {
        const S* xr = x.data() + r * in;
        const S* dr = delta.data() + r * out;
        for (std::size_t o = 0; o < out; ++o) {
          const S d = dr[o];
          if (d == S{0}) continue;
          gb[o] += d;
          S* gwo = gw + o * in;
          for (std::size_t i = 0; i < in; ++i) gwo[i] += d * xr[i];
          if (need_prev) {
            const S* wo = w + o * in;
            S* pr = prev.data() + r * in;
            for (std::size_t i = 0; i < in; ++i) pr[i] += d * wo[i];
          }
        }
      }
      if (l > 0) {
        // Through tanh of the previous layer: d/dz tanh(z) = 1 - tanh(z)^2.
        for (std::size_t k = 0; k < prev.size(); ++k) prev[k] *= S{1} - x[k] * x[k];
        delta = std::move(prev);
      } else if (grad_input) {
        *grad_input = std::move(prev);
      }
    }
  }

  friend bool operator==(const Mlp&, const Mlp&) = default;

 private:
  std::vector<std::size_t> dims_;
  std::vector<S> params_;
};

struct Architecture {
  std::size_t in_features = 5;
  std::vector<std::size_t> hidden{32};
  std::size_t num_classes = 5;
  bool local_mean_pool = true;

  std::vector<std::size_t> layer_dims() const {
    std::vector<std::size_t> d{in_features};
    d.insert(d.end(), hidden.begin(), hidden.end());
    d.push_back(num_classes);
    return d;
  }

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

inline std::string describe(const Architecture& a) {
  std::string s = a.local_mean_pool ? "meanpool3x3-" : "";
  for (auto d : a.layer_dims()) s += std::to_string(d) + "-";
  s.pop_back();
  return s;
}

/// 3x3 mean over the in-bounds neighbourhood of every pixel, per channel.
template <typename S>
Image<S> local_mean_pool(const Image<S>& x) {
  const std::size_t F = x.dim(0), H = x.dim(1), W = x.dim(2);
  Image<S> out(x.shape());
  for (std::size_t f = 0; f < F; ++f)
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t w = 0; w < W; ++w) {
        S acc{0};
        int n = 0;
        for (std::size_t hh = h ? h - 1 : 0; hh <= std::min(H - 1, h + 1); ++hh)
          for (std::size_t ww = w ? w - 1 : 0; ww <= std::min(W - 1, w + 1); ++ww) {
            acc += x.at(f, hh, ww);
            ++n;
          }
        out.at(f, h, w) = acc / static_cast<S>(n);
      }
  return out;
}

/// Numerically stable softmax of a [C] logit row.
template <typename S>
void softmax_inplace(std::span<S> z) {
  const S m = *std::max_element(z.begin(), z.end());
  S total{0};
  for (auto& v : z) {
    v = std::exp(v - m);
    total += v;
  }
  for (auto& v : z) v /= total;
}

template <typename S>
struct ForwardPass {
  typename Mlp<S>::Pass mlp;
  ProbMap<S> probs;
  bool valid() const { return mlp.valid(); }
};

template <typename S = float>
class SegModel {
 public:
  SegModel() = default;
  explicit SegModel(Architecture arch) : arch_(std::move(arch)), mlp_(arch_.layer_dims()) {
    if (arch_.num_classes < 2) throw ConfigError("a segmentation model needs at least 2 classes");
  }

  const Architecture& arch() const { return arch_; }
  std::size_t num_classes() const { return arch_.num_classes; }
  std::size_t param_count() const { return mlp_.params().size(); }
  std::vector<S>& params() { return mlp_.params(); }
  const std::vector<S>& params() const { return mlp_.params(); }
  const Mlp<S>& mlp() const { return mlp_; }
  Mlp<S>& mlp() { return mlp_; }

  void init(std::uint64_t seed) { mlp_.init(seed); }

  template <typename U>
  SegModel<U> cast() const {
    SegModel<U> out(arch_);
    std::copy(params().begin(), params().end(), out.params().begin());
    return out;
  }

  /// Runs the network on an [F,H,W] image; the returned pass holds the
  /// [C,H,W] probabilities and the activations needed by backward().
  template <typename In>
  ForwardPass<S> forward(const Image<In>& image) const {
    if (image.ndim() != 3 || image.dim(0) != arch_.in_features)
      throw ShapeError("model expects [" + std::to_string(arch_.in_features) + ",H,W] input, got " +
                       shape_str(image.shape()));
    const std::size_t F = image.dim(0), H = image.dim(1), W = image.dim(2), N = H * W;
    Image<S> x = image.template cast<S>();
    if (arch_.local_mean_pool) x = local_mean_pool(x);
    std::vector<S> rows(N * F);
    for (std::size_t f = 0; f < F; ++f)
      for (std::size_t p = 0; p < N; ++p) rows[p * F + f] = x[f * N + p];
    ForwardPass<S> pass;
    pass.mlp = mlp_.forward(std::move(rows), N);
    const std::size_t C = arch_.num_classes;
    pass.probs = ProbMap<S>(Shape{C, H, W});
    std::vector<S> z(C);
    const auto& logits = pass.mlp.acts.back();
    for (std::size_t p = 0; p < N; ++p) {
      std::copy_n(logits.data() + p * C, C, z.begin());
      softmax_inplace<S>(z);
      for (std::size_t c = 0; c < C; ++c) pass.probs[c * N + p] = z[c];
    }
    return pass;
  }

  template <typename In>
  ProbMap<S> predict(const Image<In>& image) const {
    return forward(image).probs;
  }

  /// Accumulates dL/dw into `grad` for an upstream gradient on the logits,
  /// laid out like the ProbMap ([C,H,W]).
  void backward(const ForwardPass<S>& pass, const Array<S>& grad_logits, std::span<S> grad) const {
    if (!pass.valid()) throw Error("backward called before forward");
    const std::size_t C = arch_.num_classes, N = pass.mlp.rows;
    if (grad_logits.size() != C * N) throw ShapeError("logit gradient shape mismatch");
    std::vector<S> g(N * C);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t p = 0; p < N; ++p) g[p * C + c] = grad_logits[c * N + p];
    mlp_.backward(pass.mlp, g, grad);
  }

  std::vector<S> backward(const ForwardPass<S>& pass, const Array<S>& grad_logits) const {
    std::vector<S> grad(param_count(), S{0});
    backward(pass, grad_logits, grad);
    return grad;
  }

 private:
  Architecture arch_;
  Mlp<S> mlp_;
};

template <typename S>
struct DiscPass {
  typename Mlp<S>::Pass mlp;
  /// Per-pixel domain score, [H*W].
  std::vector<S> scores;
  std::size_t num_classes = 0;
  bool valid() const { return mlp.valid(); }
};

/// Per-pixel scorer on the output space: ProbMap [C,H,W] -> score per pixel.
template <typename S = float>
class Discriminator {
 public:
  Discriminator() = default;
  Discriminator(std::size_t num_classes, std::size_t hidden = 16) : mlp_({num_classes, hidden, 1}) {}

  std::size_t num_classes() const { return mlp_.in_dim(); }
  std::vector<S>& params() { return mlp_.params(); }
  const std::vector<S>& params() const { return mlp_.params(); }
  std::size_t param_count() const { return mlp_.params().size(); }
  void init(std::uint64_t seed) { mlp_.init(seed); }

  template <typename U>
  Discriminator<U> cast() const {
    Discriminator<U> out(num_classes(), mlp_.dims()[1]);
    std::copy(params().begin(), params().end(), out.params().begin());
    return out;
  }

  DiscPass<S> forward(const ProbMap<S>& prob) const {
    if (prob.ndim() != 3 || prob.dim(0) != num_classes())
      throw ShapeError("discriminator expects [" + std::to_string(num_classes()) + ",H,W], got " +
                       shape_str(prob.shape()));
    const std::size_t C = prob.dim(0), N = prob.dim(1) * prob.dim(2);
    std::vector<S> rows(N * C);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t p = 0; p < N; ++p) rows[p * C + c] = prob[c * N + p];
    DiscPass<S> pass;
    pass.num_classes = C;
    pass.mlp = mlp_.forward(std::move(rows), N);
    pass.scores = pass.mlp.acts.back();
    return pass;
  }

  /// Accumulates dL/dD into `grad` (may be empty to skip) and returns dL/dprob
  /// as a [C, H*W] plane-major buffer.
  std::vector<S> backward(const DiscPass<S>& pass, std::span<const S> grad_scores, std::span<S> grad) const {
    if (!pass.valid()) throw Error("backward called before forward");
    std::vector<S> scratch;
    std::span<S> target = grad;
    if (target.empty()) {
      scratch.assign(param_count(), S{0});
      target = scratch;
    }
    std::vector<S> gin;
    mlp_.backward(pass.mlp, grad_scores, target, &gin);
    const std::size_t C = pass.num_classes, N = pass.mlp.rows;
    std::vector<S> out(C * N);
    for (std::size_t p = 0; p < N; ++p)
      for (std::size_t c = 0; c < C; ++c) out[c * N + p] = gin[p * C + c];
    return out;
  }

 private:
  Mlp<S> mlp_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct OptimState {
  AdamConfig cfg;
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;

  OptimState() = default;
  OptimState(std::size_t n, AdamConfig c) : cfg(c), m(n, 0.0), v(n, 0.0) {}
};

/// One bias-corrected Adam update. Throws TrainingAborted on a non-finite
/// gradient entry, leaving params and state untouched.
template <typename S>
void opt_step(std::vector<S>& params, OptimState& state, std::span<const S> grad) {
  if (grad.size() != params.size() || state.m.size() != params.size())
    throw ShapeError("optimizer: gradient/parameter/state length mismatch");
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (!std::isfinite(static_cast<double>(grad[i])))
      throw TrainingAborted("non-finite gradient at parameter " + std::to_string(i));
  ++state.step;
  const auto& c = state.cfg;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = static_cast<double>(grad[i]);
    state.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * g;
    state.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * g * g;
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    params[i] = static_cast<S>(static_cast<double>(params[i]) - c.lr * mhat / (std::sqrt(vhat) + c.eps));
  }
}

template <typename S>
void opt_step(SegModel<S>& model, OptimState& state, std::span<const S> grad) {
  opt_step(model.params(), state, grad);
}

template <typename S>
void copy_weights(const SegModel<S>& src, SegModel<S>& dst) {
  if (!(src.arch() == dst.arch()))
    throw ShapeError("copy_weights: architecture mismatch (" + describe(src.arch()) + " vs " + describe(dst.arch()) +
                     ")");
  dst.params() = src.params();
}

/// FNV-1a over the raw parameter bytes.
template <typename S>
std::uint64_t weight_hash(const std::vector<S>& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto* bytes = reinterpret_cast<const unsigned char*>(params.data());
  for (std::size_t i = 0; i < params.size() * sizeof(S); ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Checkpoints: `arch.txt` plus per-layer weight [out,in] and bias [out].

inline void save_checkpoint(const std::filesystem::path& dir, const SegModel<float>& model) {
  std::filesystem::create_directories(dir);
  const auto& a = model.arch();
  FlatConfig desc;
  desc.set("in_features", static_cast<std::uint64_t>(a.in_features));
  desc.set("num_classes", static_cast<std::uint64_t>(a.num_classes));
  desc.set("local_mean_pool", a.local_mean_pool);
  std::string hidden;
  for (auto h : a.hidden) hidden += (hidden.empty() ? "" : ",") + std::to_string(h);
  desc.set("hidden", hidden);
  const auto& mlp = model.mlp();
  desc.set("layers", static_cast<std::uint64_t>(mlp.num_layers()));
  for (std::size_t l = 0; l < mlp.num_layers(); ++l) {
    const std::size_t in = mlp.dims()[l], out = mlp.dims()[l + 1];
    const auto* p = model.params().data();
    Array<float> w(Shape{out, in}, std::vector<float>(p + mlp.weight_offset(l), p + mlp.bias_offset(l)));
    Array<float> b(Shape{out}, std::vector<float>(p + mlp.bias_offset(l), p + mlp.bias_offset(l) + out));
    save_array(dir / ("layer" + std::to_string(l) + "_weight.iast"), w);
    save_array(dir / ("layer" + std::to_string(l) + "_bias.iast"), b);
  }
  desc.save(dir / "arch.txt");
}

inline SegModel<float> load_checkpoint(const std::filesystem::path& dir) {
  const auto desc = FlatConfig::load(dir / "arch.txt");
  Architecture a;
  a.in_features = desc.get_u64("in_features");
  a.num_classes = desc.get_u64("num_classes");
  a.local_mean_pool = desc.get_bool("local_mean_pool", true);
  a.hidden.clear();
  for (double h : desc.get_double_list("hidden", {})) a.hidden.push_back(static_cast<std::size_t>(h));
  SegModel<float> model(a);
  const auto& mlp = model.mlp();
  if (desc.get_u64("layers") != mlp.num_layers()) throw ShapeError(dir.string() + ": layer count mismatch");
  for (std::size_t l = 0; l < mlp.num_layers(); ++l) {
    const std::size_t in = mlp.dims()[l], out = mlp.dims()[l + 1];
    auto w = load_array<float>(dir / ("layer" + std::to_string(l) + "_weight.iast"));
    auto b = load_array<float>(dir / ("layer" + std::to_string(l) + "_bias.iast"));
    if (w.shape() != Shape{out, in} || b.shape() != Shape{out})
      throw ShapeError(dir.string() + ": layer " + std::to_string(l) + " dims do not match arch.txt");
    std::copy(w.values().begin(), w.values().end(), model.params().begin() + static_cast<std::ptrdiff_t>(mlp.weight_offset(l)));
    std::copy(b.values().begin(), b.values().end(), model.params().begin() + static_cast<std::ptrdiff_t>(mlp.bias_offset(l)));
  }
  return model;
}

}  // namespace iast
