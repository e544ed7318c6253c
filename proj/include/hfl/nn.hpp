#ifndef HFL_NN_HPP_
#define HFL_NN_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "hfl/data.hpp"
#include "hfl/error.hpp"
#include "hfl/rng.hpp"

namespace hfl {

enum class LayerRole { hidden, output };

// Fully connected layer. values holds the outputs x inputs weight matrix in
// row-major order followed by the outputs biases, so the flat parameter count
// is outputs * (inputs + 1).
struct LayerBlock {
  std::size_t outputs = 0;
  std::size_t inputs = 0;
  LayerRole role = LayerRole::hidden;
  std::vector<double> values;

  static LayerBlock zeros(std::size_t outputs, std::size_t inputs, LayerRole role) {
    return {outputs, inputs, role, std::vector<double>(outputs * (inputs + 1), 0.0)};
  }

  std::size_t param_count() const noexcept { return outputs * (inputs + 1); }

  double weight(std::size_t o, std::size_t i) const { return values[o * inputs + i]; }
  double& weight(std::size_t o, std::size_t i) { return values[o * inputs + i]; }
  double bias(std::size_t o) const { return values[outputs * inputs + o]; }
  double& bias(std::size_t o) { return values[outputs * inputs + o]; }

  bool same_shape(const LayerBlock& other) const noexcept {
    return outputs == other.outputs && inputs == other.inputs && role == other.role;
  }

  bool operator==(const LayerBlock&) const = default;
};

// Ordered layers of an MLP; hidden layers use ReLU, the final (output) layer
// feeds a softmax.
struct ModelParams {
  std::vector<LayerBlock> layers;

  std::size_t input_width() const { return layers.front().inputs; }
  std::size_t class_count() const { return layers.back().outputs; }
  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.param_count();
    return n;
  }

  // Throws ShapeError unless: at least two layers, exactly one output layer
  // and it is last, widths chain, every value finite.
  void validate() const {
    if (layers.size() < 2) throw ShapeError("model needs at least two layers");
    for (std::size_t k = 0; k < layers.size(); ++k) {
      const auto& l = layers[k];
      const bool last = k + 1 == layers.size();
      if ((l.role == LayerRole::output) != last) {
        throw ShapeError("exactly one output layer, in last position, is required");
      }
      if (l.values.size() != l.param_count()) {
        throw ShapeError("layer " + std::to_string(k) + " has " +
                         std::to_string(l.values.size()) + " values, expected " +
                         std::to_string(l.param_count()));
      }
      if (k > 0 && l.inputs != layers[k - 1].outputs) {
        throw ShapeError("layer " + std::to_string(k) + " input width mismatch");
      }
      for (double v : l.values) {
        if (!std::isfinite(v)) throw ShapeError("non-finite parameter in layer " + std::to_string(k));
      }
    }
  }

  bool operator==(const ModelParams&) const = default;
};

// widths = {input, hidden..., classes}. Weights and biases of each layer are
// uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
inline ModelParams make_mlp(std::span<const std::size_t> widths, std::uint64_t seed) {
  if (widths.size() < 3) throw UsageError("make_mlp: need input, >=1 hidden and output widths");
  ModelParams m;
  for (std::size_t k = 0; k + 1 < widths.size(); ++k) {
    const bool last = k + 2 == widths.size();
    auto layer = LayerBlock::zeros(widths[k + 1], widths[k],
                                   last ? LayerRole::output : LayerRole::hidden);
    Rng rng(mix_seed({seed, k}));
    const double bound = 1.0 / std::sqrt(static_cast<double>(widths[k]));
    for (auto& v : layer.values) v = rng.uniform(-bound, bound);
    m.layers.push_back(std::move(layer));
  }
  return m;
}

inline ModelParams make_zero_mlp(std::span<const std::size_t> widths) {
  if (widths.size() < 3) throw UsageError("make_zero_mlp: need input, >=1 hidden and output widths");
  ModelParams m;
  for (std::size_t k = 0; k + 1 < widths.size(); ++k) {
    const bool last = k + 2 == widths.size();
    m.layers.push_back(LayerBlock::zeros(widths[k + 1], widths[k],
                                         last ? LayerRole::output : LayerRole::hidden));
  }
  return m;
}

namespace detail {

// Pre-activation z and post-activation a per layer; a[0] is the input.
struct ForwardTrace {
  std::vector<std::vector<double>> pre;
  std::vector<std::vector<double>> post;
};

inline void dense_apply(const LayerBlock& layer, std::span<const double> in,
                        std::vector<double>& out) {
  out.assign(layer.outputs, 0.0);
  for (std::size_t o = 0; o < layer.outputs; ++o) {
    const double* w = layer.values.data() + o * layer.inputs;
    double acc = layer.bias(o);
    for (std::size_t i = 0; i < layer.inputs; ++i) acc += w[i] * in[i];
    out[o] = acc;
  }
}

inline void trace_forward(const ModelParams& model, std::span<const double> x, ForwardTrace& t) {
  const std::size_t q = model.layers.size();
  t.pre.resize(q);
  t.post.resize(q + 1);
  t.post[0].assign(x.begin(), x.end());
  for (std::size_t k = 0; k < q; ++k) {
    dense_apply(model.layers[k], t.post[k], t.pre[k]);
    if (k + 1 < q) {
      t.post[k + 1] = t.pre[k];
      for (auto& v : t.post[k + 1]) v = v > 0.0 ? v : 0.0;
    }
  }
}

inline double log_sum_exp(std::span<const double> z) {
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  return m + std::log(s);
}

inline void check_input(const ModelParams& model, std::span<const double> x) {
  if (model.layers.empty()) throw ShapeError("empty model");
  if (x.size() != model.input_width()) {
    throw ShapeError("feature length " + std::to_string(x.size()) +
                     " does not match input width " + std::to_string(model.input_width()));
  }
}

}  // namespace detail

inline std::vector<double> softmax(std::span<const double> z) {
  const double m = *std::max_element(z.begin(), z.end());
  std::vector<double> p(z.size());
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp(z[i] - m);
    s += p[i];
  }
  for (auto& v : p) v /= s;
  return p;
}

inline std::vector<double> logits(const ModelParams& model, std::span<const double> features) {
  detail::check_input(model, features);
  detail::ForwardTrace t;
  detail::trace_forward(model, features, t);
  return t.pre.back();
}

inline std::vector<double> forward(const ModelParams& model, std::span<const double> features) {
  return softmax(logits(model, features));
}

// Lowest index wins ties.
inline std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

// Cross-entropy (nats) of one sample.
inline double sample_loss(const ModelParams& model, std::span<const double> x, std::size_t label) {
  const auto z = logits(model, x);
  return detail::log_sum_exp(z) - z[label];
}

// Mean cross-entropy gradient over the selected samples, laid out like model.
// Returns the mean loss through *loss when non-null.
inline ModelParams loss_gradient(const ModelParams& model, const Dataset& data,
                                 std::span<const std::size_t> indices, double* loss = nullptr) {
  ModelParams grad = model;
  for (auto& l : grad.layers) std::fill(l.values.begin(), l.values.end(), 0.0);
  const std::size_t q = model.layers.size();
  detail::ForwardTrace t;
  std::vector<double> delta;
  std::vector<double> prev_delta;
  double total = 0.0;
  for (auto idx : indices) {
    const auto x = data.sample(idx);
    detail::check_input(model, x);
    detail::trace_forward(model, x, t);
    const auto& z = t.pre.back();
    const double lse = detail::log_sum_exp(z);
    total += lse - z[data.labels[idx]];
    delta.resize(z.size());
    for (std::size_t c = 0; c < z.size(); ++c) delta[c] = std::exp(z[c] - lse);
    delta[data.labels[idx]] -= 1.0;

    for (std::size_t k = q; k-- > 0;) {
      const auto& layer = model.layers[k];
      auto& g = grad.layers[k];
      const auto& in = t.post[k];
      for (std::size_t o = 0; o < layer.outputs; ++o) {
        const double d = delta[o];
        if (d == 0.0) continue;
        double* gw = g.values.data() + o * layer.inputs;
        for (std::size_t i = 0; i < layer.inputs; ++i) gw[i] += d * in[i];
        g.bias(o) += d;
      }
      if (k == 0) break;
      prev_delta.assign(layer.inputs, 0.0);
      for (std::size_t o = 0; o < layer.outputs; ++o) {
        const double d = delta[o];
        if (d == 0.0) continue;
        const double* w = layer.values.data() + o * layer.inputs;
        for (std::size_t i = 0; i < layer.inputs; ++i) prev_delta[i] += w[i] * d;
      }
      const auto& z_prev = t.pre[k - 1];
      for (std::size_t i = 0; i < layer.inputs; ++i) {
        if (!(z_prev[i] > 0.0)) prev_delta[i] = 0.0;
      }
      delta.swap(prev_delta);
    }
  }
  const double scale = indices.empty() ? 0.0 : 1.0 / static_cast<double>(indices.size());
  for (auto& l : grad.layers) {
    for (auto& v : l.values) v *= scale;
  }
  if (loss != nullptr) *loss = total * scale;
  return grad;
}

struct TrainConfig {
  double lr = 0.01;
  std::size_t epochs = 1;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
};

// Mini-batch SGD: each batch applies params -= lr * mean gradient. Sample order
// is reshuffled every epoch from (seed, epoch).
inline ModelParams train_local(const ModelParams& model, const Dataset& data,
                               const TrainConfig& cfg) {
  if (data.empty()) throw UsageError("train_local: empty dataset");
  if (!(cfg.lr >= 0.0) || !std::isfinite(cfg.lr)) throw UsageError("train_local: lr must be >= 0");
  if (cfg.batch_size == 0) throw UsageError("train_local: batch_size must be positive");
  ModelParams current = model;
  if (cfg.lr == 0.0 || cfg.epochs == 0) return current;

  std::vector<std::size_t> order(data.size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(mix_seed({cfg.seed, epoch}));
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t len = std::min(cfg.batch_size, order.size() - begin);
      double loss = 0.0;
      const auto grad = loss_gradient(current, data, std::span(order).subspan(begin, len), &loss);
      if (!std::isfinite(loss)) {
        throw DivergenceError("non-finite training loss in epoch " + std::to_string(epoch), epoch);
      }
      for (std::size_t k = 0; k < current.layers.size(); ++k) {
        auto& v = current.layers[k].values;
        const auto& g = grad.layers[k].values;
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= cfg.lr * g[i];
      }
    }
  }
  return current;
}

struct Evaluation {
  double accuracy = 0.0;
  double mean_loss = 0.0;
};

inline Evaluation evaluate(const ModelParams& model, const Dataset& data) {
  if (data.empty()) throw UsageError("evaluate: empty dataset");
  std::size_t correct = 0;
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto z = logits(model, data.sample(i));
    if (argmax(z) == data.labels[i]) ++correct;
    total += detail::log_sum_exp(z) - z[data.labels[i]];
  }
  const double n = static_cast<double>(data.size());
  return {static_cast<double>(correct) / n, total / n};
}

}  // namespace hfl

#endif  // HFL_NN_HPP_
