#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "sharpen_focus/autodiff.hpp"
#include "sharpen_focus/error.hpp"

namespace sharpen_focus::nn {

using ad::Shape;
using ad::Tensor;

// Small VGG-style classifier: each block is conv(k x k, same padding) -> ReLU
// -> 2x2 max-pool, followed by global average pooling and an affine head.
// The attention layers are fixed by the architecture: "inner" is the output of
// the penultimate block and "last" the output of the final block.
struct ModelConfig {
  std::vector<std::size_t> channels{16, 32, 64};
  std::size_t input_size = 32;
  std::size_t input_channels = 1;
  std::size_t classes = 10;
  std::size_t kernel = 3;
  bool multi_label = false;

  std::size_t blocks() const { return channels.size(); }

  // Spatial extent after block `b` (0-based).
  std::size_t spatial_after(std::size_t b) const { return input_size >> (b + 1); }

  void validate() const {
    if (channels.size() < 2) {
      throw ConfigError("model needs at least 2 blocks (inner and last attention layers)");
    }
    for (std::size_t c : channels) {
      if (c == 0) throw ConfigError("block channel count must be positive");
    }
    if (input_channels == 0) throw ConfigError("input_channels must be positive");
    if (classes < 2) throw ConfigError("classes must be >= 2");
    if (kernel == 0 || kernel % 2 == 0) throw ConfigError("kernel size must be odd");
    std::size_t s = input_size;
    for (std::size_t b = 0; b < channels.size(); ++b) {
      if (s % 2 != 0) {
        throw ConfigError("input_size " + std::to_string(input_size) +
                          " is not divisible by 2 at block " + std::to_string(b));
      }
      s /= 2;
    }
    if (s < 2) {
      throw ConfigError("spatial size after all poolings is " + std::to_string(s) +
                        ", attention maps need at least 2x2");
    }
  }

  bool operator==(const ModelConfig&) const = default;
};

struct ParameterSet {
  ModelConfig config;
  std::vector<std::string> names;
  std::vector<Tensor> values;

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const Tensor& t : values) n += t.size();
    return n;
  }
};

// Weights ~ N(0, 2 / fan_in), biases zero. Deterministic in `seed`.
inline ParameterSet build_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ParameterSet p;
  p.config = config;
  std::mt19937_64 rng(seed);
  auto gaussian = [&](Shape shape, std::size_t fan_in) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    std::vector<double> v(ad::numel(shape));
    for (double& x : v) x = dist(rng);
    return Tensor(std::move(shape), std::move(v));
  };
  std::size_t in = config.input_channels;
  const std::size_t k = config.kernel;
  for (std::size_t b = 0; b < config.blocks(); ++b) {
    const std::size_t out = config.channels[b];
    p.names.push_back("block" + std::to_string(b) + ".weight");
    p.values.push_back(gaussian({out, in, k, k}, in * k * k));
    p.names.push_back("block" + std::to_string(b) + ".bias");
    p.values.push_back(Tensor::zeros({out}));
    in = out;
  }
  p.names.push_back("head.weight");
  p.values.push_back(gaussian({config.classes, in}, in));
  p.names.push_back("head.bias");
  p.values.push_back(Tensor::zeros({config.classes}));
  return p;
}

inline std::vector<double> probabilities_from_logits(const Tensor& logits, bool multi_label) {
  if (!multi_label) return ad::kernels::softmax_rows(logits.detach());
  std::vector<double> p(logits.size());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = ad::kernels::sigmoid(logits[i]);
  return p;
}

struct ForwardRecord {
  Tensor logits;         // [N, classes], pre-softmax class scores
  Tensor probabilities;  // [N, classes], constant; softmax or per-class sigmoid
  Tensor inner;          // [N, C_inner, 2S, 2S], tape-live
  Tensor last;           // [N, C_last, S, S], tape-live
  std::vector<Tensor> params;  // parameter handles on the tape, same order as ParameterSet
};

inline ForwardRecord forward(ad::Tape& tape, const ParameterSet& params, const Tensor& batch) {
  const ModelConfig& cfg = params.config;
  if (batch.rank() != 4 || batch.dim(1) != cfg.input_channels || batch.dim(2) != cfg.input_size ||
      batch.dim(3) != cfg.input_size) {
    throw ShapeError("forward: batch shape " + ad::to_string(batch.shape()) + " does not match [N, " +
                     std::to_string(cfg.input_channels) + ", " + std::to_string(cfg.input_size) +
                     ", " + std::to_string(cfg.input_size) + "]");
  }
  ForwardRecord rec;
  for (const Tensor& v : params.values) rec.params.push_back(tape.parameter(v));

  const ad::ConvGeometry same{1, cfg.kernel / 2};
  Tensor h = batch.detach();
  std::vector<Tensor> block_out;
  for (std::size_t b = 0; b < cfg.blocks(); ++b) {
    const Tensor& w = rec.params[2 * b];
    const Tensor& bias = rec.params[2 * b + 1];
    h = ad::conv2d(h, w, same);
    h = ad::add(h, ad::broadcast_to(bias, h.shape(), {0, 2, 3}));
    h = ad::maxpool2d(ad::relu(h));
    block_out.push_back(h);
  }
  rec.inner = block_out[block_out.size() - 2];
  rec.last = block_out.back();

  const Tensor& head_w = rec.params[2 * cfg.blocks()];
  const Tensor& head_b = rec.params[2 * cfg.blocks() + 1];
  Tensor pooled = ad::global_avg_pool(rec.last);
  Tensor z = ad::matmul(pooled, ad::transpose(head_w));
  rec.logits = ad::add(z, ad::broadcast_to(head_b, z.shape(), {0}));
  rec.probabilities =
      Tensor(rec.logits.shape(), probabilities_from_logits(rec.logits, cfg.multi_label));
  return rec;
}

}  // namespace sharpen_focus::nn
