#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "sharpen_focus/autodiff.hpp"
#include "sharpen_focus/error.hpp"
#include "sharpen_focus/nn/model.hpp"

namespace sharpen_focus::attention {

using ad::Tensor;

enum class Mechanism { kGradCam, kACh };
enum class Layer { kInner, kLast };

inline Mechanism parse_mechanism(std::string_view name) {
  if (name == "grad-cam") return Mechanism::kGradCam;
  if (name == "a-ch") return Mechanism::kACh;
  throw ConfigError("unknown attention mechanism '" + std::string(name) +
                    "' (expected grad-cam|a-ch)");
}

inline std::string_view mechanism_name(Mechanism m) {
  return m == Mechanism::kGradCam ? "grad-cam" : "a-ch";
}

inline std::string_view layer_name(Layer l) { return l == Layer::kInner ? "inner" : "last"; }

// Batched class-specific attention: values are [N, H, W], one map per sample
// for the class listed at the same position.
struct AttentionMap {
  Tensor values;
  std::vector<int> classes;
  Layer layer = Layer::kLast;
  Mechanism mechanism = Mechanism::kACh;
};

struct ClassGradients {
  Tensor inner;
  Tensor last;
};

// Gradients of the selected logit Y^{c_n}_n with respect to both tracked
// feature maps, from one backward pass over sum_n Y^{c_n}_n. The model has no
// op that mixes samples, so row n of the result only depends on sample n. A
// class id of -1 leaves that sample's gradient at zero.
inline ClassGradients class_gradients(const nn::ForwardRecord& record,
                                      const std::vector<int>& classes, bool create_graph) {
  const std::size_t n = record.logits.dim(0), c = record.logits.dim(1);
  if (classes.size() != n) {
    throw ShapeError("class_gradients: " + std::to_string(classes.size()) + " classes for " +
                     std::to_string(n) + " samples");
  }
  if (!record.inner.has_node() || !record.last.has_node()) {
    throw Error("class_gradients: feature maps are not tracked on a tape");
  }
  std::vector<double> pick(n * c, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (classes[i] < 0) continue;
    if (static_cast<std::size_t>(classes[i]) >= c) {
      throw DomainError("class_gradients: class " + std::to_string(classes[i]) + " out of range");
    }
    pick[i * c + static_cast<std::size_t>(classes[i])] = 1.0;
  }
  Tensor selected = ad::sum(ad::mul(record.logits, Tensor(record.logits.shape(), pick)));
  auto g = ad::backward(selected, std::vector<Tensor>{record.inner, record.last}, create_graph);
  return {g[0], g[1]};
}

inline Tensor class_gradients(const nn::ForwardRecord& record, const std::vector<int>& classes,
                              Layer layer, bool create_graph) {
  auto g = class_gradients(record, classes, create_graph);
  return layer == Layer::kInner ? g.inner : g.last;
}

namespace detail {

inline void check_pair(const Tensor& features, const Tensor& grads) {
  if (features.rank() != 4 || features.shape() != grads.shape()) {
    throw ShapeError("attention: features " + ad::to_string(features.shape()) +
                     " and gradients " + ad::to_string(grads.shape()) +
                     " must share one [N, C, H, W] shape");
  }
}

inline Tensor weighted_channel_sum(const Tensor& features, const Tensor& weights) {
  return ad::sum(ad::mul(ad::broadcast_to(weights, features.shape(), {2, 3}), features), {1});
}

}  // namespace detail

// Per-channel weights [N, C]: the spatial mean of G for Grad-CAM, the spatial
// sum of ReLU(G) for A_ch.
inline Tensor channel_weights(Mechanism m, const Tensor& grads) {
  return m == Mechanism::kGradCam ? ad::mean(grads, {2, 3}) : ad::sum(ad::relu(grads), {2, 3});
}

// ReLU(sum_k alpha_k F_k), alpha_k = mean_ij G_k,ij.
inline Tensor grad_cam(const Tensor& features, const Tensor& grads) {
  detail::check_pair(features, grads);
  return ad::relu(detail::weighted_channel_sum(features, channel_weights(Mechanism::kGradCam, grads)));
}

// (1/Z) ReLU(sum_k [sum_ij ReLU(G_k,ij)] F_k), Z = pixels per channel. The 1/Z
// sits outside the ReLU as in the published form.
inline Tensor a_ch(const Tensor& features, const Tensor& grads) {
  detail::check_pair(features, grads);
  const double z = static_cast<double>(features.dim(2) * features.dim(3));
  return ad::scale(
      ad::relu(detail::weighted_channel_sum(features, channel_weights(Mechanism::kACh, grads))),
      1.0 / z);
}

inline Tensor attention_values(Mechanism m, const Tensor& features, const Tensor& grads) {
  return m == Mechanism::kGradCam ? grad_cam(features, grads) : a_ch(features, grads);
}

inline AttentionMap compute_attention(const nn::ForwardRecord& record,
                                      const std::vector<int>& classes, Layer layer,
                                      Mechanism mechanism, bool create_graph) {
  Tensor g = class_gradients(record, classes, layer, create_graph);
  const Tensor& f = layer == Layer::kInner ? record.inner : record.last;
  return {attention_values(mechanism, f, g), classes, layer, mechanism};
}

}  // namespace sharpen_focus::attention
