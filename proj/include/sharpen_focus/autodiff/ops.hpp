#pragma once

// Differentiable tensor operations. Each op computes its value with the
// kernels in kernels.hpp and, when any operand lives on a tape, appends a node
// to that tape. Operands that are all constants yield a constant.

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sharpen_focus/autodiff/kernels.hpp"
#include "sharpen_focus/autodiff/tape.hpp"
#include "sharpen_focus/autodiff/tensor.hpp"

namespace sharpen_focus::ad {

namespace detail {

inline Tape* shared_tape(const std::vector<Tensor>& inputs, OpKind kind) {
  Tape* tape = nullptr;
  for (const Tensor& t : inputs) {
    if (!t.has_node()) continue;
    if (tape != nullptr && tape != t.tape()) {
      throw Error("operands of " + std::string(op_name(kind)) + " live on different tapes");
    }
    tape = t.tape();
  }
  return tape;
}

inline Tensor finish(OpKind kind, std::vector<Tensor> inputs, const Tensor& value,
                     NodeAux aux = {}) {
  Tape* tape = shared_tape(inputs, kind);
  if (tape == nullptr) return value;
  return tape->record(kind, std::move(inputs), value, std::move(aux));
}

inline void require_same_shape(const Tensor& a, const Tensor& b, std::string_view op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

inline std::vector<std::size_t> all_axes(std::size_t rank) {
  std::vector<std::size_t> axes(rank);
  for (std::size_t i = 0; i < rank; ++i) axes[i] = i;
  return axes;
}

}  // namespace detail

Tensor broadcast_to(const Tensor& a, const Shape& target, std::vector<std::size_t> axes);
Tensor reshape(const Tensor& a, Shape shape);

namespace detail {

// Equal shapes pass through; a single-element operand is broadcast to the
// other's shape. Anything else is a shape error.
inline std::pair<Tensor, Tensor> align(const Tensor& a, const Tensor& b, std::string_view op) {
  if (a.shape() == b.shape()) return {a, b};
  if (b.size() == 1 && a.size() != 1) {
    return {a, broadcast_to(reshape(b, {}), a.shape(), all_axes(a.rank()))};
  }
  if (a.size() == 1 && b.size() != 1) {
    return {broadcast_to(reshape(a, {}), b.shape(), all_axes(b.rank())), b};
  }
  if (a.size() == 1 && b.size() == 1) return {a, reshape(b, a.shape())};
  require_same_shape(a, b, op);
  return {a, b};
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  auto [x, y] = detail::align(a, b, "add");
  return detail::finish(OpKind::kAdd, {x, y},
                        kernels::binary(x, y, [](double u, double v) { return u + v; }));
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  auto [x, y] = detail::align(a, b, "subtract");
  return detail::finish(OpKind::kSub, {x, y},
                        kernels::binary(x, y, [](double u, double v) { return u - v; }));
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  auto [x, y] = detail::align(a, b, "multiply");
  return detail::finish(OpKind::kMul, {x, y},
                        kernels::binary(x, y, [](double u, double v) { return u * v; }));
}

// a / (b + epsilon). With epsilon == 0 a zero denominator is a domain error.
inline Tensor divide(const Tensor& a, const Tensor& b, double epsilon = 0.0) {
  auto [x, y] = detail::align(a, b, "divide");
  for (double d : y.vec()) {
    if (d + epsilon == 0.0) {
      throw DomainError(epsilon == 0.0 ? "divide: zero denominator with epsilon disabled"
                                       : "divide: denominator cancels epsilon");
    }
  }
  NodeAux aux;
  aux.scalar = epsilon;
  return detail::finish(
      OpKind::kDiv, {x, y},
      kernels::binary(x, y, [epsilon](double u, double v) { return u / (v + epsilon); }),
      std::move(aux));
}

inline Tensor scale(const Tensor& a, double factor) {
  NodeAux aux;
  aux.scalar = factor;
  return detail::finish(OpKind::kScale, {a},
                        kernels::unary(a, [factor](double u) { return u * factor; }),
                        std::move(aux));
}

inline Tensor neg(const Tensor& a) { return scale(a, -1.0); }

// ReLU with derivative 0 at exactly 0.
inline Tensor relu(const Tensor& a) {
  NodeAux aux;
  aux.mask.resize(a.size());
  const auto& x = a.vec();
  for (std::size_t i = 0; i < x.size(); ++i) aux.mask[i] = x[i] > 0.0 ? 1.0 : 0.0;
  if (a.has_node()) a.tape()->note_decisions(aux.mask);
  return detail::finish(OpKind::kRelu, {a},
                        kernels::unary(a, [](double u) { return u > 0.0 ? u : 0.0; }),
                        std::move(aux));
}

inline Tensor sigmoid(const Tensor& a) {
  return detail::finish(OpKind::kSigmoid, {a}, kernels::unary(a, kernels::sigmoid));
}

inline Tensor exp(const Tensor& a) {
  return detail::finish(OpKind::kExp, {a}, kernels::unary(a, [](double u) { return std::exp(u); }));
}

inline Tensor log(const Tensor& a) {
  for (double v : a.vec()) {
    if (!(v > 0.0)) throw DomainError("log: non-positive argument " + std::to_string(v));
  }
  return detail::finish(OpKind::kLog, {a}, kernels::unary(a, [](double u) { return std::log(u); }));
}

// Elementwise min; ties route the gradient to the first operand.
inline Tensor minimum(const Tensor& a, const Tensor& b) {
  auto [x, y] = detail::align(a, b, "minimum");
  NodeAux aux;
  aux.mask.resize(x.size());
  const auto& u = x.vec();
  const auto& v = y.vec();
  for (std::size_t i = 0; i < u.size(); ++i) aux.mask[i] = u[i] <= v[i] ? 1.0 : 0.0;
  if (Tape* t = detail::shared_tape({x, y}, OpKind::kMinimum)) t->note_decisions(aux.mask);
  return detail::finish(
      OpKind::kMinimum, {x, y},
      kernels::binary(x, y, [](double p, double q) { return p <= q ? p : q; }), std::move(aux));
}

enum class ElementwiseKind {
  kAdd,
  kSubtract,
  kMultiply,
  kDivide,
  kRelu,
  kSigmoid,
  kExp,
  kLog,
  kMinimum,
  kScale,
};

// Dispatcher over the elementwise family. `b` is ignored by unary kinds;
// `constant` is the scale factor or the divide epsilon.
inline Tensor elementwise(ElementwiseKind kind, const Tensor& a, const Tensor& b = {},
                          double constant = 0.0) {
  switch (kind) {
    case ElementwiseKind::kAdd: return add(a, b);
    case ElementwiseKind::kSubtract: return sub(a, b);
    case ElementwiseKind::kMultiply: return mul(a, b);
    case ElementwiseKind::kDivide: return divide(a, b, constant);
    case ElementwiseKind::kRelu: return relu(a);
    case ElementwiseKind::kSigmoid: return sigmoid(a);
    case ElementwiseKind::kExp: return exp(a);
    case ElementwiseKind::kLog: return log(a);
    case ElementwiseKind::kMinimum: return minimum(a, b);
    case ElementwiseKind::kScale: return scale(a, constant);
  }
  throw Error("unknown elementwise kind");
}

// ---------------------------------------------------------------------------
// Shape and reduction ops.

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw ShapeError("reshape " + to_string(a.shape()) + " to " + to_string(shape));
  }
  if (shape == a.shape()) return a;
  NodeAux aux;
  aux.shape = shape;
  return detail::finish(OpKind::kReshape, {a}, a.detach().with_shape(shape), std::move(aux));
}

inline Tensor sum(const Tensor& a, std::vector<std::size_t> axes) {
  axes = kernels::normalize_axes(std::move(axes), a.rank());
  for (std::size_t ax : axes) {
    if (a.dim(ax) == 0) throw ShapeError("sum over empty axis " + std::to_string(ax));
  }
  NodeAux aux;
  aux.axes = axes;
  aux.shape = a.shape();
  return detail::finish(OpKind::kSumAxes, {a}, kernels::sum_axes(a, axes), std::move(aux));
}

inline Tensor sum(const Tensor& a) { return sum(a, detail::all_axes(a.rank())); }

// Inserts `axes` (positions in `target`) by replication.
inline Tensor broadcast_to(const Tensor& a, const Shape& target, std::vector<std::size_t> axes) {
  axes = kernels::normalize_axes(std::move(axes), target.size());
  if (kernels::reduced_shape(target, axes) != a.shape()) {
    throw ShapeError("broadcast " + to_string(a.shape()) + " to " + to_string(target));
  }
  NodeAux aux;
  aux.axes = axes;
  aux.shape = target;
  return detail::finish(OpKind::kBroadcast, {a}, kernels::broadcast(a, target, axes),
                        std::move(aux));
}

inline Tensor mean(const Tensor& a, std::vector<std::size_t> axes) {
  axes = kernels::normalize_axes(std::move(axes), a.rank());
  std::size_t count = 1;
  for (std::size_t ax : axes) count *= a.dim(ax);
  if (count == 0) throw ShapeError("mean over empty extent");
  return scale(sum(a, axes), 1.0 / static_cast<double>(count));
}

inline Tensor mean(const Tensor& a) { return mean(a, detail::all_axes(a.rank())); }

// out[i] = a[index[i]], with index -1 reading as zero.
inline Tensor gather(const Tensor& a, std::vector<std::int64_t> index, Shape out_shape) {
  if (numel(out_shape) != index.size()) throw ShapeError("gather: index/shape size mismatch");
  for (auto i : index) {
    if (i >= static_cast<std::int64_t>(a.size())) throw ShapeError("gather: index out of range");
  }
  Tensor value = kernels::gather(a, index, out_shape);
  NodeAux aux;
  aux.index = std::move(index);
  aux.shape = std::move(out_shape);
  return detail::finish(OpKind::kGather, {a}, value, std::move(aux));
}

// out[index[i]] += a[i]; the adjoint of gather.
inline Tensor scatter_add(const Tensor& a, std::vector<std::int64_t> index, Shape out_shape) {
  if (a.size() != index.size()) throw ShapeError("scatter_add: index/input size mismatch");
  for (auto i : index) {
    if (i >= static_cast<std::int64_t>(numel(out_shape))) {
      throw ShapeError("scatter_add: index out of range");
    }
  }
  Tensor value = kernels::scatter_add(a, index, out_shape);
  NodeAux aux;
  aux.index = std::move(index);
  aux.shape = std::move(out_shape);
  return detail::finish(OpKind::kScatterAdd, {a}, value, std::move(aux));
}

// Max over `axes`; the lowest flat index wins ties and receives the gradient.
struct MaxResult {
  Tensor values;
  std::vector<std::int64_t> argmax;  // flat indices into the input
};

inline MaxResult max_with_index(const Tensor& a, std::vector<std::size_t> axes) {
  axes = kernels::normalize_axes(std::move(axes), a.rank());
  for (std::size_t ax : axes) {
    if (a.dim(ax) == 0) throw ShapeError("max over empty axis " + std::to_string(ax));
  }
  if (a.size() == 0) throw ShapeError("max over empty tensor");
  const Shape out_shape = kernels::reduced_shape(a.shape(), axes);
  const auto map = kernels::reduction_index(a.shape(), axes);
  std::vector<std::int64_t> idx(numel(out_shape), -1);
  const auto& x = a.vec();
  for (std::size_t i = 0; i < x.size(); ++i) {
    auto& best = idx[map[i]];
    if (best < 0 || x[i] > x[static_cast<std::size_t>(best)]) best = static_cast<std::int64_t>(i);
  }
  if (a.has_node()) a.tape()->note_decisions(idx);
  auto index_copy = idx;
  return {gather(a, std::move(index_copy), out_shape), std::move(idx)};
}

inline Tensor max(const Tensor& a, std::vector<std::size_t> axes) {
  return max_with_index(a, std::move(axes)).values;
}

enum class ReduceKind { kSum, kMean, kMax };

inline Tensor reduce(ReduceKind kind, const Tensor& a, std::vector<std::size_t> axes) {
  switch (kind) {
    case ReduceKind::kSum: return sum(a, std::move(axes));
    case ReduceKind::kMean: return mean(a, std::move(axes));
    case ReduceKind::kMax: return max(a, std::move(axes));
  }
  throw Error("unknown reduce kind");
}

// ---------------------------------------------------------------------------
// Linear algebra and spatial ops.

inline Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose expects rank 2, got " + to_string(a.shape()));
  return detail::finish(OpKind::kTranspose, {a}, kernels::transpose(a));
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: inner dimension mismatch " + to_string(a.shape()) + " x " +
                     to_string(b.shape()));
  }
  return detail::finish(OpKind::kMatmul, {a, b}, kernels::matmul(a, b));
}

namespace detail {

inline void check_conv(const Shape& x, const Shape& k, const ConvGeometry& g) {
  if (x.size() != 4 || k.size() != 4) {
    throw ShapeError("conv2d expects NCHW input and OIHW kernel, got " + to_string(x) + " and " +
                     to_string(k));
  }
  if (x[1] != k[1]) {
    throw ShapeError("conv2d: input has " + std::to_string(x[1]) + " channels, kernel expects " +
                     std::to_string(k[1]));
  }
  if (g.stride == 0) throw ShapeError("conv2d: stride must be >= 1");
  if (x[2] + 2 * g.padding < k[2] || x[3] + 2 * g.padding < k[3]) {
    throw ShapeError("conv2d: kernel " + to_string(k) + " larger than padded input " +
                     to_string(x));
  }
}

}  // namespace detail

inline Tensor conv2d(const Tensor& x, const Tensor& kernel, ConvGeometry geometry = {}) {
  detail::check_conv(x.shape(), kernel.shape(), geometry);
  NodeAux aux;
  aux.conv = geometry;
  return detail::finish(OpKind::kConv2d, {x, kernel}, kernels::conv2d(x, kernel, geometry),
                        std::move(aux));
}

inline Tensor conv2d_input_grad(const Tensor& grad_out, const Tensor& kernel,
                                ConvGeometry geometry, const Shape& input_shape) {
  detail::check_conv(input_shape, kernel.shape(), geometry);
  NodeAux aux;
  aux.conv = geometry;
  aux.shape = input_shape;
  return detail::finish(OpKind::kConv2dInputGrad, {grad_out, kernel},
                        kernels::conv2d_input_grad(grad_out, kernel, geometry, input_shape),
                        std::move(aux));
}

inline Tensor conv2d_kernel_grad(const Tensor& x, const Tensor& grad_out, ConvGeometry geometry,
                                 const Shape& kernel_shape) {
  detail::check_conv(x.shape(), kernel_shape, geometry);
  NodeAux aux;
  aux.conv = geometry;
  aux.shape = kernel_shape;
  return detail::finish(OpKind::kConv2dKernelGrad, {x, grad_out},
                        kernels::conv2d_kernel_grad(x, grad_out, geometry, kernel_shape),
                        std::move(aux));
}

inline Tensor maxpool2d(const Tensor& x, std::size_t window = 2, std::size_t stride = 2) {
  if (x.rank() != 4) throw ShapeError("maxpool2d expects NCHW, got " + to_string(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (window == 0 || stride == 0) throw ShapeError("maxpool2d: window and stride must be >= 1");
  if (window > h || window > w) {
    throw ShapeError("maxpool2d: window " + std::to_string(window) + " exceeds spatial extent " +
                     to_string(x.shape()));
  }
  if ((h - window) % stride != 0 || (w - window) % stride != 0) {
    throw ShapeError("maxpool2d: spatial extent " + to_string(x.shape()) +
                     " not divisible by stride " + std::to_string(stride));
  }
  const std::size_t ho = (h - window) / stride + 1, wo = (w - window) / stride + 1;
  std::vector<std::int64_t> idx(n * c * ho * wo);
  const auto& v = x.vec();
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t p = 0; p < ho; ++p)
      for (std::size_t q = 0; q < wo; ++q) {
        std::size_t best = base + p * stride * w + q * stride;
        for (std::size_t i = 0; i < window; ++i)
          for (std::size_t j = 0; j < window; ++j) {
            const std::size_t at = base + (p * stride + i) * w + q * stride + j;
            if (v[at] > v[best]) best = at;
          }
        idx[(plane * ho + p) * wo + q] = static_cast<std::int64_t>(best);
      }
  }
  if (x.has_node()) x.tape()->note_decisions(idx);
  return gather(x, std::move(idx), {n, c, ho, wo});
}

// [N, C, H, W] -> [N, C]
inline Tensor global_avg_pool(const Tensor& x) {
  if (x.rank() != 4) throw ShapeError("global_avg_pool expects NCHW, got " + to_string(x.shape()));
  return mean(x, {2, 3});
}

// Align-corners bilinear upsampling of the two trailing axes.
inline Tensor bilinear_upsample(const Tensor& a, std::size_t out_h, std::size_t out_w) {
  if (a.rank() < 2) throw ShapeError("bilinear_upsample expects rank >= 2");
  const std::size_t h = a.dim(a.rank() - 2), w = a.dim(a.rank() - 1);
  if (out_h < h || out_w < w) {
    throw DomainError("bilinear_upsample: cannot downscale " + to_string(a.shape()) + " to " +
                      std::to_string(out_h) + "x" + std::to_string(out_w));
  }
  if (out_h == h && out_w == w) return a;
  return detail::finish(OpKind::kUpsample, {a}, kernels::upsample(a, out_h, out_w));
}

inline Tensor bilinear_upsample_adjoint(const Tensor& g, std::size_t in_h, std::size_t in_w) {
  return detail::finish(OpKind::kUpsampleAdjoint, {g}, kernels::upsample_adjoint(g, in_h, in_w));
}

// ---------------------------------------------------------------------------
// Fused classification losses (first-order rules only).

inline Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2 || labels.size() != logits.dim(0)) {
    throw ShapeError("cross_entropy: logits " + to_string(logits.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  NodeAux aux;
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= logits.dim(1)) {
      throw DomainError("cross_entropy: label " + std::to_string(l) + " out of range");
    }
    aux.index.push_back(l);
  }
  Tensor value = Tensor::scalar(kernels::softmax_cross_entropy(logits, aux.index));
  return detail::finish(OpKind::kSoftmaxCrossEntropy, {logits}, value, std::move(aux));
}

inline Tensor multilabel_soft_margin(const Tensor& logits, const Tensor& targets) {
  detail::require_same_shape(logits, targets, "multilabel_soft_margin");
  if (logits.rank() != 2) throw ShapeError("multilabel_soft_margin expects [N, C] logits");
  const std::size_t c = logits.dim(1);
  for (std::size_t i = 0; i < logits.dim(0); ++i) {
    bool any = false;
    for (std::size_t j = 0; j < c; ++j) {
      const double t = targets[i * c + j];
      if (t != 0.0 && t != 1.0) throw DomainError("multilabel_soft_margin: targets must be 0/1");
      any = any || t == 1.0;
    }
    if (!any) {
      throw DomainError("multilabel_soft_margin: sample " + std::to_string(i) +
                        " has no positive label");
    }
  }
  NodeAux aux;
  aux.mask = targets.vec();
  Tensor value = Tensor::scalar(kernels::multilabel_soft_margin(logits, aux.mask));
  return detail::finish(OpKind::kMultilabelSoftMargin, {logits}, value, std::move(aux));
}

}  // namespace sharpen_focus::ad
