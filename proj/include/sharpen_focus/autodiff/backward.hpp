#pragma once

#include <algorithm>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sharpen_focus/autodiff/kernels.hpp"
#include "sharpen_focus/autodiff/ops.hpp"
#include "sharpen_focus/autodiff/tape.hpp"

namespace sharpen_focus::ad {

namespace detail {

inline Tensor mask_tensor(const Shape& shape, std::vector<double> mask) {
  return Tensor(shape, std::move(mask));
}

// Vector-Jacobian products. Every rule is written with recorded ops, so under
// create_graph the returned gradients are tape nodes themselves. Operands read
// by each rule:
//   mul: both operands          divide: denominator + own output
//   sigmoid, exp: own output    log: operand
//   relu, minimum: saved mask   matmul, conv2d (+ its two adjoints): both
//   everything else: shapes / indices from NodeAux only
inline std::vector<std::optional<Tensor>> vjp(const Tape& tape, NodeId id, const Tensor& g,
                                              bool create_graph,
                                              const std::vector<char>& want) {
  const Node& n = tape.node(id);
  auto in = [&](std::size_t k) { return create_graph ? n.inputs[k] : n.inputs[k].detach(); };
  auto self = [&]() { return create_graph ? tape.handle(id) : n.value; };
  std::vector<std::optional<Tensor>> out(n.inputs.size());
  auto set = [&](std::size_t k, auto&& make) {
    if (want[k]) out[k] = make();
  };
  const NodeAux& aux = n.aux;

  switch (n.kind) {
    case OpKind::kLeaf:
      break;
    case OpKind::kAdd:
      set(0, [&] { return g; });
      set(1, [&] { return g; });
      break;
    case OpKind::kSub:
      set(0, [&] { return g; });
      set(1, [&] { return neg(g); });
      break;
    case OpKind::kMul:
      set(0, [&] { return mul(g, in(1)); });
      set(1, [&] { return mul(g, in(0)); });
      break;
    case OpKind::kDiv:
      set(0, [&] { return divide(g, in(1), aux.scalar); });
      set(1, [&] { return neg(divide(mul(g, self()), in(1), aux.scalar)); });
      break;
    case OpKind::kRelu:
      set(0, [&] { return mul(g, mask_tensor(n.value.shape(), aux.mask)); });
      break;
    case OpKind::kSigmoid:
      set(0, [&] {
        const Tensor s = self();
        return mul(g, mul(s, sub(Tensor::scalar(1.0), s)));
      });
      break;
    case OpKind::kExp:
      set(0, [&] { return mul(g, self()); });
      break;
    case OpKind::kLog:
      set(0, [&] { return divide(g, in(0)); });
      break;
    case OpKind::kMinimum: {
      std::vector<double> other(aux.mask.size());
      for (std::size_t i = 0; i < other.size(); ++i) other[i] = 1.0 - aux.mask[i];
      set(0, [&] { return mul(g, mask_tensor(n.value.shape(), aux.mask)); });
      set(1, [&] { return mul(g, mask_tensor(n.value.shape(), std::move(other))); });
      break;
    }
    case OpKind::kScale:
      set(0, [&] { return scale(g, aux.scalar); });
      break;
    case OpKind::kSumAxes:
      set(0, [&] { return broadcast_to(g, aux.shape, aux.axes); });
      break;
    case OpKind::kBroadcast:
      set(0, [&] { return sum(g, aux.axes); });
      break;
    case OpKind::kGather:
      set(0, [&] { return scatter_add(g, aux.index, n.inputs[0].shape()); });
      break;
    case OpKind::kScatterAdd:
      set(0, [&] { return gather(g, aux.index, n.inputs[0].shape()); });
      break;
    case OpKind::kReshape:
      set(0, [&] { return reshape(g, n.inputs[0].shape()); });
      break;
    case OpKind::kTranspose:
      set(0, [&] { return transpose(g); });
      break;
    case OpKind::kMatmul:
      set(0, [&] { return matmul(g, transpose(in(1))); });
      set(1, [&] { return matmul(transpose(in(0)), g); });
      break;
    case OpKind::kConv2d:
      set(0, [&] { return conv2d_input_grad(g, in(1), aux.conv, n.inputs[0].shape()); });
      set(1, [&] { return conv2d_kernel_grad(in(0), g, aux.conv, n.inputs[1].shape()); });
      break;
    case OpKind::kConv2dInputGrad:
      // inputs: (output gradient, kernel); g has the conv input's shape.
      set(0, [&] { return conv2d(g, in(1), aux.conv); });
      set(1, [&] { return conv2d_kernel_grad(g, in(0), aux.conv, n.inputs[1].shape()); });
      break;
    case OpKind::kConv2dKernelGrad:
      // inputs: (conv input, output gradient); g has the kernel's shape.
      set(0, [&] { return conv2d_input_grad(in(1), g, aux.conv, n.inputs[0].shape()); });
      set(1, [&] { return conv2d(in(0), g, aux.conv); });
      break;
    case OpKind::kUpsample: {
      const Shape& s = n.inputs[0].shape();
      set(0, [&] { return bilinear_upsample_adjoint(g, s[s.size() - 2], s[s.size() - 1]); });
      break;
    }
    case OpKind::kUpsampleAdjoint: {
      const Shape& s = n.inputs[0].shape();
      set(0, [&] { return bilinear_upsample(g, s[s.size() - 2], s[s.size() - 1]); });
      break;
    }
    case OpKind::kSoftmaxCrossEntropy:
      set(0, [&] {
        const Tensor& z = n.inputs[0];
        const std::size_t rows = z.dim(0), cols = z.dim(1);
        auto p = kernels::softmax_rows(z.detach());
        const double f = g.item() / static_cast<double>(rows);
        for (std::size_t i = 0; i < rows; ++i) {
          p[i * cols + static_cast<std::size_t>(aux.index[i])] -= 1.0;
          for (std::size_t j = 0; j < cols; ++j) p[i * cols + j] *= f;
        }
        return Tensor(z.shape(), std::move(p));
      });
      break;
    case OpKind::kMultilabelSoftMargin:
      set(0, [&] {
        const Tensor& z = n.inputs[0];
        const double f = g.item() / static_cast<double>(z.size());
        std::vector<double> d(z.size());
        for (std::size_t i = 0; i < d.size(); ++i) {
          d[i] = (kernels::sigmoid(z[i]) - aux.mask[i]) * f;
        }
        return Tensor(z.shape(), std::move(d));
      });
      break;
  }
  return out;
}

}  // namespace detail

// Reverse-mode gradients of the scalar `root` with respect to each tensor in
// `wrt`, returned in the same order. Tensors unreachable from `root` (or
// constants) get zero gradients. With create_graph the gradients are recorded
// on the tape and can be differentiated again.
inline std::vector<Tensor> backward(const Tensor& root, std::span<const Tensor> wrt,
                                    bool create_graph = false) {
  if (root.size() != 1) {
    throw ShapeError("backward: root must be a scalar, got shape " + to_string(root.shape()));
  }
  std::vector<Tensor> result;
  result.reserve(wrt.size());
  Tape* tape = root.tape();
  if (tape == nullptr) {
    for (const Tensor& w : wrt) result.push_back(Tensor::zeros(w.shape()));
    return result;
  }

  const NodeId root_id = root.node();
  NodeId lo = root_id + 1;
  std::vector<char> relevant(static_cast<std::size_t>(root_id) + 1, 0);
  for (const Tensor& w : wrt) {
    if (w.tape() == tape && w.node() <= root_id) {
      relevant[static_cast<std::size_t>(w.node())] = 1;
      lo = std::min(lo, w.node());
    }
  }
  for (NodeId i = lo; i <= root_id; ++i) {
    if (relevant[static_cast<std::size_t>(i)]) continue;
    for (NodeId p : tape->node(i).parents) {
      if (p >= lo && relevant[static_cast<std::size_t>(p)]) {
        relevant[static_cast<std::size_t>(i)] = 1;
        break;
      }
    }
  }

  std::vector<std::optional<Tensor>> grads(static_cast<std::size_t>(root_id) + 1);
  if (relevant[static_cast<std::size_t>(root_id)]) {
    grads[static_cast<std::size_t>(root_id)] = Tensor::ones(root.shape());
  }
  for (NodeId i = root_id; i >= lo; --i) {
    auto& gi = grads[static_cast<std::size_t>(i)];
    if (!relevant[static_cast<std::size_t>(i)] || !gi) continue;
    const Node& n = tape->node(i);
    if (n.kind == OpKind::kLeaf) continue;
    std::vector<char> want(n.inputs.size(), 0);
    bool any = false;
    for (std::size_t k = 0; k < n.inputs.size(); ++k) {
      const Tensor& in = n.inputs[k];
      want[k] = in.has_node() && in.node() >= lo && relevant[static_cast<std::size_t>(in.node())];
      any = any || want[k];
    }
    if (!any) continue;
    if (create_graph && !has_higher_order_rule(n.kind)) {
      throw UnsupportedOpError("backward with create_graph reached '" +
                               std::string(op_name(n.kind)) +
                               "', which has no higher-order rule");
    }
    const Tensor upstream = *gi;
    auto parts = detail::vjp(*tape, i, upstream, create_graph, want);
    for (std::size_t k = 0; k < parts.size(); ++k) {
      if (!parts[k]) continue;
      auto& dst = grads[static_cast<std::size_t>(n.inputs[k].node())];
      dst = dst ? add(*dst, *parts[k]) : *parts[k];
    }
  }

  for (const Tensor& w : wrt) {
    std::optional<Tensor> g;
    if (w.tape() == tape && w.node() <= root_id) g = grads[static_cast<std::size_t>(w.node())];
    Tensor out = g ? *g : Tensor::zeros(w.shape());
    if (create_graph && !out.has_node()) out = tape->leaf(out);
    if (!create_graph) out = out.detach();
    result.push_back(out);
  }
  return result;
}

inline Tensor backward(const Tensor& root, const Tensor& wrt, bool create_graph = false) {
  return backward(root, std::span<const Tensor>(&wrt, 1), create_graph).front();
}

// Recomputes every node from the leaves using only the stored leaf values and
// per-node saved state, and checks that each output matches bit for bit.
inline bool replay_matches(const Tape& tape) {
  std::vector<Tensor> values(tape.size());
  for (std::size_t i = 0; i < tape.size(); ++i) {
    const Node& n = tape.node(static_cast<NodeId>(i));
    std::vector<Tensor> ins;
    for (const Tensor& in : n.inputs) {
      ins.push_back(in.has_node() ? values[static_cast<std::size_t>(in.node())] : in);
    }
    const NodeAux& a = n.aux;
    Tensor v;
    switch (n.kind) {
      case OpKind::kLeaf: v = n.value; break;
      case OpKind::kAdd: v = kernels::binary(ins[0], ins[1], [](double x, double y) { return x + y; }); break;
      case OpKind::kSub: v = kernels::binary(ins[0], ins[1], [](double x, double y) { return x - y; }); break;
      case OpKind::kMul: v = kernels::binary(ins[0], ins[1], [](double x, double y) { return x * y; }); break;
      case OpKind::kDiv: {
        const double e = a.scalar;
        v = kernels::binary(ins[0], ins[1], [e](double x, double y) { return x / (y + e); });
        break;
      }
      case OpKind::kRelu: v = kernels::unary(ins[0], [](double x) { return x > 0.0 ? x : 0.0; }); break;
      case OpKind::kSigmoid: v = kernels::unary(ins[0], kernels::sigmoid); break;
      case OpKind::kExp: v = kernels::unary(ins[0], [](double x) { return std::exp(x); }); break;
      case OpKind::kLog: v = kernels::unary(ins[0], [](double x) { return std::log(x); }); break;
      case OpKind::kMinimum: v = kernels::binary(ins[0], ins[1], [](double x, double y) { return x <= y ? x : y; }); break;
      case OpKind::kScale: {
        const double f = a.scalar;
        v = kernels::unary(ins[0], [f](double x) { return x * f; });
        break;
      }
      case OpKind::kSumAxes: v = kernels::sum_axes(ins[0], a.axes); break;
      case OpKind::kBroadcast: v = kernels::broadcast(ins[0], a.shape, a.axes); break;
      case OpKind::kGather: v = kernels::gather(ins[0], a.index, a.shape); break;
      case OpKind::kScatterAdd: v = kernels::scatter_add(ins[0], a.index, a.shape); break;
      case OpKind::kReshape: v = ins[0].with_shape(a.shape); break;
      case OpKind::kTranspose: v = kernels::transpose(ins[0]); break;
      case OpKind::kMatmul: v = kernels::matmul(ins[0], ins[1]); break;
      case OpKind::kConv2d: v = kernels::conv2d(ins[0], ins[1], a.conv); break;
      case OpKind::kConv2dInputGrad: v = kernels::conv2d_input_grad(ins[0], ins[1], a.conv, a.shape); break;
      case OpKind::kConv2dKernelGrad: v = kernels::conv2d_kernel_grad(ins[0], ins[1], a.conv, a.shape); break;
      case OpKind::kUpsample: v = kernels::upsample(ins[0], n.value.dim(n.value.rank() - 2), n.value.dim(n.value.rank() - 1)); break;
      case OpKind::kUpsampleAdjoint: v = kernels::upsample_adjoint(ins[0], n.value.dim(n.value.rank() - 2), n.value.dim(n.value.rank() - 1)); break;
      case OpKind::kSoftmaxCrossEntropy: v = Tensor::scalar(kernels::softmax_cross_entropy(ins[0], a.index)); break;
      case OpKind::kMultilabelSoftMargin: v = Tensor::scalar(kernels::multilabel_soft_margin(ins[0], a.mask)); break;
    }
    if (v.shape() != n.value.shape() || v.vec() != n.value.vec()) return false;
    values[i] = v;
  }
  return true;
}

}  // namespace sharpen_focus::ad
