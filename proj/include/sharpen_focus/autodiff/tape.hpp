#pragma once

#include <cstdint>
#include <deque>
#include <string>
#include <string_view>
#include <vector>

#include "sharpen_focus/autodiff/tensor.hpp"

namespace sharpen_focus::ad {

enum class OpKind : std::uint8_t {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kRelu,
  kSigmoid,
  kExp,
  kLog,
  kMinimum,
  kScale,
  kSumAxes,
  kBroadcast,
  kGather,
  kScatterAdd,
  kReshape,
  kTranspose,
  kMatmul,
  kConv2d,
  kConv2dInputGrad,
  kConv2dKernelGrad,
  kUpsample,
  kUpsampleAdjoint,
  kSoftmaxCrossEntropy,
  kMultilabelSoftMargin,
};

inline std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "subtract";
    case OpKind::kMul: return "multiply";
    case OpKind::kDiv: return "divide";
    case OpKind::kRelu: return "relu";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kExp: return "exp";
    case OpKind::kLog: return "log";
    case OpKind::kMinimum: return "minimum";
    case OpKind::kScale: return "scale";
    case OpKind::kSumAxes: return "sum";
    case OpKind::kBroadcast: return "broadcast";
    case OpKind::kGather: return "gather";
    case OpKind::kScatterAdd: return "scatter_add";
    case OpKind::kReshape: return "reshape";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kConv2d: return "conv2d";
    case OpKind::kConv2dInputGrad: return "conv2d_input_grad";
    case OpKind::kConv2dKernelGrad: return "conv2d_kernel_grad";
    case OpKind::kUpsample: return "bilinear_upsample";
    case OpKind::kUpsampleAdjoint: return "bilinear_upsample_adjoint";
    case OpKind::kSoftmaxCrossEntropy: return "softmax_cross_entropy";
    case OpKind::kMultilabelSoftMargin: return "multilabel_soft_margin";
  }
  return "unknown";
}

// The fused classification losses only carry a first-order rule; every other
// op differentiates into ops of this same set, so gradients of any order can
// be taken through them.
inline bool has_higher_order_rule(OpKind kind) {
  return kind != OpKind::kSoftmaxCrossEntropy &&
         kind != OpKind::kMultilabelSoftMargin;
}

struct ConvGeometry {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

// Per-op saved state beyond the operand tensors.
//   relu:      mask = 1 where input > 0
//   minimum:   mask = 1 where first operand <= second
//   sum/bcast: axes, shape = the broadcast (unreduced) shape
//   gather/scatter_add: index (-1 reads as zero), shape = other side's shape
//   reshape/upsample/conv grads: shape = input (or kernel) shape to restore
//   scale/divide: scalar = factor / epsilon
//   fused losses: index = class labels, mask = multi-hot targets
struct NodeAux {
  std::vector<double> mask;
  std::vector<std::int64_t> index;
  std::vector<std::size_t> axes;
  Shape shape;
  ConvGeometry conv;
  double scalar = 0.0;
};

struct Node {
  OpKind kind = OpKind::kLeaf;
  // Operands with their node handles intact. Which of them a rule actually
  // reads is listed in ops.hpp next to each rule.
  std::vector<Tensor> inputs;
  std::vector<NodeId> parents;
  Tensor value;  // forward output, stored detached
  NodeAux aux;
  bool trainable = false;
};

// Append-only record of operations. Nodes are only ever appended, so every
// parent precedes its children. A tape is single-writer and must outlive every
// tensor that points into it.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor leaf(const Tensor& value, bool trainable = false) {
    Node n;
    n.kind = OpKind::kLeaf;
    n.value = value.detach();
    n.trainable = trainable;
    return push(std::move(n));
  }

  Tensor parameter(const Tensor& value) { return leaf(value, true); }

  Tensor record(OpKind kind, std::vector<Tensor> inputs, const Tensor& value,
                NodeAux aux = {}) {
    Node n;
    n.kind = kind;
    for (const Tensor& in : inputs) {
      if (in.has_node()) {
        if (in.tape() != this) {
          throw Error("operands of " + std::string(op_name(kind)) +
                      " live on different tapes");
        }
        n.parents.push_back(in.node());
      }
    }
    n.inputs = std::move(inputs);
    n.value = value.detach();
    n.aux = std::move(aux);
    return push(std::move(n));
  }

  std::size_t size() const { return nodes_.size(); }
  const Node& node(NodeId id) const { return nodes_.at(static_cast<std::size_t>(id)); }

  // The recorded value of `id` with its handle attached.
  Tensor handle(NodeId id) const {
    Tensor t = node(id).value;
    t.tape_ = const_cast<Tape*>(this);
    t.node_ = id;
    return t;
  }

  std::vector<NodeId> parameters() const {
    std::vector<NodeId> out;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (nodes_[i].trainable) out.push_back(static_cast<NodeId>(i));
    }
    return out;
  }

  // Discrete forward choices (ReLU signs, min routing, argmax picks) are
  // folded into a running FNV-1a hash so callers can tell whether two
  // evaluations took the same piecewise-smooth branch.
  void note_decisions(std::span<const double> mask) {
    for (double m : mask) mix(m > 0.5 ? 1u : 0u);
    mix(0xffu);
  }
  void note_decisions(std::span<const std::int64_t> index) {
    for (std::int64_t i : index) mix(static_cast<std::uint64_t>(i));
    mix(0xfeu);
  }
  std::uint64_t decision_hash() const { return decision_hash_; }

 private:
  Tensor push(Node n) {
    Tensor out = n.value;
    nodes_.push_back(std::move(n));
    out.tape_ = this;
    out.node_ = static_cast<NodeId>(nodes_.size() - 1);
    return out;
  }

  void mix(std::uint64_t v) {
    decision_hash_ ^= v;
    decision_hash_ *= 0x100000001b3ull;
  }

  std::deque<Node> nodes_;
  std::uint64_t decision_hash_ = 0xcbf29ce484222325ull;
};

}  // namespace sharpen_focus::ad
