#pragma once

#include <string>
#include <vector>

#include "sharpen_focus/autodiff.hpp"
#include "sharpen_focus/error.hpp"

namespace sharpen_focus::nn {

// Ground truth for one batch. Single-label batches hold exactly one positive
// class per sample.
struct LabelBatch {
  bool multi_label = false;
  std::vector<std::vector<int>> positives;

  std::size_t size() const { return positives.size(); }

  static LabelBatch single(const std::vector<int>& labels) {
    LabelBatch b;
    for (int l : labels) b.positives.push_back({l});
    return b;
  }

  std::vector<int> first_labels() const {
    std::vector<int> out;
    for (const auto& p : positives) out.push_back(p.empty() ? -1 : p.front());
    return out;
  }

  // Multi-hot [N, classes] target tensor.
  ad::Tensor multi_hot(std::size_t classes) const {
    std::vector<double> t(size() * classes, 0.0);
    for (std::size_t n = 0; n < size(); ++n)
      for (int c : positives[n]) {
        if (c < 0 || static_cast<std::size_t>(c) >= classes) {
          throw DomainError("label " + std::to_string(c) + " out of range");
        }
        t[n * classes + static_cast<std::size_t>(c)] = 1.0;
      }
    return ad::Tensor({size(), classes}, std::move(t));
  }
};

// Batch-mean softmax cross-entropy, evaluated through log-sum-exp.
inline ad::Tensor cross_entropy(const ad::Tensor& logits, const std::vector<int>& labels) {
  return ad::softmax_cross_entropy(logits, labels);
}

// Mean over samples and classes of y*softplus(-z) + (1-y)*softplus(z).
inline ad::Tensor multilabel_soft_margin(const ad::Tensor& logits, const ad::Tensor& targets) {
  return ad::multilabel_soft_margin(logits, targets);
}

inline ad::Tensor classification_loss(const ad::Tensor& logits, const LabelBatch& labels) {
  if (labels.multi_label) return nn::multilabel_soft_margin(logits, labels.multi_hot(logits.dim(1)));
  for (const auto& p : labels.positives) {
    if (p.size() != 1) throw DomainError("single-label batch with " + std::to_string(p.size()) + " labels");
  }
  return cross_entropy(logits, labels.first_labels());
}

}  // namespace sharpen_focus::nn
