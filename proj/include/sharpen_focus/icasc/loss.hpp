#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "sharpen_focus/attention/attention.hpp"
#include "sharpen_focus/autodiff.hpp"
#include "sharpen_focus/error.hpp"
#include "sharpen_focus/nn/losses.hpp"
#include "sharpen_focus/nn/model.hpp"

namespace sharpen_focus::icasc {

using ad::Tensor;
using attention::Mechanism;

struct IcascConfig {
  Mechanism mechanism = Mechanism::kACh;
  double omega = 100.0;        // mask sharpness
  double sigma_factor = 0.55;  // mask threshold as a fraction of the per-sample max
  double theta = 0.8;          // consistency offset
  double epsilon = 1e-8;       // added to every ratio denominator
  double skip_threshold = 1e-6;
  bool clamp_lac = false;      // max(0, L_AC) instead of the raw value
  double weight_c = 1.0;
  double weight_as_inner = 1.0;
  double weight_as_last = 1.0;
  double weight_ac = 1.0;

  void validate() const {
    if (!(omega > 0)) throw ConfigError("omega must be > 0");
    if (!(sigma_factor > 0 && sigma_factor < 1)) throw ConfigError("sigma_factor must be in (0,1)");
    if (!(theta > 0 && theta <= 1)) throw ConfigError("theta must be in (0,1]");
    if (!(epsilon >= 0)) throw ConfigError("epsilon must be >= 0");
    if (!(skip_threshold >= 0)) throw ConfigError("skip_threshold must be >= 0");
  }
};

enum class Resolution { kLast, kInner };

// Soft target region, constant with respect to the tape.
struct RegionMask {
  Tensor values;                 // [N, H, W], each in (0, 1)
  std::vector<char> degenerate;  // per sample: source attention was all zero
  Resolution resolution = Resolution::kLast;
};

// Highest-probability class outside each sample's ground truth; ties go to the
// lowest class id.
inline std::vector<int> confusing_class(const Tensor& probabilities, const nn::LabelBatch& labels) {
  if (probabilities.rank() != 2 || probabilities.dim(0) != labels.size()) {
    throw ShapeError("confusing_class: probabilities " + ad::to_string(probabilities.shape()) +
                     " for " + std::to_string(labels.size()) + " samples");
  }
  const std::size_t c = probabilities.dim(1);
  if (c < 2) throw DomainError("confusing_class needs at least 2 classes");
  std::vector<int> out(labels.size(), -1);
  for (std::size_t n = 0; n < labels.size(); ++n) {
    std::vector<char> gt(c, 0);
    for (int l : labels.positives[n]) {
      if (l < 0 || static_cast<std::size_t>(l) >= c) {
        throw DomainError("confusing_class: label " + std::to_string(l) + " out of range");
      }
      gt[static_cast<std::size_t>(l)] = 1;
    }
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < c; ++k) {
      if (gt[k]) continue;
      const double p = probabilities[n * c + k];
      if (out[n] < 0 || p > best) {
        best = p;
        out[n] = static_cast<int>(k);
      }
    }
    if (out[n] < 0) {
      throw DomainError("confusing_class: sample " + std::to_string(n) +
                        " is labelled with every class");
    }
  }
  return out;
}

inline std::vector<int> confusing_class(const Tensor& probabilities, const std::vector<int>& labels) {
  return confusing_class(probabilities, nn::LabelBatch::single(labels));
}

// Mask_ij = sigmoid(omega * (A_ij - sigma)), sigma = sigma_factor * max_ij A
// per sample. Values are clamped into the open interval (0, 1) so saturated
// pixels stay representable.
inline RegionMask region_mask(const Tensor& target_attention, const IcascConfig& config,
                              Resolution resolution = Resolution::kLast) {
  const Tensor a = target_attention.detach();
  if (a.rank() != 3) throw ShapeError("region_mask expects [N, H, W] attention");
  const std::size_t n = a.dim(0), plane = a.dim(1) * a.dim(2);
  constexpr double kLo = std::numeric_limits<double>::min();
  const double hi = std::nextafter(1.0, 0.0);
  std::vector<double> m(a.size());
  std::vector<char> degenerate(n, 0);
  for (std::size_t s = 0; s < n; ++s) {
    const double* row = a.vec().data() + s * plane;
    double mx = 0.0;
    for (std::size_t i = 0; i < plane; ++i) {
      if (row[i] < 0) throw DomainError("region_mask: attention must be non-negative");
      mx = std::max(mx, row[i]);
    }
    degenerate[s] = mx == 0.0;
    const double sigma = config.sigma_factor * mx;
    for (std::size_t i = 0; i < plane; ++i) {
      m[s * plane + i] =
          std::clamp(ad::kernels::sigmoid(config.omega * (row[i] - sigma)), kLo, hi);
    }
  }
  return {Tensor(a.shape(), std::move(m)), std::move(degenerate), resolution};
}

// Mask at inner-layer resolution: the last-layer attention is upsampled first
// and the sigmoid threshold applied afterwards, so the edge stays sharp.
inline RegionMask region_mask_upsampled(const Tensor& last_target_attention, std::size_t height,
                                        std::size_t width, const IcascConfig& config) {
  Tensor up = ad::bilinear_upsample(last_target_attention.detach(), height, width);
  return region_mask(up, config, Resolution::kInner);
}

namespace detail {

inline void check_maps(const Tensor& a, const Tensor& b, std::string_view what) {
  if (a.rank() != 3 || a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + ad::to_string(a.shape()) + " vs " +
                     ad::to_string(b.shape()));
  }
}

}  // namespace detail

// Per-sample separation loss, [N]:
//   2 * sum_ij min(A^T, A^Conf) * Mask / (sum_ij (A^T + A^Conf) + epsilon)
inline Tensor attention_separation_per_sample(const Tensor& target, const Tensor& confusing,
                                              const RegionMask& mask, const IcascConfig& config) {
  detail::check_maps(target, confusing, "attention_separation");
  detail::check_maps(target, mask.values, "attention_separation mask");
  Tensor overlap = ad::sum(ad::mul(ad::minimum(target, confusing), mask.values), {1, 2});
  Tensor mass = ad::sum(ad::add(target, confusing), {1, 2});
  return ad::divide(ad::scale(overlap, 2.0), mass, config.epsilon);
}

inline Tensor attention_separation(const Tensor& target, const Tensor& confusing,
                                   const RegionMask& mask, const IcascConfig& config) {
  return ad::mean(attention_separation_per_sample(target, confusing, mask, config));
}

// Per-sample consistency loss, [N]: theta - sum(A^in * Mask) / (sum A^in + epsilon).
inline Tensor attention_consistency_per_sample(const Tensor& inner_target, const RegionMask& mask,
                                               const IcascConfig& config) {
  detail::check_maps(inner_target, mask.values, "attention_consistency");
  Tensor inside = ad::sum(ad::mul(inner_target, mask.values), {1, 2});
  Tensor mass = ad::sum(inner_target, {1, 2});
  Tensor l = ad::sub(Tensor::scalar(config.theta), ad::divide(inside, mass, config.epsilon));
  return config.clamp_lac ? ad::relu(l) : l;
}

inline Tensor attention_consistency(const Tensor& inner_target, const RegionMask& mask,
                                    const IcascConfig& config) {
  return ad::mean(attention_consistency_per_sample(inner_target, mask, config));
}

// Discrete and detached choices made while evaluating the objective. Passing
// them back in re-evaluates the same surrogate function at other parameters.
struct ObjectiveDecisions {
  std::vector<int> confusing;
  std::vector<RegionMask> masks_last;   // one per target round
  std::vector<RegionMask> masks_inner;
  std::vector<std::vector<char>> skipped;  // [round][sample]
};

struct LossBreakdown {
  Tensor classification;
  Tensor separation_inner;
  Tensor separation_last;
  Tensor consistency;
  Tensor total;
  std::vector<char> skipped;  // per sample: every target round was skipped
  // Per-sample attention terms averaged over the sample's ground-truth
  // classes; NaN where skipped.
  std::vector<double> sample_separation_last;
  std::vector<double> sample_separation_inner;
  std::vector<double> sample_consistency;
  ObjectiveDecisions decisions;

  double skip_rate() const {
    if (skipped.empty()) return 0.0;
    return static_cast<double>(std::count(skipped.begin(), skipped.end(), 1)) /
           static_cast<double>(skipped.size());
  }
};

struct ObjectiveOptions {
  // When false the attention maps are built from first-order gradients only:
  // the attention terms are reported but carry no gradient.
  bool differentiable_attention = true;
};

// L = L_C + L_AS^in + L_AS^la + L_AC, each attention term averaged over the
// batch. Samples whose last-layer target attention carries less mass than
// skip_threshold contribute only to L_C. Multi-label samples take one
// attention round per ground-truth class (one-hot on that logit) against a
// shared confusing class, and average their terms over those rounds.
inline LossBreakdown icasc_objective(const nn::ForwardRecord& record, const nn::LabelBatch& labels,
                                     const IcascConfig& config, const ObjectiveOptions& options = {},
                                     const ObjectiveDecisions* frozen = nullptr) {
  config.validate();
  const std::size_t n = record.logits.dim(0);
  if (labels.size() != n) throw ShapeError("icasc_objective: label count does not match batch");
  const bool create = options.differentiable_attention;

  LossBreakdown out;
  out.classification = nn::classification_loss(record.logits, labels);

  ObjectiveDecisions& dec = out.decisions;
  dec.confusing = frozen ? frozen->confusing : confusing_class(record.probabilities, labels);

  const auto conf_grads = attention::class_gradients(record, dec.confusing, create);
  const Tensor conf_inner =
      attention::attention_values(config.mechanism, record.inner, conf_grads.inner);
  const Tensor conf_last =
      attention::attention_values(config.mechanism, record.last, conf_grads.last);

  std::size_t rounds = 0;
  for (const auto& p : labels.positives) rounds = std::max(rounds, p.size());
  const std::size_t inner_h = record.inner.dim(2), inner_w = record.inner.dim(3);

  Tensor sum_inner = Tensor::scalar(0.0), sum_last = Tensor::scalar(0.0),
         sum_ac = Tensor::scalar(0.0);
  std::vector<double> acc_last(n, 0.0), acc_inner(n, 0.0), acc_ac(n, 0.0);
  std::vector<std::size_t> used(n, 0);

  for (std::size_t r = 0; r < rounds; ++r) {
    std::vector<int> target(n, -1);
    for (std::size_t s = 0; s < n; ++s) {
      if (r < labels.positives[s].size()) target[s] = labels.positives[s][r];
    }
    const auto grads = attention::class_gradients(record, target, create);
    const Tensor t_inner = attention::attention_values(config.mechanism, record.inner, grads.inner);
    const Tensor t_last = attention::attention_values(config.mechanism, record.last, grads.last);

    RegionMask mask_last = frozen ? frozen->masks_last.at(r) : region_mask(t_last, config);
    RegionMask mask_inner = frozen ? frozen->masks_inner.at(r)
                                   : region_mask_upsampled(t_last, inner_h, inner_w, config);

    std::vector<char> skip(n, 1);
    if (frozen) {
      skip = frozen->skipped.at(r);
    } else {
      const Tensor mass = ad::kernels::sum_axes(t_last.detach(), {1, 2});
      for (std::size_t s = 0; s < n; ++s) {
        skip[s] = target[s] < 0 || mass[s] < config.skip_threshold;
      }
    }

    std::vector<double> w(n, 0.0);
    for (std::size_t s = 0; s < n; ++s) {
      if (!skip[s]) {
        w[s] = 1.0 / (static_cast<double>(labels.positives[s].size()) * static_cast<double>(n));
      }
    }
    const Tensor weights({n}, w);

    const Tensor las_last = attention_separation_per_sample(t_last, conf_last, mask_last, config);
    const Tensor las_inner =
        attention_separation_per_sample(t_inner, conf_inner, mask_inner, config);
    const Tensor lac = attention_consistency_per_sample(t_inner, mask_inner, config);

    sum_last = ad::add(sum_last, ad::sum(ad::mul(las_last, weights)));
    sum_inner = ad::add(sum_inner, ad::sum(ad::mul(las_inner, weights)));
    sum_ac = ad::add(sum_ac, ad::sum(ad::mul(lac, weights)));

    for (std::size_t s = 0; s < n; ++s) {
      if (skip[s]) continue;
      acc_last[s] += las_last[s];
      acc_inner[s] += las_inner[s];
      acc_ac[s] += lac[s];
      ++used[s];
    }
    dec.masks_last.push_back(std::move(mask_last));
    dec.masks_inner.push_back(std::move(mask_inner));
    dec.skipped.push_back(std::move(skip));
  }

  out.separation_inner = sum_inner;
  out.separation_last = sum_last;
  out.consistency = sum_ac;
  out.skipped.assign(n, 0);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t s = 0; s < n; ++s) {
    out.skipped[s] = used[s] == 0;
    const double k = static_cast<double>(used[s]);
    out.sample_separation_last.push_back(used[s] ? acc_last[s] / k : nan);
    out.sample_separation_inner.push_back(used[s] ? acc_inner[s] / k : nan);
    out.sample_consistency.push_back(used[s] ? acc_ac[s] / k : nan);
  }

  auto weighted = [](const Tensor& t, double w) { return w == 1.0 ? t : ad::scale(t, w); };
  out.total = ad::add(ad::add(ad::add(weighted(out.classification, config.weight_c),
                                      weighted(out.separation_inner, config.weight_as_inner)),
                              weighted(out.separation_last, config.weight_as_last)),
                      weighted(out.consistency, config.weight_ac));

  const std::pair<const char*, const Tensor*> terms[] = {
      {"L_C", &out.classification},       {"L_AS_inner", &out.separation_inner},
      {"L_AS_last", &out.separation_last}, {"L_AC", &out.consistency},
      {"total", &out.total}};
  for (const auto& [name, t] : terms) {
    if (!std::isfinite(t->item())) {
      throw NumericalError(std::string("non-finite loss term ") + name + " = " +
                           std::to_string(t->item()));
    }
  }
  return out;
}

}  // namespace sharpen_focus::icasc
