#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "sharpen_focus/error.hpp"

namespace sharpen_focus::eval {

// Class ids of one row ordered by descending score, ties by lowest id.
inline std::vector<int> ranked_classes(const double* row, std::size_t classes) {
  std::vector<int> ids(classes);
  std::iota(ids.begin(), ids.end(), 0);
  std::stable_sort(ids.begin(), ids.end(), [&](int a, int b) { return row[a] > row[b]; });
  return ids;
}

// Fraction of samples with at least one ground-truth class among the k
// highest-scoring classes. `scores` is row-major [N, classes].
inline double topk_accuracy(const std::vector<double>& scores, std::size_t classes,
                            const std::vector<std::vector<int>>& labels, std::size_t k) {
  if (classes == 0 || scores.size() != labels.size() * classes) {
    throw ShapeError("topk_accuracy: score matrix does not match labels");
  }
  if (k == 0 || k > classes) {
    throw DomainError("topk_accuracy: k=" + std::to_string(k) + " outside [1, " +
                      std::to_string(classes) + "]");
  }
  if (labels.empty()) throw DomainError("topk_accuracy: no samples");
  std::size_t hits = 0;
  for (std::size_t n = 0; n < labels.size(); ++n) {
    const auto ranked = ranked_classes(scores.data() + n * classes, classes);
    const bool hit = std::any_of(ranked.begin(), ranked.begin() + static_cast<long>(k), [&](int c) {
      return std::find(labels[n].begin(), labels[n].end(), c) != labels[n].end();
    });
    hits += hit;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

inline double topk_accuracy(const std::vector<double>& scores, std::size_t classes,
                            const std::vector<int>& labels, std::size_t k) {
  std::vector<std::vector<int>> l;
  for (int x : labels) l.push_back({x});
  return topk_accuracy(scores, classes, l, k);
}

// Mean of the precision at each positive's rank; scores sorted descending,
// ties by lowest sample index.
inline double average_precision(const std::vector<double>& scores, const std::vector<char>& positive) {
  if (scores.size() != positive.size()) throw ShapeError("average_precision: length mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::size_t seen = 0;
  double total = 0.0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    if (!positive[order[r]]) continue;
    ++seen;
    total += static_cast<double>(seen) / static_cast<double>(r + 1);
  }
  if (seen == 0) throw DomainError("average_precision: no positive samples");
  return total / static_cast<double>(seen);
}

// Area under the ROC curve as the Mann-Whitney statistic, ties counted half.
inline double roc_auc(const std::vector<double>& scores, const std::vector<char>& positive) {
  if (scores.size() != positive.size()) throw ShapeError("roc_auc: length mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Mid-ranks (1-based) over tie groups.
  std::vector<double> rank(scores.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double mid = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t t = i; t < j; ++t) rank[order[t]] = mid;
    i = j;
  }
  double pos = 0, rank_sum = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (positive[i]) {
      ++pos;
      rank_sum += rank[i];
    }
  }
  const double neg = static_cast<double>(scores.size()) - pos;
  if (pos == 0 || neg == 0) throw DomainError("roc_auc: need both positive and negative samples");
  return (rank_sum - pos * (pos + 1) / 2.0) / (pos * neg);
}

struct PerClassMetric {
  std::vector<double> values;  // NaN for classes that could not be evaluated
  double mean = 0.0;           // macro average over evaluated classes
};

namespace detail {

template <typename F>
PerClassMetric per_class(const std::vector<double>& scores, std::size_t classes,
                         const std::vector<std::vector<int>>& labels, bool need_negatives, F metric) {
  if (scores.size() != labels.size() * classes) throw ShapeError("per-class metric: shape mismatch");
  PerClassMetric out;
  std::size_t used = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    std::vector<double> s(labels.size());
    std::vector<char> y(labels.size(), 0);
    std::size_t pos = 0;
    for (std::size_t n = 0; n < labels.size(); ++n) {
      s[n] = scores[n * classes + c];
      y[n] = std::find(labels[n].begin(), labels[n].end(), static_cast<int>(c)) != labels[n].end();
      pos += y[n];
    }
    if (pos == 0 || (need_negatives && pos == labels.size())) {
      out.values.push_back(std::nan(""));
      continue;
    }
    out.values.push_back(metric(s, y));
    out.mean += out.values.back();
    ++used;
  }
  if (used == 0) throw DomainError("no class has positive samples");
  out.mean /= static_cast<double>(used);
  return out;
}

}  // namespace detail

inline PerClassMetric average_precision_per_class(const std::vector<double>& scores,
                                                  std::size_t classes,
                                                  const std::vector<std::vector<int>>& labels) {
  return detail::per_class(scores, classes, labels, false, average_precision);
}

inline PerClassMetric auc_per_class(const std::vector<double>& scores, std::size_t classes,
                                    const std::vector<std::vector<int>>& labels) {
  return detail::per_class(scores, classes, labels, true, roc_auc);
}

struct KsCurve {
  std::vector<double> thresholds;
  std::vector<double> cdf_target;
  std::vector<double> cdf_confusing;
  std::vector<double> gap;
  double ks_grid = 0.0;          // max gap over the grid
  double ks_grid_threshold = 0.0;
  double ks = 0.0;               // exact statistic over sample points
  double ks_threshold = 0.0;
};

// Exact two-sample KS statistic sup_t |F_a(t) - F_b(t)|, with F(t) the
// fraction of values <= t. The supremum is attained at a sample point.
inline std::pair<double, double> ks_statistic(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw DomainError("ks_statistic: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double best = 0.0, at = std::min(a.front(), b.front());
  while (i < a.size() || j < b.size()) {
    const double t = j >= b.size() || (i < a.size() && a[i] <= b[j]) ? a[i] : b[j];
    while (i < a.size() && a[i] <= t) ++i;
    while (j < b.size() && b[j] <= t) ++j;
    const double gap = std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb);
    if (gap > best) {
      best = gap;
      at = t;
    }
  }
  return {best, at};
}

inline KsCurve ks_chart(const std::vector<double>& target, const std::vector<double>& confusing,
                        std::size_t grid_size = 101) {
  if (target.empty() || confusing.empty()) throw DomainError("ks_chart: empty input");
  if (grid_size < 2) throw DomainError("ks_chart: grid size must be >= 2");
  for (const auto* v : {&target, &confusing})
    for (double p : *v) {
      if (!(p >= 0.0 && p <= 1.0)) throw DomainError("ks_chart: value outside [0, 1]");
    }
  std::vector<double> a = target, b = confusing;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  auto cdf = [](const std::vector<double>& s, double t) {
    return static_cast<double>(std::upper_bound(s.begin(), s.end(), t) - s.begin()) /
           static_cast<double>(s.size());
  };
  KsCurve k;
  for (std::size_t g = 0; g < grid_size; ++g) {
    const double t = static_cast<double>(g) / static_cast<double>(grid_size - 1);
    k.thresholds.push_back(t);
    k.cdf_target.push_back(cdf(a, t));
    k.cdf_confusing.push_back(cdf(b, t));
    k.gap.push_back(std::abs(k.cdf_target.back() - k.cdf_confusing.back()));
    if (k.gap.back() > k.ks_grid) {
      k.ks_grid = k.gap.back();
      k.ks_grid_threshold = t;
    }
  }
  std::tie(k.ks, k.ks_threshold) = ks_statistic(target, confusing);
  return k;
}

}  // namespace sharpen_focus::eval
