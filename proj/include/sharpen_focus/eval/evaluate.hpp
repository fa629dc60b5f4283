#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "sharpen_focus/data/dataset.hpp"
#include "sharpen_focus/error.hpp"
#include "sharpen_focus/eval/metrics.hpp"
#include "sharpen_focus/icasc/loss.hpp"
#include "sharpen_focus/nn/model.hpp"
#include "sharpen_focus/util/format.hpp"
#include "sharpen_focus/util/parallel.hpp"

namespace sharpen_focus::eval {

struct EvalOptions {
  icasc::IcascConfig icasc;
  std::size_t batch_size = 64;
};

// Frozen-parameter pass over a dataset. Attention terms come from the same
// objective used in training, evaluated without double backprop.
struct Evaluation {
  std::size_t classes = 0;
  bool multi_label = false;
  std::vector<std::string> ids;
  std::vector<std::vector<int>> labels;
  std::vector<double> probabilities;  // [N, classes]
  std::vector<int> confusing;
  std::vector<double> las_last;   // NaN where skipped
  std::vector<double> las_inner;
  std::vector<double> lac;
  std::vector<char> skipped;

  std::size_t size() const { return ids.size(); }

  double skip_rate() const {
    if (skipped.empty()) return 0.0;
    std::size_t s = 0;
    for (char c : skipped) s += c != 0;
    return static_cast<double>(s) / static_cast<double>(skipped.size());
  }

  // Mean over samples that were not skipped; NaN when all were.
  static double mean_defined(const std::vector<double>& v) {
    double total = 0.0;
    std::size_t n = 0;
    for (double x : v) {
      if (std::isnan(x)) continue;
      total += x;
      ++n;
    }
    return n ? total / static_cast<double>(n) : std::nan("");
  }

  double mean_las_last() const { return mean_defined(las_last); }
  double mean_las_inner() const { return mean_defined(las_inner); }
  double mean_lac() const { return mean_defined(lac); }

  // Target-class probabilities (one per ground-truth label) and the
  // confusing-class probability of each sample.
  std::pair<std::vector<double>, std::vector<double>> ks_inputs() const {
    std::vector<double> target, conf;
    for (std::size_t n = 0; n < size(); ++n) {
      for (int c : labels[n]) target.push_back(probabilities[n * classes + static_cast<std::size_t>(c)]);
      conf.push_back(probabilities[n * classes + static_cast<std::size_t>(confusing[n])]);
    }
    return {target, conf};
  }
};

inline Evaluation evaluate(const nn::ParameterSet& params, const data::Dataset& ds,
                           const EvalOptions& options) {
  if (ds.empty()) throw DataError("evaluate: empty dataset");
  if (ds.multi_label != params.config.multi_label) {
    throw ConfigError("dataset and model disagree on multi-label mode");
  }
  if (ds.classes > params.config.classes) {
    throw ConfigError("dataset has " + std::to_string(ds.classes) + " classes, model has " +
                      std::to_string(params.config.classes));
  }
  if (options.batch_size == 0) throw ConfigError("batch size must be positive");
  const std::size_t n = ds.size(), c = params.config.classes;
  Evaluation ev;
  ev.classes = c;
  ev.multi_label = ds.multi_label;
  ev.probabilities.assign(n * c, 0.0);
  ev.confusing.assign(n, -1);
  ev.las_last.assign(n, 0.0);
  ev.las_inner.assign(n, 0.0);
  ev.lac.assign(n, 0.0);
  ev.skipped.assign(n, 0);
  for (const auto& s : ds.samples) {
    ev.ids.push_back(s.id);
    ev.labels.push_back(s.labels);
  }

  const std::size_t batches = (n + options.batch_size - 1) / options.batch_size;
  util::parallel_for(batches, [&](std::size_t b) {
    const std::size_t lo = b * options.batch_size, hi = std::min(n, lo + options.batch_size);
    std::vector<std::size_t> idx;
    for (std::size_t i = lo; i < hi; ++i) idx.push_back(i);
    const data::Batch batch = data::make_batch(ds, idx);
    ad::Tape tape;
    const auto rec = nn::forward(tape, params, batch.images);
    const auto out = icasc::icasc_objective(rec, batch.labels, options.icasc, {false});
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const std::size_t i = idx[k];
      for (std::size_t j = 0; j < c; ++j) ev.probabilities[i * c + j] = rec.probabilities[k * c + j];
      ev.confusing[i] = out.decisions.confusing[k];
      ev.las_last[i] = out.sample_separation_last[k];
      ev.las_inner[i] = out.sample_separation_inner[k];
      ev.lac[i] = out.sample_consistency[k];
      ev.skipped[i] = out.skipped[k];
    }
  });
  return ev;
}

struct MetricRow {
  std::string metric;
  std::string scope;  // class id or "all"
  double value;
};

inline std::vector<MetricRow> metric_rows(const Evaluation& ev) {
  std::vector<MetricRow> rows;
  const std::size_t c = ev.classes;
  rows.push_back({"top1_accuracy", "all", topk_accuracy(ev.probabilities, c, ev.labels, 1)});
  if (c >= 5) rows.push_back({"top5_accuracy", "all", topk_accuracy(ev.probabilities, c, ev.labels, 5)});
  if (!ev.multi_label) {
    for (std::size_t k = 0; k < c; ++k) {
      std::size_t total = 0, hit = 0;
      for (std::size_t n = 0; n < ev.size(); ++n) {
        if (ev.labels[n][0] != static_cast<int>(k)) continue;
        ++total;
        hit += ranked_classes(ev.probabilities.data() + n * c, c)[0] == static_cast<int>(k);
      }
      if (total) {
        rows.push_back({"top1_accuracy", std::to_string(k),
                        static_cast<double>(hit) / static_cast<double>(total)});
      }
    }
  } else {
    const auto ap = average_precision_per_class(ev.probabilities, c, ev.labels);
    for (std::size_t k = 0; k < c; ++k) rows.push_back({"average_precision", std::to_string(k), ap.values[k]});
    rows.push_back({"mean_average_precision", "all", ap.mean});
  }
  try {
    const auto auc = auc_per_class(ev.probabilities, c, ev.labels);
    for (std::size_t k = 0; k < c; ++k) rows.push_back({"auc", std::to_string(k), auc.values[k]});
    rows.push_back({"auc_macro", "all", auc.mean});
  } catch (const DomainError&) {
    // Every class lacks either positives or negatives; AUC is undefined.
  }
  rows.push_back({"las_last", "all", ev.mean_las_last()});
  rows.push_back({"las_inner", "all", ev.mean_las_inner()});
  rows.push_back({"lac", "all", ev.mean_lac()});
  rows.push_back({"skip_rate", "all", ev.skip_rate()});
  const auto [target, conf] = ev.ks_inputs();
  const auto ks = ks_chart(target, conf);
  rows.push_back({"ks", "all", ks.ks});
  rows.push_back({"ks_threshold", "all", ks.ks_threshold});
  rows.push_back({"ks_grid", "all", ks.ks_grid});
  rows.push_back({"ks_grid_threshold", "all", ks.ks_grid_threshold});
  return rows;
}

inline std::ofstream open_output(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  return os;
}

inline void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRow>& rows) {
  auto os = open_output(path);
  os << "metric,class,value\n";
  for (const auto& r : rows) os << r.metric << ',' << r.scope << ',' << util::format_double(r.value) << '\n';
}

inline void write_overlap_csv(const std::filesystem::path& path, const Evaluation& ev) {
  auto os = open_output(path);
  os << "id,labels,confusing,skipped,las_last,las_inner,lac\n";
  for (std::size_t n = 0; n < ev.size(); ++n) {
    os << ev.ids[n] << ',';
    for (std::size_t i = 0; i < ev.labels[n].size(); ++i) os << (i ? ";" : "") << ev.labels[n][i];
    os << ',' << ev.confusing[n] << ',' << (ev.skipped[n] ? 1 : 0) << ','
       << util::format_double(ev.las_last[n]) << ',' << util::format_double(ev.las_inner[n]) << ','
       << util::format_double(ev.lac[n]) << '\n';
  }
}

inline void write_ks_csv(const std::filesystem::path& path, const KsCurve& k) {
  auto os = open_output(path);
  os << "threshold,cdf_target,cdf_conf,gap\n";
  for (std::size_t i = 0; i < k.thresholds.size(); ++i) {
    os << util::format_double(k.thresholds[i]) << ',' << util::format_double(k.cdf_target[i]) << ','
       << util::format_double(k.cdf_confusing[i]) << ',' << util::format_double(k.gap[i]) << '\n';
  }
}

}  // namespace sharpen_focus::eval
