#pragma once

#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "sharpen_focus/app/run_config.hpp"
#include "sharpen_focus/attention/attention.hpp"
#include "sharpen_focus/data/dataset.hpp"
#include "sharpen_focus/data/synth.hpp"
#include "sharpen_focus/error.hpp"
#include "sharpen_focus/eval/evaluate.hpp"
#include "sharpen_focus/eval/heatmap.hpp"
#include "sharpen_focus/nn/checkpoint.hpp"
#include "sharpen_focus/util/format.hpp"

namespace sharpen_focus::app {

namespace fs = std::filesystem;

inline std::string cmd_synth(const data::SynthSpec& spec, std::size_t per_class, const fs::path& out) {
  if (per_class == 0) throw ConfigError("per-class must be positive");
  const auto ds = data::generate_synth(spec, per_class);
  data::write_synth(out, ds);
  std::ostringstream os;
  os << "wrote " << ds.data.size() << " images (" << spec.classes << " classes x " << per_class
     << ") to " << out.string();
  return os.str();
}

// Loads a dataset sized for the checkpoint's model.
inline data::Dataset load_for_model(const fs::path& dir, const nn::ModelConfig& model) {
  auto ds = data::load_dataset(dir, model.classes);
  if (ds.empty()) throw DataError("dataset " + dir.string() + " is empty");
  if (ds.multi_label != model.multi_label) {
    throw ConfigError("dataset " + dir.string() + ": multi-label flag does not match the model");
  }
  return ds;
}

// metrics.csv + overlap.csv (per-sample attention terms). Returns the rows.
inline std::vector<eval::MetricRow> cmd_eval(const fs::path& checkpoint, const fs::path& dataset,
                                             const icasc::IcascConfig& icasc, const fs::path& out) {
  const auto state = nn::load_checkpoint(checkpoint);
  const auto ds = load_for_model(dataset, state.params.config);
  eval::EvalOptions opt;
  opt.icasc = icasc;
  const auto ev = eval::evaluate(state.params, ds, opt);
  const auto rows = eval::metric_rows(ev);
  eval::write_metrics_csv(out / "metrics.csv", rows);
  eval::write_overlap_csv(out / "overlap.csv", ev);
  return rows;
}

struct KsSummary {
  double ks = 0.0;
  double threshold = 0.0;
  std::size_t target_count = 0;
  std::size_t confusing_count = 0;
};

// ks.csv (threshold grid) plus the exact statistic.
inline KsSummary ks_report(const std::vector<double>& target, const std::vector<double>& confusing,
                           const fs::path& out) {
  const auto curve = eval::ks_chart(target, confusing);
  eval::write_ks_csv(out / "ks.csv", curve);
  return {curve.ks, curve.ks_threshold, target.size(), confusing.size()};
}

inline KsSummary cmd_ks(const fs::path& checkpoint, const fs::path& dataset,
                        const icasc::IcascConfig& icasc, const fs::path& out) {
  const auto state = nn::load_checkpoint(checkpoint);
  const auto ds = load_for_model(dataset, state.params.config);
  eval::EvalOptions opt;
  opt.icasc = icasc;
  const auto ev = eval::evaluate(state.params, ds, opt);
  const auto [target, conf] = ev.ks_inputs();
  return ks_report(target, conf, out);
}

struct AttendOptions {
  std::vector<std::string> ids;  // empty: every sample
  std::size_t top_k = 1;
  std::size_t size = 0;          // heatmap side; 0 means the input size
  bool color = true;
  std::vector<attention::Mechanism> mechanisms{attention::Mechanism::kGradCam,
                                               attention::Mechanism::kACh};
};

// One heatmap per sample, per top-k predicted class, per layer, per
// mechanism, listed in manifest.csv (id,rank,class,probability,layer,
// mechanism,file).
inline std::size_t cmd_attend(const fs::path& checkpoint, const fs::path& dataset,
                              const AttendOptions& options, const fs::path& out) {
  const auto state = nn::load_checkpoint(checkpoint);
  const auto& model = state.params.config;
  if (options.top_k == 0 || options.top_k > model.classes) {
    throw ConfigError("top-k " + std::to_string(options.top_k) + " must be in [1, " +
                      std::to_string(model.classes) + "]");
  }
  if (options.mechanisms.empty()) throw ConfigError("attend: no mechanism selected");
  const auto ds = load_for_model(dataset, model);
  std::vector<std::size_t> picked;
  if (options.ids.empty()) {
    for (std::size_t i = 0; i < ds.size(); ++i) picked.push_back(i);
  } else {
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < ds.size(); ++i) index[ds.samples[i].id] = i;
    for (const auto& id : options.ids) {
      const auto it = index.find(id);
      if (it == index.end()) throw DataError("attend: no sample with id '" + id + "'");
      picked.push_back(it->second);
    }
  }
  const std::size_t size = options.size ? options.size : model.input_size;
  const std::string ext = options.color ? ".ppm" : ".pgm";
  fs::create_directories(out);
  auto manifest = eval::open_output(out / "manifest.csv");
  manifest << "id,rank,class,probability,layer,mechanism,file\n";
  std::size_t written = 0;
  for (std::size_t i : picked) {
    const auto batch = data::make_batch(ds, {i});
    ad::Tape tape;
    const auto rec = nn::forward(tape, state.params, batch.images);
    const auto ranked = eval::ranked_classes(rec.probabilities.vec().data(), model.classes);
    for (std::size_t r = 0; r < options.top_k; ++r) {
      const int c = ranked[r];
      for (auto layer : {attention::Layer::kInner, attention::Layer::kLast}) {
        for (auto mech : options.mechanisms) {
          const auto map = attention::compute_attention(rec, {c}, layer, mech, false);
          const ad::Tensor one = map.values.with_shape({map.values.dim(1), map.values.dim(2)});
          const std::string name = ds.samples[i].id + "_top" + std::to_string(r + 1) + "_c" +
                                   std::to_string(c) + "_" + std::string(attention::layer_name(layer)) +
                                   "_" + std::string(attention::mechanism_name(mech)) + ext;
          eval::export_heatmap(one, size, out / name, options.color);
          manifest << ds.samples[i].id << ',' << r + 1 << ',' << c << ','
                   << util::format_double(rec.probabilities[static_cast<std::size_t>(c)]) << ','
                   << attention::layer_name(layer) << ',' << attention::mechanism_name(mech) << ','
                   << name << '\n';
          ++written;
        }
      }
    }
  }
  return written;
}

}  // namespace sharpen_focus::app
