#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sharpen_focus/app/run_config.hpp"
#include "sharpen_focus/autodiff.hpp"
#include "sharpen_focus/data/dataset.hpp"
#include "sharpen_focus/error.hpp"
#include "sharpen_focus/eval/metrics.hpp"
#include "sharpen_focus/icasc/loss.hpp"
#include "sharpen_focus/nn/checkpoint.hpp"
#include "sharpen_focus/nn/model.hpp"
#include "sharpen_focus/nn/optim.hpp"
#include "sharpen_focus/util/format.hpp"

namespace sharpen_focus::app {

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0.0;
  double l_c = 0.0;
  double l_as_in = 0.0;
  double l_as_la = 0.0;
  double l_ac = 0.0;
  double total = 0.0;
  double train_accuracy = 0.0;
  double test_accuracy = std::nan("");
  double skip_rate = 0.0;
};

inline constexpr const char* kLogHeader =
    "epoch,lr,l_c,l_as_in,l_as_la,l_ac,total,train_accuracy,test_accuracy,skip_rate";

inline std::string log_row(const EpochLog& e) {
  using util::format_double;
  return std::to_string(e.epoch) + ',' + format_double(e.lr) + ',' + format_double(e.l_c) + ',' +
         format_double(e.l_as_in) + ',' + format_double(e.l_as_la) + ',' + format_double(e.l_ac) +
         ',' + format_double(e.total) + ',' + format_double(e.train_accuracy) + ',' +
         format_double(e.test_accuracy) + ',' + format_double(e.skip_rate);
}

// Top-1 accuracy from a forward pass only (no attention).
inline double quick_accuracy(const nn::ParameterSet& params, const data::Dataset& ds,
                             std::size_t batch_size = 128) {
  if (ds.empty()) throw DataError("accuracy: empty dataset");
  std::vector<double> probs;
  std::vector<std::vector<int>> labels;
  for (std::size_t lo = 0; lo < ds.size(); lo += batch_size) {
    std::vector<std::size_t> idx;
    for (std::size_t i = lo; i < std::min(ds.size(), lo + batch_size); ++i) idx.push_back(i);
    const auto batch = data::make_batch(ds, idx);
    ad::Tape tape;
    const auto rec = nn::forward(tape, params, batch.images);
    probs.insert(probs.end(), rec.probabilities.vec().begin(), rec.probabilities.vec().end());
    for (const auto& l : batch.labels.positives) labels.push_back(l);
  }
  return eval::topk_accuracy(probs, params.config.classes, labels, 1);
}

inline void check_compatible(const nn::ModelConfig& model, const data::Dataset& ds,
                             const std::string& what) {
  if (ds.multi_label != model.multi_label) {
    throw ConfigError(what + ": multi-label flag does not match the labels file");
  }
  if (ds.classes > model.classes) {
    throw ConfigError(what + ": " + std::to_string(ds.classes) + " classes, model has " +
                      std::to_string(model.classes));
  }
  if (!ds.empty()) {
    const auto& im = ds.samples.front().image;
    if (im.channels != model.input_channels || im.height != model.input_size ||
        im.width != model.input_size) {
      throw ConfigError(what + ": image size " + std::to_string(im.channels) + "x" +
                        std::to_string(im.height) + "x" + std::to_string(im.width) +
                        " does not match the model input");
    }
  }
}

// Single-process trainer. Batch order and flips depend only on (seed, epoch),
// so a run resumed from a checkpoint replays the same epochs.
class Trainer {
 public:
  Trainer(RunConfig config, const data::Dataset& train, const data::Dataset* test,
          std::optional<nn::TrainingState> resume = std::nullopt)
      : config_(std::move(config)), train_(train), test_(test) {
    config_.validate();
    if (train_.empty()) throw DataError("training set is empty");
    check_compatible(config_.model, train_, "training set");
    if (test_) check_compatible(config_.model, *test_, "test set");
    if (resume) {
      if (resume->params.config != config_.model) {
        throw ConfigError("checkpoint model does not match the configured model");
      }
      if (resume->seed != config_.seed) {
        throw ConfigError("checkpoint seed " + std::to_string(resume->seed) +
                          " differs from --seed " + std::to_string(config_.seed));
      }
      state_ = std::move(*resume);
    } else {
      state_.params = nn::build_model(config_.model, config_.seed);
      state_.seed = config_.seed;
    }
  }

  bool done() const { return state_.epoch >= config_.optim.epochs; }
  const nn::TrainingState& state() const { return state_; }
  const RunConfig& config() const { return config_; }

  EpochLog run_epoch() {
    if (done()) throw ConfigError("training already finished");
    const auto& o = config_.optim;
    EpochLog log;
    log.epoch = state_.epoch;
    log.lr = nn::lr_schedule(o.schedule, state_.epoch, o.epochs, o.lr, o.milestones);

    data::BatchIterator it(train_, o.batch_size, config_.seed, state_.epoch, true, o.flip);
    std::size_t seen = 0, correct = 0;
    double skipped = 0.0;
    const icasc::ObjectiveOptions objective{!config_.baseline};
    while (auto batch = it.next()) {
      ad::Tape tape;
      const auto rec = nn::forward(tape, state_.params, batch->images);
      const auto out = icasc::icasc_objective(rec, batch->labels, config_.icasc, objective);
      const ad::Tensor& root = config_.baseline ? out.classification : out.total;
      const auto grads = ad::backward(root, rec.params);
      nn::sgd_step(state_.params, grads, log.lr, o.momentum, o.weight_decay, state_.optimizer);

      const double n = static_cast<double>(batch->indices.size());
      log.l_c += n * out.classification.item();
      log.l_as_in += n * out.separation_inner.item();
      log.l_as_la += n * out.separation_last.item();
      log.l_ac += n * out.consistency.item();
      log.total += n * root.item();
      skipped += n * out.skip_rate();
      const std::size_t c = state_.params.config.classes;
      for (std::size_t k = 0; k < batch->indices.size(); ++k) {
        const auto ranked = eval::ranked_classes(rec.probabilities.vec().data() + k * c, c);
        const auto& pos = batch->labels.positives[k];
        correct += std::find(pos.begin(), pos.end(), ranked[0]) != pos.end();
      }
      seen += batch->indices.size();
    }
    const double total = static_cast<double>(seen);
    log.l_c /= total;
    log.l_as_in /= total;
    log.l_as_la /= total;
    log.l_ac /= total;
    log.total /= total;
    log.skip_rate = skipped / total;
    log.train_accuracy = static_cast<double>(correct) / total;
    if (test_ && !test_->empty()) log.test_accuracy = quick_accuracy(state_.params, *test_);
    ++state_.epoch;
    return log;
  }

 private:
  RunConfig config_;
  const data::Dataset& train_;
  const data::Dataset* test_;
  nn::TrainingState state_;
};

struct TrainOutputs {
  std::filesystem::path log;
  std::filesystem::path final_checkpoint;
  std::filesystem::path best_checkpoint;
  std::vector<EpochLog> rows;
};

// Full training run writing into `config.out`:
//   config.txt       resolved configuration
//   train_log.csv    "# seed=<seed>" line, header, one row per epoch
//   final.ckpt, best.ckpt (best by test accuracy, else train accuracy)
//   epoch_<k>.ckpt   when `save_every_epoch`
// On resume the log is appended to.
inline TrainOutputs run_training(const RunConfig& config, const data::Dataset& train,
                                 const data::Dataset* test,
                                 std::optional<nn::TrainingState> resume = std::nullopt,
                                 bool save_every_epoch = false,
                                 const std::function<void(const EpochLog&)>& on_epoch = {}) {
  namespace fs = std::filesystem;
  const bool resuming = resume.has_value();
  Trainer trainer(config, train, test, std::move(resume));
  const fs::path out = config.out;
  fs::create_directories(out);
  {
    std::ofstream cfg(out / "config.txt", std::ios::trunc);
    if (!cfg) throw DataError("cannot write " + (out / "config.txt").string());
    cfg << config.to_text();
  }
  TrainOutputs result;
  result.log = out / "train_log.csv";
  result.final_checkpoint = out / "final.ckpt";
  result.best_checkpoint = out / "best.ckpt";

  const bool append = resuming && fs::exists(result.log);
  std::ofstream log(result.log, append ? std::ios::app : std::ios::trunc);
  if (!log) throw DataError("cannot write " + result.log.string());
  if (!append) log << "# seed=" << config.seed << '\n' << kLogHeader << '\n';

  double best = -1.0;
  while (!trainer.done()) {
    const EpochLog row = trainer.run_epoch();
    log << log_row(row) << '\n';
    log.flush();
    result.rows.push_back(row);
    if (on_epoch) on_epoch(row);
    const double score = std::isnan(row.test_accuracy) ? row.train_accuracy : row.test_accuracy;
    if (score > best) {
      best = score;
      nn::save_checkpoint(trainer.state(), result.best_checkpoint);
    }
    if (save_every_epoch) {
      nn::save_checkpoint(trainer.state(), out / ("epoch_" + std::to_string(row.epoch) + ".ckpt"));
    }
  }
  nn::save_checkpoint(trainer.state(), result.final_checkpoint);
  return result;
}

}  // namespace sharpen_focus::app
