// sharpen-focus: synth | train | eval | attend | ks
//
// Exit codes: 0 success, 1 usage or configuration error, 2 data error,
// 3 numerical failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sharpen_focus/app/commands.hpp"
#include "sharpen_focus/app/run_config.hpp"
#include "sharpen_focus/app/train.hpp"
#include "sharpen_focus/error.hpp"

namespace sf = sharpen_focus;
namespace fs = std::filesystem;

namespace {

// Flags shared by the commands that take a run configuration. Every flag is
// optional so that the config file (then the defaults) fills the gaps.
struct RunFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mechanism;
  bool baseline = false;
  std::optional<std::size_t> epochs;
  std::optional<double> lr;
  std::optional<std::string> schedule;
  std::optional<std::size_t> batch_size;
  std::optional<std::string> out;
  std::optional<std::string> data;
  std::optional<std::string> test_data;
  std::optional<std::string> channels;
  std::vector<std::string> set;

  void add_to(CLI::App* cmd, bool training) {
    cmd->add_option("--config", config, "config file with key = value lines");
    cmd->add_option("--mechanism", mechanism, "attention mechanism")
        ->check(CLI::IsMember({"grad-cam", "a-ch"}));
    cmd->add_option("--out", out, "output directory");
    cmd->add_option("--data", data, "dataset directory");
    cmd->add_option("--set", set, "extra key=value overrides")->type_name("KEY=VALUE");
    if (!training) return;
    cmd->add_option("--seed", seed, "seed for initialisation and batch order");
    cmd->add_flag("--baseline", baseline, "train with the classification loss only");
    cmd->add_option("--epochs", epochs);
    cmd->add_option("--lr", lr, "initial learning rate");
    cmd->add_option("--schedule", schedule)->check(CLI::IsMember({"step", "cosine"}));
    cmd->add_option("--batch-size", batch_size);
    cmd->add_option("--test-data", test_data, "held-out dataset for per-epoch accuracy");
    cmd->add_option("--channels", channels, "comma-separated block widths");
  }

  // defaults < config file < flags
  sf::app::RunConfig resolve() const {
    sf::app::RunConfig cfg;
    if (!config.empty()) sf::app::apply_config_file(cfg, config);
    if (seed) cfg.set("seed", std::to_string(*seed));
    if (mechanism) cfg.set("mechanism", *mechanism);
    if (baseline) cfg.set("baseline", "true");
    if (epochs) cfg.set("epochs", std::to_string(*epochs));
    if (lr) cfg.set("lr", sf::util::format_double(*lr));
    if (schedule) cfg.set("schedule", *schedule);
    if (batch_size) cfg.set("batch_size", std::to_string(*batch_size));
    if (out) cfg.set("out", *out);
    if (data) cfg.set("data", *data);
    if (test_data) cfg.set("test_data", *test_data);
    if (channels) cfg.set("channels", *channels);
    for (const auto& kv : set) sf::app::apply_config_text(cfg, kv, "--set");
    return cfg;
  }
};

// Model shape keys not given explicitly are taken from the training data.
void infer_model(sf::app::RunConfig& cfg, const sf::data::Dataset& ds) {
  const auto& im = ds.samples.front().image;
  if (!cfg.is_set("classes")) cfg.model.classes = ds.classes;
  if (!cfg.is_set("input_size")) cfg.model.input_size = im.height;
  if (!cfg.is_set("input_channels")) cfg.model.input_channels = im.channels;
  if (!cfg.is_set("multi_label")) cfg.model.multi_label = ds.multi_label;
}

int run_train(const RunFlags& flags, const std::string& resume, bool every_epoch) {
  auto cfg = flags.resolve();
  if (cfg.data.empty()) throw sf::ConfigError("train: --data is required");
  auto train = sf::data::load_dataset(cfg.data);
  if (train.empty()) throw sf::DataError("training set " + cfg.data + " is empty");
  infer_model(cfg, train);
  cfg.validate();
  if (train.classes < cfg.model.classes) train.classes = cfg.model.classes;
  std::optional<sf::data::Dataset> test;
  if (!cfg.test_data.empty()) test = sf::data::load_dataset(cfg.test_data, cfg.model.classes);
  std::optional<sf::nn::TrainingState> state;
  if (!resume.empty()) state = sf::nn::load_checkpoint(resume);
  const auto result = sf::app::run_training(
      cfg, train, test ? &*test : nullptr, std::move(state), every_epoch,
      [](const sf::app::EpochLog& e) {
        std::printf("epoch %zu lr %.6g total %.6f train_acc %.4f test_acc %.4f skip %.4f\n",
                    e.epoch, e.lr, e.total, e.train_accuracy, e.test_accuracy, e.skip_rate);
        std::fflush(stdout);
      });
  std::printf("log %s\ncheckpoint %s\n", result.log.string().c_str(),
              result.final_checkpoint.string().c_str());
  return 0;
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s + ",") {
    if (ch == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  return out;
}

int dispatch(int argc, char** argv) {
  CLI::App app{"Attention-guided classifier training on synthetic and PNM image sets"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  auto* synth = app.add_subcommand("synth", "generate the synthetic confusable dataset");
  sf::data::SynthSpec spec;
  std::size_t per_class = 200;
  std::string synth_out;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--classes", spec.classes)->capture_default_str();
  synth->add_option("--per-class", per_class)->capture_default_str();
  synth->add_option("--seed", spec.seed)->capture_default_str();
  synth->add_option("--canvas", spec.canvas)->capture_default_str();
  synth->add_option("--motif-size", spec.motif_size)->capture_default_str();
  synth->add_option("--confounder-size", spec.confounder_size)->capture_default_str();
  synth->add_option("--cue-size", spec.cue_size)->capture_default_str();
  synth->add_option("--noise-std", spec.noise_std)->capture_default_str();

  auto* train = app.add_subcommand("train", "train a model (ICASC objective unless --baseline)");
  RunFlags train_flags;
  train_flags.add_to(train, true);
  std::string resume;
  bool every_epoch = false;
  train->add_option("--resume", resume, "checkpoint to continue from");
  train->add_flag("--save-every-epoch", every_epoch);

  RunFlags eval_flags, attend_flags, ks_flags;
  std::string eval_ckpt, attend_ckpt, ks_ckpt;
  auto* eval = app.add_subcommand("eval", "metrics and attention overlap on a dataset");
  eval_flags.add_to(eval, false);
  eval->add_option("--checkpoint", eval_ckpt)->required();

  auto* attend = app.add_subcommand("attend", "export attention heatmaps for top-k classes");
  attend_flags.add_to(attend, false);
  attend->add_option("--checkpoint", attend_ckpt)->required();
  sf::app::AttendOptions attend_opt;
  std::string ids;
  bool gray = false;
  attend->add_option("--ids", ids, "comma-separated sample ids (default: all)");
  attend->add_option("--top-k", attend_opt.top_k)->capture_default_str();
  attend->add_option("--size", attend_opt.size, "heatmap side in pixels (default: input size)");
  attend->add_flag("--gray", gray, "write PGM instead of colour PPM");

  auto* ks = app.add_subcommand("ks", "KS chart of target vs. confusing probabilities");
  ks_flags.add_to(ks, false);
  ks->add_option("--checkpoint", ks_ckpt)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (*synth) {
    spec.validate();
    std::puts(sf::app::cmd_synth(spec, per_class, synth_out).c_str());
    return 0;
  }
  if (*train) return run_train(train_flags, resume, every_epoch);
  if (*eval) {
    const auto cfg = eval_flags.resolve();
    if (cfg.data.empty()) throw sf::ConfigError("eval: --data is required");
    const auto rows = sf::app::cmd_eval(eval_ckpt, cfg.data, cfg.icasc, cfg.out);
    for (const auto& r : rows) {
      std::printf("%s %s %s\n", r.metric.c_str(), r.scope.c_str(),
                  sf::util::format_double(r.value).c_str());
    }
    return 0;
  }
  if (*attend) {
    const auto cfg = attend_flags.resolve();
    if (cfg.data.empty()) throw sf::ConfigError("attend: --data is required");
    attend_opt.ids = split_csv(ids);
    attend_opt.color = !gray;
    if (attend_flags.mechanism) attend_opt.mechanisms = {cfg.icasc.mechanism};
    const auto n = sf::app::cmd_attend(attend_ckpt, cfg.data, attend_opt, cfg.out);
    std::printf("wrote %zu heatmaps to %s\n", n, cfg.out.c_str());
    return 0;
  }
  if (*ks) {
    const auto cfg = ks_flags.resolve();
    if (cfg.data.empty()) throw sf::ConfigError("ks: --data is required");
    const auto s = sf::app::cmd_ks(ks_ckpt, cfg.data, cfg.icasc, cfg.out);
    std::printf("ks %s threshold %s target %zu confusing %zu\n",
                sf::util::format_double(s.ks).c_str(), sf::util::format_double(s.threshold).c_str(),
                s.target_count, s.confusing_count);
    return 0;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const sf::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const sf::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 3;
  } catch (const sf::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
