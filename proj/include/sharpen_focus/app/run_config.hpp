#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "sharpen_focus/error.hpp"
#include "sharpen_focus/icasc/loss.hpp"
#include "sharpen_focus/nn/model.hpp"
#include "sharpen_focus/nn/optim.hpp"
#include "sharpen_focus/util/format.hpp"

namespace sharpen_focus::app {

struct OptimConfig {
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  nn::ScheduleKind schedule = nn::ScheduleKind::kCosine;
  std::vector<std::size_t> milestones;  // step schedule only
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  bool flip = true;
};

// Everything a training or evaluation run depends on.
struct RunConfig {
  std::string data;
  std::string test_data;
  std::string out = "run";
  nn::ModelConfig model{{8, 16}, 32, 1, 4, 3, false};
  icasc::IcascConfig icasc;
  OptimConfig optim;
  std::uint64_t seed = 0;
  bool baseline = false;
  std::set<std::string, std::less<>> assigned;  // keys set from a file or flag

  bool is_set(std::string_view key) const { return assigned.count(key) != 0; }

  // Applies one `key = value` setting; unknown keys and bad values raise
  // ConfigError naming the key.
  void set(std::string_view key, std::string_view value);
  void validate() const {
    model.validate();
    icasc.validate();
    if (!(optim.lr > 0)) throw ConfigError("lr must be > 0");
    if (!(optim.momentum >= 0 && optim.momentum < 1)) throw ConfigError("momentum must be in [0,1)");
    if (!(optim.weight_decay >= 0)) throw ConfigError("weight_decay must be >= 0");
    if (optim.epochs == 0) throw ConfigError("epochs must be positive");
    if (optim.batch_size == 0) throw ConfigError("batch_size must be positive");
  }
  std::string to_text() const;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(std::string_view key, std::string_view value) {
  std::istringstream is{std::string(value)};
  T v{};
  if (!(is >> v) || !is.eof()) {
    throw ConfigError(std::string(key) + ": cannot parse '" + std::string(value) + "'");
  }
  if constexpr (std::is_unsigned_v<T>) {
    if (value.find('-') != std::string_view::npos) {
      throw ConfigError(std::string(key) + ": must be non-negative");
    }
  }
  return v;
}

inline bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(std::string(key) + ": expected true/false, got '" + std::string(v) + "'");
}

inline std::vector<std::size_t> parse_list(std::string_view key, std::string_view v) {
  std::vector<std::size_t> out;
  std::string item;
  std::istringstream is{std::string(v)};
  while (std::getline(is, item, ',')) {
    const std::string t = trim(item);
    if (!t.empty()) out.push_back(parse_number<std::size_t>(key, t));
  }
  return out;
}

inline std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

}  // namespace detail

inline void RunConfig::set(std::string_view key, std::string_view value) {
  using detail::parse_bool;
  using detail::parse_list;
  using detail::parse_number;
  const std::string v = detail::trim(value);
  if (key == "data") data = v;
  else if (key == "test_data") test_data = v;
  else if (key == "out") out = v;
  else if (key == "seed") seed = parse_number<std::uint64_t>(key, v);
  else if (key == "baseline") baseline = parse_bool(key, v);
  else if (key == "channels") model.channels = parse_list(key, v);
  else if (key == "input_size") model.input_size = parse_number<std::size_t>(key, v);
  else if (key == "input_channels") model.input_channels = parse_number<std::size_t>(key, v);
  else if (key == "classes") model.classes = parse_number<std::size_t>(key, v);
  else if (key == "kernel") model.kernel = parse_number<std::size_t>(key, v);
  else if (key == "multi_label") model.multi_label = parse_bool(key, v);
  else if (key == "mechanism") icasc.mechanism = attention::parse_mechanism(v);
  else if (key == "omega") icasc.omega = parse_number<double>(key, v);
  else if (key == "sigma_factor") icasc.sigma_factor = parse_number<double>(key, v);
  else if (key == "theta") icasc.theta = parse_number<double>(key, v);
  else if (key == "epsilon") icasc.epsilon = parse_number<double>(key, v);
  else if (key == "skip_threshold") icasc.skip_threshold = parse_number<double>(key, v);
  else if (key == "clamp_lac") icasc.clamp_lac = parse_bool(key, v);
  else if (key == "weight_c") icasc.weight_c = parse_number<double>(key, v);
  else if (key == "weight_as_inner") icasc.weight_as_inner = parse_number<double>(key, v);
  else if (key == "weight_as_last") icasc.weight_as_last = parse_number<double>(key, v);
  else if (key == "weight_ac") icasc.weight_ac = parse_number<double>(key, v);
  else if (key == "lr") optim.lr = parse_number<double>(key, v);
  else if (key == "momentum") optim.momentum = parse_number<double>(key, v);
  else if (key == "weight_decay") optim.weight_decay = parse_number<double>(key, v);
  else if (key == "schedule") optim.schedule = nn::parse_schedule(v);
  else if (key == "milestones") optim.milestones = parse_list(key, v);
  else if (key == "epochs") optim.epochs = parse_number<std::size_t>(key, v);
  else if (key == "batch_size") optim.batch_size = parse_number<std::size_t>(key, v);
  else if (key == "flip") optim.flip = parse_bool(key, v);
  else throw ConfigError("unknown config key '" + std::string(key) + "'");
  assigned.emplace(key);
}

inline std::string RunConfig::to_text() const {
  using util::format_double;
  std::ostringstream os;
  os << "data = " << data << '\n'
     << "test_data = " << test_data << '\n'
     << "out = " << out << '\n'
     << "seed = " << seed << '\n'
     << "baseline = " << (baseline ? "true" : "false") << '\n'
     << "channels = " << detail::join(model.channels) << '\n'
     << "input_size = " << model.input_size << '\n'
     << "input_channels = " << model.input_channels << '\n'
     << "classes = " << model.classes << '\n'
     << "kernel = " << model.kernel << '\n'
     << "multi_label = " << (model.multi_label ? "true" : "false") << '\n'
     << "mechanism = " << attention::mechanism_name(icasc.mechanism) << '\n'
     << "omega = " << format_double(icasc.omega) << '\n'
     << "sigma_factor = " << format_double(icasc.sigma_factor) << '\n'
     << "theta = " << format_double(icasc.theta) << '\n'
     << "epsilon = " << format_double(icasc.epsilon) << '\n'
     << "skip_threshold = " << format_double(icasc.skip_threshold) << '\n'
     << "clamp_lac = " << (icasc.clamp_lac ? "true" : "false") << '\n'
     << "weight_c = " << format_double(icasc.weight_c) << '\n'
     << "weight_as_inner = " << format_double(icasc.weight_as_inner) << '\n'
     << "weight_as_last = " << format_double(icasc.weight_as_last) << '\n'
     << "weight_ac = " << format_double(icasc.weight_ac) << '\n'
     << "lr = " << format_double(optim.lr) << '\n'
     << "momentum = " << format_double(optim.momentum) << '\n'
     << "weight_decay = " << format_double(optim.weight_decay) << '\n'
     << "schedule = " << nn::schedule_name(optim.schedule) << '\n'
     << "milestones = " << detail::join(optim.milestones) << '\n'
     << "epochs = " << optim.epochs << '\n'
     << "batch_size = " << optim.batch_size << '\n'
     << "flip = " << (optim.flip ? "true" : "false") << '\n';
  return os.str();
}

// `key = value` lines; blank lines and lines starting with '#' are ignored.
inline void apply_config_text(RunConfig& cfg, std::string_view text, const std::string& origin) {
  std::istringstream is{std::string(text)};
  std::string line;
  std::size_t row = 0;
  while (std::getline(is, line)) {
    ++row;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(row) + ": expected 'key = value'");
    }
    try {
      cfg.set(detail::trim(t.substr(0, eq)), t.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(row) + ": " + e.what());
    }
  }
}

inline void apply_config_file(RunConfig& cfg, const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  apply_config_text(cfg, ss.str(), path.string());
}

}  // namespace sharpen_focus::app
