#pragma once

// Checkpoint layout (all integers little-endian, doubles IEEE-754 binary64 LE):
//   magic        8 bytes  "SFCKPT\0\1"
//   version      u32      1
//   blocks       u32, then blocks x u64 channel counts
//   input_size, input_channels, classes, kernel   u64 each
//   multi_label  u8
//   epoch        u64      epochs completed
//   seed         u64
//   n_params     u32, then per parameter:
//                  name_len u32, name bytes, rank u32, rank x u64 dims,
//                  numel x f64 values (row-major)
//   has_velocity u8, then (if 1) per parameter numel x f64

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "sharpen_focus/error.hpp"
#include "sharpen_focus/nn/model.hpp"
#include "sharpen_focus/nn/optim.hpp"

namespace sharpen_focus::nn {

inline constexpr char kCheckpointMagic[8] = {'S', 'F', 'C', 'K', 'P', 'T', '\0', '\1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TrainingState {
  ParameterSet params;
  SgdState optimizer;
  std::uint64_t epoch = 0;
  std::uint64_t seed = 0;
};

namespace detail {

template <typename T>
void put(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(buf[i], buf[sizeof(T) - 1 - i]);
  }
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  unsigned char buf[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) {
    throw DataError("checkpoint truncated");
  }
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(buf[i], buf[sizeof(T) - 1 - i]);
  }
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

}  // namespace detail

inline void save_checkpoint(const TrainingState& state, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write checkpoint " + path.string());
  using detail::put;
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  put<std::uint32_t>(os, kCheckpointVersion);
  const ModelConfig& c = state.params.config;
  put<std::uint32_t>(os, static_cast<std::uint32_t>(c.channels.size()));
  for (std::size_t ch : c.channels) put<std::uint64_t>(os, ch);
  put<std::uint64_t>(os, c.input_size);
  put<std::uint64_t>(os, c.input_channels);
  put<std::uint64_t>(os, c.classes);
  put<std::uint64_t>(os, c.kernel);
  put<std::uint8_t>(os, c.multi_label ? 1 : 0);
  put<std::uint64_t>(os, state.epoch);
  put<std::uint64_t>(os, state.seed);
  const auto& p = state.params;
  put<std::uint32_t>(os, static_cast<std::uint32_t>(p.values.size()));
  for (std::size_t i = 0; i < p.values.size(); ++i) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(p.names[i].size()));
    os.write(p.names[i].data(), static_cast<std::streamsize>(p.names[i].size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(p.values[i].rank()));
    for (std::size_t d : p.values[i].shape()) put<std::uint64_t>(os, d);
    for (double v : p.values[i].vec()) put<double>(os, v);
  }
  const bool has_velocity = state.optimizer.velocity.size() == p.values.size();
  put<std::uint8_t>(os, has_velocity ? 1 : 0);
  if (has_velocity) {
    for (const auto& v : state.optimizer.velocity)
      for (double x : v) put<double>(os, x);
  }
  if (!os) throw DataError("failed writing checkpoint " + path.string());
}

inline TrainingState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path.string());
  using detail::get;
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw DataError(path.string() + " is not a checkpoint (bad magic)");
  }
  const auto version = get<std::uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  TrainingState s;
  ModelConfig& c = s.params.config;
  c.channels.resize(get<std::uint32_t>(is));
  for (auto& ch : c.channels) ch = get<std::uint64_t>(is);
  c.input_size = get<std::uint64_t>(is);
  c.input_channels = get<std::uint64_t>(is);
  c.classes = get<std::uint64_t>(is);
  c.kernel = get<std::uint64_t>(is);
  c.multi_label = get<std::uint8_t>(is) != 0;
  c.validate();
  s.epoch = get<std::uint64_t>(is);
  s.seed = get<std::uint64_t>(is);
  const auto n = get<std::uint32_t>(is);
  const ParameterSet reference = build_model(c, 0);
  if (n != reference.values.size()) throw DataError("checkpoint parameter count mismatch");
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name(get<std::uint32_t>(is), '\0');
    if (!is.read(name.data(), static_cast<std::streamsize>(name.size()))) {
      throw DataError("checkpoint truncated");
    }
    Shape shape(get<std::uint32_t>(is));
    for (auto& d : shape) d = get<std::uint64_t>(is);
    if (name != reference.names[i] || shape != reference.values[i].shape()) {
      throw DataError("checkpoint parameter " + name + " does not match the model config");
    }
    std::vector<double> v(ad::numel(shape));
    for (double& x : v) x = get<double>(is);
    s.params.names.push_back(std::move(name));
    s.params.values.emplace_back(std::move(shape), std::move(v));
  }
  if (get<std::uint8_t>(is) != 0) {
    for (const Tensor& t : s.params.values) {
      std::vector<double> v(t.size());
      for (double& x : v) x = get<double>(is);
      s.optimizer.velocity.push_back(std::move(v));
    }
  }
  return s;
}

}  // namespace sharpen_focus::nn
