#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "sharpen_focus/autodiff/tensor.hpp"
#include "sharpen_focus/data/pnm.hpp"
#include "sharpen_focus/error.hpp"
#include "sharpen_focus/nn/losses.hpp"

namespace sharpen_focus::data {

struct Sample {
  std::string id;
  std::string filename;
  Image image;
  std::vector<int> labels;
};

struct Dataset {
  std::vector<Sample> samples;
  std::size_t classes = 0;
  bool multi_label = false;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
};

namespace detail {

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

inline int parse_label(const std::string& s, const std::string& id) {
  std::size_t used = 0;
  int v = -1;
  try {
    v = std::stoi(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size()) throw DataError("sample " + id + ": bad label '" + s + "'");
  return v;
}

}  // namespace detail

// Reads `labels.csv` (header `id,filename,label` or `id,filename,labels`, the
// latter with semicolon-joined class ids) and the images it references. With
// no explicit class count, the count is one past the largest label seen.
inline Dataset load_dataset(const std::filesystem::path& dir,
                            std::optional<std::size_t> classes = std::nullopt) {
  const auto csv = dir / "labels.csv";
  std::ifstream is(csv);
  if (!is) throw DataError("cannot open " + csv.string());
  std::string line;
  Dataset ds;
  if (!std::getline(is, line)) {
    ds.classes = classes.value_or(0);
    return ds;
  }
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line == "id,filename,labels") {
    ds.multi_label = true;
  } else if (line != "id,filename,label") {
    throw DataError(csv.string() + ": unexpected header '" + line + "'");
  }
  int max_label = -1;
  std::size_t row = 1;
  while (std::getline(is, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = detail::split(line, ',');
    if (f.size() != 3) {
      throw DataError(csv.string() + ":" + std::to_string(row) + ": expected 3 fields");
    }
    Sample s{f[0], f[1], {}, {}};
    if (ds.multi_label) {
      for (const auto& part : detail::split(f[2], ';')) {
        s.labels.push_back(detail::parse_label(part, s.id));
      }
      std::sort(s.labels.begin(), s.labels.end());
      s.labels.erase(std::unique(s.labels.begin(), s.labels.end()), s.labels.end());
      if (s.labels.empty()) throw DataError("sample " + s.id + ": no labels");
    } else {
      s.labels.push_back(detail::parse_label(f[2], s.id));
    }
    for (int l : s.labels) {
      if (l < 0 || (classes && static_cast<std::size_t>(l) >= *classes)) {
        throw DataError("sample " + s.id + ": label " + std::to_string(l) + " out of range");
      }
      max_label = std::max(max_label, l);
    }
    try {
      s.image = read_pnm(dir / s.filename);
    } catch (const DataError& e) {
      throw DataError("sample " + s.id + ": " + e.what());
    }
    if (!ds.samples.empty()) {
      const Image& first = ds.samples.front().image;
      if (s.image.channels != first.channels || s.image.height != first.height ||
          s.image.width != first.width) {
        throw DataError("sample " + s.id + ": image size differs from the first sample");
      }
    }
    ds.samples.push_back(std::move(s));
  }
  ds.classes = classes.value_or(static_cast<std::size_t>(max_label + 1));
  return ds;
}

inline void write_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  std::filesystem::create_directories(dir);
  std::ofstream os(dir / "labels.csv", std::ios::trunc);
  if (!os) throw DataError("cannot write " + (dir / "labels.csv").string());
  os << (ds.multi_label ? "id,filename,labels" : "id,filename,label") << '\n';
  for (const Sample& s : ds.samples) {
    os << s.id << ',' << s.filename << ',';
    for (std::size_t i = 0; i < s.labels.size(); ++i) os << (i ? ";" : "") << s.labels[i];
    os << '\n';
    write_pnm(dir / s.filename, s.image);
  }
}

struct Batch {
  ad::Tensor images;  // [N, C, H, W]
  nn::LabelBatch labels;
  std::vector<std::size_t> indices;  // positions in the dataset
};

inline Batch make_batch(const Dataset& ds, const std::vector<std::size_t>& indices,
                        const std::vector<char>& flips = {}) {
  if (indices.empty()) throw DataError("make_batch: empty batch");
  const Image& first = ds.samples.at(indices.front()).image;
  const std::size_t plane = first.pixels.size();
  std::vector<double> buf;
  buf.reserve(plane * indices.size());
  Batch b;
  b.labels.multi_label = ds.multi_label;
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const Sample& s = ds.samples.at(indices[k]);
    const bool flip = !flips.empty() && flips[k];
    const Image im = flip ? flip_horizontal(s.image) : s.image;
    buf.insert(buf.end(), im.pixels.begin(), im.pixels.end());
    b.labels.positives.push_back(s.labels);
  }
  b.images = ad::Tensor({indices.size(), first.channels, first.height, first.width}, std::move(buf));
  b.indices = indices;
  return b;
}

// Shuffled mini-batches for one epoch. Order and flips depend only on
// (seed, epoch); the final batch may be smaller.
class BatchIterator {
 public:
  BatchIterator(const Dataset& ds, std::size_t batch_size, std::uint64_t seed, std::uint64_t epoch,
                bool shuffle = true, bool flip = true)
      : ds_(ds), batch_size_(batch_size) {
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    order_.resize(ds.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32)};
    std::mt19937_64 rng(seq);
    if (shuffle) {
      // Fisher-Yates with explicit draws so the order does not depend on the
      // standard library's shuffle.
      for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[rng() % i]);
    }
    flips_.assign(order_.size(), 0);
    if (flip) {
      for (auto& f : flips_) f = static_cast<char>(rng() >> 63);
    }
  }

  std::optional<Batch> next() {
    if (pos_ >= order_.size()) return std::nullopt;
    const std::size_t end = std::min(order_.size(), pos_ + batch_size_);
    std::vector<std::size_t> idx(order_.begin() + pos_, order_.begin() + end);
    std::vector<char> fl(flips_.begin() + pos_, flips_.begin() + end);
    pos_ = end;
    return make_batch(ds_, idx, fl);
  }

  std::size_t batches() const { return (order_.size() + batch_size_ - 1) / batch_size_; }

 private:
  const Dataset& ds_;
  std::size_t batch_size_;
  std::vector<std::size_t> order_;
  std::vector<char> flips_;
  std::size_t pos_ = 0;
};

}  // namespace sharpen_focus::data
