#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "sharpen_focus/data/dataset.hpp"
#include "sharpen_focus/error.hpp"

namespace sharpen_focus::data {

enum class Motif { kDisk, kPlus, kRing, kHBar, kVBar, kDiagonal, kCross, kTriangle };

inline std::string_view motif_name(Motif m) {
  switch (m) {
    case Motif::kDisk: return "disk";
    case Motif::kPlus: return "plus";
    case Motif::kRing: return "ring";
    case Motif::kHBar: return "hbar";
    case Motif::kVBar: return "vbar";
    case Motif::kDiagonal: return "diagonal";
    case Motif::kCross: return "cross";
    case Motif::kTriangle: return "triangle";
  }
  return "?";
}

struct Box {
  std::size_t y = 0, x = 0, size = 0;

  bool contains(std::size_t py, std::size_t px) const {
    return py >= y && py < y + size && px >= x && px < x + size;
  }
  bool operator==(const Box&) const = default;
};

// Synthetic classification task with one confusable class pair (the last two
// classes). Both members of the pair show the same large confounder motif at
// the same place; they differ only in a small cue motif placed elsewhere.
// Every other class shows a single motif of its own.
struct SynthSpec {
  std::size_t classes = 4;
  std::size_t canvas = 32;
  std::size_t motif_size = 9;        // per-class motif of the non-pair classes
  std::size_t confounder_size = 12;  // shared by the pair
  std::size_t cue_size = 5;          // discriminative motif of the pair
  double noise_std = 0.05;
  double background = 0.1;
  double foreground = 0.9;
  std::uint64_t seed = 0;

  std::size_t pair_first() const { return classes - 2; }

  Motif class_motif(std::size_t k) const {
    static constexpr Motif kOwn[] = {Motif::kHBar, Motif::kVBar, Motif::kDiagonal, Motif::kCross,
                                     Motif::kTriangle};
    return kOwn[k % 5];
  }
  Motif cue_motif(std::size_t k) const { return k == pair_first() ? Motif::kDisk : Motif::kPlus; }

  void validate() const {
    if (classes < 2) throw ConfigError("classes must be >= 2 (one confusable pair is required)");
    if (canvas < 8) throw ConfigError("canvas must be >= 8");
    auto fits = [&](std::size_t s, const char* field) {
      if (s < 3 || s > canvas) {
        throw ConfigError(std::string(field) + " " + std::to_string(s) + " must be in [3, canvas=" +
                          std::to_string(canvas) + "]");
      }
    };
    fits(motif_size, "motif-size");
    fits(confounder_size, "confounder-size");
    fits(cue_size, "cue-size");
    // Wherever the confounder lands, one side must keep room for the cue plus
    // a one-pixel gap.
    if (confounder_size + 2 * (cue_size + 1) > canvas) {
      throw ConfigError("confounder-size + 2 * (cue-size + 1) = " +
                        std::to_string(confounder_size + 2 * (cue_size + 1)) + " exceeds canvas " +
                        std::to_string(canvas) +
                        "; the cue cannot always be placed clear of the confounder");
    }
    if (!(noise_std >= 0)) throw ConfigError("noise-std must be >= 0");
    if (!(background >= 0 && foreground <= 1 && background < foreground)) {
      throw ConfigError("need 0 <= background < foreground <= 1");
    }
  }

  bool operator==(const SynthSpec&) const = default;
};

inline nlohmann::json to_json(const SynthSpec& s) {
  return {{"classes", s.classes},       {"canvas", s.canvas},
          {"motif_size", s.motif_size}, {"confounder_size", s.confounder_size},
          {"cue_size", s.cue_size},     {"noise_std", s.noise_std},
          {"background", s.background}, {"foreground", s.foreground},
          {"seed", s.seed}};
}

// Per-sample ground truth of the generator.
struct SynthRegions {
  Box motif;       // own motif, or the confounder for the pair
  Box cue;         // pair only; size 0 otherwise
};

struct SynthDataset {
  SynthSpec spec;
  Dataset data;
  std::vector<SynthRegions> regions;  // aligned with data.samples
};

namespace detail {

// 1 inside the motif, 0 outside; (u, v) are coordinates relative to the box
// centre, scaled to [-1, 1].
inline bool motif_covers(Motif m, double u, double v) {
  const double t = 0.34;  // stroke half-width
  switch (m) {
    case Motif::kDisk: return u * u + v * v <= 1.0;
    case Motif::kPlus: return std::abs(u) <= t || std::abs(v) <= t;
    case Motif::kRing: return std::max(std::abs(u), std::abs(v)) >= 1.0 - 2 * t / 1.5;
    case Motif::kHBar: return std::abs(v) <= t;
    case Motif::kVBar: return std::abs(u) <= t;
    case Motif::kDiagonal: return std::abs(u - v) <= 1.4 * t;
    case Motif::kCross: return std::abs(u - v) <= 1.4 * t || std::abs(u + v) <= 1.4 * t;
    case Motif::kTriangle: return v >= 2.0 * std::abs(u) - 1.0;
  }
  return false;
}

inline void stamp(Image& im, Motif m, const Box& b, double value) {
  const double half = (static_cast<double>(b.size) - 1.0) / 2.0;
  for (std::size_t dy = 0; dy < b.size; ++dy)
    for (std::size_t dx = 0; dx < b.size; ++dx) {
      const double v = half > 0 ? (static_cast<double>(dy) - half) / half : 0.0;
      const double u = half > 0 ? (static_cast<double>(dx) - half) / half : 0.0;
      if (motif_covers(m, u, v)) im.at(0, b.y + dy, b.x + dx) = value;
    }
}

inline std::mt19937_64 stream(std::uint64_t seed, std::uint64_t tag, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(index)};
  return std::mt19937_64(seq);
}

inline std::size_t draw(std::mt19937_64& rng, std::size_t n) { return rng() % n; }

inline Image noisy_background(const SynthSpec& s, std::mt19937_64& rng) {
  Image im = Image::blank(1, s.canvas, s.canvas, s.background);
  std::normal_distribution<double> noise(0.0, s.noise_std);
  for (double& p : im.pixels) p += s.noise_std > 0 ? noise(rng) : 0.0;
  return im;
}

inline void clamp_unit(Image& im) {
  for (double& p : im.pixels) p = std::clamp(p, 0.0, 1.0);
}

}  // namespace detail

// Deterministic in spec.seed. Samples are ordered class-major. Sample i of
// the two pair classes is rendered from one shared draw (confounder place,
// cue place, noise field), so the two images differ only inside the cue box.
inline SynthDataset generate_synth(const SynthSpec& spec, std::size_t per_class) {
  spec.validate();
  SynthDataset out;
  out.spec = spec;
  out.data.classes = spec.classes;
  constexpr std::uint64_t kPairTag = 0xFFFFFFFFu;
  for (std::size_t k = 0; k < spec.classes; ++k) {
    const bool in_pair = k >= spec.pair_first();
    for (std::size_t i = 0; i < per_class; ++i) {
      auto rng = detail::stream(spec.seed, in_pair ? kPairTag : k, i);
      SynthRegions reg;
      Image im;
      if (in_pair) {
        const std::size_t room = spec.canvas - spec.confounder_size + 1;
        reg.motif = {detail::draw(rng, room), detail::draw(rng, room), spec.confounder_size};
        // Cue placement by rejection: first draw whose box keeps a one-pixel
        // gap to the confounder.
        const std::size_t cue_room = spec.canvas - spec.cue_size + 1;
        const Box& c = reg.motif;
        for (;;) {
          Box b{detail::draw(rng, cue_room), detail::draw(rng, cue_room), spec.cue_size};
          const bool apart = b.y >= c.y + c.size + 1 || c.y >= b.y + b.size + 1 ||
                             b.x >= c.x + c.size + 1 || c.x >= b.x + b.size + 1;
          if (apart) {
            reg.cue = b;
            break;
          }
        }
        im = detail::noisy_background(spec, rng);
        detail::stamp(im, Motif::kRing, reg.motif, spec.foreground);
        detail::stamp(im, spec.cue_motif(k), reg.cue, spec.foreground);
      } else {
        const std::size_t room = spec.canvas - spec.motif_size + 1;
        reg.motif = {detail::draw(rng, room), detail::draw(rng, room), spec.motif_size};
        im = detail::noisy_background(spec, rng);
        detail::stamp(im, spec.class_motif(k), reg.motif, spec.foreground);
      }
      detail::clamp_unit(im);
      char id[32];
      std::snprintf(id, sizeof(id), "c%zu_%05zu", k, i);
      out.data.samples.push_back({id, std::string(id) + ".pgm", std::move(im), {static_cast<int>(k)}});
      out.regions.push_back(reg);
    }
  }
  return out;
}

// Writes labels.csv, the images, and synth.json (the spec plus counts).
inline void write_synth(const std::filesystem::path& dir, const SynthDataset& ds) {
  write_dataset(dir, ds.data);
  nlohmann::json meta = to_json(ds.spec);
  meta["samples"] = ds.data.size();
  std::ofstream os(dir / "synth.json", std::ios::trunc);
  if (!os) throw DataError("cannot write " + (dir / "synth.json").string());
  os << meta.dump(2) << '\n';
}

}  // namespace sharpen_focus::data
