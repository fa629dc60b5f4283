#pragma once

// Colour heatmaps use a fixed 256-entry blue-to-red table. Entry i (0..255)
// is the RGB triple
//   r = i,  g = 255 - |2i - 255|,  b = 255 - i
// so 0 is pure blue, 255 pure red, and mid values pass through grey-green.

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <vector>

#include "sharpen_focus/autodiff/kernels.hpp"
#include "sharpen_focus/data/pnm.hpp"
#include "sharpen_focus/error.hpp"

namespace sharpen_focus::eval {

inline std::array<std::uint8_t, 3> colormap(std::uint8_t i) {
  const int v = i;
  return {static_cast<std::uint8_t>(v), static_cast<std::uint8_t>(255 - std::abs(2 * v - 255)),
          static_cast<std::uint8_t>(255 - v)};
}

// One attention map [H, W] scaled by its max to [0, 1] (all zero when the max
// is 0), then bilinearly resized to size x size.
inline std::vector<double> heatmap_values(const ad::Tensor& map, std::size_t size) {
  if (map.rank() != 2) throw ShapeError("heatmap expects a single [H, W] map");
  if (size < map.dim(0) || size < map.dim(1)) throw DomainError("heatmap size below map size");
  double mx = 0.0;
  for (double v : map.vec()) {
    if (v < 0) throw DomainError("heatmap: attention map has negative values");
    mx = std::max(mx, v);
  }
  std::vector<double> norm(map.size(), 0.0);
  if (mx > 0) {
    for (std::size_t i = 0; i < norm.size(); ++i) norm[i] = map[i] / mx;
  }
  const ad::Tensor up = ad::kernels::upsample(ad::Tensor(map.shape(), std::move(norm)), size, size);
  return up.vec();
}

inline data::Image heatmap_image(const ad::Tensor& map, std::size_t size, bool color) {
  const auto v = heatmap_values(map, size);
  if (!color) return {1, size, size, v};
  data::Image im = data::Image::blank(3, size, size);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const auto rgb = colormap(data::quantize(v[i]));
    for (std::size_t c = 0; c < 3; ++c) im.pixels[c * v.size() + i] = rgb[c] / 255.0;
  }
  return im;
}

// PGM for grayscale, PPM through the colour table.
inline void export_heatmap(const ad::Tensor& map, std::size_t size,
                           const std::filesystem::path& path, bool color = false) {
  data::write_pnm(path, heatmap_image(map, size, color));
}

}  // namespace sharpen_focus::eval
