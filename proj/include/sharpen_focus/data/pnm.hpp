#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "sharpen_focus/error.hpp"

namespace sharpen_focus::data {

// Planar (C, H, W) image with values in [0, 1].
struct Image {
  std::size_t channels = 1;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;

  static Image blank(std::size_t c, std::size_t h, std::size_t w, double fill = 0.0) {
    return {c, h, w, std::vector<double>(c * h * w, fill)};
  }
  double& at(std::size_t c, std::size_t y, std::size_t x) { return pixels[(c * height + y) * width + x]; }
  double at(std::size_t c, std::size_t y, std::size_t x) const {
    return pixels[(c * height + y) * width + x];
  }
  bool operator==(const Image&) const = default;
};

inline std::uint8_t quantize(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

inline Image flip_horizontal(const Image& im) {
  Image out = im;
  for (std::size_t c = 0; c < im.channels; ++c)
    for (std::size_t y = 0; y < im.height; ++y)
      for (std::size_t x = 0; x < im.width; ++x) out.at(c, y, im.width - 1 - x) = im.at(c, y, x);
  return out;
}

// Binary PGM (1 channel) or PPM (3 channels), maxval 255.
inline void write_pnm(const std::filesystem::path& path, const Image& im) {
  if (im.channels != 1 && im.channels != 3) {
    throw DataError("write_pnm: " + std::to_string(im.channels) + " channels (need 1 or 3)");
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  os << (im.channels == 1 ? "P5" : "P6") << '\n' << im.width << ' ' << im.height << "\n255\n";
  std::vector<char> row(im.width * im.channels);
  for (std::size_t y = 0; y < im.height; ++y) {
    for (std::size_t x = 0; x < im.width; ++x)
      for (std::size_t c = 0; c < im.channels; ++c) {
        row[x * im.channels + c] = static_cast<char>(quantize(im.at(c, y, x)));
      }
    os.write(row.data(), static_cast<std::streamsize>(row.size()));
  }
  if (!os) throw DataError("failed writing " + path.string());
}

namespace detail {

inline std::size_t read_header_int(std::istream& is, const std::string& where) {
  int ch = is.get();
  while (is && (std::isspace(ch) || ch == '#')) {
    if (ch == '#') {
      while (is && ch != '\n') ch = is.get();
    }
    ch = is.get();
  }
  if (!is || !std::isdigit(ch)) throw DataError(where + ": malformed header");
  std::size_t v = 0;
  while (is && std::isdigit(ch)) {
    v = v * 10 + static_cast<std::size_t>(ch - '0');
    if (v > (1u << 24)) throw DataError(where + ": header value too large");
    ch = is.get();
  }
  return v;  // the single whitespace byte after the value is consumed
}

}  // namespace detail

inline Image read_pnm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  const std::string where = path.string();
  if (!is) throw DataError("cannot open " + where);
  char magic[2];
  if (!is.read(magic, 2) || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6')) {
    throw DataError(where + ": not a binary PGM/PPM (P5/P6)");
  }
  Image im;
  im.channels = magic[1] == '5' ? 1 : 3;
  im.width = detail::read_header_int(is, where);
  im.height = detail::read_header_int(is, where);
  const std::size_t maxval = detail::read_header_int(is, where);
  if (maxval != 255) throw DataError(where + ": maxval " + std::to_string(maxval) + " (need 255)");
  if (im.width == 0 || im.height == 0) throw DataError(where + ": empty image");
  std::vector<unsigned char> raw(im.width * im.height * im.channels);
  if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
    throw DataError(where + ": truncated pixel data");
  }
  im.pixels.resize(raw.size());
  for (std::size_t y = 0; y < im.height; ++y)
    for (std::size_t x = 0; x < im.width; ++x)
      for (std::size_t c = 0; c < im.channels; ++c) {
        im.at(c, y, x) = raw[(y * im.width + x) * im.channels + c] / 255.0;
      }
  return im;
}

}  // namespace sharpen_focus::data
