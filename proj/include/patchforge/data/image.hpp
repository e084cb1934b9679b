// Copyright 2026 The patchforge Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "patchforge/core/error.hpp"

namespace patchforge {

/// 8-bit raster, row-major, interleaved channels (1 = gray, 3 = RGB).
struct Image {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int w, int h, int c, std::uint8_t fill = 0)
      : width(w), height(h), channels(c), pixels(static_cast<std::size_t>(w) * h * c, fill) {
    if (w < 1 || h < 1 || (c != 1 && c != 3))
      throw InvalidInput("image dimensions must be positive with 1 or 3 channels");
  }

  std::size_t index(int x, int y, int ch = 0) const {
    return (static_cast<std::size_t>(y) * width + x) * channels + ch;
  }
  std::uint8_t at(int x, int y, int ch = 0) const { return pixels[index(x, y, ch)]; }
  std::uint8_t& at(int x, int y, int ch = 0) { return pixels[index(x, y, ch)]; }

  bool operator==(const Image&) const = default;
};

/// Copies the size x size window whose top-left corner is (x, y).
inline Image crop_image(const Image& src, int x, int y, int size) {
  if (size < 1 || x < 0 || y < 0 || x + size > src.width || y + size > src.height)
    throw InvalidInput("crop window (" + std::to_string(x) + "," + std::to_string(y) + ",size " +
                       std::to_string(size) + ") outside " + std::to_string(src.width) + "x" +
                       std::to_string(src.height) + " image");
  Image out(size, size, src.channels);
  const std::size_t row = static_cast<std::size_t>(size) * src.channels;
  for (int r = 0; r < size; ++r)
    std::copy_n(src.pixels.begin() + static_cast<std::ptrdiff_t>(src.index(x, y + r)), row,
                out.pixels.begin() + static_cast<std::ptrdiff_t>(r * row));
  return out;
}

namespace detail {

inline int read_pnm_int(std::istream& is, const std::string& what) {
  for (int c = is.peek(); c != EOF; c = is.peek()) {
    if (c == '#') {
      std::string comment;
      std::getline(is, comment);
    } else if (std::isspace(c)) {
      is.get();
    } else {
      break;
    }
  }
  int v = 0;
  if (!(is >> v)) throw ParseError("malformed PNM header in " + what);
  return v;
}

}  // namespace detail

/// Reads binary P6 (RGB) or P5 (gray) with maxval 255.
inline Image read_pnm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open image " + path.string());
  std::string magic(2, '\0');
  is.read(magic.data(), 2);
  if (magic != "P6" && magic != "P5") throw ParseError("unsupported image format in " + path.string() + " (need P5/P6)");
  const int w = detail::read_pnm_int(is, path.string());
  const int h = detail::read_pnm_int(is, path.string());
  const int maxval = detail::read_pnm_int(is, path.string());
  if (maxval != 255) throw ParseError("only 8-bit PNM is supported: " + path.string());
  is.get();  // single whitespace before the raster
  Image img(w, h, magic == "P6" ? 3 : 1);
  is.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (static_cast<std::size_t>(is.gcount()) != img.pixels.size()) throw IoError("truncated image " + path.string());
  return img;
}

inline void write_pnm(const Image& img, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write image " + path.string());
  os << (img.channels == 3 ? "P6" : "P5") << '\n' << img.width << ' ' << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!os) throw IoError("failed writing image " + path.string());
}

}  // namespace patchforge
