// 8-bit images and binary PPM (P6) / PGM (P5) files.

#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "sprnet/tensor.hpp"

namespace sprnet {

struct Image {
  int width = 0;
  int height = 0;
  int channels = 3;  // 3 = RGB, 1 = gray
  std::vector<std::uint8_t> pixels;  // interleaved, row-major

  Image() = default;
  Image(int w, int h, int c) : width(w), height(h), channels(c), pixels(static_cast<std::size_t>(w) * h * c, 0) {}

  std::uint8_t& at(int x, int y, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  std::uint8_t at(int x, int y, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  bool operator==(const Image&) const = default;
};

inline void write_pnm(const Image& img, const std::string& path) {
  if (img.channels != 1 && img.channels != 3) throw Error("write_pnm: unsupported channel count");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path);
  f << (img.channels == 3 ? "P6" : "P5") << "\n" << img.width << " " << img.height << "\n255\n";
  f.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!f) throw Error("write failed: " + path);
}

inline Image read_pnm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open image " + path);
  auto token = [&]() {
    std::string t;
    char c;
    while (f.get(c)) {
      if (c == '#') {
        std::string skip;
        std::getline(f, skip);
      } else if (!std::isspace(static_cast<unsigned char>(c))) {
        t += c;
        break;
      }
    }
    while (f.get(c) && !std::isspace(static_cast<unsigned char>(c))) t += c;
    return t;
  };
  const std::string magic = token();
  if (magic != "P6" && magic != "P5") throw Error(path + ": not a binary PPM/PGM file");
  Image img;
  img.channels = magic == "P6" ? 3 : 1;
  try {
    img.width = std::stoi(token());
    img.height = std::stoi(token());
    if (std::stoi(token()) != 255) throw Error(path + ": only maxval 255 is supported");
  } catch (const std::logic_error&) {
    throw Error(path + ": malformed header");
  }
  if (img.width <= 0 || img.height <= 0) throw Error(path + ": invalid dimensions");
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * img.channels);
  f.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (f.gcount() != static_cast<std::streamsize>(img.pixels.size())) throw Error(path + ": truncated pixel data");
  return img;
}

/// [1, C, H, W] with values mapped from [0, 255] to [-1, 1].
template <class T>
Tensor<T> image_to_tensor(const Image& img) {
  Tensor<T> t(Shape{1, img.channels, img.height, img.width});
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) t.at(0, c, y, x) = static_cast<T>(img.at(x, y, c) / 127.5 - 1.0);
  return t;
}

}  // namespace sprnet
