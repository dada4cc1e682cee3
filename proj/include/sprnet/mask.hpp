// Binary masks and their uncompressed run-length encoding.
//
// RLE contract: row-major scan, counts of alternating runs starting with a
// run of zeros (which may have length 0). An all-zero H x W mask encodes as
// [H*W]; an all-one mask as [0, H*W].

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sprnet/box.hpp"

namespace sprnet {

struct BinaryMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;  // row-major, 0 or 1

  BinaryMask() = default;
  BinaryMask(int w, int h) : width(w), height(h), bits(static_cast<std::size_t>(w) * h, 0) {}

  std::uint8_t& at(int x, int y) { return bits[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int x, int y) const { return bits[static_cast<std::size_t>(y) * width + x]; }

  std::size_t area() const {
    std::size_t n = 0;
    for (auto b : bits) n += b;
    return n;
  }

  /// Tight bounds as a half-open pixel box, or nullopt for an empty mask.
  std::optional<Box> tight_box() const {
    int x_lo = width, y_lo = height, x_hi = -1, y_hi = -1;
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x)
        if (at(x, y)) {
          x_lo = std::min(x_lo, x);
          x_hi = std::max(x_hi, x);
          y_lo = std::min(y_lo, y);
          y_hi = std::max(y_hi, y);
        }
    if (x_hi < 0) return std::nullopt;
    return Box{double(x_lo), double(y_lo), double(x_hi + 1), double(y_hi + 1)};
  }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

inline std::vector<std::uint32_t> rle_encode(const BinaryMask& m) {
  std::vector<std::uint32_t> counts;
  std::uint8_t current = 0;
  std::uint32_t run = 0;
  for (auto b : m.bits) {
    if (b != current) {
      counts.push_back(run);
      run = 0;
      current = b;
    }
    ++run;
  }
  counts.push_back(run);
  return counts;
}

inline BinaryMask rle_decode(const std::vector<std::uint32_t>& counts, int width, int height) {
  BinaryMask m(width, height);
  std::size_t pos = 0;
  std::uint8_t value = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (pos + counts[i] > m.bits.size()) {
      throw Error("malformed RLE: run " + std::to_string(i) + " overruns a " +
                  std::to_string(width) + "x" + std::to_string(height) + " mask");
    }
    std::fill_n(m.bits.begin() + static_cast<std::ptrdiff_t>(pos), counts[i], value);
    pos += counts[i];
    value ^= 1;
  }
  if (pos != m.bits.size()) {
    throw Error("malformed RLE: runs cover " + std::to_string(pos) + " of " +
                std::to_string(m.bits.size()) + " pixels");
  }
  return m;
}

}  // namespace sprnet
