#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "sensoryeval/error.hpp"

namespace sensoryeval {

/// 8-bit image, row-major, channels interleaved (RGB order for 3 channels).
class Image8 {
 public:
  Image8() = default;
  Image8(int width, int height, int channels, std::uint8_t fill = 0)
      : width_(width), height_(height), channels_(channels) {
    if (width <= 0 || height <= 0) throw ValidationError("image dimensions must be positive");
    if (channels != 1 && channels != 3) throw ValidationError("image must have 1 or 3 channels");
    pixels_.assign(static_cast<std::size_t>(width) * height * channels, fill);
  }

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  bool empty() const { return pixels_.empty(); }

  std::uint8_t& at(int x, int y, int c = 0) { return pixels_[offset(x, y, c)]; }
  std::uint8_t at(int x, int y, int c = 0) const { return pixels_[offset(x, y, c)]; }

  std::span<std::uint8_t> data() { return pixels_; }
  std::span<const std::uint8_t> data() const { return pixels_; }

  friend bool operator==(const Image8&, const Image8&) = default;

 private:
  std::size_t offset(int x, int y, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }

  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  std::vector<std::uint8_t> pixels_;
};

/// Round half away from zero, then clamp to [0, 255].
inline std::uint8_t saturate_u8(double v) {
  if (!(v == v)) return 0;
  const double r = std::round(v);
  if (r <= 0.0) return 0;
  if (r >= 255.0) return 255;
  return static_cast<std::uint8_t>(r);
}

}  // namespace sensoryeval
