#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "skelattack/errors.hpp"

namespace skelattack {

struct PixelCoord {
  int x = 0;
  int y = 0;

  friend bool operator==(const PixelCoord&, const PixelCoord&) = default;
  friend auto operator<=>(const PixelCoord&, const PixelCoord&) = default;
};

/// 8-bit grayscale raster, row-major.
class GrayImage {
 public:
  GrayImage() = default;

  GrayImage(int width, int height, std::uint8_t fill = 255)
      : width_(width), height_(height) {
    check_dims(width, height);
    data_.assign(static_cast<std::size_t>(width) * height, fill);
  }

  GrayImage(int width, int height, std::vector<std::uint8_t> data)
      : width_(width), height_(height), data_(std::move(data)) {
    check_dims(width, height);
    if (data_.size() != static_cast<std::size_t>(width) * height) {
      throw InputError("GrayImage: data length " + std::to_string(data_.size()) +
                       " does not match " + std::to_string(width) + "x" +
                       std::to_string(height));
    }
  }

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  bool contains(PixelCoord c) const {
    return c.x >= 0 && c.y >= 0 && c.x < width_ && c.y < height_;
  }

  std::uint8_t at(int x, int y) const { return data_[index(x, y)]; }
  std::uint8_t& at(int x, int y) { return data_[index(x, y)]; }
  std::uint8_t at(PixelCoord c) const { return at(c.x, c.y); }
  std::uint8_t& at(PixelCoord c) { return at(c.x, c.y); }

  std::span<const std::uint8_t> pixels() const { return data_; }
  std::span<std::uint8_t> pixels() { return data_; }

  friend bool operator==(const GrayImage&, const GrayImage&) = default;

 private:
  static void check_dims(int width, int height) {
    if (width <= 0 || height <= 0) {
      throw InputError("GrayImage: dimensions must be positive");
    }
  }
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * width_ + x;
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> data_;
};

/// Foreground (ink) flags with the same geometry as the image they came from.
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int width, int height)
      : width_(width),
        height_(height),
        bits_(static_cast<std::size_t>(std::max(width, 0)) * std::max(height, 0), 0) {}

  int width() const { return width_; }
  int height() const { return height_; }

  bool contains(int x, int y) const {
    return x >= 0 && y >= 0 && x < width_ && y < height_;
  }

  bool get(int x, int y) const { return bits_[index(x, y)] != 0; }
  void set(int x, int y, bool v) { bits_[index(x, y)] = v ? 1 : 0; }
  bool get(PixelCoord c) const { return get(c.x, c.y); }

  /// Out-of-bounds reads are background.
  bool get_or_zero(int x, int y) const { return contains(x, y) && get(x, y); }

  std::size_t count() const {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), 1));
  }

  std::vector<PixelCoord> foreground() const {
    std::vector<PixelCoord> out;
    for (int y = 0; y < height_; ++y)
      for (int x = 0; x < width_; ++x)
        if (get(x, y)) out.push_back({x, y});
    return out;
  }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * width_ + x;
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> bits_;
};

inline constexpr int kDefaultThreshold = 128;

/// Ink is dark: a pixel is foreground iff its intensity is below threshold.
inline BinaryMask binarize(const GrayImage& img, int threshold = kDefaultThreshold) {
  if (threshold < 0 || threshold > 255) {
    throw InputError("binarize: threshold must be in [0,255]");
  }
  BinaryMask mask(img.width(), img.height());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      mask.set(x, y, img.at(x, y) < threshold);
  return mask;
}

/// How an attacked pixel is rewritten.
struct PerturbModel {
  enum class Kind { Toggle, SetValue };
  Kind kind = Kind::Toggle;
  std::uint8_t value = 0;

  static PerturbModel toggle() { return {}; }
  static PerturbModel set_value(std::uint8_t v) { return {Kind::SetValue, v}; }

  std::uint8_t apply(std::uint8_t intensity) const {
    return kind == Kind::Toggle ? static_cast<std::uint8_t>(255 - intensity) : value;
  }

  friend bool operator==(const PerturbModel&, const PerturbModel&) = default;
};

/// Copy of img with every listed pixel rewritten once, even if it is listed
/// several times.
inline GrayImage apply_perturbation(const GrayImage& img, std::span<const PixelCoord> coords,
                                    PerturbModel model = PerturbModel::toggle()) {
  for (const auto& c : coords) {
    if (!img.contains(c)) {
      throw InputError("apply_perturbation: coordinate (" + std::to_string(c.x) + "," +
                       std::to_string(c.y) + ") out of bounds");
    }
  }
  std::vector<PixelCoord> unique(coords.begin(), coords.end());
  std::sort(unique.begin(), unique.end());
  unique.erase(std::unique(unique.begin(), unique.end()), unique.end());

  GrayImage out = img;
  for (const auto& c : unique) out.at(c) = model.apply(img.at(c));
  return out;
}

/// Peak signal-to-noise ratio in dB against a peak of 255. Identical images
/// give +infinity.
inline double psnr(const GrayImage& a, const GrayImage& b) {
  if (a.width() != b.width() || a.height() != b.height()) {
    throw InputError("psnr: dimension mismatch");
  }
  std::uint64_t sse = 0;
  auto pa = a.pixels();
  auto pb = b.pixels();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const int d = static_cast<int>(pa[i]) - static_cast<int>(pb[i]);
    sse += static_cast<std::uint64_t>(d * d);
  }
  if (sse == 0) return std::numeric_limits<double>::infinity();
  const double mse = static_cast<double>(sse) / static_cast<double>(pa.size());
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

/// Nearest-neighbour resampling; keeps the value set of the input intact.
inline GrayImage resize_nearest(const GrayImage& img, int width, int height) {
  GrayImage out(width, height);
  for (int y = 0; y < height; ++y) {
    const int sy = std::min(img.height() - 1,
                            static_cast<int>((static_cast<std::int64_t>(y) * img.height()) / height));
    for (int x = 0; x < width; ++x) {
      const int sx = std::min(img.width() - 1,
                              static_cast<int>((static_cast<std::int64_t>(x) * img.width()) / width));
      out.at(x, y) = img.at(sx, sy);
    }
  }
  return out;
}

/// ITU-R BT.601 luma, rounded to nearest.
inline std::uint8_t luma_bt601(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  const double y = 0.299 * r + 0.587 * g + 0.114 * b;
  return static_cast<std::uint8_t>(std::clamp(std::lround(y), 0L, 255L));
}

}  // namespace skelattack
