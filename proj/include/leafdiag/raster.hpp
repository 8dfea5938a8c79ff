#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "leafdiag/geometry.hpp"

namespace leafdiag {

struct Rgb {
  std::uint8_t r = 0;
  std::uint8_t g = 0;
  std::uint8_t b = 0;

  friend bool operator==(const Rgb&, const Rgb&) = default;
};

/// Minimal owned RGB8 image, rows top to bottom, no padding.
class Raster {
 public:
  Raster(ImageSize size, Rgb fill = {});
  /// Takes ownership of `rgb`, which must hold width*height*3 bytes.
  Raster(ImageSize size, std::vector<std::uint8_t> rgb);

  const ImageSize& size() const noexcept { return size_; }
  int width() const noexcept { return size_.width(); }
  int height() const noexcept { return size_.height(); }

  Rgb at(int x, int y) const noexcept {
    const auto* p = &data_[offset(x, y)];
    return {p[0], p[1], p[2]};
  }
  void set(int x, int y, Rgb c) noexcept {
    auto* p = &data_[offset(x, y)];
    p[0] = c.r;
    p[1] = c.g;
    p[2] = c.b;
  }

  std::span<const std::uint8_t> bytes() const noexcept { return data_; }

  friend bool operator==(const Raster&, const Raster&) = default;

 private:
  std::size_t offset(int x, int y) const noexcept {
    return (static_cast<std::size_t>(y) * static_cast<std::size_t>(size_.width()) +
            static_cast<std::size_t>(x)) * 3;
  }

  ImageSize size_;
  std::vector<std::uint8_t> data_;
};

/// Samples the continuous `region` of `src` onto a grid of `out` pixels with
/// bilinear interpolation. No aspect preservation: the region is stretched.
Raster resample_region(const Raster& src, const BoundingBox& region, ImageSize out);

/// Binary PPM (P6, maxval 255). Throws ParseError / Error on failure.
Raster read_ppm(const std::filesystem::path& path);
void write_ppm(const Raster& image, const std::filesystem::path& path);

}  // namespace leafdiag
