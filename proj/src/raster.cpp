#include "leafdiag/raster.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "leafdiag/error.hpp"

namespace leafdiag {

Raster::Raster(ImageSize size, Rgb fill)
    : size_(size), data_(static_cast<std::size_t>(size.width()) * size.height() * 3) {
  for (std::size_t i = 0; i < data_.size(); i += 3) {
    data_[i] = fill.r;
    data_[i + 1] = fill.g;
    data_[i + 2] = fill.b;
  }
}

Raster::Raster(ImageSize size, std::vector<std::uint8_t> rgb) : size_(size), data_(std::move(rgb)) {
  const auto expected = static_cast<std::size_t>(size.width()) * size.height() * 3;
  if (data_.size() != expected) {
    throw InvariantError(fmt::format("raster {}x{} needs {} bytes, got {}", size.width(),
                                     size.height(), expected, data_.size()));
  }
}

Raster resample_region(const Raster& src, const BoundingBox& region, ImageSize out) {
  const double sx = region.width() / out.width();
  const double sy = region.height() / out.height();
  const int max_x = src.width() - 1;
  const int max_y = src.height() - 1;

  // Pixel centres map to pixel centres; sample positions clamp at the border.
  // Weights are fixed point with kFracBits fractional bits.
  constexpr int kFracBits = 11;
  constexpr std::uint32_t kOne = 1u << kFracBits;
  struct Tap {
    std::size_t lo, hi;  // byte offsets (columns) or row indices
    std::uint32_t w;
  };
  const auto taps = [&](double start, double step, int n, int max, std::size_t stride) {
    std::vector<Tap> t(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      const double f = std::clamp(start + (i + 0.5) * step - 0.5, 0.0, double(max));
      const int lo = static_cast<int>(f);
      t[i] = {std::size_t(lo) * stride, std::size_t(std::min(lo + 1, max)) * stride,
              static_cast<std::uint32_t>(std::lround((f - lo) * kOne))};
    }
    return t;
  };
  const auto cols = taps(region.x_min(), sx, out.width(), max_x, 3);
  const auto rows = taps(region.y_min(), sy, out.height(), max_y, 1);

  const auto bytes = src.bytes();
  const std::size_t row_bytes = static_cast<std::size_t>(src.width()) * 3;
  std::vector<std::uint8_t> dst(static_cast<std::size_t>(out.width()) * out.height() * 3);
  std::vector<std::uint32_t> top(cols.size() * 3), bottom(cols.size() * 3);
  const auto blend_row = [&](const std::uint8_t* row, std::vector<std::uint32_t>& acc) {
    std::size_t k = 0;
    for (const auto& cx : cols) {
      for (std::size_t c = 0; c < 3; ++c) acc[k++] = row[cx.lo + c] * (kOne - cx.w) + row[cx.hi + c] * cx.w;
    }
  };
  // Upscaling revisits the same source rows, so horizontal blends are cached.
  std::size_t top_row = SIZE_MAX, bottom_row = SIZE_MAX;
  std::size_t o = 0;
  for (const auto& ry : rows) {
    if (ry.lo == bottom_row && ry.lo != top_row) {
      std::swap(top, bottom);
      std::swap(top_row, bottom_row);
    }
    if (ry.lo != top_row) blend_row(bytes.data() + ry.lo * row_bytes, top);
    if (ry.hi != bottom_row) blend_row(bytes.data() + ry.hi * row_bytes, bottom);
    top_row = ry.lo;
    bottom_row = ry.hi;
    for (std::size_t k = 0; k < top.size(); ++k) {
      const std::uint32_t v = top[k] * (kOne - ry.w) + bottom[k] * ry.w;
      dst[o++] = static_cast<std::uint8_t>((v + (1u << (2 * kFracBits - 1))) >> (2 * kFracBits));
    }
  }
  return Raster(out, std::move(dst));
}

namespace {

// Reads the next whitespace-delimited header token, skipping '#' comments.
std::string next_token(std::istream& in) {
  std::string tok;
  char c;
  while (in.get(c)) {
    if (c == '#') {
      std::string ignored;
      std::getline(in, ignored);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(c);
  }
  return tok;
}

}  // namespace

Raster read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(fmt::format("cannot open image {}", path.string()));
  if (next_token(in) != "P6") throw ParseError(fmt::format("{}: not a binary PPM (P6)", path.string()));
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(next_token(in));
    h = std::stoi(next_token(in));
    maxval = std::stoi(next_token(in));
  } catch (const std::exception&) {
    throw ParseError(fmt::format("{}: malformed PPM header", path.string()));
  }
  if (maxval != 255) throw ParseError(fmt::format("{}: only maxval 255 is supported", path.string()));
  std::vector<std::uint8_t> data(static_cast<std::size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (in.gcount() != static_cast<std::streamsize>(data.size())) {
    throw ParseError(fmt::format("{}: truncated pixel data", path.string()));
  }
  return Raster(ImageSize(w, h), std::move(data));
}

void write_ppm(const Raster& image, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(fmt::format("cannot write image {}", path.string()));
  out << "P6\n" << image.width() << ' ' << image.height() << "\n255\n";
  const auto bytes = image.bytes();
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(fmt::format("failed writing image {}", path.string()));
}

}  // namespace leafdiag
