#include "leafdiag/geometry.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "leafdiag/error.hpp"

namespace leafdiag {

ImageSize::ImageSize(int width, int height) : width_(width), height_(height) {
  if (width < 1 || height < 1) {
    throw InvariantError(fmt::format("image size must be positive, got {}x{}", width, height));
  }
}

BoundingBox::BoundingBox(double x_min, double y_min, double x_max, double y_max)
    : x_min_(x_min), y_min_(y_min), x_max_(x_max), y_max_(y_max) {
  if (!std::isfinite(x_min) || !std::isfinite(y_min) || !std::isfinite(x_max) ||
      !std::isfinite(y_max)) {
    throw InvariantError("bounding box coordinates must be finite");
  }
  if (!(x_min < x_max) || !(y_min < y_max)) {
    throw InvariantError(
        fmt::format("bounding box ({}, {}, {}, {}) has no positive area", x_min, y_min, x_max, y_max));
  }
}

std::optional<BoundingBox> BoundingBox::try_make(double x_min, double y_min, double x_max,
                                                 double y_max) noexcept {
  if (!std::isfinite(x_min) || !std::isfinite(y_min) || !std::isfinite(x_max) ||
      !std::isfinite(y_max) || !(x_min < x_max) || !(y_min < y_max)) {
    return std::nullopt;
  }
  return BoundingBox(Unchecked{}, x_min, y_min, x_max, y_max);
}

std::ostream& operator<<(std::ostream& os, const BoundingBox& b) {
  return os << '(' << b.x_min() << ", " << b.y_min() << ", " << b.x_max() << ", " << b.y_max()
            << ')';
}

std::ostream& operator<<(std::ostream& os, const ImageSize& s) {
  return os << s.width() << 'x' << s.height();
}

double area(const BoundingBox& b) noexcept { return b.width() * b.height(); }

double intersection_area(const BoundingBox& a, const BoundingBox& b) noexcept {
  const double w = std::min(a.x_max(), b.x_max()) - std::max(a.x_min(), b.x_min());
  const double h = std::min(a.y_max(), b.y_max()) - std::max(a.y_min(), b.y_min());
  if (w <= 0.0 || h <= 0.0) return 0.0;
  return w * h;
}

double iou(const BoundingBox& a, const BoundingBox& b) noexcept {
  const double inter = intersection_area(a, b);
  if (inter <= 0.0) return 0.0;
  const double uni = area(a) + area(b) - inter;
  // Guards against rounding pushing the ratio a hair above 1 for identical boxes.
  return std::clamp(inter / uni, 0.0, 1.0);
}

std::optional<BoundingBox> clip(const BoundingBox& b, const ImageSize& size) noexcept {
  const double w = size.width();
  const double h = size.height();
  return BoundingBox::try_make(std::clamp(b.x_min(), 0.0, w), std::clamp(b.y_min(), 0.0, h),
                               std::clamp(b.x_max(), 0.0, w), std::clamp(b.y_max(), 0.0, h));
}

BoundingBox rescale(const BoundingBox& b, const ImageSize& from, const ImageSize& to) {
  if (from == to) return b;
  // Multiply before dividing: keeps results like 100 * 512 / 1000 correctly rounded.
  const auto sx = [&](double v) { return v * to.width() / from.width(); };
  const auto sy = [&](double v) { return v * to.height() / from.height(); };
  return BoundingBox(sx(b.x_min()), sy(b.y_min()), sx(b.x_max()), sy(b.y_max()));
}

}  // namespace leafdiag
