#pragma once

#include <optional>
#include <ostream>

namespace leafdiag {

/// Positive integer pixel dimensions of an image.
class ImageSize {
 public:
  /// Throws InvariantError unless width >= 1 and height >= 1.
  ImageSize(int width, int height);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }

  friend bool operator==(const ImageSize&, const ImageSize&) = default;

 private:
  int width_;
  int height_;
};

/// Axis-aligned box in continuous pixel coordinates, corner convention.
///
/// Construction enforces finite coordinates and strictly positive area, so
/// every BoundingBox value in the program is valid.
class BoundingBox {
 public:
  /// Throws InvariantError on non-finite coordinates or x_min >= x_max / y_min >= y_max.
  BoundingBox(double x_min, double y_min, double x_max, double y_max);

  /// Non-throwing variant for untrusted input.
  static std::optional<BoundingBox> try_make(double x_min, double y_min, double x_max,
                                             double y_max) noexcept;

  double x_min() const noexcept { return x_min_; }
  double y_min() const noexcept { return y_min_; }
  double x_max() const noexcept { return x_max_; }
  double y_max() const noexcept { return y_max_; }
  double width() const noexcept { return x_max_ - x_min_; }
  double height() const noexcept { return y_max_ - y_min_; }

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;

 private:
  struct Unchecked {};
  BoundingBox(Unchecked, double x_min, double y_min, double x_max, double y_max) noexcept
      : x_min_(x_min), y_min_(y_min), x_max_(x_max), y_max_(y_max) {}

  double x_min_;
  double y_min_;
  double x_max_;
  double y_max_;
};

std::ostream& operator<<(std::ostream& os, const BoundingBox& b);
std::ostream& operator<<(std::ostream& os, const ImageSize& s);

double area(const BoundingBox& b) noexcept;

/// Area of the overlap; zero for disjoint or edge-touching boxes.
double intersection_area(const BoundingBox& a, const BoundingBox& b) noexcept;

/// Intersection over union in [0, 1]. Edge-touching boxes give 0.
double iou(const BoundingBox& a, const BoundingBox& b) noexcept;

/// Intersects `b` with [0,width]x[0,height]; nullopt when nothing of positive area remains.
std::optional<BoundingBox> clip(const BoundingBox& b, const ImageSize& size) noexcept;

/// Maps `b` from the `from` frame into the `to` frame with independent axis scaling.
BoundingBox rescale(const BoundingBox& b, const ImageSize& from, const ImageSize& to);

}  // namespace leafdiag
