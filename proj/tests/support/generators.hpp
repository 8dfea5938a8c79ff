#pragma once

// Random instances for property tests. Everything draws from a seeded
// leafdiag::rng::Stream so failures replay.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "leafdiag/dataset.hpp"
#include "leafdiag/pipeline.hpp"
#include "leafdiag/rng.hpp"

namespace leafdiag::testing {

inline BoundingBox random_box(rng::Stream& s, double extent = 100.0, double min_side = 0.5) {
  const double x = s.uniform(0.0, extent - min_side);
  const double y = s.uniform(0.0, extent - min_side);
  const double w = s.uniform(min_side, extent - x);
  const double h = s.uniform(min_side, extent - y);
  return BoundingBox(x, y, x + std::max(w, min_side), y + std::max(h, min_side));
}

/// A box near `base`: corners moved by up to `spread` times its size.
inline BoundingBox perturbed(rng::Stream& s, const BoundingBox& base, double spread) {
  const double dx = base.width() * spread, dy = base.height() * spread;
  const double x0 = base.x_min() + s.uniform(-dx, dx), y0 = base.y_min() + s.uniform(-dy, dy);
  double x1 = base.x_max() + s.uniform(-dx, dx), y1 = base.y_max() + s.uniform(-dy, dy);
  if (x1 <= x0 + 0.1) x1 = x0 + 0.1;
  if (y1 <= y0 + 0.1) y1 = y0 + 0.1;
  return BoundingBox(x0, y0, x1, y1);
}

inline LeafLabel random_label(rng::Stream& s) {
  return s.bernoulli(0.5) ? LeafLabel::healthy : LeafLabel::diseased;
}

inline std::vector<AnnotatedLeaf> random_gold(rng::Stream& s, std::size_t n, double extent = 100.0) {
  std::vector<AnnotatedLeaf> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back({fmt::format("L{}", i), random_box(s, extent, 5.0), random_label(s)});
  }
  return out;
}

/// Predictions clustered around gold boxes plus a few free-floating ones, so
/// instances have real overlap structure. Confidences are distinct.
inline std::vector<Detection> random_predictions(rng::Stream& s, const std::vector<AnnotatedLeaf>& gold,
                                                 std::size_t n, double extent = 100.0) {
  std::vector<Detection> out;
  for (std::size_t i = 0; i < n; ++i) {
    BoundingBox box = (gold.empty() || s.bernoulli(0.25))
                          ? random_box(s, extent, 5.0)
                          : perturbed(s, gold[s.below(gold.size())].box, 0.3);
    const auto label = s.bernoulli(0.15) ? std::nullopt : std::optional(random_label(s));
    out.push_back({box, label, s.uniform()});
  }
  return out;
}

inline std::vector<Detection> random_detections(rng::Stream& s, std::size_t n, double extent = 100.0,
                                                bool labelled = true) {
  std::vector<Detection> out;
  for (std::size_t i = 0; i < n; ++i) {
    BoundingBox box = (!out.empty() && s.bernoulli(0.5)) ? perturbed(s, out[s.below(out.size())].box, 0.2)
                                                         : random_box(s, extent, 2.0);
    // Coarse confidences make ties common.
    const double conf = std::floor(s.uniform() * 10.0) / 10.0;
    out.push_back({box, labelled ? std::optional(random_label(s)) : std::nullopt, conf});
  }
  return out;
}

}  // namespace leafdiag::testing
