#include "brute_force_match.hpp"

#include <algorithm>
#include <vector>

#include <fmt/format.h>

#include "leafdiag/error.hpp"

namespace leafdiag::testing {

MatchResult brute_force_match(std::span<const Detection> predictions, std::span<const AnnotatedLeaf> gold,
                              const MatchConfig& cfg, bool class_aware) {
  if (predictions.size() > kBruteForceLimit || gold.size() > kBruteForceLimit) {
    throw InvariantError(fmt::format("brute force matching is limited to {0}x{0}, got {1}x{2}", kBruteForceLimit,
                                     predictions.size(), gold.size()));
  }
  const std::size_t np = predictions.size(), ng = gold.size();
  const std::size_t masks = std::size_t{1} << ng;

  std::vector<std::vector<double>> w(np, std::vector<double>(ng, -1.0));
  for (std::size_t i = 0; i < np; ++i) {
    for (std::size_t j = 0; j < ng; ++j) {
      if (class_aware && predictions[i].label != gold[j].label) continue;
      const double v = iou(predictions[i].box, gold[j].box);
      if (v >= cfg.iou_threshold) w[i][j] = v;
    }
  }

  // best[i][mask]: optimum over predictions i.. given gold `mask` already used.
  struct Value {
    std::size_t count = 0;
    double total = 0.0;
    bool operator<(const Value& o) const { return count != o.count ? count < o.count : total < o.total; }
  };
  std::vector<std::vector<Value>> best(np + 1, std::vector<Value>(masks));
  std::vector<std::vector<int>> choice(np + 1, std::vector<int>(masks, -1));
  for (std::size_t i = np; i-- > 0;) {
    for (std::size_t mask = 0; mask < masks; ++mask) {
      Value v = best[i + 1][mask];
      int pick = -1;
      for (std::size_t j = 0; j < ng; ++j) {
        if ((mask >> j & 1) || w[i][j] < 0.0) continue;
        Value cand = best[i + 1][mask | (std::size_t{1} << j)];
        cand.count += 1;
        cand.total += w[i][j];
        if (v < cand) {
          v = cand;
          pick = static_cast<int>(j);
        }
      }
      best[i][mask] = v;
      choice[i][mask] = pick;
    }
  }

  MatchResult out;
  std::vector<bool> used(ng, false);
  std::size_t mask = 0;
  for (std::size_t i = 0; i < np; ++i) {
    const int j = choice[i][mask];
    if (j < 0) {
      out.unmatched_predictions.push_back({i, predictions[i].label});
      continue;
    }
    used[j] = true;
    mask |= std::size_t{1} << j;
    out.pairs.push_back({i, gold[j].leaf_id, w[i][j], predictions[i].label, gold[j].label});
  }
  for (std::size_t j = 0; j < ng; ++j) {
    if (!used[j]) out.unmatched_gold.push_back({gold[j].leaf_id, gold[j].label});
  }
  return out;
}

}  // namespace leafdiag::testing
