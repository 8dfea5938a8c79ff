#pragma once

#include <span>

#include "leafdiag/matching.hpp"

namespace leafdiag::testing {

inline constexpr std::size_t kBruteForceLimit = 8;

/// Exhaustive one-to-one assignment maximising the number of pairs, then the
/// total IoU. Only pairs with IoU >= threshold (and equal labels when
/// `class_aware`) are eligible. Throws InvariantError above 8x8.
MatchResult brute_force_match(std::span<const Detection> predictions, std::span<const AnnotatedLeaf> gold,
                              const MatchConfig& cfg, bool class_aware = false);

}  // namespace leafdiag::testing
