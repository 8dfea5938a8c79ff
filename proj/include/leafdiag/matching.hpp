#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "leafdiag/dataset.hpp"
#include "leafdiag/pipeline.hpp"

namespace leafdiag {

struct MatchConfig {
  double iou_threshold = 0.5;

  /// Throws InvariantError unless the threshold lies in (0, 1].
  void validate() const;
};

struct MatchPair {
  std::size_t prediction;
  std::string leaf_id;
  double iou;
  std::optional<LeafLabel> predicted_label;
  LeafLabel gold_label;
};

struct UnmatchedPrediction {
  std::size_t prediction;
  std::optional<LeafLabel> label;
};

struct UnmatchedGold {
  std::string leaf_id;
  LeafLabel label;
};

/// One-to-one assignment of predictions to gold leaves for one scene.
struct MatchResult {
  std::vector<MatchPair> pairs;                     ///< in matching order
  std::vector<UnmatchedPrediction> unmatched_predictions;  ///< ascending index
  std::vector<UnmatchedGold> unmatched_gold;        ///< gold input order
};

/// Greedy matching. Predictions are visited by confidence descending (ties:
/// input order); each takes the still-unmatched gold leaf with the highest
/// IoU >= threshold (ties: lowest leaf_id). With `class_aware`, only gold
/// leaves carrying the prediction's label are candidates, so unlabelled
/// predictions never match.
MatchResult match(std::span<const Detection> predictions, std::span<const AnnotatedLeaf> gold,
                  const MatchConfig& cfg, bool class_aware);

/// Counts plus the derived rates, all as fractions in [0, 1].
struct ClassMetrics {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  /// Set when the rate is 0/0 and reported as 0.
  bool precision_undefined = false;
  bool recall_undefined = false;

  static ClassMetrics from_counts(std::size_t tp, std::size_t fp, std::size_t fn);
  /// Rates only (counts zero); used to check published tables.
  static ClassMetrics from_rates(double precision, double recall);

  friend bool operator==(const ClassMetrics&, const ClassMetrics&) = default;
};

/// Harmonic mean of precision and recall; 0 when both are 0. Works in any
/// unit (fractions or percent).
double f1_score(double precision, double recall) noexcept;

/// Class-agnostic detection metrics from class-agnostic match results.
ClassMetrics detection_metrics(std::span<const MatchResult> results);

/// Per-class diagnosis metrics from class-aware match results.
ClassMetrics diagnosis_metrics(std::span<const MatchResult> results, LeafLabel cls);

double average_f1(const ClassMetrics& healthy, const ClassMetrics& diseased) noexcept;

struct EvalReport {
  std::string system;
  ClassMetrics detection;
  ClassMetrics healthy;
  ClassMetrics diseased;
  double average_f1 = 0.0;
  std::size_t scenes = 0;
  std::size_t gold_leaves = 0;
  std::size_t predictions = 0;
  /// Per-scene problems (frame mismatch, unknown scene). Scenes with an error
  /// are excluded from the metrics.
  std::vector<std::string> errors;
  std::vector<std::string> warnings;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

/// Assembles a report from per-class metrics; average_f1 is derived here.
EvalReport make_report(std::string system, ClassMetrics detection, ClassMetrics healthy,
                       ClassMetrics diseased);

/// Matches every manifest scene against its predictions (twice: class-agnostic
/// for detection, class-aware for diagnosis) and aggregates. Scenes absent
/// from the predictions count as having no predictions.
EvalReport evaluate(const PredictionRun& predictions, const DatasetManifest& gold,
                    const MatchConfig& cfg, std::string system);

/// Percent with one decimal, rounding half up: 0.77949 -> "77.9", 0.7795 -> "78.0".
std::string format_percent(double fraction);

/// Aligned text table, one row per report.
std::string render_report_table(std::span<const EvalReport> reports);

/// Canonical JSON array of report objects; rates are fractions in [0, 1].
std::string reports_to_json(std::span<const EvalReport> reports);
std::vector<EvalReport> parse_reports(std::string_view text, std::string_view source = "<report>");

/// Per-cell difference `after - before` in percentage points.
struct ReportDelta {
  std::string system;
  std::map<std::string, double> cells;
};

ReportDelta report_delta(const EvalReport& before, const EvalReport& after);

std::string deltas_to_json(std::span<const ReportDelta> deltas);
std::string render_delta_table(std::span<const ReportDelta> deltas);

}  // namespace leafdiag
