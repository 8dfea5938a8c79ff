#include "leafdiag/matching.hpp"

#include <algorithm>
#include <numeric>
#include <unordered_map>

#include <fmt/format.h>

#include "leafdiag/error.hpp"

namespace leafdiag {

void MatchConfig::validate() const {
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) {
    throw InvariantError(fmt::format("match iou_threshold must be in (0, 1], got {}", iou_threshold));
  }
}

MatchResult match(std::span<const Detection> predictions, std::span<const AnnotatedLeaf> gold,
                  const MatchConfig& cfg, bool class_aware) {
  cfg.validate();
  std::vector<std::size_t> order(predictions.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return predictions[a].confidence > predictions[b].confidence;
  });

  MatchResult out;
  std::vector<bool> gold_taken(gold.size(), false);
  std::vector<bool> pred_matched(predictions.size(), false);
  for (const auto p : order) {
    const auto& pred = predictions[p];
    if (class_aware && !pred.label) continue;
    std::optional<std::size_t> best;
    double best_iou = 0.0;
    for (std::size_t g = 0; g < gold.size(); ++g) {
      if (gold_taken[g]) continue;
      if (class_aware && gold[g].label != *pred.label) continue;
      const double v = iou(pred.box, gold[g].box);
      if (v < cfg.iou_threshold) continue;
      if (!best || v > best_iou || (v == best_iou && gold[g].leaf_id < gold[*best].leaf_id)) {
        best = g;
        best_iou = v;
      }
    }
    if (best) {
      gold_taken[*best] = true;
      pred_matched[p] = true;
      out.pairs.push_back({p, gold[*best].leaf_id, best_iou, pred.label, gold[*best].label});
    }
  }
  for (std::size_t p = 0; p < predictions.size(); ++p) {
    if (!pred_matched[p]) out.unmatched_predictions.push_back({p, predictions[p].label});
  }
  for (std::size_t g = 0; g < gold.size(); ++g) {
    if (!gold_taken[g]) out.unmatched_gold.push_back({gold[g].leaf_id, gold[g].label});
  }
  return out;
}

double f1_score(double precision, double recall) noexcept {
  const double sum = precision + recall;
  return sum > 0.0 ? 2.0 * precision * recall / sum : 0.0;
}

ClassMetrics ClassMetrics::from_counts(std::size_t tp, std::size_t fp, std::size_t fn) {
  ClassMetrics m;
  m.tp = tp;
  m.fp = fp;
  m.fn = fn;
  m.precision_undefined = tp + fp == 0;
  m.recall_undefined = tp + fn == 0;
  m.precision = m.precision_undefined ? 0.0 : double(tp) / double(tp + fp);
  m.recall = m.recall_undefined ? 0.0 : double(tp) / double(tp + fn);
  m.f1 = f1_score(m.precision, m.recall);
  return m;
}

ClassMetrics ClassMetrics::from_rates(double precision, double recall) {
  ClassMetrics m;
  m.precision = precision;
  m.recall = recall;
  m.f1 = f1_score(precision, recall);
  return m;
}

ClassMetrics detection_metrics(std::span<const MatchResult> results) {
  std::size_t tp = 0, fp = 0, fn = 0;
  for (const auto& r : results) {
    tp += r.pairs.size();
    fp += r.unmatched_predictions.size();
    fn += r.unmatched_gold.size();
  }
  return ClassMetrics::from_counts(tp, fp, fn);
}

ClassMetrics diagnosis_metrics(std::span<const MatchResult> results, LeafLabel cls) {
  std::size_t tp = 0, fp = 0, fn = 0;
  for (const auto& r : results) {
    for (const auto& p : r.pairs) {
      if (p.predicted_label == cls && p.gold_label == cls) {
        ++tp;
      } else {
        // A class-agnostic pairing can join different labels; count both sides.
        if (p.predicted_label == cls) ++fp;
        if (p.gold_label == cls) ++fn;
      }
    }
    for (const auto& u : r.unmatched_predictions) {
      if (u.label == cls) ++fp;
    }
    for (const auto& u : r.unmatched_gold) {
      if (u.label == cls) ++fn;
    }
  }
  return ClassMetrics::from_counts(tp, fp, fn);
}

double average_f1(const ClassMetrics& healthy, const ClassMetrics& diseased) noexcept {
  return (healthy.f1 + diseased.f1) / 2.0;
}

EvalReport make_report(std::string system, ClassMetrics detection, ClassMetrics healthy,
                       ClassMetrics diseased) {
  EvalReport r;
  r.system = std::move(system);
  r.detection = detection;
  r.healthy = healthy;
  r.diseased = diseased;
  r.average_f1 = average_f1(healthy, diseased);
  return r;
}

EvalReport evaluate(const PredictionRun& predictions, const DatasetManifest& gold,
                    const MatchConfig& cfg, std::string system) {
  cfg.validate();
  std::unordered_map<std::string_view, const ScenePredictions*> by_id;
  for (const auto& s : predictions.scenes) by_id.emplace(s.scene_id, &s);

  std::vector<std::string> errors;
  std::vector<std::string> warnings;
  std::vector<MatchResult> agnostic;
  std::vector<MatchResult> aware;
  std::size_t scenes = 0, leaves = 0, n_preds = 0;
  for (const auto& scene : gold.scenes) {
    std::span<const Detection> dets;
    if (const auto it = by_id.find(scene.scene_id); it != by_id.end()) {
      const auto& sp = *it->second;
      if (sp.size != scene.size) {
        errors.push_back(fmt::format("{}: predictions are in a {}x{} frame, gold is {}x{}",
                                     scene.scene_id, sp.size.width(), sp.size.height(),
                                     scene.size.width(), scene.size.height()));
        by_id.erase(it);
        continue;
      }
      dets = sp.detections;
      by_id.erase(it);
    } else {
      warnings.push_back(fmt::format("{}: no predictions for scene", scene.scene_id));
    }
    ++scenes;
    leaves += scene.leaves.size();
    n_preds += dets.size();
    agnostic.push_back(match(dets, scene.leaves, cfg, false));
    aware.push_back(match(dets, scene.leaves, cfg, true));
  }
  for (const auto& s : predictions.scenes) {
    if (by_id.contains(s.scene_id)) {
      errors.push_back(fmt::format("{}: scene not present in the gold manifest", s.scene_id));
    }
  }

  EvalReport r = make_report(std::move(system), detection_metrics(agnostic),
                             diagnosis_metrics(aware, LeafLabel::healthy),
                             diagnosis_metrics(aware, LeafLabel::diseased));
  r.scenes = scenes;
  r.gold_leaves = leaves;
  r.predictions = n_preds;
  r.errors = std::move(errors);
  r.warnings = std::move(warnings);
  return r;
}

}  // namespace leafdiag
