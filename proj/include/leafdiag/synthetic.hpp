#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "leafdiag/dataset.hpp"
#include "leafdiag/matching.hpp"
#include "leafdiag/pipeline.hpp"

namespace leafdiag {

/// Corruption model for a detector that replays gold annotations.
struct SyntheticDetectorParams {
  double miss_rate = 0.0;       ///< per-leaf drop probability
  double spurious_rate = 0.0;   ///< Poisson mean of false boxes per scene
  double jitter_sigma = 0.0;    ///< Gaussian corner noise, pixels
  double hit_confidence_lo = 0.6;       ///< replayed boxes: Uniform[lo, 1]
  double spurious_confidence_lo = 0.5;  ///< false boxes: Uniform[lo, hi]
  double spurious_confidence_hi = 0.9;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Class-conditional label noise for diagnosers (and end-to-end label heads).
struct SyntheticDiagnoserParams {
  double flip_healthy_to_diseased = 0.0;
  double flip_diseased_to_healthy = 0.0;
  /// Label given to boxes that correspond to no gold leaf.
  LeafLabel spurious_label = LeafLabel::healthy;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Area range for false boxes: log-uniform between two gold-area percentiles.
struct SpuriousBoxModel {
  double area_lo = 100.0;
  double area_hi = 10000.0;

  /// 5th and 95th percentile (linear interpolation) of gold leaf areas; the
  /// defaults above when the manifest has no leaves.
  static SpuriousBoxModel from_manifest(const DatasetManifest& manifest);
};

/// Replays `scene`'s gold boxes under `params` corruption, in the scene frame.
/// With `labels`, replayed boxes carry a synth_diagnose() label and false
/// boxes the configured prior; without, every box is unlabelled. Results
/// depend only on (scene_id, leaf_id, seeds).
std::vector<Detection> synth_detect(const Scene& scene, const SyntheticDetectorParams& params,
                                    const SpuriousBoxModel& spurious,
                                    const SyntheticDiagnoserParams* labels = nullptr);

/// Flips `true_label` with its class-conditional rate; deterministic per
/// (scene_id, leaf_id, seed).
Diagnosis synth_diagnose(LeafLabel true_label, const SyntheticDiagnoserParams& params,
                         std::string_view scene_id, std::string_view leaf_id);

/// Scene lookup shared by the synthetic stages.
class SceneIndex {
 public:
  explicit SceneIndex(std::shared_ptr<const DatasetManifest> manifest);
  const Scene& at(std::string_view scene_id) const;
  const DatasetManifest& manifest() const noexcept { return *manifest_; }

 private:
  std::shared_ptr<const DatasetManifest> manifest_;
  std::unordered_map<std::string_view, const Scene*> scenes_;
};

class SyntheticDetector final : public DetectorStage {
 public:
  /// `labels` set -> end-to-end detector; unset -> class-agnostic leaf detector.
  SyntheticDetector(std::shared_ptr<const SceneIndex> index, SyntheticDetectorParams params,
                    std::optional<SyntheticDiagnoserParams> labels = std::nullopt);

  bool emits_labels() const override { return labels_.has_value(); }
  std::string identity() const override;
  std::vector<Detection> detect(const DetectRequest& request) override;

 private:
  std::shared_ptr<const SceneIndex> index_;
  SyntheticDetectorParams params_;
  std::optional<SyntheticDiagnoserParams> labels_;
  SpuriousBoxModel spurious_;
};

class SyntheticDiagnoser final : public DiagnoserStage {
 public:
  /// Boxes are tied to the gold leaf they overlap most (IoU >= correspondence_iou).
  SyntheticDiagnoser(std::shared_ptr<const SceneIndex> index, SyntheticDiagnoserParams params,
                     double correspondence_iou = 0.5);

  std::string identity() const override;
  Diagnosis diagnose(const DiagnoseRequest& request) override;

 private:
  std::shared_ptr<const SceneIndex> index_;
  SyntheticDiagnoserParams params_;
  double correspondence_iou_;
};

// --- Shift experiment -----------------------------------------------------

/// One evaluation regime: a shared leaf detector, the end-to-end label head,
/// and the two-stage diagnoser.
struct Regime {
  SyntheticDetectorParams detector;
  SyntheticDiagnoserParams end_to_end_labels;
  SyntheticDiagnoserParams diagnoser;
};

struct ShiftExperimentConfig {
  Regime in_distribution;
  Regime shifted;
  PipelineConfig pipeline;
  MatchConfig match;
  unsigned workers = 1;
};

struct ShiftExperimentResult {
  EvalReport end_to_end_in;
  EvalReport two_stage_in;
  EvalReport end_to_end_shifted;
  EvalReport two_stage_shifted;
  ReportDelta end_to_end_delta;  ///< shifted - in-distribution
  ReportDelta two_stage_delta;

  std::vector<EvalReport> reports() const {
    return {end_to_end_in, two_stage_in, end_to_end_shifted, two_stage_shifted};
  }
};

/// Runs both strategies under both regimes with synthetic stages.
ShiftExperimentResult run_shift_experiment(std::shared_ptr<const DatasetManifest> manifest,
                                           const ShiftExperimentConfig& cfg);

// --- Synthetic manifests --------------------------------------------------

struct SyntheticManifestSpec {
  std::string name = "synthetic";
  std::size_t scenes = 10;
  std::size_t healthy = 100;
  std::size_t diseased = 50;
  /// Cycled over scenes.
  std::vector<ImageSize> sizes{ImageSize(900, 600), ImageSize(600, 900), ImageSize(800, 600),
                               ImageSize(600, 800)};
  std::string source_tag = "synthetic";
  std::uint64_t seed = 0;
};

/// Scenes with non-overlapping leaves laid out on a per-scene grid. Leaf
/// counts differ by at most one between scenes; labels are shuffled across the
/// whole manifest. Image refs are "images/<scene_id>.ppm".
DatasetManifest make_synthetic_manifest(const SyntheticManifestSpec& spec);

}  // namespace leafdiag
