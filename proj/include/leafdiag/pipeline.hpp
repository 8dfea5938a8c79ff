#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "leafdiag/dataset.hpp"
#include "leafdiag/geometry.hpp"
#include "leafdiag/raster.hpp"

namespace leafdiag {

/// A predicted leaf. `label` is empty for class-agnostic detectors.
struct Detection {
  BoundingBox box;
  std::optional<LeafLabel> label;
  double confidence = 0.0;

  friend bool operator==(const Detection&, const Detection&) = default;
};

/// What a detector sees for one scene. Boxes must come back in the
/// `input_size` frame; the pipeline maps them to the scene frame.
struct DetectRequest {
  std::string scene_id;
  std::string image_ref;
  ImageSize scene_size;
  ImageSize input_size;
  const Raster* pixels = nullptr;  ///< original-resolution image, if loaded
};

struct DiagnoseRequest {
  std::string scene_id;
  BoundingBox box;                 ///< scene frame
  const Raster* crop = nullptr;    ///< resampled crop, null when the scene has no pixels
};

struct Diagnosis {
  LeafLabel label;
  double confidence = 1.0;
};

class DetectorStage {
 public:
  virtual ~DetectorStage() = default;
  /// True for end-to-end detectors that label their boxes.
  virtual bool emits_labels() const = 0;
  /// Short human-readable identity recorded in run metadata.
  virtual std::string identity() const = 0;
  /// May throw; the pipeline reports the failure against the scene.
  virtual std::vector<Detection> detect(const DetectRequest& request) = 0;
};

class DiagnoserStage {
 public:
  virtual ~DiagnoserStage() = default;
  virtual std::string identity() const = 0;
  virtual Diagnosis diagnose(const DiagnoseRequest& request) = 0;
};

struct PipelineConfig {
  double confidence_threshold = 0.5;
  double nms_iou_threshold = 0.45;
  ResizePolicy resize_policy = ResizePolicy::native;
  ImageSize crop_size = kDefaultCropSize;

  /// Throws InvariantError unless both thresholds lie in (0, 1).
  void validate() const;
};

enum class NmsGrouping {
  per_label,  ///< suppression only among boxes sharing a label (end-to-end)
  global,     ///< every box competes with every other (class-agnostic)
};

/// Greedy non-maximum suppression. Candidates are visited by confidence
/// descending, then larger area, then input order; a candidate is kept iff its
/// IoU with every kept box of its group is below `iou_threshold`. The result
/// is in visiting order.
std::vector<Detection> nms(std::span<const Detection> detections, double iou_threshold,
                           NmsGrouping grouping = NmsGrouping::per_label);

/// Scene handed to a pipeline run.
struct SceneInput {
  std::string scene_id;
  std::string image_ref;
  ImageSize size;
  std::shared_ptr<const Raster> pixels;  ///< optional

  static SceneInput from_scene(const Scene& scene, std::shared_ptr<const Raster> pixels = nullptr) {
    return {scene.scene_id, scene.image_ref, scene.size, std::move(pixels)};
  }
};

struct SceneRun {
  std::vector<Detection> detections;
  std::vector<std::string> warnings;
};

/// Detector output -> confidence filter -> per-label NMS -> scene-frame boxes.
/// Requires a labelling detector; stage exceptions surface as StageError.
SceneRun run_end_to_end(const SceneInput& scene, DetectorStage& detector, const PipelineConfig& cfg);

/// Class-agnostic detection -> filter -> global NMS -> per-box crop from the
/// original image -> diagnosis. Boxes whose diagnosis fails are dropped with a
/// warning.
SceneRun run_two_stage(const SceneInput& scene, DetectorStage& detector, DiagnoserStage& diagnoser,
                       const PipelineConfig& cfg);

// --- Batches --------------------------------------------------------------

enum class Strategy { end_to_end, two_stage };

std::string_view to_string(Strategy s) noexcept;
std::optional<Strategy> parse_strategy(std::string_view text) noexcept;

struct ScenePredictions {
  std::string scene_id;
  ImageSize size;
  std::vector<Detection> detections;
};

struct SceneFailure {
  std::string scene_id;
  std::string message;
};

struct RunMetadata {
  Strategy strategy = Strategy::end_to_end;
  PipelineConfig config;
  std::string detector;
  std::string diagnoser;  ///< empty for end-to-end runs
  std::uint64_t seed = 0;
  std::vector<TrainingProvenance> provenance;
};

/// Contents of a predictions file.
struct PredictionRun {
  RunMetadata metadata;
  std::vector<ScenePredictions> scenes;
  std::vector<SceneFailure> failures;
  std::vector<std::string> warnings;
};

/// Returns the pixels for a scene, or null when none are available.
using PixelLoader = std::function<std::shared_ptr<const Raster>(const Scene&)>;

/// Runs the configured strategy over every scene. Per-scene failures are
/// recorded rather than thrown; the output order follows the manifest
/// regardless of `workers`.
PredictionRun run_batch(const DatasetManifest& manifest, Strategy strategy, DetectorStage& detector,
                        DiagnoserStage* diagnoser, const PipelineConfig& cfg,
                        const PixelLoader& load_pixels = {}, unsigned workers = 1);

std::string predictions_to_json(const PredictionRun& run);
PredictionRun parse_predictions(std::string_view text, std::string_view source = "<predictions>");

}  // namespace leafdiag
