#include "leafdiag/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <thread>

#include <fmt/format.h>

#include "leafdiag/error.hpp"

namespace leafdiag {

void PipelineConfig::validate() const {
  if (!(confidence_threshold > 0.0 && confidence_threshold < 1.0)) {
    throw InvariantError(
        fmt::format("confidence_threshold must be in (0, 1), got {}", confidence_threshold));
  }
  if (!(nms_iou_threshold > 0.0 && nms_iou_threshold < 1.0)) {
    throw InvariantError(fmt::format("nms_iou_threshold must be in (0, 1), got {}", nms_iou_threshold));
  }
}

std::vector<Detection> nms(std::span<const Detection> detections, double iou_threshold,
                           NmsGrouping grouping) {
  std::vector<std::size_t> order(detections.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& da = detections[a];
    const auto& db = detections[b];
    if (da.confidence != db.confidence) return da.confidence > db.confidence;
    return area(da.box) > area(db.box);
  });

  std::vector<Detection> kept;
  for (const auto i : order) {
    const auto& cand = detections[i];
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
      if (grouping == NmsGrouping::per_label && k.label != cand.label) return false;
      return iou(k.box, cand.box) >= iou_threshold;
    });
    if (!suppressed) kept.push_back(cand);
  }
  return kept;
}

namespace {

bool confidence_ok(double c) { return std::isfinite(c) && c >= 0.0 && c <= 1.0; }

// Shared front half of both strategies: detect, sanitise, threshold, NMS, and
// map into the scene frame.
std::vector<Detection> detect_and_filter(const SceneInput& scene, DetectorStage& detector,
                                         const PipelineConfig& cfg, bool keep_labels,
                                         std::vector<std::string>& warnings) {
  const ImageSize input_size = resize_target(scene.size, cfg.resize_policy);
  DetectRequest req{scene.scene_id, scene.image_ref, scene.size, input_size, scene.pixels.get()};

  std::vector<Detection> raw;
  try {
    raw = detector.detect(req);
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(scene.scene_id, fmt::format("detector {}: {}", detector.identity(), e.what()));
  }

  std::vector<Detection> candidates;
  candidates.reserve(raw.size());
  for (auto& d : raw) {
    if (!confidence_ok(d.confidence)) {
      warnings.push_back(fmt::format("{}: dropped detection with confidence {}", scene.scene_id,
                                     d.confidence));
      continue;
    }
    if (keep_labels && !d.label) {
      warnings.push_back(fmt::format("{}: dropped unlabelled detection from end-to-end detector",
                                     scene.scene_id));
      continue;
    }
    if (!keep_labels) d.label.reset();
    if (d.confidence >= cfg.confidence_threshold) candidates.push_back(std::move(d));
  }

  auto kept = nms(candidates, cfg.nms_iou_threshold,
                  keep_labels ? NmsGrouping::per_label : NmsGrouping::global);

  std::vector<Detection> out;
  out.reserve(kept.size());
  for (auto& d : kept) {
    const auto in_frame = clip(d.box, input_size);
    if (!in_frame) continue;
    const auto in_scene = clip(rescale(*in_frame, input_size, scene.size), scene.size);
    if (!in_scene) continue;
    d.box = *in_scene;
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace

SceneRun run_end_to_end(const SceneInput& scene, DetectorStage& detector, const PipelineConfig& cfg) {
  if (!detector.emits_labels()) {
    throw InvariantError(fmt::format("end-to-end pipeline needs a labelling detector, {} is class-agnostic",
                                     detector.identity()));
  }
  SceneRun run;
  run.detections = detect_and_filter(scene, detector, cfg, true, run.warnings);
  return run;
}

SceneRun run_two_stage(const SceneInput& scene, DetectorStage& detector, DiagnoserStage& diagnoser,
                       const PipelineConfig& cfg) {
  SceneRun run;
  auto boxes = detect_and_filter(scene, detector, cfg, false, run.warnings);
  run.detections.reserve(boxes.size());
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    auto& d = boxes[i];
    std::optional<Raster> crop;
    if (scene.pixels) crop = resample_region(*scene.pixels, d.box, cfg.crop_size);
    try {
      const Diagnosis dx = diagnoser.diagnose(
          DiagnoseRequest{scene.scene_id, d.box, crop ? &*crop : nullptr});
      if (!confidence_ok(dx.confidence)) {
        throw ProtocolError(fmt::format("confidence {} outside [0, 1]", dx.confidence));
      }
      d.label = dx.label;
      d.confidence = dx.confidence;
      run.detections.push_back(std::move(d));
    } catch (const std::exception& e) {
      run.warnings.push_back(fmt::format("{}: diagnosis of box {} failed, dropped: {}",
                                         scene.scene_id, i, e.what()));
    }
  }
  return run;
}

std::string_view to_string(Strategy s) noexcept {
  return s == Strategy::end_to_end ? "end_to_end" : "two_stage";
}

std::optional<Strategy> parse_strategy(std::string_view text) noexcept {
  if (text == "end_to_end") return Strategy::end_to_end;
  if (text == "two_stage") return Strategy::two_stage;
  return std::nullopt;
}

PredictionRun run_batch(const DatasetManifest& manifest, Strategy strategy, DetectorStage& detector,
                        DiagnoserStage* diagnoser, const PipelineConfig& cfg,
                        const PixelLoader& load_pixels, unsigned workers) {
  cfg.validate();
  if (strategy == Strategy::two_stage && diagnoser == nullptr) {
    throw InvariantError("two-stage pipeline needs a diagnoser");
  }
  if (strategy == Strategy::end_to_end && !detector.emits_labels()) {
    throw InvariantError(fmt::format("end-to-end pipeline needs a labelling detector, {} is class-agnostic",
                                     detector.identity()));
  }

  const std::size_t n = manifest.scenes.size();
  struct Slot {
    std::optional<SceneRun> run;
    std::optional<std::string> error;
  };
  std::vector<Slot> slots(n);

  const auto work = [&](std::size_t i) {
    const Scene& scene = manifest.scenes[i];
    try {
      std::shared_ptr<const Raster> pixels;
      if (load_pixels) pixels = load_pixels(scene);
      const auto input = SceneInput::from_scene(scene, std::move(pixels));
      slots[i].run = strategy == Strategy::end_to_end
                         ? run_end_to_end(input, detector, cfg)
                         : run_two_stage(input, detector, *diagnoser, cfg);
    } catch (const std::exception& e) {
      slots[i].error = e.what();
    }
  };

  workers = std::max(1u, workers);
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) work(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) work(i);
      });
    }
  }

  PredictionRun out;
  out.metadata.strategy = strategy;
  out.metadata.config = cfg;
  out.metadata.detector = detector.identity();
  if (strategy == Strategy::two_stage) out.metadata.diagnoser = diagnoser->identity();
  for (std::size_t i = 0; i < n; ++i) {
    const Scene& scene = manifest.scenes[i];
    if (slots[i].error) {
      out.failures.push_back({scene.scene_id, *slots[i].error});
      continue;
    }
    auto& run = *slots[i].run;
    out.scenes.push_back({scene.scene_id, scene.size, std::move(run.detections)});
    for (auto& w : run.warnings) out.warnings.push_back(std::move(w));
  }
  return out;
}

}  // namespace leafdiag
