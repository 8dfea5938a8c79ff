#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "leafdiag/geometry.hpp"
#include "leafdiag/raster.hpp"

namespace leafdiag {

enum class LeafLabel { healthy, diseased };

std::string_view to_string(LeafLabel label) noexcept;
std::optional<LeafLabel> parse_label(std::string_view text) noexcept;
inline LeafLabel opposite(LeafLabel label) noexcept {
  return label == LeafLabel::healthy ? LeafLabel::diseased : LeafLabel::healthy;
}

struct AnnotatedLeaf {
  std::string leaf_id;
  BoundingBox box;
  LeafLabel label;
};

/// One annotated wide-angle image.
struct Scene {
  std::string scene_id;
  std::string image_ref;
  ImageSize size;
  std::vector<AnnotatedLeaf> leaves;
  std::string source_tag;
};

struct ClassCounts {
  std::size_t healthy = 0;
  std::size_t diseased = 0;

  std::size_t total() const noexcept { return healthy + diseased; }
  void add(LeafLabel label, std::size_t n = 1) noexcept {
    (label == LeafLabel::healthy ? healthy : diseased) += n;
  }
  ClassCounts& operator+=(const ClassCounts& o) noexcept {
    healthy += o.healthy;
    diseased += o.diseased;
    return *this;
  }
  friend bool operator==(const ClassCounts&, const ClassCounts&) = default;
};

ClassCounts count_classes(const Scene& scene) noexcept;

/// A named list of scenes. Class counts are always recomputed from the leaves.
struct DatasetManifest {
  std::string name;
  std::vector<Scene> scenes;

  ClassCounts class_counts() const noexcept;
  std::size_t leaf_count() const noexcept { return class_counts().total(); }
  const Scene* find_scene(std::string_view scene_id) const noexcept;
};

/// Throws InvariantError naming the offending scene/leaf: duplicate ids, or a
/// leaf box with nothing left after clipping to the scene.
void validate_scene(const Scene& scene);
void validate_manifest(const DatasetManifest& manifest);

// --- Manifest files -------------------------------------------------------

struct LoadedManifest {
  DatasetManifest manifest;
  /// Non-fatal findings, e.g. stored class counts disagreeing with the leaves.
  std::vector<std::string> warnings;
};

/// Parses manifest JSON. `source` names the input in error messages.
LoadedManifest parse_manifest(std::string_view text, std::string_view source = "<manifest>");
LoadedManifest load_manifest(const std::string& path);

/// Canonical serialisation: sorted keys, shortest round-trip floats, trailing newline.
std::string manifest_to_json(const DatasetManifest& manifest);
void save_manifest(const DatasetManifest& manifest, const std::string& path);

// --- Splitting and resizing -----------------------------------------------

/// Scenes assigned to the training part: round-half-up of fraction * n,
/// kept within [1, n - 1] so both parts are non-empty.
std::size_t train_scene_count(std::size_t n_scenes, double train_fraction);

/// Scene-level random split. Membership depends only on the set of scene ids,
/// the fraction and the seed; both parts list scenes sorted by scene_id.
std::pair<DatasetManifest, DatasetManifest> split_dataset(const DatasetManifest& manifest,
                                                          double train_fraction,
                                                          std::uint64_t seed);

enum class ResizePolicy {
  native,        ///< keep the scene resolution
  fixed_512,     ///< always 512x512
  aspect_keyed,  ///< 2:3 -> 600x900, 3:4 -> 600x800, orientation preserved
};

std::string_view to_string(ResizePolicy policy) noexcept;
std::optional<ResizePolicy> parse_resize_policy(std::string_view text) noexcept;

/// Tolerance on the short/long side ratio when classifying 2:3 vs 3:4.
inline constexpr double kAspectTolerance = 0.02;

/// Target resolution for `size` under `policy`. Throws InvariantError when an
/// aspect-keyed scene is neither 2:3 nor 3:4 within tolerance.
ImageSize resize_target(const ImageSize& size, ResizePolicy policy);

/// Scene with its size replaced by the policy target and every box rescaled.
Scene resize_scene(const Scene& scene, ResizePolicy policy);

// --- Single-leaf crops ----------------------------------------------------

enum class CropProvenance { cropped_from_wide_angle, external_single_leaf };
enum class CropStatus { ok, failed };

std::string_view to_string(CropProvenance p) noexcept;
std::string_view to_string(CropStatus s) noexcept;

struct CropRecord {
  std::string crop_id;
  std::string parent_scene_id;  ///< empty for external single-leaf images
  std::string parent_leaf_id;   ///< empty for external single-leaf images
  LeafLabel label;
  std::string pixels_ref;
  CropProvenance provenance = CropProvenance::cropped_from_wide_angle;
  CropStatus status = CropStatus::ok;
};

struct CropSet {
  std::vector<CropRecord> records;

  /// Counts records with status ok.
  ClassCounts class_counts() const noexcept;
};

inline const ImageSize kDefaultCropSize{224, 224};

/// Loads the pixels of a scene; throws when the image cannot be resolved.
using ImageResolver = std::function<Raster(const Scene&)>;
/// Stores one extracted crop and returns its locator. Called concurrently when
/// workers > 1.
using CropSink = std::function<std::string(const CropRecord&, const Raster&)>;

struct CropExtraction {
  CropSet crops;
  /// One entry per scene whose image could not be used: "scene_id: reason".
  std::vector<std::string> failures;
};

/// Crops every gold box (clipped to the image) and stretches it to `crop_size`.
/// Records come out in manifest order; scenes whose image fails to resolve
/// yield records with status failed and an entry in `failures`.
CropExtraction extract_crops(const DatasetManifest& manifest, const ImageResolver& resolve,
                             const CropSink& sink, ImageSize crop_size = kDefaultCropSize,
                             unsigned workers = 1);

/// Prefixes every crop_id with "set_name:".
CropSet namespace_crops(CropSet set, std::string_view set_name);

/// Concatenation; throws InvariantError naming the first duplicate crop_id.
CropSet merge_crop_sets(const CropSet& a, const CropSet& b);

std::string crop_set_to_json(const CropSet& set);
CropSet parse_crop_set(std::string_view text, std::string_view source = "<crop set>");

// --- Augmentation ---------------------------------------------------------

enum class AugmentOp { flip_h, flip_v, rot90, rot180, rot270 };

std::optional<AugmentOp> parse_augment_op(std::string_view text) noexcept;

/// Pixel permutation. Rotations are counter-clockwise and need a square crop.
Raster augment_crop(const Raster& crop, AugmentOp op);

// --- Training provenance (metadata only) ----------------------------------

struct TrainingProvenance {
  std::string model;
  std::string optimizer;
  std::optional<double> learning_rate;
  std::optional<double> momentum;
  std::optional<double> weight_decay;
  std::optional<std::int64_t> batch_size;
  std::optional<std::int64_t> iterations;
  std::optional<std::int64_t> epochs;

  /// Throws InvariantError when a present numeric field is not positive.
  void validate() const;

  friend bool operator==(const TrainingProvenance&, const TrainingProvenance&) = default;
};

}  // namespace leafdiag
