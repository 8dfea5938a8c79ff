#include "leafdiag/dataset.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <set>
#include <thread>
#include <unordered_set>

#include <fmt/format.h>

#include "leafdiag/error.hpp"
#include "leafdiag/rng.hpp"

namespace leafdiag {

std::string_view to_string(LeafLabel label) noexcept {
  return label == LeafLabel::healthy ? "healthy" : "diseased";
}

std::optional<LeafLabel> parse_label(std::string_view text) noexcept {
  if (text == "healthy") return LeafLabel::healthy;
  if (text == "diseased") return LeafLabel::diseased;
  return std::nullopt;
}

ClassCounts count_classes(const Scene& scene) noexcept {
  ClassCounts c;
  for (const auto& leaf : scene.leaves) c.add(leaf.label);
  return c;
}

ClassCounts DatasetManifest::class_counts() const noexcept {
  ClassCounts c;
  for (const auto& s : scenes) c += count_classes(s);
  return c;
}

const Scene* DatasetManifest::find_scene(std::string_view scene_id) const noexcept {
  const auto it = std::find_if(scenes.begin(), scenes.end(),
                               [&](const Scene& s) { return s.scene_id == scene_id; });
  return it == scenes.end() ? nullptr : &*it;
}

void validate_scene(const Scene& scene) {
  if (scene.scene_id.empty()) throw InvariantError("scene with empty scene_id");
  std::unordered_set<std::string_view> ids;
  for (const auto& leaf : scene.leaves) {
    if (leaf.leaf_id.empty()) {
      throw InvariantError(fmt::format("scene '{}': leaf with empty leaf_id", scene.scene_id));
    }
    if (!ids.insert(leaf.leaf_id).second) {
      throw InvariantError(
          fmt::format("scene '{}': duplicate leaf_id '{}'", scene.scene_id, leaf.leaf_id));
    }
    if (!clip(leaf.box, scene.size)) {
      throw InvariantError(fmt::format("scene '{}': leaf '{}' lies outside the {}x{} image",
                                       scene.scene_id, leaf.leaf_id, scene.size.width(),
                                       scene.size.height()));
    }
  }
}

void validate_manifest(const DatasetManifest& manifest) {
  std::unordered_set<std::string_view> ids;
  for (const auto& scene : manifest.scenes) {
    validate_scene(scene);
    if (!ids.insert(scene.scene_id).second) {
      throw InvariantError(fmt::format("duplicate scene_id '{}'", scene.scene_id));
    }
  }
}

// --- Splitting ------------------------------------------------------------

std::size_t train_scene_count(std::size_t n_scenes, double train_fraction) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw InvariantError(fmt::format("train fraction must be in (0, 1), got {}", train_fraction));
  }
  if (n_scenes < 2) throw InvariantError("splitting needs at least 2 scenes");
  const auto n = static_cast<std::size_t>(std::floor(train_fraction * double(n_scenes) + 0.5));
  return std::clamp<std::size_t>(n, 1, n_scenes - 1);
}

std::pair<DatasetManifest, DatasetManifest> split_dataset(const DatasetManifest& manifest,
                                                          double train_fraction,
                                                          std::uint64_t seed) {
  const std::size_t n_train = train_scene_count(manifest.scenes.size(), train_fraction);

  std::vector<const Scene*> order;
  order.reserve(manifest.scenes.size());
  for (const auto& s : manifest.scenes) order.push_back(&s);
  std::sort(order.begin(), order.end(),
            [](const Scene* a, const Scene* b) { return a->scene_id < b->scene_id; });
  rng::Stream stream(rng::derive_seed(seed, {"split"}));
  stream.shuffle(order);

  const auto by_id = [](const Scene* a, const Scene* b) { return a->scene_id < b->scene_id; };
  std::sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train), by_id);
  std::sort(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end(), by_id);

  DatasetManifest train{manifest.name + "-train", {}};
  DatasetManifest test{manifest.name + "-test", {}};
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < n_train ? train : test).scenes.push_back(*order[i]);
  }
  return {std::move(train), std::move(test)};
}

// --- Resizing -------------------------------------------------------------

std::string_view to_string(ResizePolicy policy) noexcept {
  switch (policy) {
    case ResizePolicy::native: return "native";
    case ResizePolicy::fixed_512: return "fixed_512";
    case ResizePolicy::aspect_keyed: return "aspect_keyed";
  }
  return "native";
}

std::optional<ResizePolicy> parse_resize_policy(std::string_view text) noexcept {
  if (text == "native") return ResizePolicy::native;
  if (text == "fixed_512") return ResizePolicy::fixed_512;
  if (text == "aspect_keyed") return ResizePolicy::aspect_keyed;
  return std::nullopt;
}

ImageSize resize_target(const ImageSize& size, ResizePolicy policy) {
  switch (policy) {
    case ResizePolicy::native: return size;
    case ResizePolicy::fixed_512: return ImageSize(512, 512);
    case ResizePolicy::aspect_keyed: break;
  }
  const bool portrait = size.height() > size.width();
  const double ratio = double(std::min(size.width(), size.height())) /
                       double(std::max(size.width(), size.height()));
  int long_side = 0;
  if (std::abs(ratio - 2.0 / 3.0) <= kAspectTolerance) {
    long_side = 900;
  } else if (std::abs(ratio - 3.0 / 4.0) <= kAspectTolerance) {
    long_side = 800;
  } else {
    throw InvariantError(fmt::format("aspect ratio of {}x{} is neither 2:3 nor 3:4", size.width(),
                                     size.height()));
  }
  return portrait ? ImageSize(600, long_side) : ImageSize(long_side, 600);
}

Scene resize_scene(const Scene& scene, ResizePolicy policy) {
  const ImageSize target = resize_target(scene.size, policy);
  Scene out = scene;
  out.size = target;
  for (auto& leaf : out.leaves) leaf.box = rescale(leaf.box, scene.size, target);
  return out;
}

// --- Crops ----------------------------------------------------------------

std::string_view to_string(CropProvenance p) noexcept {
  return p == CropProvenance::cropped_from_wide_angle ? "cropped_from_wide_angle"
                                                      : "external_single_leaf";
}

std::string_view to_string(CropStatus s) noexcept { return s == CropStatus::ok ? "ok" : "failed"; }

ClassCounts CropSet::class_counts() const noexcept {
  ClassCounts c;
  for (const auto& r : records) {
    if (r.status == CropStatus::ok) c.add(r.label);
  }
  return c;
}

namespace {

// Crops one scene; on any failure every record of the scene is marked failed.
std::optional<std::string> crop_scene(const Scene& scene, const ImageResolver& resolve,
                                      const CropSink& sink, ImageSize crop_size,
                                      std::span<CropRecord> records) {
  if (scene.leaves.empty()) return std::nullopt;
  try {
    const Raster image = resolve(scene);
    if (image.size() != scene.size) {
      throw Error(fmt::format("image is {}x{} but the manifest says {}x{}", image.width(),
                              image.height(), scene.size.width(), scene.size.height()));
    }
    for (std::size_t i = 0; i < scene.leaves.size(); ++i) {
      const auto region = clip(scene.leaves[i].box, scene.size);
      // validate_scene guarantees a non-empty clip for loaded manifests
      if (!region) throw Error(fmt::format("leaf '{}' is outside the image", scene.leaves[i].leaf_id));
      records[i].pixels_ref = sink(records[i], resample_region(image, *region, crop_size));
    }
    return std::nullopt;
  } catch (const std::exception& e) {
    for (auto& r : records) {
      r.status = CropStatus::failed;
      r.pixels_ref.clear();
    }
    return fmt::format("{}: {}", scene.scene_id, e.what());
  }
}

}  // namespace

CropExtraction extract_crops(const DatasetManifest& manifest, const ImageResolver& resolve,
                             const CropSink& sink, ImageSize crop_size, unsigned workers) {
  CropExtraction out;
  std::vector<std::size_t> first(manifest.scenes.size() + 1, 0);
  for (std::size_t s = 0; s < manifest.scenes.size(); ++s) {
    const auto& scene = manifest.scenes[s];
    first[s + 1] = first[s] + scene.leaves.size();
    for (const auto& leaf : scene.leaves) {
      out.crops.records.push_back(CropRecord{scene.scene_id + "/" + leaf.leaf_id, scene.scene_id,
                                             leaf.leaf_id, leaf.label, "",
                                             CropProvenance::cropped_from_wide_angle,
                                             CropStatus::ok});
    }
  }

  std::vector<std::optional<std::string>> failures(manifest.scenes.size());
  const auto work = [&](std::size_t s) {
    std::span<CropRecord> slice(out.crops.records.data() + first[s], first[s + 1] - first[s]);
    failures[s] = crop_scene(manifest.scenes[s], resolve, sink, crop_size, slice);
  };

  workers = std::max(1u, workers);
  if (workers == 1) {
    for (std::size_t s = 0; s < manifest.scenes.size(); ++s) work(s);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t s = next++; s < manifest.scenes.size(); s = next++) work(s);
      });
    }
  }

  for (auto& f : failures) {
    if (f) out.failures.push_back(std::move(*f));
  }
  return out;
}

CropSet namespace_crops(CropSet set, std::string_view set_name) {
  for (auto& r : set.records) r.crop_id = fmt::format("{}:{}", set_name, r.crop_id);
  return set;
}

CropSet merge_crop_sets(const CropSet& a, const CropSet& b) {
  CropSet out;
  out.records.reserve(a.records.size() + b.records.size());
  std::unordered_set<std::string_view> seen;
  for (const auto* set : {&a, &b}) {
    for (const auto& r : set->records) {
      if (!seen.insert(r.crop_id).second) {
        throw InvariantError(fmt::format("duplicate crop_id '{}'", r.crop_id));
      }
      out.records.push_back(r);
    }
  }
  return out;
}

// --- Augmentation ---------------------------------------------------------

std::optional<AugmentOp> parse_augment_op(std::string_view text) noexcept {
  if (text == "flip_h") return AugmentOp::flip_h;
  if (text == "flip_v") return AugmentOp::flip_v;
  if (text == "rot90") return AugmentOp::rot90;
  if (text == "rot180") return AugmentOp::rot180;
  if (text == "rot270") return AugmentOp::rot270;
  return std::nullopt;
}

Raster augment_crop(const Raster& crop, AugmentOp op) {
  const int w = crop.width();
  const int h = crop.height();
  if (op != AugmentOp::flip_h && op != AugmentOp::flip_v && w != h) {
    throw InvariantError(fmt::format("rotation needs a square crop, got {}x{}", w, h));
  }
  Raster out(crop.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      // (x, y) is the destination pixel; pick its source.
      int sx = x, sy = y;
      switch (op) {
        case AugmentOp::flip_h: sx = w - 1 - x; break;
        case AugmentOp::flip_v: sy = h - 1 - y; break;
        case AugmentOp::rot90: sx = w - 1 - y; sy = x; break;
        case AugmentOp::rot180: sx = w - 1 - x; sy = h - 1 - y; break;
        case AugmentOp::rot270: sx = y; sy = h - 1 - x; break;
      }
      out.set(x, y, crop.at(sx, sy));
    }
  }
  return out;
}

// --- Provenance -----------------------------------------------------------

void TrainingProvenance::validate() const {
  const auto positive = [](const char* name, auto v) {
    if (v && !(*v > 0)) throw InvariantError(fmt::format("training provenance: {} must be positive", name));
  };
  positive("learning_rate", learning_rate);
  positive("momentum", momentum);
  positive("weight_decay", weight_decay);
  positive("batch_size", batch_size);
  positive("iterations", iterations);
  positive("epochs", epochs);
}

}  // namespace leafdiag
