#include "leafdiag/synthetic.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "leafdiag/error.hpp"
#include "leafdiag/rng.hpp"

namespace leafdiag {

namespace {

void check_probability(const char* name, double v) {
  if (!(v >= 0.0 && v <= 1.0)) throw InvariantError(fmt::format("{} must be in [0, 1], got {}", name, v));
}

}  // namespace

void SyntheticDetectorParams::validate() const {
  check_probability("miss_rate", miss_rate);
  if (!(spurious_rate >= 0.0 && spurious_rate <= 500.0)) {
    throw InvariantError(fmt::format("spurious_rate must be in [0, 500], got {}", spurious_rate));
  }
  if (!(jitter_sigma >= 0.0) || !std::isfinite(jitter_sigma)) {
    throw InvariantError(fmt::format("jitter_sigma must be >= 0, got {}", jitter_sigma));
  }
  check_probability("hit_confidence_lo", hit_confidence_lo);
  check_probability("spurious_confidence_lo", spurious_confidence_lo);
  check_probability("spurious_confidence_hi", spurious_confidence_hi);
  if (spurious_confidence_lo > spurious_confidence_hi) {
    throw InvariantError("spurious_confidence_lo exceeds spurious_confidence_hi");
  }
}

void SyntheticDiagnoserParams::validate() const {
  check_probability("flip_healthy_to_diseased", flip_healthy_to_diseased);
  check_probability("flip_diseased_to_healthy", flip_diseased_to_healthy);
}

SpuriousBoxModel SpuriousBoxModel::from_manifest(const DatasetManifest& manifest) {
  std::vector<double> areas;
  for (const auto& s : manifest.scenes) {
    for (const auto& l : s.leaves) areas.push_back(area(l.box));
  }
  if (areas.empty()) return {};
  std::sort(areas.begin(), areas.end());
  const auto percentile = [&](double q) {
    const double pos = q * double(areas.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, areas.size() - 1);
    return areas[lo] + (areas[hi] - areas[lo]) * (pos - double(lo));
  };
  return {percentile(0.05), percentile(0.95)};
}

Diagnosis synth_diagnose(LeafLabel true_label, const SyntheticDiagnoserParams& params,
                         std::string_view scene_id, std::string_view leaf_id) {
  rng::Stream s(rng::derive_seed(params.seed, {"diagnose", scene_id, leaf_id}));
  const double rate = true_label == LeafLabel::healthy ? params.flip_healthy_to_diseased
                                                       : params.flip_diseased_to_healthy;
  const bool flip = s.bernoulli(rate);
  return {flip ? opposite(true_label) : true_label, s.uniform(0.5, 1.0)};
}

std::vector<Detection> synth_detect(const Scene& scene, const SyntheticDetectorParams& params,
                                    const SpuriousBoxModel& spurious,
                                    const SyntheticDiagnoserParams* labels) {
  std::vector<Detection> out;
  for (const auto& leaf : scene.leaves) {
    rng::Stream s(rng::derive_seed(params.seed, {"detect", scene.scene_id, leaf.leaf_id}));
    if (s.bernoulli(params.miss_rate)) continue;
    const double conf = s.uniform(params.hit_confidence_lo, 1.0);
    BoundingBox box = leaf.box;
    if (params.jitter_sigma > 0.0) {
      const double x0 = box.x_min() + s.normal(0.0, params.jitter_sigma);
      const double y0 = box.y_min() + s.normal(0.0, params.jitter_sigma);
      const double x1 = box.x_max() + s.normal(0.0, params.jitter_sigma);
      const double y1 = box.y_max() + s.normal(0.0, params.jitter_sigma);
      const auto jittered = BoundingBox::try_make(std::min(x0, x1), std::min(y0, y1),
                                                  std::max(x0, x1), std::max(y0, y1));
      const auto clipped = jittered ? clip(*jittered, scene.size) : std::nullopt;
      if (!clipped) continue;  // collapsed under noise: behaves like a miss
      box = *clipped;
    }
    std::optional<LeafLabel> label;
    if (labels) label = synth_diagnose(leaf.label, *labels, scene.scene_id, leaf.leaf_id).label;
    out.push_back({box, label, conf});
  }

  rng::Stream s(rng::derive_seed(params.seed, {"spurious", scene.scene_id}));
  const auto n_false = s.poisson(params.spurious_rate);
  const double w_img = scene.size.width();
  const double h_img = scene.size.height();
  const double log_lo = std::log(std::max(spurious.area_lo, 1e-6));
  const double log_hi = std::log(std::max(spurious.area_hi, spurious.area_lo));
  for (std::uint64_t i = 0; i < n_false; ++i) {
    const double a = std::exp(s.uniform(log_lo, log_hi));
    const double aspect = std::exp(s.uniform(std::log(0.5), std::log(2.0)));
    const double w = std::min(std::sqrt(a * aspect), w_img);
    const double h = std::min(std::sqrt(a / aspect), h_img);
    const double x = s.uniform(0.0, w_img - w);
    const double y = s.uniform(0.0, h_img - h);
    const double conf = s.uniform(params.spurious_confidence_lo, params.spurious_confidence_hi);
    const auto box = BoundingBox::try_make(x, y, x + w, y + h);
    if (!box) continue;
    std::optional<LeafLabel> label;
    if (labels) label = labels->spurious_label;
    out.push_back({*box, label, conf});
  }
  return out;
}

SceneIndex::SceneIndex(std::shared_ptr<const DatasetManifest> manifest) : manifest_(std::move(manifest)) {
  for (const auto& s : manifest_->scenes) scenes_.emplace(s.scene_id, &s);
}

const Scene& SceneIndex::at(std::string_view scene_id) const {
  const auto it = scenes_.find(scene_id);
  if (it == scenes_.end()) throw Error(fmt::format("unknown scene '{}'", scene_id));
  return *it->second;
}

SyntheticDetector::SyntheticDetector(std::shared_ptr<const SceneIndex> index,
                                     SyntheticDetectorParams params,
                                     std::optional<SyntheticDiagnoserParams> labels)
    : index_(std::move(index)),
      params_(params),
      labels_(labels),
      spurious_(SpuriousBoxModel::from_manifest(index_->manifest())) {
  params_.validate();
  if (labels_) labels_->validate();
}

std::string SyntheticDetector::identity() const {
  auto id = fmt::format("synthetic-detector(miss={}, spurious={}, jitter={}, seed={}", params_.miss_rate,
                        params_.spurious_rate, params_.jitter_sigma, params_.seed);
  if (labels_) {
    id += fmt::format(", labels: h->d={}, d->h={}", labels_->flip_healthy_to_diseased,
                      labels_->flip_diseased_to_healthy);
  }
  return id + ")";
}

std::vector<Detection> SyntheticDetector::detect(const DetectRequest& request) {
  const Scene& scene = index_->at(request.scene_id);
  auto dets = synth_detect(scene, params_, spurious_, labels_ ? &*labels_ : nullptr);
  if (request.input_size != scene.size) {
    for (auto& d : dets) d.box = rescale(d.box, scene.size, request.input_size);
  }
  return dets;
}

SyntheticDiagnoser::SyntheticDiagnoser(std::shared_ptr<const SceneIndex> index,
                                       SyntheticDiagnoserParams params, double correspondence_iou)
    : index_(std::move(index)), params_(params), correspondence_iou_(correspondence_iou) {
  params_.validate();
}

std::string SyntheticDiagnoser::identity() const {
  return fmt::format("synthetic-diagnoser(h->d={}, d->h={}, seed={})", params_.flip_healthy_to_diseased,
                     params_.flip_diseased_to_healthy, params_.seed);
}

Diagnosis SyntheticDiagnoser::diagnose(const DiagnoseRequest& request) {
  const Scene& scene = index_->at(request.scene_id);
  const AnnotatedLeaf* best = nullptr;
  double best_iou = 0.0;
  for (const auto& leaf : scene.leaves) {
    const double v = iou(leaf.box, request.box);
    if (v < correspondence_iou_) continue;
    if (!best || v > best_iou || (v == best_iou && leaf.leaf_id < best->leaf_id)) {
      best = &leaf;
      best_iou = v;
    }
  }
  if (!best) return {params_.spurious_label, 1.0};
  return synth_diagnose(best->label, params_, scene.scene_id, best->leaf_id);
}

ShiftExperimentResult run_shift_experiment(std::shared_ptr<const DatasetManifest> manifest,
                                           const ShiftExperimentConfig& cfg) {
  const auto index = std::make_shared<const SceneIndex>(manifest);
  const auto run_regime = [&](const Regime& regime, std::string_view tag) {
    SyntheticDetector e2e(index, regime.detector, regime.end_to_end_labels);
    SyntheticDetector leaf_detector(index, regime.detector);
    SyntheticDiagnoser diagnoser(index, regime.diagnoser);
    const auto e2e_run = run_batch(*manifest, Strategy::end_to_end, e2e, nullptr, cfg.pipeline, {}, cfg.workers);
    const auto two_run = run_batch(*manifest, Strategy::two_stage, leaf_detector, &diagnoser, cfg.pipeline,
                                   {}, cfg.workers);
    return std::pair{evaluate(e2e_run, *manifest, cfg.match, fmt::format("end_to_end/{}", tag)),
                     evaluate(two_run, *manifest, cfg.match, fmt::format("two_stage/{}", tag))};
  };

  ShiftExperimentResult r;
  std::tie(r.end_to_end_in, r.two_stage_in) = run_regime(cfg.in_distribution, "in_distribution");
  std::tie(r.end_to_end_shifted, r.two_stage_shifted) = run_regime(cfg.shifted, "shifted");
  r.end_to_end_delta = report_delta(r.end_to_end_in, r.end_to_end_shifted);
  r.two_stage_delta = report_delta(r.two_stage_in, r.two_stage_shifted);
  r.end_to_end_delta.system = "end_to_end";
  r.two_stage_delta.system = "two_stage";
  return r;
}

DatasetManifest make_synthetic_manifest(const SyntheticManifestSpec& spec) {
  if (spec.scenes == 0) throw InvariantError("synthetic manifest needs at least one scene");
  if (spec.sizes.empty()) throw InvariantError("synthetic manifest needs at least one image size");

  std::vector<LeafLabel> labels;
  labels.reserve(spec.healthy + spec.diseased);
  labels.insert(labels.end(), spec.healthy, LeafLabel::healthy);
  labels.insert(labels.end(), spec.diseased, LeafLabel::diseased);
  rng::Stream label_stream(rng::derive_seed(spec.seed, {"manifest-labels"}));
  label_stream.shuffle(labels);

  const std::size_t total = labels.size();
  const auto id_width = fmt::formatted_size("{}", spec.scenes - 1);
  DatasetManifest m{spec.name, {}};
  m.scenes.reserve(spec.scenes);
  std::size_t next_label = 0;
  for (std::size_t i = 0; i < spec.scenes; ++i) {
    const std::size_t k = total / spec.scenes + (i < total % spec.scenes ? 1 : 0);
    const ImageSize size = spec.sizes[i % spec.sizes.size()];
    Scene scene{fmt::format("S{:0{}}", i, id_width), "", size, {}, spec.source_tag};
    scene.image_ref = fmt::format("images/{}.ppm", scene.scene_id);

    rng::Stream s(rng::derive_seed(spec.seed, {"manifest-scene", scene.scene_id}));
    const auto cols = static_cast<std::size_t>(std::ceil(std::sqrt(double(std::max<std::size_t>(k, 1)))));
    const std::size_t rows = (k + cols - 1) / cols;
    const double cell_w = double(size.width()) / double(cols);
    const double cell_h = double(size.height()) / double(std::max<std::size_t>(rows, 1));
    const auto leaf_width = fmt::formatted_size("{}", std::max<std::size_t>(k, 1) - 1);
    for (std::size_t j = 0; j < k; ++j) {
      const double w = cell_w * s.uniform(0.5, 0.9);
      const double h = cell_h * s.uniform(0.5, 0.9);
      const double x = double(j % cols) * cell_w + s.uniform(0.0, cell_w - w);
      const double y = double(j / cols) * cell_h + s.uniform(0.0, cell_h - h);
      scene.leaves.push_back(AnnotatedLeaf{fmt::format("L{:0{}}", j, leaf_width),
                                           BoundingBox(x, y, x + w, y + h), labels[next_label++]});
    }
    m.scenes.push_back(std::move(scene));
  }
  return m;
}

}  // namespace leafdiag
