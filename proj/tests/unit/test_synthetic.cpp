#include <cmath>

#include "doctest.h"
#include "leafdiag/error.hpp"
#include "leafdiag/synthetic.hpp"

using namespace leafdiag;

namespace {

DatasetManifest big_manifest(std::size_t scenes, std::size_t healthy, std::size_t diseased, std::uint64_t seed = 0) {
  SyntheticManifestSpec spec;
  spec.scenes = scenes;
  spec.healthy = healthy;
  spec.diseased = diseased;
  spec.seed = seed;
  return make_synthetic_manifest(spec);
}

std::size_t replayed_count(const DatasetManifest& m, const SyntheticDetectorParams& p) {
  std::size_t n = 0;
  const auto model = SpuriousBoxModel::from_manifest(m);
  for (const auto& s : m.scenes) n += synth_detect(s, p, model).size();
  return n;
}

}  // namespace

TEST_SUITE("synthetic") {
  TEST_CASE("synthetic manifests have the requested counts") {
    const auto m = big_manifest(7, 40, 23, 5);
    CHECK(m.scenes.size() == 7);
    CHECK(m.class_counts() == ClassCounts{40, 23});
    CHECK_NOTHROW(validate_manifest(m));
    std::size_t lo = 1000, hi = 0;
    for (const auto& s : m.scenes) {
      lo = std::min(lo, s.leaves.size());
      hi = std::max(hi, s.leaves.size());
      CHECK(s.image_ref == "images/" + s.scene_id + ".ppm");
    }
    CHECK(hi - lo <= 1);
    CHECK(manifest_to_json(m) == manifest_to_json(big_manifest(7, 40, 23, 5)));
    // Leaves inside a scene do not overlap.
    for (const auto& s : m.scenes) {
      for (std::size_t i = 0; i < s.leaves.size(); ++i) {
        for (std::size_t j = i + 1; j < s.leaves.size(); ++j) CHECK(iou(s.leaves[i].box, s.leaves[j].box) == 0.0);
      }
    }
  }

  TEST_CASE("no corruption replays gold") {
    const auto m = big_manifest(5, 30, 20);
    const auto model = SpuriousBoxModel::from_manifest(m);
    const SyntheticDiagnoserParams labels;
    for (const auto& s : m.scenes) {
      const auto dets = synth_detect(s, {}, model, &labels);
      REQUIRE(dets.size() == s.leaves.size());
      for (std::size_t i = 0; i < dets.size(); ++i) {
        CHECK(dets[i].box == s.leaves[i].box);
        CHECK(dets[i].label == s.leaves[i].label);
        CHECK(dets[i].confidence >= 0.6);
      }
      for (const auto& d : synth_detect(s, {}, model)) CHECK_FALSE(d.label.has_value());
    }
  }

  TEST_CASE("full miss rate leaves only false boxes") {
    const auto m = big_manifest(20, 100, 50);
    SyntheticDetectorParams p;
    p.miss_rate = 1.0;
    CHECK(replayed_count(m, p) == 0);
    p.spurious_rate = 3.0;
    const auto model = SpuriousBoxModel::from_manifest(m);
    const SyntheticDiagnoserParams labels{0.0, 0.0, LeafLabel::diseased, 0};
    std::size_t n = 0;
    for (const auto& s : m.scenes) {
      for (const auto& d : synth_detect(s, p, model, &labels)) {
        ++n;
        CHECK(d.label == LeafLabel::diseased);
        CHECK(d.confidence >= 0.5);
        CHECK(d.confidence <= 0.9);
        CHECK(d.box.x_max() <= s.size.width());
        CHECK(d.box.y_max() <= s.size.height());
        const double a = area(d.box);
        CHECK(a <= model.area_hi * 1.000001);
      }
    }
    CHECK(n > 30);
    CHECK(n < 90);
  }

  TEST_CASE("miss rate is honoured in expectation") {
    const auto m = big_manifest(100, 6000, 4000, 1);
    SyntheticDetectorParams p;
    p.miss_rate = 0.3;
    p.seed = 99;
    const double kept = double(replayed_count(m, p));
    const double sd = std::sqrt(10000 * 0.3 * 0.7);
    CHECK(std::abs(kept - 7000.0) <= 3.0 * sd);
  }

  TEST_CASE("miss decisions are nested across rates") {
    const auto m = big_manifest(10, 60, 40);
    const auto model = SpuriousBoxModel::from_manifest(m);
    SyntheticDetectorParams lo, hi;
    lo.miss_rate = 0.2;
    hi.miss_rate = 0.5;
    for (const auto& s : m.scenes) {
      const auto a = synth_detect(s, lo, model);
      const auto b = synth_detect(s, hi, model);
      for (const auto& d : b) CHECK(std::find(a.begin(), a.end(), d) != a.end());
    }
    CHECK(replayed_count(m, hi) <= replayed_count(m, lo));
  }

  TEST_CASE("label flips") {
    SyntheticDiagnoserParams never, always;
    always.flip_healthy_to_diseased = always.flip_diseased_to_healthy = 1.0;
    for (int i = 0; i < 50; ++i) {
      const auto id = std::to_string(i);
      CHECK(synth_diagnose(LeafLabel::healthy, never, "s", id).label == LeafLabel::healthy);
      CHECK(synth_diagnose(LeafLabel::diseased, never, "s", id).label == LeafLabel::diseased);
      CHECK(synth_diagnose(LeafLabel::healthy, always, "s", id).label == LeafLabel::diseased);
      CHECK(synth_diagnose(LeafLabel::diseased, always, "s", id).label == LeafLabel::healthy);
    }
    SyntheticDiagnoserParams shifted;
    shifted.flip_diseased_to_healthy = 0.74;
    int kept = 0;
    for (int i = 0; i < 10000; ++i) {
      kept += synth_diagnose(LeafLabel::diseased, shifted, "s", std::to_string(i)).label == LeafLabel::diseased;
    }
    CHECK(std::abs(kept / 10000.0 - 0.26) < 3.0 * std::sqrt(0.26 * 0.74 / 10000.0));
    CHECK(synth_diagnose(LeafLabel::healthy, shifted, "a", "b").label ==
          synth_diagnose(LeafLabel::healthy, shifted, "a", "b").label);
  }

  TEST_CASE("parameters are validated") {
    SyntheticDetectorParams p;
    p.miss_rate = 1.5;
    CHECK_THROWS_AS(p.validate(), InvariantError);
    p.miss_rate = 0.1;
    p.spurious_confidence_lo = 0.95;
    CHECK_THROWS_AS(p.validate(), InvariantError);
    SyntheticDiagnoserParams d;
    d.flip_diseased_to_healthy = -0.1;
    CHECK_THROWS_AS(d.validate(), InvariantError);
  }

  TEST_CASE("diagnoser ties boxes to the overlapping leaf") {
    const auto m = std::make_shared<const DatasetManifest>(big_manifest(2, 6, 4));
    const auto index = std::make_shared<const SceneIndex>(m);
    SyntheticDiagnoser dx(index, {});
    const auto& s = m->scenes[0];
    for (const auto& leaf : s.leaves) CHECK(dx.diagnose({s.scene_id, leaf.box, nullptr}).label == leaf.label);
    const auto far = dx.diagnose({s.scene_id, BoundingBox(0, 0, 1, 1), nullptr});
    CHECK(far.label == LeafLabel::healthy);
    CHECK(far.confidence == 1.0);
    CHECK_THROWS_AS(dx.diagnose({"nope", BoundingBox(0, 0, 1, 1), nullptr}), Error);
  }

  TEST_CASE("shift experiment") {
    const auto m = std::make_shared<const DatasetManifest>(big_manifest(40, 300, 200, 3));
    ShiftExperimentConfig cfg;
    cfg.in_distribution.detector = {0.05, 0.2, 2.0, 0.6, 0.5, 0.9, 11};
    cfg.in_distribution.end_to_end_labels = {0.05, 0.08, LeafLabel::healthy, 12};
    cfg.in_distribution.diagnoser = {0.08, 0.12, LeafLabel::healthy, 13};
    cfg.shifted = cfg.in_distribution;

    SUBCASE("identical regimes give zero deltas") {
      const auto r = run_shift_experiment(m, cfg);
      for (const auto& [cell, v] : r.end_to_end_delta.cells) CHECK(v == 0.0);
      for (const auto& [cell, v] : r.two_stage_delta.cells) CHECK(v == 0.0);
      CHECK(r.reports().size() == 4);
      CHECK(r.end_to_end_in.average_f1 > 0.8);
    }
    SUBCASE("deterministic and worker independent") {
      cfg.shifted.detector.miss_rate = 0.5;
      cfg.shifted.end_to_end_labels.flip_diseased_to_healthy = 0.9;
      const auto a = run_shift_experiment(m, cfg);
      cfg.workers = 3;
      const auto b = run_shift_experiment(m, cfg);
      CHECK(a.reports() == b.reports());
      CHECK(a.end_to_end_shifted.diseased.recall < a.end_to_end_in.diseased.recall);
      CHECK(a.two_stage_shifted.detection.recall < a.two_stage_in.detection.recall);
    }
    SUBCASE("worse label noise never helps") {
      auto worse = cfg;
      worse.shifted.diagnoser.flip_diseased_to_healthy = 0.6;
      const auto a = run_shift_experiment(m, cfg);
      const auto b = run_shift_experiment(m, worse);
      CHECK(b.two_stage_shifted.diseased.recall <= a.two_stage_shifted.diseased.recall);
      CHECK(b.two_stage_shifted.detection == a.two_stage_shifted.detection);
    }
  }
}
