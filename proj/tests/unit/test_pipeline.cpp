#include <algorithm>
#include <mutex>
#include <tuple>

#include "doctest.h"
#include "generators.hpp"
#include "leafdiag/error.hpp"
#include "leafdiag/pipeline.hpp"
#include "leafdiag/synthetic.hpp"

using namespace leafdiag;

namespace {

// Returns a fixed list of detections (in whatever frame it is asked for).
class ScriptedDetector final : public DetectorStage {
 public:
  ScriptedDetector(std::vector<Detection> out, bool labels) : out_(std::move(out)), labels_(labels) {}
  bool emits_labels() const override { return labels_; }
  std::string identity() const override { return "scripted"; }
  std::vector<Detection> detect(const DetectRequest& req) override {
    last_input = req.input_size;
    if (fail) throw Error("detector exploded");
    return out_;
  }
  std::optional<ImageSize> last_input;
  bool fail = false;

 private:
  std::vector<Detection> out_;
  bool labels_;
};

class ConstantDiagnoser final : public DiagnoserStage {
 public:
  explicit ConstantDiagnoser(LeafLabel label, double confidence = 1.0) : label_(label), confidence_(confidence) {}
  std::string identity() const override { return "constant"; }
  Diagnosis diagnose(const DiagnoseRequest& req) override {
    std::lock_guard lock(mutex);
    requests.push_back(req.box);
    if (req.crop) crops.push_back(*req.crop);
    return {label_, confidence_};
  }
  std::mutex mutex;
  std::vector<BoundingBox> requests;
  std::vector<Raster> crops;

 private:
  LeafLabel label_;
  double confidence_;
};

// Fails on every other box.
class FlakyDiagnoser final : public DiagnoserStage {
 public:
  std::string identity() const override { return "flaky"; }
  Diagnosis diagnose(const DiagnoseRequest&) override {
    if (calls++ % 2 == 1) throw Error("model crashed");
    return {LeafLabel::healthy, 0.75};
  }
  int calls = 0;
};

Scene three_leaf_scene() {
  return Scene{"s1", "img/s1.ppm", ImageSize(300, 200),
               {{"a", BoundingBox(10, 10, 60, 50), LeafLabel::healthy},
                {"b", BoundingBox(100, 20, 170, 90), LeafLabel::diseased},
                {"c", BoundingBox(200, 100, 290, 190), LeafLabel::healthy}},
               ""};
}

std::shared_ptr<const SceneIndex> index_of(std::vector<Scene> scenes) {
  return std::make_shared<const SceneIndex>(
      std::make_shared<const DatasetManifest>(DatasetManifest{"m", std::move(scenes)}));
}

std::vector<BoundingBox> sorted_boxes(const std::vector<Detection>& ds) {
  std::vector<BoundingBox> out;
  for (const auto& d : ds) out.push_back(d.box);
  std::sort(out.begin(), out.end(), [](const BoundingBox& a, const BoundingBox& b) {
    return std::make_tuple(a.x_min(), a.y_min(), a.x_max(), a.y_max()) <
           std::make_tuple(b.x_min(), b.y_min(), b.x_max(), b.y_max());
  });
  return out;
}

bool matches_gold(const std::vector<Detection>& ds, const Scene& scene) {
  if (ds.size() != scene.leaves.size()) return false;
  for (const auto& leaf : scene.leaves) {
    const bool found = std::any_of(ds.begin(), ds.end(), [&](const Detection& d) {
      return d.box == leaf.box && d.label == leaf.label;
    });
    if (!found) return false;
  }
  return true;
}

}  // namespace

TEST_SUITE("pipeline") {
  TEST_CASE("config validation") {
    PipelineConfig cfg;
    CHECK(cfg.confidence_threshold == 0.5);
    CHECK(cfg.nms_iou_threshold == 0.45);
    CHECK(cfg.crop_size == ImageSize(224, 224));
    CHECK_NOTHROW(cfg.validate());
    cfg.confidence_threshold = 1.0;
    CHECK_THROWS_AS(cfg.validate(), InvariantError);
    cfg.confidence_threshold = 0.5;
    cfg.nms_iou_threshold = 0.0;
    CHECK_THROWS_AS(cfg.validate(), InvariantError);
  }

  TEST_CASE("nms worked examples") {
    const BoundingBox box(0, 0, 10, 10);
    const std::vector<Detection> dup{{box, LeafLabel::healthy, 0.8}, {box, LeafLabel::healthy, 0.9}};
    const auto kept = nms(dup, 0.45);
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].confidence == 0.9);

    const std::vector<Detection> apart{{box, LeafLabel::healthy, 0.8},
                                       {BoundingBox(20, 20, 30, 30), LeafLabel::healthy, 0.9}};
    CHECK(nms(apart, 0.45).size() == 2);

    // iou(A,B) = 0.6, iou(A,C) = 0.2, iou(B,C) = 0.6
    const Detection a{BoundingBox(0, 0, 30, 10), std::nullopt, 0.9};
    const Detection b{BoundingBox(0, 0, 50, 10), std::nullopt, 0.8};
    const Detection c{BoundingBox(20, 0, 50, 10), std::nullopt, 0.7};
    REQUIRE(iou(a.box, b.box) == doctest::Approx(0.6));
    REQUIRE(iou(a.box, c.box) == doctest::Approx(0.2));
    REQUIRE(iou(b.box, c.box) == doctest::Approx(0.6));
    const std::vector<Detection> abc{c, a, b};
    const auto out = nms(abc, 0.45, NmsGrouping::global);
    REQUIRE(out.size() == 2);
    CHECK(out[0] == a);
    CHECK(out[1] == c);
  }

  TEST_CASE("nms groups by label unless global") {
    const BoundingBox box(0, 0, 10, 10);
    const std::vector<Detection> ds{{box, LeafLabel::healthy, 0.9}, {box, LeafLabel::diseased, 0.8}};
    CHECK(nms(ds, 0.45, NmsGrouping::per_label).size() == 2);
    CHECK(nms(ds, 0.45, NmsGrouping::global).size() == 1);
  }

  TEST_CASE("nms breaks confidence ties by larger area, then input order") {
    const std::vector<Detection> ds{{BoundingBox(0, 0, 10, 10), std::nullopt, 0.5},
                                    {BoundingBox(0, 0, 11, 11), std::nullopt, 0.5},
                                    {BoundingBox(50, 50, 60, 60), std::nullopt, 0.5},
                                    {BoundingBox(70, 70, 80, 80), std::nullopt, 0.5}};
    const auto out = nms(ds, 0.45, NmsGrouping::global);
    REQUIRE(out.size() == 3);
    CHECK(out[0].box == BoundingBox(0, 0, 11, 11));
    CHECK(out[1].box == BoundingBox(50, 50, 60, 60));
    CHECK(out[2].box == BoundingBox(70, 70, 80, 80));
  }

  TEST_CASE("nms properties on random sets") {
    rng::Stream s(rng::derive_seed(5, {"nms-unit"}));
    for (int i = 0; i < 500; ++i) {
      const auto ds = testing::random_detections(s, s.below(12), 60.0, s.bernoulli(0.5));
      const double t = s.uniform(0.1, 0.9);
      const auto grouping = s.bernoulli(0.5) ? NmsGrouping::global : NmsGrouping::per_label;
      const auto once = nms(ds, t, grouping);
      CHECK(nms(once, t, grouping) == once);
      for (std::size_t k = 1; k < once.size(); ++k) CHECK(once[k - 1].confidence >= once[k].confidence);
      for (const auto& d : once) CHECK(std::find(ds.begin(), ds.end(), d) != ds.end());
    }
  }

  TEST_CASE("end-to-end replay reproduces the gold scene") {
    const auto scene = three_leaf_scene();
    SyntheticDetector det(index_of({scene}), {}, SyntheticDiagnoserParams{});
    const auto run = run_end_to_end(SceneInput::from_scene(scene), det, PipelineConfig{});
    CHECK(matches_gold(run.detections, scene));
    CHECK(run.warnings.empty());
  }

  TEST_CASE("end-to-end drops low confidence and needs labels") {
    const auto scene = three_leaf_scene();
    ScriptedDetector det({{BoundingBox(0, 0, 10, 10), LeafLabel::healthy, 0.3}}, true);
    CHECK(run_end_to_end(SceneInput::from_scene(scene), det, PipelineConfig{}).detections.empty());
    ScriptedDetector agnostic({}, false);
    CHECK_THROWS_AS(run_end_to_end(SceneInput::from_scene(scene), agnostic, PipelineConfig{}), InvariantError);
  }

  TEST_CASE("end-to-end drops unlabelled and out-of-range detections with warnings") {
    const auto scene = three_leaf_scene();
    ScriptedDetector det({{BoundingBox(0, 0, 10, 10), std::nullopt, 0.9},
                          {BoundingBox(20, 0, 30, 10), LeafLabel::healthy, 1.5},
                          {BoundingBox(40, 0, 50, 10), LeafLabel::diseased, 0.6}},
                         true);
    const auto run = run_end_to_end(SceneInput::from_scene(scene), det, PipelineConfig{});
    CHECK(run.detections.size() == 1);
    CHECK(run.warnings.size() == 2);
  }

  TEST_CASE("detector output is mapped back from the resized frame") {
    const Scene scene{"big", "big.ppm", ImageSize(1024, 1024), {}, ""};
    ScriptedDetector det({{BoundingBox(10, 10, 20, 20), LeafLabel::diseased, 0.9},
                          {BoundingBox(500, 500, 600, 600), LeafLabel::healthy, 0.9}},
                         true);
    PipelineConfig cfg;
    cfg.resize_policy = ResizePolicy::fixed_512;
    const auto run = run_end_to_end(SceneInput::from_scene(scene), det, cfg);
    CHECK(det.last_input == ImageSize(512, 512));
    REQUIRE(run.detections.size() == 2);
    CHECK(sorted_boxes(run.detections)[0] == BoundingBox(20, 20, 40, 40));
    // Clipped at 512 in the input frame, so 1024 in the scene.
    CHECK(sorted_boxes(run.detections)[1] == BoundingBox(1000, 1000, 1024, 1024));
  }

  TEST_CASE("resize round trip through the pipeline is the identity") {
    rng::Stream s(8);
    for (const auto size : {ImageSize(4000, 6000), ImageSize(6000, 4000), ImageSize(3000, 4000), ImageSize(4032, 3024)}) {
      Scene scene{"r", "r.ppm", size, {}, ""};
      for (int i = 0; i < 10; ++i) {
        const auto b = testing::random_box(s, std::min(size.width(), size.height()), 20.0);
        scene.leaves.push_back({fmt::format("l{}", i), b, testing::random_label(s)});
      }
      SyntheticDetector det(index_of({scene}), {}, SyntheticDiagnoserParams{});
      PipelineConfig cfg;
      cfg.resize_policy = ResizePolicy::aspect_keyed;
      cfg.nms_iou_threshold = 0.99;
      const auto run = run_end_to_end(SceneInput::from_scene(scene), det, cfg);
      REQUIRE(run.detections.size() == scene.leaves.size());
      for (const auto& leaf : scene.leaves) {
        const bool close = std::any_of(run.detections.begin(), run.detections.end(), [&](const Detection& d) {
          return std::abs(d.box.x_min() - leaf.box.x_min()) < 1e-6 && std::abs(d.box.y_min() - leaf.box.y_min()) < 1e-6 &&
                 std::abs(d.box.x_max() - leaf.box.x_max()) < 1e-6 && std::abs(d.box.y_max() - leaf.box.y_max()) < 1e-6;
        });
        CHECK(close);
      }
    }
  }

  TEST_CASE("detector failures carry the scene id") {
    const auto scene = three_leaf_scene();
    ScriptedDetector det({}, true);
    det.fail = true;
    try {
      run_end_to_end(SceneInput::from_scene(scene), det, PipelineConfig{});
      FAIL("expected a stage error");
    } catch (const StageError& e) {
      CHECK(e.scene_id() == "s1");
      CHECK(std::string(e.what()).find("exploded") != std::string::npos);
    }
  }

  TEST_CASE("two-stage with an oracle diagnoser reproduces the gold scene") {
    const auto scene = three_leaf_scene();
    const auto index = index_of({scene});
    SyntheticDetector det(index, {});
    SyntheticDiagnoser dx(index, {});
    const auto run = run_two_stage(SceneInput::from_scene(scene), det, dx, PipelineConfig{});
    CHECK(matches_gold(run.detections, scene));
  }

  TEST_CASE("two-stage with a constant diagnoser labels every box") {
    Scene scene = three_leaf_scene();
    scene.leaves[2].label = LeafLabel::healthy;
    SyntheticDetector det(index_of({scene}), {});
    ConstantDiagnoser dx(LeafLabel::diseased, 0.8);
    const auto run = run_two_stage(SceneInput::from_scene(scene), det, dx, PipelineConfig{});
    REQUIRE(run.detections.size() == 3);
    for (const auto& d : run.detections) {
      CHECK(d.label == LeafLabel::diseased);
      CHECK(d.confidence == 0.8);
    }
  }

  TEST_CASE("two-stage strips detector labels before diagnosis") {
    const auto scene = three_leaf_scene();
    const BoundingBox box(0, 0, 40, 40);
    // Same box with two labels: per-label NMS would keep both, global keeps one.
    ScriptedDetector det({{box, LeafLabel::healthy, 0.9}, {box, LeafLabel::diseased, 0.8}}, true);
    ConstantDiagnoser dx(LeafLabel::healthy);
    CHECK(run_two_stage(SceneInput::from_scene(scene), det, dx, PipelineConfig{}).detections.size() == 1);
  }

  TEST_CASE("crops come from the original-resolution pixels") {
    const Scene scene{"px", "px.ppm", ImageSize(40, 30), {}, ""};
    auto pixels = std::make_shared<Raster>(scene.size);
    for (int y = 0; y < 30; ++y) {
      for (int x = 0; x < 40; ++x) pixels->set(x, y, {static_cast<std::uint8_t>(x * 6), static_cast<std::uint8_t>(y * 8), 1});
    }
    ScriptedDetector det({{BoundingBox(2, 3, 20, 25), std::nullopt, 0.9}}, false);
    ConstantDiagnoser dx(LeafLabel::healthy);
    PipelineConfig cfg;
    cfg.resize_policy = ResizePolicy::fixed_512;
    cfg.crop_size = ImageSize(16, 16);
    const auto run = run_two_stage(SceneInput::from_scene(scene, pixels), det, dx, cfg);
    REQUIRE(run.detections.size() == 1);
    REQUIRE(dx.crops.size() == 1);
    CHECK(dx.crops[0] == resample_region(*pixels, run.detections[0].box, ImageSize(16, 16)));
    CHECK(dx.requests[0] == run.detections[0].box);
  }

  TEST_CASE("diagnoser failures drop the box and continue") {
    const auto scene = three_leaf_scene();
    SyntheticDetector det(index_of({scene}), {});
    FlakyDiagnoser dx;
    const auto run = run_two_stage(SceneInput::from_scene(scene), det, dx, PipelineConfig{});
    CHECK(run.detections.size() == 2);
    REQUIRE(run.warnings.size() == 1);
    CHECK(run.warnings[0].find("model crashed") != std::string::npos);
  }

  TEST_CASE("two-stage boxes do not depend on the diagnoser") {
    rng::Stream s(rng::derive_seed(3, {"two-stage-unit"}));
    for (int i = 0; i < 50; ++i) {
      const Scene scene{"r", "r.ppm", ImageSize(100, 100), {}, ""};
      ScriptedDetector det(testing::random_detections(s, s.below(15), 100.0, s.bernoulli(0.5)), true);
      ConstantDiagnoser healthy(LeafLabel::healthy, 0.2), diseased(LeafLabel::diseased, 0.99);
      const auto a = run_two_stage(SceneInput::from_scene(scene), det, healthy, PipelineConfig{});
      const auto b = run_two_stage(SceneInput::from_scene(scene), det, diseased, PipelineConfig{});
      CHECK(sorted_boxes(a.detections) == sorted_boxes(b.detections));
      for (const auto& d : a.detections) {
        CHECK(d.box.x_min() >= 0.0);
        CHECK(d.box.y_max() <= 100.0);
      }
    }
  }

  TEST_CASE("batches keep manifest order whatever the worker count") {
    SyntheticManifestSpec spec;
    spec.scenes = 30;
    spec.healthy = 200;
    spec.diseased = 90;
    auto manifest = std::make_shared<const DatasetManifest>(make_synthetic_manifest(spec));
    const auto index = std::make_shared<const SceneIndex>(manifest);
    SyntheticDetector det(index, {0.2, 1.0, 3.0, 0.6, 0.5, 0.9, 77});
    SyntheticDiagnoser dx(index, {0.1, 0.3, LeafLabel::healthy, 78});
    const auto one = run_batch(*manifest, Strategy::two_stage, det, &dx, PipelineConfig{}, {}, 1);
    const auto many = run_batch(*manifest, Strategy::two_stage, det, &dx, PipelineConfig{}, {}, 4);
    CHECK(predictions_to_json(one) == predictions_to_json(many));
    CHECK(one.scenes.size() == 30);
    CHECK(one.scenes[7].scene_id == manifest->scenes[7].scene_id);
  }

  TEST_CASE("batch failures are recorded per scene") {
    const auto scene = three_leaf_scene();
    const DatasetManifest manifest{"m", {scene}};
    ScriptedDetector det({}, true);
    det.fail = true;
    const auto run = run_batch(manifest, Strategy::end_to_end, det, nullptr, PipelineConfig{});
    CHECK(run.scenes.empty());
    REQUIRE(run.failures.size() == 1);
    CHECK(run.failures[0].scene_id == "s1");
    ScriptedDetector agnostic({}, false);
    CHECK_THROWS_AS(run_batch(manifest, Strategy::end_to_end, agnostic, nullptr, PipelineConfig{}), InvariantError);
    CHECK_THROWS_AS(run_batch(manifest, Strategy::two_stage, agnostic, nullptr, PipelineConfig{}), InvariantError);
  }

  TEST_CASE("predictions file round trip") {
    const auto scene = three_leaf_scene();
    const DatasetManifest manifest{"m", {scene, Scene{"s2", "s2.ppm", ImageSize(10, 10), {}, ""}}};
    ScriptedDetector det({{BoundingBox(0.1, 0.2, 30.3, 40.4), std::nullopt, 0.95}}, false);
    ConstantDiagnoser dx(LeafLabel::diseased, 0.625);
    auto run = run_batch(manifest, Strategy::two_stage, det, &dx, PipelineConfig{});
    run.metadata.seed = 12;
    run.metadata.provenance.push_back({"diagnet", "sgd", 1e-3, 0.9, 5e-4, 16, std::nullopt, 30});
    run.failures.push_back({"s3", "gone"});
    run.warnings.push_back("w");
    const auto text = predictions_to_json(run);
    const auto back = parse_predictions(text);
    CHECK(predictions_to_json(back) == text);
    CHECK(back.metadata.strategy == Strategy::two_stage);
    CHECK(back.metadata.provenance == run.metadata.provenance);
    CHECK(back.scenes[0].detections == run.scenes[0].detections);
    CHECK(back.scenes[1].size == ImageSize(10, 10));

    CHECK_THROWS_AS(parse_predictions(R"({"format_version":1})"), ParseError);
  }
}
