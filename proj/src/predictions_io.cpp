#include <fmt/format.h>

#include "json_codec.hpp"
#include "leafdiag/error.hpp"
#include "leafdiag/pipeline.hpp"

namespace leafdiag {

using detail::json;
using detail::Reader;

std::string predictions_to_json(const PredictionRun& run) {
  const auto& m = run.metadata;
  json provenance = json::array();
  for (const auto& p : m.provenance) provenance.push_back(detail::provenance_to_json(p));
  json meta{{"strategy", to_string(m.strategy)},
            {"config",
             {{"confidence_threshold", m.config.confidence_threshold},
              {"nms_iou_threshold", m.config.nms_iou_threshold},
              {"resize_policy", to_string(m.config.resize_policy)},
              {"crop_width", m.config.crop_size.width()},
              {"crop_height", m.config.crop_size.height()}}},
            {"detector", m.detector},
            {"diagnoser", m.diagnoser},
            {"seed", m.seed},
            {"provenance", std::move(provenance)}};

  json scenes = json::array();
  for (const auto& s : run.scenes) {
    json dets = json::array();
    for (const auto& d : s.detections) {
      json dj = detail::box_fields(d.box);
      dj["label"] = d.label ? json(to_string(*d.label)) : json(nullptr);
      dj["confidence"] = d.confidence;
      dets.push_back(std::move(dj));
    }
    scenes.push_back(json{{"scene_id", s.scene_id},
                          {"width", s.size.width()},
                          {"height", s.size.height()},
                          {"detections", std::move(dets)}});
  }
  json failures = json::array();
  for (const auto& f : run.failures) failures.push_back({{"scene_id", f.scene_id}, {"message", f.message}});

  const json doc{{"format_version", 1},
                 {"metadata", std::move(meta)},
                 {"scenes", std::move(scenes)},
                 {"failures", std::move(failures)},
                 {"warnings", run.warnings}};
  return detail::canonical_dump(doc);
}

PredictionRun parse_predictions(std::string_view text, std::string_view source) {
  const json doc = detail::parse_json(text, source);
  const Reader rd(source);
  if (!doc.is_object()) rd.fail("$", "expected an object");
  if (rd.integer(doc, "$", "format_version") != 1) rd.fail("$.format_version", "unsupported version");

  PredictionRun run;
  const auto& mj = rd.field(doc, "$", "metadata");
  const auto strategy = parse_strategy(rd.string(mj, "$.metadata", "strategy"));
  if (!strategy) rd.fail("$.metadata.strategy", "unknown strategy");
  run.metadata.strategy = *strategy;
  const auto& cj = rd.field(mj, "$.metadata", "config");
  auto& cfg = run.metadata.config;
  cfg.confidence_threshold = rd.number(cj, "$.metadata.config", "confidence_threshold");
  cfg.nms_iou_threshold = rd.number(cj, "$.metadata.config", "nms_iou_threshold");
  const auto policy = parse_resize_policy(rd.string(cj, "$.metadata.config", "resize_policy"));
  if (!policy) rd.fail("$.metadata.config.resize_policy", "unknown policy");
  cfg.resize_policy = *policy;
  const auto cw = rd.integer(cj, "$.metadata.config", "crop_width");
  const auto ch = rd.integer(cj, "$.metadata.config", "crop_height");
  if (cw < 1 || ch < 1) rd.fail("$.metadata.config", "crop size must be positive");
  cfg.crop_size = ImageSize(int(cw), int(ch));
  try {
    cfg.validate();
  } catch (const InvariantError& e) {
    rd.fail("$.metadata.config", e.what());
  }
  run.metadata.detector = rd.string(mj, "$.metadata", "detector");
  run.metadata.diagnoser = rd.string(mj, "$.metadata", "diagnoser");
  const auto& seed = rd.field(mj, "$.metadata", "seed");
  if (!seed.is_number_unsigned() && !seed.is_number_integer()) rd.fail("$.metadata.seed", "expected an integer");
  run.metadata.seed = seed.get<std::uint64_t>();
  if (const auto* prov = rd.optional_field(mj, "provenance")) {
    if (!prov->is_array()) rd.fail("$.metadata.provenance", "expected an array");
    for (std::size_t i = 0; i < prov->size(); ++i) {
      run.metadata.provenance.push_back(
          detail::parse_provenance((*prov)[i], rd, fmt::format("$.metadata.provenance[{}]", i)));
    }
  }

  const auto& scenes = rd.array(doc, "$", "scenes");
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    const auto& sj = scenes[s];
    const std::string sp = fmt::format("$.scenes[{}]", s);
    const auto w = rd.integer(sj, sp, "width");
    const auto h = rd.integer(sj, sp, "height");
    if (w < 1 || h < 1) rd.fail(sp, "image size must be positive");
    ScenePredictions sc{rd.string(sj, sp, "scene_id"), ImageSize(int(w), int(h)), {}};
    const auto& dets = rd.array(sj, sp, "detections");
    for (std::size_t i = 0; i < dets.size(); ++i) {
      const auto& dj = dets[i];
      const std::string dp = fmt::format("{}.detections[{}]", sp, i);
      Detection d{detail::parse_box_fields(dj, rd, dp), std::nullopt, rd.number(dj, dp, "confidence")};
      if (!(d.confidence >= 0.0 && d.confidence <= 1.0)) rd.fail(dp, "confidence outside [0, 1]");
      const auto& label = rd.field(dj, dp, "label");
      if (!label.is_null()) {
        if (!label.is_string()) rd.fail(dp, "label must be a string or null");
        d.label = parse_label(label.get<std::string>());
        if (!d.label) rd.fail(dp, fmt::format("unknown label '{}'", label.get<std::string>()));
      }
      sc.detections.push_back(std::move(d));
    }
    run.scenes.push_back(std::move(sc));
  }
  if (const auto* failures = rd.optional_field(doc, "failures")) {
    for (std::size_t i = 0; i < failures->size(); ++i) {
      const std::string fp = fmt::format("$.failures[{}]", i);
      run.failures.push_back({rd.string((*failures)[i], fp, "scene_id"),
                              rd.string((*failures)[i], fp, "message")});
    }
  }
  if (const auto* warnings = rd.optional_field(doc, "warnings")) {
    for (const auto& w : *warnings) {
      if (!w.is_string()) rd.fail("$.warnings", "expected strings");
      run.warnings.push_back(w.get<std::string>());
    }
  }
  return run;
}

}  // namespace leafdiag
