#include <initializer_list>

#include "../json_codec.hpp"
#include "../json_util.hpp"
#include "leafdiag/cli.hpp"
#include "leafdiag/error.hpp"
#include "leafdiag/rng.hpp"

namespace leafdiag::cli {

using detail::json;
using detail::Reader;

namespace {

// Typos in config files should fail loudly rather than silently use a default.
void check_keys(const json& obj, const Reader& r, std::string_view path,
                std::initializer_list<std::string_view> allowed) {
  if (!obj.is_object()) r.fail(path, "expected an object");
  for (const auto& [key, _] : obj.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || a == key;
    if (!ok) r.fail(path, fmt::format("unknown field '{}'", key));
  }
}

double opt_number(const json& obj, const Reader& r, std::string_view path, const char* key, double fallback) {
  return r.optional_field(obj, key) ? r.number(obj, path, key) : fallback;
}

SyntheticDetectorParams parse_detector_params(const json& node, const Reader& r, std::string_view path) {
  check_keys(node, r, path,
             {"miss_rate", "spurious_rate", "jitter_sigma", "hit_confidence_lo", "spurious_confidence_lo",
              "spurious_confidence_hi", "labels"});
  SyntheticDetectorParams p;
  p.miss_rate = opt_number(node, r, path, "miss_rate", p.miss_rate);
  p.spurious_rate = opt_number(node, r, path, "spurious_rate", p.spurious_rate);
  p.jitter_sigma = opt_number(node, r, path, "jitter_sigma", p.jitter_sigma);
  p.hit_confidence_lo = opt_number(node, r, path, "hit_confidence_lo", p.hit_confidence_lo);
  p.spurious_confidence_lo = opt_number(node, r, path, "spurious_confidence_lo", p.spurious_confidence_lo);
  p.spurious_confidence_hi = opt_number(node, r, path, "spurious_confidence_hi", p.spurious_confidence_hi);
  try {
    p.validate();
  } catch (const InvariantError& e) {
    r.fail(path, e.what());
  }
  return p;
}

SyntheticDiagnoserParams parse_flip_params(const json& node, const Reader& r, std::string_view path) {
  check_keys(node, r, path, {"flip_healthy_to_diseased", "flip_diseased_to_healthy", "spurious_label"});
  SyntheticDiagnoserParams p;
  p.flip_healthy_to_diseased = opt_number(node, r, path, "flip_healthy_to_diseased", 0.0);
  p.flip_diseased_to_healthy = opt_number(node, r, path, "flip_diseased_to_healthy", 0.0);
  if (r.optional_field(node, "spurious_label")) {
    const auto text = r.string(node, path, "spurious_label");
    const auto label = parse_label(text);
    if (!label) r.fail(path, fmt::format("unknown label '{}'", text));
    p.spurious_label = *label;
  }
  try {
    p.validate();
  } catch (const InvariantError& e) {
    r.fail(path, e.what());
  }
  return p;
}

EndpointSpec parse_endpoint(const json& node, const Reader& r, std::string_view path, StageRole role) {
  check_keys(node, r, path, {"command", "handshake_timeout_ms", "request_timeout_ms"});
  EndpointSpec spec;
  spec.role = role;
  const auto& cmd = r.array(node, path, "command");
  for (std::size_t i = 0; i < cmd.size(); ++i) {
    if (!cmd[i].is_string()) r.fail(fmt::format("{}.command[{}]", path, i), "expected a string");
    spec.command.push_back(cmd[i].get<std::string>());
  }
  if (spec.command.empty()) r.fail(path, "command must not be empty");
  const auto ms = [&](const char* key, std::chrono::milliseconds fallback) {
    if (!r.optional_field(node, key)) return fallback;
    const auto v = r.integer(node, path, key);
    if (v <= 0) r.fail(fmt::format("{}.{}", path, key), "must be positive");
    return std::chrono::milliseconds(v);
  };
  spec.handshake_timeout = ms("handshake_timeout_ms", spec.handshake_timeout);
  spec.request_timeout = ms("request_timeout_ms", spec.request_timeout);
  return spec;
}

// A stage block holds exactly one of "synthetic" or "endpoint".
std::pair<const json*, bool> stage_block(const json& node, const Reader& r, std::string_view path) {
  check_keys(node, r, path, {"synthetic", "endpoint"});
  const auto* syn = r.optional_field(node, "synthetic");
  const auto* ep = r.optional_field(node, "endpoint");
  if ((syn == nullptr) == (ep == nullptr)) r.fail(path, "give exactly one of 'synthetic' or 'endpoint'");
  return {syn ? syn : ep, syn != nullptr};
}

PipelineConfig parse_pipeline(const json& node, const Reader& r, std::string_view path) {
  check_keys(node, r, path,
             {"confidence_threshold", "nms_iou_threshold", "resize_policy", "crop_width", "crop_height"});
  PipelineConfig cfg;
  cfg.confidence_threshold = opt_number(node, r, path, "confidence_threshold", cfg.confidence_threshold);
  cfg.nms_iou_threshold = opt_number(node, r, path, "nms_iou_threshold", cfg.nms_iou_threshold);
  if (r.optional_field(node, "resize_policy")) {
    const auto text = r.string(node, path, "resize_policy");
    const auto policy = parse_resize_policy(text);
    if (!policy) r.fail(path, fmt::format("unknown resize_policy '{}'", text));
    cfg.resize_policy = *policy;
  }
  const auto w = r.optional_field(node, "crop_width") ? r.integer(node, path, "crop_width")
                                                       : cfg.crop_size.width();
  const auto h = r.optional_field(node, "crop_height") ? r.integer(node, path, "crop_height")
                                                        : cfg.crop_size.height();
  try {
    cfg.crop_size = ImageSize(static_cast<int>(w), static_cast<int>(h));
    cfg.validate();
  } catch (const InvariantError& e) {
    r.fail(path, e.what());
  }
  return cfg;
}

MatchConfig parse_match(const json& node, const Reader& r, std::string_view path) {
  check_keys(node, r, path, {"iou_threshold"});
  MatchConfig cfg;
  cfg.iou_threshold = opt_number(node, r, path, "iou_threshold", cfg.iou_threshold);
  try {
    cfg.validate();
  } catch (const InvariantError& e) {
    r.fail(path, e.what());
  }
  return cfg;
}

std::uint64_t parse_seed(const json& root, const Reader& r) {
  const auto* s = r.optional_field(root, "seed");
  if (!s) return 0;
  if (!s->is_number_unsigned()) r.fail("$.seed", "expected a non-negative integer");
  return s->get<std::uint64_t>();
}

}  // namespace

void RunConfig::validate() const {
  const bool synthetic_detector = std::holds_alternative<SyntheticDetectorParams>(detector.source);
  if (strategy == Strategy::end_to_end) {
    if (diagnoser) throw InvariantError("an end-to-end run takes no diagnoser");
    if (synthetic_detector && !detector.labels) {
      throw InvariantError("an end-to-end run needs a labelling detector (add detector.synthetic.labels)");
    }
  } else {
    if (!diagnoser) throw InvariantError("a two-stage run needs a diagnoser");
    if (synthetic_detector && detector.labels) {
      throw InvariantError("a two-stage run uses a class-agnostic detector (drop detector.synthetic.labels)");
    }
  }
  pipeline.validate();
  match.validate();
}

bool RunConfig::needs_pixels() const {
  if (load_pixels) return *load_pixels;
  return diagnoser && std::holds_alternative<EndpointSpec>(diagnoser->source);
}

RunConfig parse_run_config(std::string_view text, std::string_view source) {
  const Reader r(source);
  const json root = detail::parse_json(text, source);
  check_keys(root, r, "$",
             {"manifest", "strategy", "detector", "diagnoser", "pipeline", "match", "output", "seed",
              "provenance", "load_pixels"});
  RunConfig cfg;
  if (r.optional_field(root, "manifest")) cfg.manifest = r.string(root, "$", "manifest");
  if (r.optional_field(root, "strategy")) {
    const auto text_s = r.string(root, "$", "strategy");
    const auto s = parse_strategy(text_s);
    if (!s) r.fail("$.strategy", fmt::format("unknown strategy '{}'", text_s));
    cfg.strategy = *s;
  }

  const auto [det, det_synthetic] = stage_block(r.field(root, "$", "detector"), r, "$.detector");
  if (det_synthetic) {
    cfg.detector.source = parse_detector_params(*det, r, "$.detector.synthetic");
    if (const auto* labels = r.optional_field(*det, "labels")) {
      cfg.detector.labels = parse_flip_params(*labels, r, "$.detector.synthetic.labels");
    }
  } else {
    cfg.detector.source = parse_endpoint(*det, r, "$.detector.endpoint", StageRole::detector);
  }

  if (const auto* dn = r.optional_field(root, "diagnoser")) {
    const auto [block, synthetic] = stage_block(*dn, r, "$.diagnoser");
    cfg.diagnoser = DiagnoserSpec{synthetic
                                      ? decltype(DiagnoserSpec::source)(
                                            parse_flip_params(*block, r, "$.diagnoser.synthetic"))
                                      : decltype(DiagnoserSpec::source)(parse_endpoint(
                                            *block, r, "$.diagnoser.endpoint", StageRole::diagnoser))};
  }
  if (const auto* p = r.optional_field(root, "pipeline")) cfg.pipeline = parse_pipeline(*p, r, "$.pipeline");
  if (const auto* m = r.optional_field(root, "match")) cfg.match = parse_match(*m, r, "$.match");
  if (r.optional_field(root, "output")) cfg.output = r.string(root, "$", "output");
  cfg.seed = parse_seed(root, r);
  if (const auto* prov = r.optional_field(root, "provenance")) {
    if (!prov->is_array()) r.fail("$.provenance", "expected an array");
    for (std::size_t i = 0; i < prov->size(); ++i) {
      cfg.provenance.push_back(detail::parse_provenance((*prov)[i], r, fmt::format("$.provenance[{}]", i)));
    }
  }
  if (const auto* lp = r.optional_field(root, "load_pixels")) {
    if (!lp->is_boolean()) r.fail("$.load_pixels", "expected a boolean");
    cfg.load_pixels = lp->get<bool>();
  }
  return cfg;
}

void assign_seeds(RunConfig& cfg) {
  if (auto* p = std::get_if<SyntheticDetectorParams>(&cfg.detector.source)) {
    p->seed = rng::derive_seed(cfg.seed, {"detector"});
  }
  if (cfg.detector.labels) cfg.detector.labels->seed = rng::derive_seed(cfg.seed, {"end-to-end-labels"});
  if (cfg.diagnoser) {
    if (auto* p = std::get_if<SyntheticDiagnoserParams>(&cfg.diagnoser->source)) {
      p->seed = rng::derive_seed(cfg.seed, {"diagnoser"});
    }
  }
}

ExperimentConfig parse_experiment_config(std::string_view text, std::string_view source) {
  const Reader r(source);
  const json root = detail::parse_json(text, source);
  check_keys(root, r, "$",
             {"manifest", "in_distribution", "shifted", "pipeline", "match", "output_dir", "seed", "workers"});
  ExperimentConfig cfg;
  if (r.optional_field(root, "manifest")) cfg.manifest = r.string(root, "$", "manifest");
  const auto regime = [&](const char* key) {
    const std::string path = fmt::format("$.{}", key);
    const auto& node = r.field(root, "$", key);
    check_keys(node, r, path, {"detector", "end_to_end_labels", "diagnoser"});
    Regime g;
    g.detector = parse_detector_params(r.field(node, path, "detector"), r, path + ".detector");
    if (r.optional_field(r.field(node, path, "detector"), "labels")) {
      r.fail(path + ".detector", "labels belong in end_to_end_labels");
    }
    g.end_to_end_labels =
        parse_flip_params(r.field(node, path, "end_to_end_labels"), r, path + ".end_to_end_labels");
    g.diagnoser = parse_flip_params(r.field(node, path, "diagnoser"), r, path + ".diagnoser");
    return g;
  };
  cfg.experiment.in_distribution = regime("in_distribution");
  cfg.experiment.shifted = regime("shifted");
  if (const auto* p = r.optional_field(root, "pipeline")) {
    cfg.experiment.pipeline = parse_pipeline(*p, r, "$.pipeline");
  }
  if (const auto* m = r.optional_field(root, "match")) cfg.experiment.match = parse_match(*m, r, "$.match");
  if (r.optional_field(root, "output_dir")) cfg.output_dir = r.string(root, "$", "output_dir");
  if (r.optional_field(root, "workers")) {
    const auto w = r.integer(root, "$", "workers");
    if (w < 1) r.fail("$.workers", "must be at least 1");
    cfg.experiment.workers = static_cast<unsigned>(w);
  }
  cfg.seed = parse_seed(root, r);
  return cfg;
}

void assign_seeds(ExperimentConfig& cfg) {
  for (Regime* g : {&cfg.experiment.in_distribution, &cfg.experiment.shifted}) {
    g->detector.seed = rng::derive_seed(cfg.seed, {"detector"});
    g->end_to_end_labels.seed = rng::derive_seed(cfg.seed, {"end-to-end-labels"});
    g->diagnoser.seed = rng::derive_seed(cfg.seed, {"diagnoser"});
  }
}

}  // namespace leafdiag::cli
