#include "leafdiag/cli.hpp"

#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "leafdiag/error.hpp"
#include "leafdiag/raster.hpp"

namespace leafdiag::cli {

namespace fs = std::filesystem;

namespace {

struct Globals {
  std::string root;
  std::optional<std::uint64_t> seed;
  unsigned workers = 1;

  fs::path resolve(const std::string& path) const {
    const fs::path p(path);
    if (p.is_absolute() || root.empty()) return p;
    return fs::path(root) / p;
  }
};

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(fmt::format("cannot open {}", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// `check` reparses the text so a malformed document never reaches disk.
template <typename Check>
void write_checked(const fs::path& path, const std::string& text, Check check) {
  check(text);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  out.close();
  if (!out) throw Error(fmt::format("cannot write {}", path.string()));
}

void write_plain(const fs::path& path, const std::string& text) {
  write_checked(path, text, [](const std::string&) {});
}

DatasetManifest load(const Globals& g, const std::string& path, std::ostream& err) {
  auto loaded = load_manifest(g.resolve(path).string());
  for (const auto& w : loaded.warnings) err << "warning: " << w << "\n";
  return std::move(loaded.manifest);
}

// Keeps file names portable whatever the ids contain.
std::string safe_name(std::string_view id) {
  std::string out;
  for (char c : id) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' ||
                    c == '_' || c == '.';
    out += ok ? c : '_';
  }
  if (out.empty() || out == "." || out == "..") out = "_" + out;
  return out;
}

const auto kOpenFraction = CLI::Validator(
    [](std::string& text) -> std::string {
      try {
        std::size_t used = 0;
        const double v = std::stod(text, &used);
        if (used == text.size() && v > 0.0 && v < 1.0) return {};
      } catch (const std::exception&) {
      }
      return fmt::format("fraction must lie strictly between 0 and 1, got {}", text);
    },
    "FRACTION in (0,1)");

// --- split ----------------------------------------------------------------

struct SplitArgs {
  std::string manifest, train_out, test_out;
  double fraction = 0.9;
};

int cmd_split(const Globals& g, const SplitArgs& a, std::ostream& out, std::ostream& err) {
  const auto manifest = load(g, a.manifest, err);
  const auto seed = g.seed.value_or(0);
  const auto [train, test] = split_dataset(manifest, a.fraction, seed);
  save_manifest(train, g.resolve(a.train_out).string());
  save_manifest(test, g.resolve(a.test_out).string());
  const auto tc = train.class_counts(), vc = test.class_counts();
  out << fmt::format("train: {} scenes, {} healthy, {} diseased -> {}\n", train.scenes.size(), tc.healthy,
                     tc.diseased, a.train_out);
  out << fmt::format("test:  {} scenes, {} healthy, {} diseased -> {}\n", test.scenes.size(), vc.healthy,
                     vc.diseased, a.test_out);
  return 0;
}

// --- generate -------------------------------------------------------------

struct GenerateArgs {
  std::string out;
  SyntheticManifestSpec spec;
};

int cmd_generate(const Globals& g, GenerateArgs a, std::ostream& out) {
  a.spec.seed = g.seed.value_or(0);
  const auto manifest = make_synthetic_manifest(a.spec);
  save_manifest(manifest, g.resolve(a.out).string());
  const auto c = manifest.class_counts();
  out << fmt::format("{}: {} scenes, {} healthy, {} diseased -> {}\n", manifest.name, manifest.scenes.size(),
                     c.healthy, c.diseased, a.out);
  return 0;
}

// --- crop -----------------------------------------------------------------

struct CropArgs {
  std::string manifest, out_dir;
  int width = kDefaultCropSize.width();
  int height = kDefaultCropSize.height();
};

int cmd_crop(const Globals& g, const CropArgs& a, std::ostream& out, std::ostream& err) {
  const auto manifest = load(g, a.manifest, err);
  const fs::path out_dir = g.resolve(a.out_dir);
  const ImageResolver resolve = [&](const Scene& s) { return read_ppm(g.resolve(s.image_ref)); };
  const CropSink sink = [&](const CropRecord& rec, const Raster& pixels) {
    const fs::path rel = fs::path("crops") / safe_name(rec.parent_scene_id) / (safe_name(rec.parent_leaf_id) + ".ppm");
    std::error_code ec;
    fs::create_directories((out_dir / rel).parent_path(), ec);
    write_ppm(pixels, out_dir / rel);
    return rel.generic_string();
  };
  const auto result = extract_crops(manifest, resolve, sink, ImageSize(a.width, a.height), g.workers);
  write_checked(out_dir / "crops.json", crop_set_to_json(result.crops),
                [](const std::string& text) { parse_crop_set(text); });
  for (const auto& f : result.failures) err << "error: " << f << "\n";
  const auto c = result.crops.class_counts();
  out << fmt::format("{} crops ({} healthy, {} diseased), {} failed scenes -> {}\n",
                     c.total(), c.healthy, c.diseased, result.failures.size(),
                     (out_dir / "crops.json").string());
  return result.failures.empty() ? 0 : 1;
}

// --- run ------------------------------------------------------------------

struct RunArgs {
  std::string config;
  std::optional<std::string> manifest, strategy, output, resize_policy;
  std::optional<double> confidence_threshold, nms_iou_threshold;
};

int cmd_run(const Globals& g, const RunArgs& a, std::ostream& out, std::ostream& err) {
  auto cfg = parse_run_config(read_text(g.resolve(a.config)), a.config);
  if (a.manifest) cfg.manifest = *a.manifest;
  if (a.output) cfg.output = *a.output;
  if (a.strategy) {
    const auto s = parse_strategy(*a.strategy);
    if (!s) throw InvariantError(fmt::format("unknown strategy '{}'", *a.strategy));
    cfg.strategy = *s;
  }
  if (a.resize_policy) {
    const auto p = parse_resize_policy(*a.resize_policy);
    if (!p) throw InvariantError(fmt::format("unknown resize policy '{}'", *a.resize_policy));
    cfg.pipeline.resize_policy = *p;
  }
  if (a.confidence_threshold) cfg.pipeline.confidence_threshold = *a.confidence_threshold;
  if (a.nms_iou_threshold) cfg.pipeline.nms_iou_threshold = *a.nms_iou_threshold;
  if (g.seed) cfg.seed = *g.seed;
  if (cfg.manifest.empty()) throw InvariantError("no manifest given (config 'manifest' or --manifest)");
  assign_seeds(cfg);
  cfg.validate();

  const auto manifest = std::make_shared<const DatasetManifest>(load(g, cfg.manifest, err));
  const auto index = std::make_shared<const SceneIndex>(manifest);
  std::vector<std::shared_ptr<ModelEndpoint>> endpoints;

  std::unique_ptr<DetectorStage> detector;
  if (const auto* p = std::get_if<SyntheticDetectorParams>(&cfg.detector.source)) {
    detector = std::make_unique<SyntheticDetector>(index, *p, cfg.detector.labels);
  } else {
    auto ep = std::make_shared<ModelEndpoint>(std::get<EndpointSpec>(cfg.detector.source));
    endpoints.push_back(ep);
    detector = std::make_unique<EndpointDetector>(
        ep, [&g](const std::string& ref) { return g.resolve(ref).string(); });
  }

  std::unique_ptr<DiagnoserStage> diagnoser;
  if (cfg.diagnoser) {
    if (const auto* p = std::get_if<SyntheticDiagnoserParams>(&cfg.diagnoser->source)) {
      diagnoser = std::make_unique<SyntheticDiagnoser>(index, *p);
    } else {
      auto ep = std::make_shared<ModelEndpoint>(std::get<EndpointSpec>(cfg.diagnoser->source));
      endpoints.push_back(ep);
      diagnoser = std::make_unique<EndpointDiagnoser>(ep);
    }
  }

  PixelLoader loader;
  if (cfg.needs_pixels()) {
    loader = [&g](const Scene& s) { return std::make_shared<const Raster>(read_ppm(g.resolve(s.image_ref))); };
  }

  auto run = run_batch(*manifest, cfg.strategy, *detector, diagnoser.get(), cfg.pipeline, loader, g.workers);
  run.metadata.seed = cfg.seed;
  run.metadata.provenance = cfg.provenance;
  for (const auto& ep : endpoints) {
    for (auto& w : ep->warnings()) run.warnings.push_back(std::move(w));
  }

  write_checked(g.resolve(cfg.output), predictions_to_json(run),
                [](const std::string& text) { parse_predictions(text); });
  for (const auto& w : run.warnings) err << "warning: " << w << "\n";
  for (const auto& f : run.failures) err << "error: scene " << f.scene_id << ": " << f.message << "\n";
  std::size_t boxes = 0;
  for (const auto& s : run.scenes) boxes += s.detections.size();
  out << fmt::format("{}: {} scenes, {} detections, {} failed -> {}\n", to_string(cfg.strategy),
                     run.scenes.size(), boxes, run.failures.size(), cfg.output);
  return run.failures.empty() ? 0 : 1;
}

// --- eval -----------------------------------------------------------------

struct EvalArgs {
  std::vector<std::string> predictions;
  std::vector<std::string> systems;
  std::string manifest;
  std::optional<std::string> out;
  double iou_threshold = 0.5;
};

int cmd_eval(const Globals& g, const EvalArgs& a, std::ostream& out, std::ostream& err) {
  if (!a.systems.empty() && a.systems.size() != a.predictions.size()) {
    throw InvariantError("give one --system per --predictions file");
  }
  const MatchConfig mc{a.iou_threshold};
  mc.validate();
  const auto gold = load(g, a.manifest, err);

  std::vector<PredictionRun> runs;
  std::map<std::string, int> name_uses;
  for (const auto& p : a.predictions) {
    runs.push_back(parse_predictions(read_text(g.resolve(p)), p));
    ++name_uses[std::string(to_string(runs.back().metadata.strategy))];
  }

  std::vector<EvalReport> reports;
  bool failed = false;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    std::string system = a.systems.empty() ? std::string(to_string(runs[i].metadata.strategy)) : a.systems[i];
    if (a.systems.empty() && name_uses[system] > 1) {
      system += ":" + fs::path(a.predictions[i]).stem().string();
    }
    auto report = evaluate(runs[i], gold, mc, system);
    for (const auto& w : report.warnings) err << "warning: " << system << ": " << w << "\n";
    for (const auto& e : report.errors) err << "error: " << system << ": " << e << "\n";
    failed = failed || !report.errors.empty();
    reports.push_back(std::move(report));
  }

  out << render_report_table(reports);
  if (a.out) {
    write_checked(g.resolve(*a.out), reports_to_json(reports),
                  [](const std::string& text) { parse_reports(text); });
  }
  return failed ? 1 : 0;
}

// --- render ---------------------------------------------------------------

struct RenderArgs {
  std::string predictions, manifest, out_dir;
  bool gold = false;
};

int cmd_render(const Globals& g, const RenderArgs& a, std::ostream& out, std::ostream& err) {
  const auto run = parse_predictions(read_text(g.resolve(a.predictions)), a.predictions);
  const auto manifest = load(g, a.manifest, err);
  const fs::path out_dir = g.resolve(a.out_dir);
  const fs::path abs_out = fs::absolute(out_dir);
  fs::create_directories(out_dir);
  int missing = 0;
  for (const auto& scene : run.scenes) {
    const Scene* gold = manifest.find_scene(scene.scene_id);
    if (gold == nullptr) {
      err << "error: scene " << scene.scene_id << " is not in " << a.manifest << "\n";
      ++missing;
      continue;
    }
    const auto href = fs::absolute(g.resolve(gold->image_ref)).lexically_relative(abs_out).generic_string();
    write_plain(out_dir / (safe_name(scene.scene_id) + ".svg"),
                render_svg(scene, href, a.gold ? gold : nullptr));
  }
  out << fmt::format("{} overlays -> {}\n", run.scenes.size() - missing, out_dir.string());
  return missing == 0 ? 0 : 1;
}

// --- simulate -------------------------------------------------------------

struct SimulateArgs {
  std::string config;
  std::optional<std::string> manifest, out_dir;
};

int cmd_simulate(const Globals& g, const SimulateArgs& a, std::ostream& out, std::ostream& err) {
  auto cfg = parse_experiment_config(read_text(g.resolve(a.config)), a.config);
  if (a.manifest) cfg.manifest = *a.manifest;
  if (a.out_dir) cfg.output_dir = *a.out_dir;
  if (g.seed) cfg.seed = *g.seed;
  if (g.workers > 1) cfg.experiment.workers = g.workers;
  if (cfg.manifest.empty()) throw InvariantError("no manifest given (config 'manifest' or --manifest)");
  assign_seeds(cfg);

  const auto manifest = std::make_shared<const DatasetManifest>(load(g, cfg.manifest, err));
  const auto result = run_shift_experiment(manifest, cfg.experiment);
  const auto reports = result.reports();
  const std::vector<ReportDelta> deltas{result.end_to_end_delta, result.two_stage_delta};

  const fs::path dir = g.resolve(cfg.output_dir);
  write_checked(dir / "reports.json", reports_to_json(reports),
                [](const std::string& text) { parse_reports(text); });
  write_checked(dir / "deltas.json", deltas_to_json(deltas),
                [](const std::string& text) {
                  if (!nlohmann::json::parse(text).is_array()) throw Error("delta summary is not an array");
                });
  out << render_report_table(reports) << "\n" << render_delta_table(deltas);

  bool failed = false;
  for (const auto& r : reports) {
    for (const auto& e : r.errors) err << "error: " << r.system << ": " << e << "\n";
    failed = failed || !r.errors.empty();
  }
  return failed ? 1 : 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Leaf detection and disease diagnosis toolkit", "leafdiag"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--root", g.root, "Directory that relative paths are resolved against");
  app.add_option("--seed", g.seed, "Seed for every random choice");
  app.add_option("--workers", g.workers, "Scenes processed in parallel")->check(CLI::PositiveNumber);

  SplitArgs split;
  auto* sp = app.add_subcommand("split", "Random scene-level train/test split");
  sp->add_option("--manifest", split.manifest)->required();
  sp->add_option("--fraction", split.fraction, "Training fraction")->check(kOpenFraction);
  sp->add_option("--train-out", split.train_out)->required();
  sp->add_option("--test-out", split.test_out)->required();

  GenerateArgs gen;
  auto* gp = app.add_subcommand("generate", "Write a synthetic manifest");
  gp->add_option("--out", gen.out)->required();
  gp->add_option("--name", gen.spec.name);
  gp->add_option("--scenes", gen.spec.scenes)->check(CLI::PositiveNumber);
  gp->add_option("--healthy", gen.spec.healthy);
  gp->add_option("--diseased", gen.spec.diseased);

  CropArgs crop;
  auto* cp = app.add_subcommand("crop", "Extract single-leaf crops from gold boxes");
  cp->add_option("--manifest", crop.manifest)->required();
  cp->add_option("--out-dir", crop.out_dir)->required();
  cp->add_option("--crop-width", crop.width)->check(CLI::PositiveNumber);
  cp->add_option("--crop-height", crop.height)->check(CLI::PositiveNumber);

  RunArgs runa;
  auto* rp = app.add_subcommand("run", "Run a pipeline over a manifest");
  rp->add_option("--config", runa.config, "Run config JSON")->required();
  rp->add_option("--manifest", runa.manifest);
  rp->add_option("--strategy", runa.strategy)->check(CLI::IsMember({"end_to_end", "two_stage"}));
  rp->add_option("--output", runa.output);
  rp->add_option("--resize-policy", runa.resize_policy)
      ->check(CLI::IsMember({"native", "fixed_512", "aspect_keyed"}));
  rp->add_option("--confidence-threshold", runa.confidence_threshold)->check(kOpenFraction);
  rp->add_option("--nms-iou-threshold", runa.nms_iou_threshold)->check(kOpenFraction);

  EvalArgs eval;
  auto* ep = app.add_subcommand("eval", "Score predictions against gold annotations");
  ep->add_option("--predictions", eval.predictions)->required();
  ep->add_option("--system", eval.systems, "Row name per predictions file");
  ep->add_option("--manifest", eval.manifest)->required();
  ep->add_option("--iou-threshold", eval.iou_threshold)->check(CLI::Range(0.0, 1.0));
  ep->add_option("--out", eval.out, "Report JSON");

  RenderArgs render;
  auto* vp = app.add_subcommand("render", "Per-scene SVG overlays");
  vp->add_option("--predictions", render.predictions)->required();
  vp->add_option("--manifest", render.manifest)->required();
  vp->add_option("--out-dir", render.out_dir)->required();
  vp->add_flag("--gold", render.gold, "Also draw gold boxes, dashed");

  SimulateArgs sim;
  auto* mp = app.add_subcommand("simulate", "Both strategies under two corruption regimes");
  mp->add_option("--config", sim.config, "Experiment config JSON")->required();
  mp->add_option("--manifest", sim.manifest);
  mp->add_option("--out-dir", sim.out_dir);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*sp) return cmd_split(g, split, out, err);
    if (*gp) return cmd_generate(g, gen, out);
    if (*cp) return cmd_crop(g, crop, out, err);
    if (*rp) return cmd_run(g, runa, out, err);
    if (*ep) return cmd_eval(g, eval, out, err);
    if (*vp) return cmd_render(g, render, out, err);
    if (*mp) return cmd_simulate(g, sim, out, err);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace leafdiag::cli
