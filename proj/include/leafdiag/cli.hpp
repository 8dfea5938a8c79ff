#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "leafdiag/dataset.hpp"
#include "leafdiag/matching.hpp"
#include "leafdiag/pipeline.hpp"
#include "leafdiag/protocol.hpp"
#include "leafdiag/synthetic.hpp"

namespace leafdiag::cli {

/// Entry point of the `leafdiag` tool.
int run(int argc, char** argv);
/// Same, with the arguments (without the program name) and streams supplied.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// --- Run configuration ----------------------------------------------------

struct DetectorSpec {
  std::variant<SyntheticDetectorParams, EndpointSpec> source;
  /// Synthetic only: present for a labelling (end-to-end) detector.
  std::optional<SyntheticDiagnoserParams> labels;
};

struct DiagnoserSpec {
  std::variant<SyntheticDiagnoserParams, EndpointSpec> source;
};

struct RunConfig {
  std::string manifest;
  Strategy strategy = Strategy::two_stage;
  DetectorSpec detector;
  std::optional<DiagnoserSpec> diagnoser;
  PipelineConfig pipeline;
  MatchConfig match;
  std::string output = "predictions.json";
  std::uint64_t seed = 0;
  std::vector<TrainingProvenance> provenance;
  /// Load scene images for cropping. Defaults to "only when the diagnoser is
  /// an external endpoint"; synthetic stages never look at pixels.
  std::optional<bool> load_pixels;

  /// Throws InvariantError when the stages do not fit the strategy.
  void validate() const;
  bool needs_pixels() const;
};

/// Parses a run config. Synthetic stage seeds are not read from the file;
/// call assign_seeds() once the seed is final.
RunConfig parse_run_config(std::string_view text, std::string_view source = "<run config>");

/// Derives every synthetic stage seed from `cfg.seed`.
void assign_seeds(RunConfig& cfg);

struct ExperimentConfig {
  std::string manifest;
  ShiftExperimentConfig experiment;
  std::string output_dir = "simulation";
  std::uint64_t seed = 0;
};

ExperimentConfig parse_experiment_config(std::string_view text,
                                         std::string_view source = "<experiment config>");

/// Both regimes share seeds, so identical regimes give identical reports.
void assign_seeds(ExperimentConfig& cfg);

// --- Rendering ------------------------------------------------------------

inline constexpr std::string_view kDiseasedColour = "#FE0000";
inline constexpr std::string_view kHealthyColour = "#FFFFFF";
inline constexpr std::string_view kUnlabelledColour = "#FFFF00";

/// Shortest decimal that parses back to exactly `v`.
std::string format_coordinate(double v);

/// SVG overlay for one scene: the image, then a stroked rect per prediction.
/// Each rect carries data-x-max/data-y-max so the box can be read back
/// exactly. Gold leaves, when given, are drawn dashed underneath.
std::string render_svg(const ScenePredictions& predictions, std::string_view image_href,
                       const Scene* gold = nullptr);

}  // namespace leafdiag::cli
