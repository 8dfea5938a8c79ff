#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "leafdiag/pipeline.hpp"
#include "leafdiag/raster.hpp"

namespace leafdiag {

/// Line-delimited JSON protocol spoken with external model processes.
/// See PROTOCOL.md for the message formats.
inline constexpr int kProtocolVersion = 1;

enum class StageRole { detector, diagnoser };
enum class Concurrency { serial, concurrent };

std::string_view to_string(StageRole role) noexcept;

/// Base64 (standard alphabet, padded) of the raw RGB8 rows.
std::string encode_crop(const Raster& crop);
/// Inverse of encode_crop; throws ProtocolError on bad base64 or wrong length.
Raster decode_crop(std::string_view base64, ImageSize size);

struct EndpointSpec {
  std::vector<std::string> command;  ///< argv, argv[0] looked up on PATH
  StageRole role = StageRole::detector;
  std::chrono::milliseconds handshake_timeout{10'000};
  std::chrono::milliseconds request_timeout{60'000};
};

/// What the server declared in its hello reply.
struct EndpointInfo {
  StageRole role = StageRole::detector;
  bool emits_labels = false;
  Concurrency concurrency = Concurrency::serial;
  std::string name;
  std::string version;
};

struct DetectCall {
  std::string image;
  ImageSize frame;
};

/// Result of one call in a batch: detections, or the error that failed it.
struct DetectOutcome {
  std::vector<Detection> detections;
  std::optional<std::string> error;
};

/// Client for one model process. Spawns the process and performs the
/// handshake on construction. All requests go through an internal mutex, so
/// one instance may be shared by several workers; a serial endpoint never
/// sees overlapping requests.
class ModelEndpoint {
 public:
  explicit ModelEndpoint(EndpointSpec spec);
  ~ModelEndpoint();

  const EndpointInfo& info() const noexcept;
  const std::string& command() const noexcept;
  bool alive() const;

  /// Boxes come back validated and clipped to `frame`; invalid boxes are
  /// dropped and counted in warnings().
  std::vector<Detection> request_detect(const std::string& image, ImageSize frame);

  /// Pipelines the calls when the endpoint declared itself concurrent;
  /// responses are matched by id in whatever order they arrive. If the
  /// endpoint dies, only the calls still in flight fail.
  std::vector<DetectOutcome> request_detect_batch(std::span<const DetectCall> calls);

  Diagnosis request_diagnose(const Raster& crop);

  /// Non-fatal validation findings accumulated so far.
  std::vector<std::string> warnings() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Adapts an endpoint to DetectorStage. Scene image refs are passed through
/// `resolve_image` (identity when empty) before being sent.
class EndpointDetector final : public DetectorStage {
 public:
  EndpointDetector(std::shared_ptr<ModelEndpoint> endpoint,
                   std::function<std::string(const std::string&)> resolve_image = {});

  bool emits_labels() const override;
  std::string identity() const override;
  std::vector<Detection> detect(const DetectRequest& request) override;

 private:
  std::shared_ptr<ModelEndpoint> endpoint_;
  std::function<std::string(const std::string&)> resolve_image_;
};

class EndpointDiagnoser final : public DiagnoserStage {
 public:
  explicit EndpointDiagnoser(std::shared_ptr<ModelEndpoint> endpoint);

  std::string identity() const override;
  /// Throws ProtocolError when the request carries no crop pixels.
  Diagnosis diagnose(const DiagnoseRequest& request) override;

 private:
  std::shared_ptr<ModelEndpoint> endpoint_;
};

}  // namespace leafdiag
