#include "leafdiag/protocol.hpp"

#include <map>
#include <mutex>
#include <set>

#include <fmt/format.h>
#include <sodium.h>

#include "json_util.hpp"
#include "leafdiag/error.hpp"
#include "leafdiag/subprocess.hpp"

namespace leafdiag {

using detail::json;

std::string_view to_string(StageRole role) noexcept {
  return role == StageRole::detector ? "detector" : "diagnoser";
}

std::string encode_crop(const Raster& crop) {
  const auto bytes = crop.bytes();
  std::string out(sodium_base64_encoded_len(bytes.size(), sodium_base64_VARIANT_ORIGINAL), '\0');
  sodium_bin2base64(out.data(), out.size(), bytes.data(), bytes.size(), sodium_base64_VARIANT_ORIGINAL);
  out.resize(out.size() - 1);  // drop the terminating NUL
  return out;
}

Raster decode_crop(std::string_view base64, ImageSize size) {
  const auto expected = static_cast<std::size_t>(size.width()) * size.height() * 3;
  std::vector<std::uint8_t> bytes(base64.size() / 4 * 3 + 3);
  std::size_t len = 0;
  const char* end = nullptr;
  if (sodium_base642bin(bytes.data(), bytes.size(), base64.data(), base64.size(), nullptr, &len, &end,
                        sodium_base64_VARIANT_ORIGINAL) != 0 ||
      end != base64.data() + base64.size()) {
    throw ProtocolError("crop payload is not valid base64");
  }
  if (len != expected) {
    throw ProtocolError(fmt::format("crop payload has {} bytes, {}x{} RGB8 needs {}", len, size.width(),
                                    size.height(), expected));
  }
  bytes.resize(len);
  return Raster(size, std::move(bytes));
}

struct ModelEndpoint::Impl {
  EndpointSpec spec;
  ChildProcess child;
  EndpointInfo info;
  std::mutex mutex;
  std::uint64_t next_id = 1;
  std::set<std::uint64_t> pending;
  std::map<std::uint64_t, json> stash;
  std::optional<std::string> dead;
  std::vector<std::string> warnings;

  explicit Impl(EndpointSpec s) : spec(std::move(s)), child(spec.command) {}

  [[noreturn]] void fail(const std::string& what) const {
    throw ProtocolError(fmt::format("endpoint `{}`: {}", child.command(), what));
  }

  [[noreturn]] void die(const std::string& why) {
    dead = why;
    pending.clear();
    child.close();
    fail(why);
  }

  void check_alive() const {
    if (dead) fail(fmt::format("endpoint is dead ({})", *dead));
  }

  json read_message(std::chrono::milliseconds timeout, std::string_view waiting_for) {
    const auto r = child.read_line(timeout);
    switch (r.status) {
      case ChildProcess::ReadStatus::timeout:
        die(fmt::format("timeout after {} ms waiting for {}", timeout.count(), waiting_for));
      case ChildProcess::ReadStatus::closed:
        die("stream closed");
      case ChildProcess::ReadStatus::line:
        break;
    }
    try {
      json j = json::parse(r.line);
      if (!j.is_object()) die("message is not a JSON object");
      return j;
    } catch (const json::parse_error&) {
      die(fmt::format("malformed JSON line: {}", r.line.substr(0, 200)));
    }
  }

  void handshake() {
    if (!child.write_line(json{{"type", "hello"}, {"protocol", kProtocolVersion}}.dump())) {
      die("stream closed before hello");
    }
    const json reply = read_message(spec.handshake_timeout, "hello");
    if (reply.value("type", "") != "hello") die("expected a hello reply");
    const auto proto = reply.find("protocol");
    if (proto == reply.end() || !proto->is_number_integer()) die("hello reply lacks a protocol version");
    if (proto->get<int>() != kProtocolVersion) {
      die(fmt::format("protocol version mismatch: client speaks {}, endpoint {}", kProtocolVersion,
                      proto->get<int>()));
    }
    const auto role = reply.value("role", "");
    if (role != "detector" && role != "diagnoser") die(fmt::format("unknown role '{}'", role));
    info.role = role == "detector" ? StageRole::detector : StageRole::diagnoser;
    if (info.role != spec.role) {
      die(fmt::format("role mismatch: expected {}, endpoint is {}", to_string(spec.role), role));
    }
    const auto labels = reply.find("emits_labels");
    if (labels != reply.end() && !labels->is_boolean()) die("emits_labels must be a boolean");
    info.emits_labels = labels != reply.end() && labels->get<bool>();
    const auto conc = reply.value("concurrency", "serial");
    if (conc != "serial" && conc != "concurrent") die(fmt::format("unknown concurrency '{}'", conc));
    info.concurrency = conc == "concurrent" ? Concurrency::concurrent : Concurrency::serial;
    info.name = reply.value("name", "");
    info.version = reply.value("version", "");
  }

  std::uint64_t send(json msg) {
    check_alive();
    const auto id = next_id++;
    msg["id"] = id;
    if (!child.write_line(msg.dump())) die("stream closed while sending");
    pending.insert(id);
    return id;
  }

  json await(std::uint64_t id) {
    if (const auto it = stash.find(id); it != stash.end()) {
      json j = std::move(it->second);
      stash.erase(it);
      return j;
    }
    check_alive();
    while (true) {
      json j = read_message(spec.request_timeout, fmt::format("response {}", id));
      const auto idj = j.find("id");
      if (idj == j.end() || !idj->is_number_unsigned()) die("response without a numeric id");
      const auto got = idj->get<std::uint64_t>();
      if (pending.erase(got) == 0) die(fmt::format("response id {} matches no pending request", got));
      if (got == id) return j;
      stash.emplace(got, std::move(j));
    }
  }

  // Turns an error reply into an exception for this request only.
  void check_type(const json& j, std::string_view expected) const {
    const auto type = j.value("type", "");
    if (type == "error") fail(fmt::format("error reply: {}", j.value("message", "")));
    if (type != expected) fail(fmt::format("expected a '{}' reply, got '{}'", expected, type));
  }

  std::vector<Detection> parse_detections(const json& j, ImageSize frame) {
    check_type(j, "detections");
    const auto boxes = j.find("boxes");
    if (boxes == j.end() || !boxes->is_array()) fail("detections reply lacks a boxes array");
    if (const auto w = j.find("warning"); w != j.end() && w->is_string()) {
      warnings.push_back(fmt::format("endpoint `{}`: response {}: {}", child.command(),
                                     j["id"].get<std::uint64_t>(), w->get<std::string>()));
    }
    std::vector<Detection> out;
    for (std::size_t i = 0; i < boxes->size(); ++i) {
      const auto& b = (*boxes)[i];
      const auto reject = [&](std::string_view why) {
        warnings.push_back(fmt::format("endpoint `{}`: response {} box {} dropped: {}", child.command(),
                                       j["id"].get<std::uint64_t>(), i, why));
      };
      const auto num = [&](const char* key) -> std::optional<double> {
        if (!b.is_object()) return std::nullopt;
        const auto it = b.find(key);
        if (it == b.end() || !it->is_number()) return std::nullopt;
        return it->get<double>();
      };
      const auto x0 = num("x_min"), y0 = num("y_min"), x1 = num("x_max"), y1 = num("y_max");
      const auto conf = num("confidence");
      if (!x0 || !y0 || !x1 || !y1 || !conf) {
        reject("missing or non-numeric field");
        continue;
      }
      if (!(*conf >= 0.0 && *conf <= 1.0)) {
        reject(fmt::format("confidence {} outside [0, 1]", *conf));
        continue;
      }
      const auto box = BoundingBox::try_make(*x0, *y0, *x1, *y1);
      if (!box) {
        reject(fmt::format("invalid box ({}, {}, {}, {})", *x0, *y0, *x1, *y1));
        continue;
      }
      const auto clipped = clip(*box, frame);
      if (!clipped) {
        reject("box lies outside the frame");
        continue;
      }
      std::optional<LeafLabel> label;
      if (const auto lj = b.find("label"); lj != b.end() && !lj->is_null()) {
        label = lj->is_string() ? parse_label(lj->get<std::string>()) : std::nullopt;
        if (!label) {
          reject(fmt::format("unknown label {}", lj->dump()));
          continue;
        }
      }
      out.push_back({*clipped, label, *conf});
    }
    return out;
  }

  static json detect_message(const DetectCall& call) {
    return json{{"type", "detect"},
                {"image", call.image},
                {"width", call.frame.width()},
                {"height", call.frame.height()}};
  }
};

ModelEndpoint::ModelEndpoint(EndpointSpec spec) : impl_(std::make_unique<Impl>(std::move(spec))) {
  std::lock_guard lock(impl_->mutex);
  impl_->handshake();
}

ModelEndpoint::~ModelEndpoint() = default;

const EndpointInfo& ModelEndpoint::info() const noexcept { return impl_->info; }
const std::string& ModelEndpoint::command() const noexcept { return impl_->child.command(); }

bool ModelEndpoint::alive() const {
  std::lock_guard lock(impl_->mutex);
  return !impl_->dead;
}

std::vector<std::string> ModelEndpoint::warnings() const {
  std::lock_guard lock(impl_->mutex);
  return impl_->warnings;
}

std::vector<Detection> ModelEndpoint::request_detect(const std::string& image, ImageSize frame) {
  std::lock_guard lock(impl_->mutex);
  if (impl_->info.role != StageRole::detector) impl_->fail("not a detector");
  const auto id = impl_->send(Impl::detect_message({image, frame}));
  return impl_->parse_detections(impl_->await(id), frame);
}

std::vector<DetectOutcome> ModelEndpoint::request_detect_batch(std::span<const DetectCall> calls) {
  std::lock_guard lock(impl_->mutex);
  if (impl_->info.role != StageRole::detector) impl_->fail("not a detector");
  std::vector<DetectOutcome> out(calls.size());

  if (impl_->info.concurrency == Concurrency::serial) {
    for (std::size_t i = 0; i < calls.size(); ++i) {
      try {
        const auto id = impl_->send(Impl::detect_message(calls[i]));
        out[i].detections = impl_->parse_detections(impl_->await(id), calls[i].frame);
      } catch (const ProtocolError& e) {
        out[i].error = e.what();
      }
    }
    return out;
  }

  std::vector<std::optional<std::uint64_t>> ids(calls.size());
  for (std::size_t i = 0; i < calls.size(); ++i) {
    try {
      ids[i] = impl_->send(Impl::detect_message(calls[i]));
    } catch (const ProtocolError& e) {
      out[i].error = e.what();
    }
  }
  for (std::size_t i = 0; i < calls.size(); ++i) {
    if (!ids[i]) continue;
    try {
      out[i].detections = impl_->parse_detections(impl_->await(*ids[i]), calls[i].frame);
    } catch (const ProtocolError& e) {
      out[i].error = e.what();
    }
  }
  return out;
}

Diagnosis ModelEndpoint::request_diagnose(const Raster& crop) {
  std::lock_guard lock(impl_->mutex);
  if (impl_->info.role != StageRole::diagnoser) impl_->fail("not a diagnoser");
  const auto id = impl_->send(json{{"type", "diagnose"},
                                   {"width", crop.width()},
                                   {"height", crop.height()},
                                   {"encoding", "rgb8-base64"},
                                   {"pixels", encode_crop(crop)}});
  const json j = impl_->await(id);
  impl_->check_type(j, "diagnosis");
  const auto lj = j.find("label");
  if (lj == j.end() || !lj->is_string()) impl_->fail("diagnosis reply lacks a label");
  const auto label = parse_label(lj->get<std::string>());
  if (!label) impl_->fail(fmt::format("unknown label '{}'", lj->get<std::string>()));
  const auto cj = j.find("confidence");
  if (cj == j.end() || !cj->is_number()) impl_->fail("diagnosis reply lacks a confidence");
  const double conf = cj->get<double>();
  if (!(conf >= 0.0 && conf <= 1.0)) impl_->fail(fmt::format("confidence {} outside [0, 1]", conf));
  return {*label, conf};
}

EndpointDetector::EndpointDetector(std::shared_ptr<ModelEndpoint> endpoint,
                                   std::function<std::string(const std::string&)> resolve_image)
    : endpoint_(std::move(endpoint)), resolve_image_(std::move(resolve_image)) {
  if (endpoint_->info().role != StageRole::detector) {
    throw ProtocolError(fmt::format("endpoint `{}` is not a detector", endpoint_->command()));
  }
}

bool EndpointDetector::emits_labels() const { return endpoint_->info().emits_labels; }

std::string EndpointDetector::identity() const {
  const auto& i = endpoint_->info();
  return fmt::format("endpoint-detector({} {}; `{}`)", i.name, i.version, endpoint_->command());
}

std::vector<Detection> EndpointDetector::detect(const DetectRequest& request) {
  const auto image = resolve_image_ ? resolve_image_(request.image_ref) : request.image_ref;
  return endpoint_->request_detect(image, request.input_size);
}

EndpointDiagnoser::EndpointDiagnoser(std::shared_ptr<ModelEndpoint> endpoint) : endpoint_(std::move(endpoint)) {
  if (endpoint_->info().role != StageRole::diagnoser) {
    throw ProtocolError(fmt::format("endpoint `{}` is not a diagnoser", endpoint_->command()));
  }
}

std::string EndpointDiagnoser::identity() const {
  const auto& i = endpoint_->info();
  return fmt::format("endpoint-diagnoser({} {}; `{}`)", i.name, i.version, endpoint_->command());
}

Diagnosis EndpointDiagnoser::diagnose(const DiagnoseRequest& request) {
  if (request.crop == nullptr) {
    throw ProtocolError(fmt::format("no pixels available for a crop of scene '{}'", request.scene_id));
  }
  return endpoint_->request_diagnose(*request.crop);
}

}  // namespace leafdiag
