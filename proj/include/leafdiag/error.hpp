#pragma once

#include <stdexcept>
#include <string>

namespace leafdiag {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A value violates a domain invariant (inverted box, rate out of range, ...).
class InvariantError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file. The message carries line/field context.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// External model endpoint misbehaved or died.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// A pipeline stage failed for a particular scene.
class StageError : public Error {
 public:
  StageError(std::string scene_id, const std::string& what)
      : Error("scene '" + scene_id + "': " + what), scene_id_(std::move(scene_id)) {}

  const std::string& scene_id() const noexcept { return scene_id_; }

 private:
  std::string scene_id_;
};

}  // namespace leafdiag
