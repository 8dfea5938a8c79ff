#pragma once

// Internal helpers for reading JSON documents with path-qualified errors.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include <fmt/format.h>

#include "json.hpp"
#include "leafdiag/error.hpp"

namespace leafdiag::detail {

using json = nlohmann::json;

/// Parses `text`, converting nlohmann's byte offset into line:column.
inline json parse_json(std::string_view text, std::string_view source) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    std::size_t line = 1, col = 1;
    const std::size_t stop = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
    for (std::size_t i = 0; i < stop; ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw ParseError(fmt::format("{}:{}:{}: invalid JSON ({})", source, line, col, e.what()));
  }
}

class Reader {
 public:
  Reader(std::string_view source) : source_(source) {}

  [[noreturn]] void fail(std::string_view path, std::string_view what) const {
    throw ParseError(fmt::format("{}: {}: {}", source_, path, what));
  }

  const json& field(const json& obj, std::string_view path, const char* key) const {
    if (!obj.is_object()) fail(path, "expected an object");
    const auto it = obj.find(key);
    if (it == obj.end()) fail(path, fmt::format("missing field '{}'", key));
    return *it;
  }

  const json* optional_field(const json& obj, const char* key) const {
    const auto it = obj.find(key);
    return (it == obj.end() || it->is_null()) ? nullptr : &*it;
  }

  double number(const json& obj, std::string_view path, const char* key) const {
    const auto& v = field(obj, path, key);
    if (!v.is_number()) fail(fmt::format("{}.{}", path, key), "expected a number");
    return v.get<double>();
  }

  std::int64_t integer(const json& obj, std::string_view path, const char* key) const {
    const auto& v = field(obj, path, key);
    if (!v.is_number_integer()) fail(fmt::format("{}.{}", path, key), "expected an integer");
    return v.get<std::int64_t>();
  }

  std::string string(const json& obj, std::string_view path, const char* key) const {
    const auto& v = field(obj, path, key);
    if (!v.is_string()) fail(fmt::format("{}.{}", path, key), "expected a string");
    return v.get<std::string>();
  }

  const json& array(const json& obj, std::string_view path, const char* key) const {
    const auto& v = field(obj, path, key);
    if (!v.is_array()) fail(fmt::format("{}.{}", path, key), "expected an array");
    return v;
  }

  std::string_view source() const noexcept { return source_; }

 private:
  std::string source_;
};

/// Pretty, key-sorted dump with a trailing newline.
inline std::string canonical_dump(const json& doc) { return doc.dump(2) + "\n"; }

}  // namespace leafdiag::detail
