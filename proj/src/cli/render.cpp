#include <charconv>
#include <system_error>

#include <fmt/format.h>

#include "leafdiag/cli.hpp"

namespace leafdiag::cli {

namespace {

std::string xml_escape(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string_view colour(const std::optional<LeafLabel>& label) {
  if (!label) return kUnlabelledColour;
  return *label == LeafLabel::diseased ? kDiseasedColour : kHealthyColour;
}

void append_rect(std::string& svg, const BoundingBox& b, std::string_view stroke, bool dashed,
                 std::string_view extra) {
  svg += fmt::format(
      "  <rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" data-x-max=\"{}\" data-y-max=\"{}\" "
      "fill=\"none\" stroke=\"{}\" stroke-width=\"3\"{}{}/>\n",
      format_coordinate(b.x_min()), format_coordinate(b.y_min()), format_coordinate(b.width()),
      format_coordinate(b.height()), format_coordinate(b.x_max()), format_coordinate(b.y_max()), stroke,
      dashed ? " stroke-dasharray=\"8 4\"" : "", extra);
}

}  // namespace

std::string format_coordinate(double v) {
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) return fmt::format("{}", v);
  return std::string(buf, end);
}

std::string render_svg(const ScenePredictions& predictions, std::string_view image_href, const Scene* gold) {
  const auto w = predictions.size.width();
  const auto h = predictions.size.height();
  std::string svg = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" viewBox=\"0 0 {0} {1}\" "
      "data-scene=\"{2}\">\n"
      "  <image href=\"{3}\" x=\"0\" y=\"0\" width=\"{0}\" height=\"{1}\"/>\n",
      w, h, xml_escape(predictions.scene_id), xml_escape(image_href));
  if (gold) {
    for (const auto& leaf : gold->leaves) {
      append_rect(svg, leaf.box, colour(leaf.label), true,
                  fmt::format(" data-kind=\"gold\" data-leaf=\"{}\" data-label=\"{}\"", xml_escape(leaf.leaf_id),
                              to_string(leaf.label)));
    }
  }
  for (const auto& d : predictions.detections) {
    append_rect(svg, d.box, colour(d.label), false,
                fmt::format(" data-kind=\"prediction\" data-label=\"{}\" data-confidence=\"{}\"",
                            d.label ? to_string(*d.label) : "none", format_coordinate(d.confidence)));
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace leafdiag::cli
