#include <filesystem>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "json_codec.hpp"
#include "leafdiag/dataset.hpp"
#include "leafdiag/error.hpp"

namespace leafdiag {

namespace detail {

json box_fields(const BoundingBox& b) {
  return json{{"x_min", b.x_min()}, {"y_min", b.y_min()}, {"x_max", b.x_max()}, {"y_max", b.y_max()}};
}

BoundingBox parse_box_fields(const json& node, const Reader& reader, std::string_view path) {
  const double x0 = reader.number(node, path, "x_min");
  const double y0 = reader.number(node, path, "y_min");
  const double x1 = reader.number(node, path, "x_max");
  const double y1 = reader.number(node, path, "y_max");
  const auto box = BoundingBox::try_make(x0, y0, x1, y1);
  if (!box) reader.fail(path, fmt::format("invalid box ({}, {}, {}, {})", x0, y0, x1, y1));
  return *box;
}

json provenance_to_json(const TrainingProvenance& p) {
  json j = json::object();
  j["model"] = p.model;
  j["optimizer"] = p.optimizer;
  if (p.learning_rate) j["learning_rate"] = *p.learning_rate;
  if (p.momentum) j["momentum"] = *p.momentum;
  if (p.weight_decay) j["weight_decay"] = *p.weight_decay;
  if (p.batch_size) j["batch_size"] = *p.batch_size;
  if (p.iterations) j["iterations"] = *p.iterations;
  if (p.epochs) j["epochs"] = *p.epochs;
  return j;
}

TrainingProvenance parse_provenance(const json& node, const Reader& reader, std::string_view path) {
  if (!node.is_object()) reader.fail(path, "expected an object");
  TrainingProvenance p;
  if (reader.optional_field(node, "model")) p.model = reader.string(node, path, "model");
  if (reader.optional_field(node, "optimizer")) p.optimizer = reader.string(node, path, "optimizer");
  if (reader.optional_field(node, "learning_rate")) p.learning_rate = reader.number(node, path, "learning_rate");
  if (reader.optional_field(node, "momentum")) p.momentum = reader.number(node, path, "momentum");
  if (reader.optional_field(node, "weight_decay")) p.weight_decay = reader.number(node, path, "weight_decay");
  if (reader.optional_field(node, "batch_size")) p.batch_size = reader.integer(node, path, "batch_size");
  if (reader.optional_field(node, "iterations")) p.iterations = reader.integer(node, path, "iterations");
  if (reader.optional_field(node, "epochs")) p.epochs = reader.integer(node, path, "epochs");
  try {
    p.validate();
  } catch (const InvariantError& e) {
    reader.fail(path, e.what());
  }
  return p;
}

}  // namespace detail

using detail::json;
using detail::Reader;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(fmt::format("cannot open {}", path));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(fmt::format("cannot write {}", path));
  out << content;
  if (!out) throw Error(fmt::format("failed writing {}", path));
}

}  // namespace

LoadedManifest parse_manifest(std::string_view text, std::string_view source) {
  const json doc = detail::parse_json(text, source);
  const Reader rd(source);
  LoadedManifest out;

  if (!doc.is_object()) rd.fail("$", "expected an object");
  const auto version = rd.integer(doc, "$", "format_version");
  if (version != 1) rd.fail("$.format_version", fmt::format("unsupported version {}", version));
  out.manifest.name = rd.string(doc, "$", "name");

  const auto& scenes = rd.array(doc, "$", "scenes");
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    const auto& sj = scenes[s];
    const std::string sp = fmt::format("$.scenes[{}]", s);
    const auto width = rd.integer(sj, sp, "width");
    const auto height = rd.integer(sj, sp, "height");
    if (width < 1 || height < 1 || width > INT32_MAX || height > INT32_MAX) {
      rd.fail(sp, fmt::format("invalid image size {}x{}", width, height));
    }
    Scene scene{rd.string(sj, sp, "scene_id"), rd.string(sj, sp, "image_ref"),
                ImageSize(int(width), int(height)), {}, ""};
    if (rd.optional_field(sj, "source_tag")) scene.source_tag = rd.string(sj, sp, "source_tag");

    const auto& leaves = rd.array(sj, sp, "leaves");
    for (std::size_t l = 0; l < leaves.size(); ++l) {
      const auto& lj = leaves[l];
      const std::string lp = fmt::format("{}.leaves[{}]", sp, l);
      std::string leaf_id = rd.string(lj, lp, "leaf_id");
      const auto label_text = rd.string(lj, lp, "label");
      const auto label = parse_label(label_text);
      if (!label) rd.fail(lp, fmt::format("leaf '{}': unknown label '{}'", leaf_id, label_text));
      const double x0 = rd.number(lj, lp, "x_min"), y0 = rd.number(lj, lp, "y_min");
      const double x1 = rd.number(lj, lp, "x_max"), y1 = rd.number(lj, lp, "y_max");
      const auto box = BoundingBox::try_make(x0, y0, x1, y1);
      if (!box) {
        rd.fail(lp, fmt::format("scene '{}': leaf '{}' has invalid box ({}, {}, {}, {})",
                                scene.scene_id, leaf_id, x0, y0, x1, y1));
      }
      scene.leaves.push_back(AnnotatedLeaf{std::move(leaf_id), *box, *label});
    }
    out.manifest.scenes.push_back(std::move(scene));
  }

  try {
    validate_manifest(out.manifest);
  } catch (const InvariantError& e) {
    throw ParseError(fmt::format("{}: {}", source, e.what()));
  }

  if (const auto* stored = rd.optional_field(doc, "class_counts")) {
    const auto actual = out.manifest.class_counts();
    const auto healthy = rd.integer(*stored, "$.class_counts", "healthy");
    const auto diseased = rd.integer(*stored, "$.class_counts", "diseased");
    if (healthy != std::int64_t(actual.healthy) || diseased != std::int64_t(actual.diseased)) {
      out.warnings.push_back(fmt::format(
          "{}: stored class_counts ({} healthy, {} diseased) disagree with the leaves ({} healthy, "
          "{} diseased); using recomputed counts",
          source, healthy, diseased, actual.healthy, actual.diseased));
    }
  }
  return out;
}

LoadedManifest load_manifest(const std::string& path) { return parse_manifest(read_file(path), path); }

std::string manifest_to_json(const DatasetManifest& manifest) {
  json scenes = json::array();
  for (const auto& s : manifest.scenes) {
    json leaves = json::array();
    for (const auto& leaf : s.leaves) {
      json lj = detail::box_fields(leaf.box);
      lj["leaf_id"] = leaf.leaf_id;
      lj["label"] = to_string(leaf.label);
      leaves.push_back(std::move(lj));
    }
    scenes.push_back(json{{"scene_id", s.scene_id},
                          {"image_ref", s.image_ref},
                          {"width", s.size.width()},
                          {"height", s.size.height()},
                          {"source_tag", s.source_tag},
                          {"leaves", std::move(leaves)}});
  }
  const auto counts = manifest.class_counts();
  const json doc{{"format_version", 1},
                 {"name", manifest.name},
                 {"class_counts", {{"healthy", counts.healthy}, {"diseased", counts.diseased}}},
                 {"scenes", std::move(scenes)}};
  return detail::canonical_dump(doc);
}

void save_manifest(const DatasetManifest& manifest, const std::string& path) {
  const std::string text = manifest_to_json(manifest);
  parse_manifest(text, path);  // schema check before anything touches disk
  write_file(path, text);
}

std::string crop_set_to_json(const CropSet& set) {
  json arr = json::array();
  for (const auto& r : set.records) {
    arr.push_back(json{{"crop_id", r.crop_id},
                       {"parent_scene_id", r.parent_scene_id},
                       {"parent_leaf_id", r.parent_leaf_id},
                       {"label", to_string(r.label)},
                       {"pixels_ref", r.pixels_ref},
                       {"provenance", to_string(r.provenance)},
                       {"status", to_string(r.status)}});
  }
  return detail::canonical_dump(arr);
}

CropSet parse_crop_set(std::string_view text, std::string_view source) {
  const json doc = detail::parse_json(text, source);
  const Reader rd(source);
  if (!doc.is_array()) rd.fail("$", "expected an array of crop records");
  CropSet set;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& j = doc[i];
    const std::string p = fmt::format("$[{}]", i);
    CropRecord r{rd.string(j, p, "crop_id"), rd.string(j, p, "parent_scene_id"),
                 rd.string(j, p, "parent_leaf_id"), LeafLabel::healthy,
                 rd.string(j, p, "pixels_ref"), CropProvenance::cropped_from_wide_angle,
                 CropStatus::ok};
    const auto label = parse_label(rd.string(j, p, "label"));
    if (!label) rd.fail(p, "unknown label");
    r.label = *label;
    const auto prov = rd.string(j, p, "provenance");
    if (prov == "external_single_leaf") {
      r.provenance = CropProvenance::external_single_leaf;
    } else if (prov != "cropped_from_wide_angle") {
      rd.fail(p, fmt::format("unknown provenance '{}'", prov));
    }
    if (rd.optional_field(j, "status") && rd.string(j, p, "status") == "failed") {
      r.status = CropStatus::failed;
    }
    set.records.push_back(std::move(r));
  }
  return set;
}

}  // namespace leafdiag
