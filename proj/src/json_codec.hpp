#pragma once

// JSON conversions shared by the file formats (internal).

#include "json_util.hpp"
#include "leafdiag/dataset.hpp"

namespace leafdiag::detail {

json provenance_to_json(const TrainingProvenance& p);
TrainingProvenance parse_provenance(const json& node, const Reader& reader, std::string_view path);

json box_fields(const BoundingBox& b);
/// Reads x_min..y_max from `node`; throws ParseError (with `path`) on a missing
/// field and InvariantError-derived ParseError on an invalid box.
BoundingBox parse_box_fields(const json& node, const Reader& reader, std::string_view path);

}  // namespace leafdiag::detail
