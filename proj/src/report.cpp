#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "json_util.hpp"
#include "leafdiag/matching.hpp"

namespace leafdiag {

using detail::json;
using detail::Reader;

std::string format_percent(double fraction) {
  // The epsilon absorbs binary representation error so that e.g. 0.7795 rounds up.
  const double tenths = std::floor(fraction * 1000.0 + 0.5 + 1e-9);
  return fmt::format("{:.1f}", tenths / 10.0);
}

namespace {

std::string cell(double value, bool undefined) {
  return format_percent(value) + (undefined ? "*" : "");
}

json metrics_to_json(const ClassMetrics& m) {
  return json{{"tp", m.tp},
              {"fp", m.fp},
              {"fn", m.fn},
              {"p", m.precision},
              {"r", m.recall},
              {"f1", m.f1},
              {"p_undefined", m.precision_undefined},
              {"r_undefined", m.recall_undefined}};
}

ClassMetrics parse_metrics(const json& j, const Reader& rd, const std::string& path) {
  ClassMetrics m;
  const auto count = [&](const char* key) {
    const auto v = rd.integer(j, path, key);
    if (v < 0) rd.fail(path, fmt::format("{} must be non-negative", key));
    return static_cast<std::size_t>(v);
  };
  m.tp = count("tp");
  m.fp = count("fp");
  m.fn = count("fn");
  m.precision = rd.number(j, path, "p");
  m.recall = rd.number(j, path, "r");
  m.f1 = rd.number(j, path, "f1");
  const auto flag = [&](const char* key) {
    const auto& v = rd.field(j, path, key);
    if (!v.is_boolean()) rd.fail(path, fmt::format("{} must be a boolean", key));
    return v.get<bool>();
  };
  m.precision_undefined = flag("p_undefined");
  m.recall_undefined = flag("r_undefined");
  return m;
}

}  // namespace

std::string render_report_table(std::span<const EvalReport> reports) {
  std::size_t name_width = std::string_view("System").size();
  for (const auto& r : reports) name_width = std::max(name_width, r.system.size());

  std::string out;
  const auto row = [&](std::string_view name, const std::vector<std::string>& cells) {
    out += fmt::format("{:<{}}", name, name_width);
    for (std::size_t i = 0; i < cells.size(); ++i) {
      out += (i % 3 == 0 || i == 9) ? " |" : "";
      out += fmt::format(" {:>6}", cells[i]);
    }
    out += '\n';
  };
  out += fmt::format("{:<{}} | {:^20} | {:^20} | {:^20} | {:>6}\n", "", name_width,
                     "Leaf detector", "Healthy", "Disease", "Avg");
  row("System", {"F1", "P", "R", "F1", "P", "R", "F1", "P", "R", "F1"});
  bool any_undefined = false;
  for (const auto& r : reports) {
    const auto block = [&](const ClassMetrics& m, std::vector<std::string>& cells) {
      cells.push_back(cell(m.f1, false));
      cells.push_back(cell(m.precision, m.precision_undefined));
      cells.push_back(cell(m.recall, m.recall_undefined));
      any_undefined = any_undefined || m.precision_undefined || m.recall_undefined;
    };
    std::vector<std::string> cells;
    block(r.detection, cells);
    block(r.healthy, cells);
    block(r.diseased, cells);
    cells.push_back(format_percent(r.average_f1));
    row(r.system, cells);
  }
  if (any_undefined) out += "* undefined (0/0), reported as 0\n";
  return out;
}

std::string reports_to_json(std::span<const EvalReport> reports) {
  json arr = json::array();
  for (const auto& r : reports) {
    arr.push_back(json{{"system", r.system},
                       {"detector", metrics_to_json(r.detection)},
                       {"healthy", metrics_to_json(r.healthy)},
                       {"diseased", metrics_to_json(r.diseased)},
                       {"average_f1", r.average_f1},
                       {"counts",
                        {{"scenes", r.scenes}, {"gold_leaves", r.gold_leaves}, {"predictions", r.predictions}}},
                       {"errors", r.errors},
                       {"warnings", r.warnings}});
  }
  return detail::canonical_dump(arr);
}

std::vector<EvalReport> parse_reports(std::string_view text, std::string_view source) {
  const json doc = detail::parse_json(text, source);
  const Reader rd(source);
  if (!doc.is_array()) rd.fail("$", "expected an array of reports");
  std::vector<EvalReport> out;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& j = doc[i];
    const std::string p = fmt::format("$[{}]", i);
    EvalReport r;
    r.system = rd.string(j, p, "system");
    r.detection = parse_metrics(rd.field(j, p, "detector"), rd, p + ".detector");
    r.healthy = parse_metrics(rd.field(j, p, "healthy"), rd, p + ".healthy");
    r.diseased = parse_metrics(rd.field(j, p, "diseased"), rd, p + ".diseased");
    r.average_f1 = rd.number(j, p, "average_f1");
    const auto& counts = rd.field(j, p, "counts");
    r.scenes = static_cast<std::size_t>(rd.integer(counts, p + ".counts", "scenes"));
    r.gold_leaves = static_cast<std::size_t>(rd.integer(counts, p + ".counts", "gold_leaves"));
    r.predictions = static_cast<std::size_t>(rd.integer(counts, p + ".counts", "predictions"));
    for (const char* key : {"errors", "warnings"}) {
      if (const auto* list = rd.optional_field(j, key)) {
        auto& dst = std::string_view(key) == "errors" ? r.errors : r.warnings;
        for (const auto& s : *list) {
          if (!s.is_string()) rd.fail(p, fmt::format("{} must hold strings", key));
          dst.push_back(s.get<std::string>());
        }
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

ReportDelta report_delta(const EvalReport& before, const EvalReport& after) {
  ReportDelta d;
  d.system = after.system;
  const auto put = [&](const std::string& prefix, const ClassMetrics& b, const ClassMetrics& a) {
    d.cells[prefix + ".f1"] = (a.f1 - b.f1) * 100.0;
    d.cells[prefix + ".p"] = (a.precision - b.precision) * 100.0;
    d.cells[prefix + ".r"] = (a.recall - b.recall) * 100.0;
  };
  put("detector", before.detection, after.detection);
  put("healthy", before.healthy, after.healthy);
  put("diseased", before.diseased, after.diseased);
  d.cells["average_f1"] = (after.average_f1 - before.average_f1) * 100.0;
  return d;
}

std::string deltas_to_json(std::span<const ReportDelta> deltas) {
  json arr = json::array();
  for (const auto& d : deltas) arr.push_back(json{{"system", d.system}, {"cells", d.cells}});
  return detail::canonical_dump(arr);
}

std::string render_delta_table(std::span<const ReportDelta> deltas) {
  std::string out;
  for (const auto& d : deltas) {
    out += fmt::format("{} (shifted - in-distribution, points)\n", d.system);
    for (const auto& [cell, v] : d.cells) out += fmt::format("  {:<12} {:+.1f}\n", cell, v);
  }
  return out;
}

}  // namespace leafdiag
