#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

namespace dualcbf {

struct TraceRow {
  double t = 0.0;
  std::vector<double> values;
  std::vector<std::string> tags;
  double solve_ms = 0.0;
};

/// Time-stamped simulation log. CSV layout: t, value columns, tag columns,
/// solve_ms.
struct Trace {
  std::vector<std::string> value_columns;
  std::vector<std::string> tag_columns;
  std::vector<TraceRow> rows;

  Eigen::Index column(const std::string& name) const {
    for (size_t k = 0; k < value_columns.size(); ++k)
      if (value_columns[k] == name) return static_cast<Eigen::Index>(k);
    return -1;
  }

  std::vector<double> series(const std::string& name) const {
    const Eigen::Index c = column(name);
    std::vector<double> out;
    if (c < 0) return out;
    for (const auto& r : rows) out.push_back(r.values[static_cast<size_t>(c)]);
    return out;
  }
};

inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

/// Writes the trace; solve_ms is printed as "nan" unless `timing` is set so
/// that repeated runs are byte-identical.
inline void write_csv(std::ostream& os, const Trace& trace, bool timing = false) {
  os << "t";
  for (const auto& c : trace.value_columns) os << ',' << c;
  for (const auto& c : trace.tag_columns) os << ',' << c;
  os << ",solve_ms\n";
  for (const auto& r : trace.rows) {
    os << format_number(r.t);
    for (double v : r.values) os << ',' << format_number(v);
    for (const auto& s : r.tags) os << ',' << s;
    os << ',' << (timing ? format_number(r.solve_ms) : std::string("nan")) << '\n';
  }
}

}  // namespace dualcbf
