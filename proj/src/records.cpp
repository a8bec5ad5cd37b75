#include "pnd/records.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "pnd/error.hpp"

namespace pnd {

namespace {

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  for (auto& f : fields) {
    const auto b = f.find_first_not_of(" \t");
    const auto e = f.find_last_not_of(" \t");
    f = b == std::string::npos ? std::string() : f.substr(b, e - b + 1);
  }
  return fields;
}

struct Table {
  std::vector<std::string> header;
  // (line number, fields)
  std::vector<std::pair<int, std::vector<std::string>>> rows;
};

Table parse_table(std::string_view text) {
  Table t;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    const std::string_view line =
        text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    ++line_no;
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    auto fields = split_csv_line(line);
    if (t.header.empty()) {
      t.header = std::move(fields);
    } else {
      t.rows.emplace_back(line_no, std::move(fields));
    }
  }
  if (t.header.empty()) throw ParseError("CSV is empty (line 1): missing header");
  return t;
}

std::size_t column(const Table& t, std::string_view name) {
  for (std::size_t i = 0; i < t.header.size(); ++i) {
    if (t.header[i] == name) return i;
  }
  throw ParseError("CSV header (line 1) missing column " + std::string(name));
}

double number_field(const std::vector<std::string>& row, std::size_t col, int line,
                    std::string_view name) {
  if (col >= row.size()) {
    throw ParseError("line " + std::to_string(line) + ": missing field " + std::string(name));
  }
  const std::string& s = row[col];
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc{} || res.ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw ParseError("line " + std::to_string(line) + ": non-numeric " + std::string(name) +
                     " '" + s + "'");
  }
  return v;
}

std::string text_field(const std::vector<std::string>& row, std::size_t col, int line) {
  if (col >= row.size() || row[col].empty()) {
    throw ParseError("line " + std::to_string(line) + ": missing field seriesuid");
  }
  return row[col];
}

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

std::vector<Annotation> read_annotations_csv(std::string_view text,
                                             std::vector<std::string>* warnings) {
  const Table t = parse_table(text);
  const auto c_id = column(t, "seriesuid"), c_x = column(t, "coordX"), c_y = column(t, "coordY"),
             c_z = column(t, "coordZ"), c_d = column(t, "diameter_mm");
  std::vector<Annotation> out;
  for (const auto& [line, row] : t.rows) {
    Annotation a;
    a.scan_id = text_field(row, c_id, line);
    a.center_world = {number_field(row, c_z, line, "coordZ"), number_field(row, c_y, line, "coordY"),
                      number_field(row, c_x, line, "coordX")};
    a.diameter_mm = number_field(row, c_d, line, "diameter_mm");
    if (!(a.diameter_mm > 0.0)) {
      throw ParseError("line " + std::to_string(line) + ": diameter_mm must be positive");
    }
    if (warnings && (a.diameter_mm < 1.0 || a.diameter_mm > 64.0)) {
      warnings->push_back("line " + std::to_string(line) + ": diameter " + fixed6(a.diameter_mm) +
                          " mm outside the plausible range [1, 64]");
    }
    out.push_back(std::move(a));
  }
  return out;
}

std::vector<Candidate> read_candidates_csv(std::string_view text) {
  const Table t = parse_table(text);
  const auto c_id = column(t, "seriesuid"), c_x = column(t, "coordX"), c_y = column(t, "coordY"),
             c_z = column(t, "coordZ"), c_p = column(t, "probability");
  std::vector<Candidate> out;
  for (const auto& [line, row] : t.rows) {
    Candidate c;
    c.scan_id = text_field(row, c_id, line);
    c.center_world = {number_field(row, c_z, line, "coordZ"), number_field(row, c_y, line, "coordY"),
                      number_field(row, c_x, line, "coordX")};
    c.probability = number_field(row, c_p, line, "probability");
    if (c.probability < 0.0 || c.probability > 1.0) {
      throw ParseError("line " + std::to_string(line) + ": probability outside [0, 1]");
    }
    out.push_back(std::move(c));
  }
  return out;
}

std::string write_annotations_csv(const std::vector<Annotation>& annotations) {
  std::string out = "seriesuid,coordX,coordY,coordZ,diameter_mm\n";
  for (const auto& a : annotations) {
    out += a.scan_id + "," + fixed6(a.center_world[2]) + "," + fixed6(a.center_world[1]) + "," +
           fixed6(a.center_world[0]) + "," + fixed6(a.diameter_mm) + "\n";
  }
  return out;
}

std::string write_candidates_csv(const std::vector<Candidate>& candidates) {
  std::string out = "seriesuid,coordX,coordY,coordZ,probability\n";
  for (const auto& c : candidates) {
    out += c.scan_id + "," + fixed6(c.center_world[2]) + "," + fixed6(c.center_world[1]) + "," +
           fixed6(c.center_world[0]) + "," + fixed6(c.probability) + "\n";
  }
  return out;
}

}  // namespace pnd
