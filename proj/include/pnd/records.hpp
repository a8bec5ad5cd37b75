#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "pnd/boxes.hpp"

namespace pnd {

// Ground-truth nodule; center in world millimetres, (z, y, x).
struct Annotation {
  std::string scan_id;
  Vec3 center_world{0.0, 0.0, 0.0};
  double diameter_mm = 0.0;
};

// Detection in world millimetres, (z, y, x).
struct Candidate {
  std::string scan_id;
  Vec3 center_world{0.0, 0.0, 0.0};
  double probability = 0.0;
};

// LUNA16-style CSVs. Headers:
//   annotations: seriesuid,coordX,coordY,coordZ,diameter_mm
//   candidates:  seriesuid,coordX,coordY,coordZ,probability
// Coordinates are (x, y, z) in the file and (z, y, x) in memory. Columns are
// located by header name. Errors report the 1-based line number.
// Diameters outside [1, 64] mm are accepted; `warnings` (if given) receives a
// message for each.
std::vector<Annotation> read_annotations_csv(std::string_view text,
                                             std::vector<std::string>* warnings = nullptr);
std::vector<Candidate> read_candidates_csv(std::string_view text);

// Six decimal places, newline-terminated rows.
std::string write_annotations_csv(const std::vector<Annotation>& annotations);
std::string write_candidates_csv(const std::vector<Candidate>& candidates);

}  // namespace pnd
