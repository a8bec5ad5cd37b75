#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "pnd/records.hpp"

namespace pnd {

inline constexpr std::array<double, 7> kFrocOperatingPoints{0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0};

// A candidate hits an annotation of the same scan when their world distance is
// strictly below the annotation radius.
bool is_hit(const Candidate& candidate, const Annotation& annotation);

struct MatchResult {
  std::vector<Candidate> candidates;
  std::vector<Annotation> annotations;
  // Per candidate: nearest hit annotation (ties -> lower index), or -1.
  std::vector<int> matched_annotation;
  // Per candidate: the highest-probability hitter of at least one annotation
  // (ties -> lower candidate index). Other hitters are neither TP nor FP.
  std::vector<bool> true_positive;
  // Per annotation: probability of its best hitter, or -1 when never hit.
  std::vector<double> best_hit_probability;

  bool hit(std::size_t i) const { return matched_annotation[i] >= 0; }
  bool false_positive(std::size_t i) const { return matched_annotation[i] < 0; }
  std::size_t detected_count() const;
};

// Scans are identified by the annotation scan ids plus `extra_scans` (scans
// without nodules). A candidate on any other scan raises InputError.
MatchResult match_candidates(const std::vector<Candidate>& candidates,
                             const std::vector<Annotation>& annotations,
                             const std::vector<std::string>& extra_scans = {});

struct FrocPoint {
  double threshold = 0.0;
  double fp_per_scan = 0.0;
  double sensitivity = 0.0;
};

struct FrocCurve {
  std::vector<FrocPoint> points;  // one per distinct probability, descending
  std::array<double, 7> operating_sensitivities{};
  double mean_sensitivity = 0.0;
};

// Sweeps every distinct candidate probability from high to low. Sensitivity at
// a point is the fraction of annotations whose best hitter clears the
// threshold; fp_per_scan counts non-hitters above it. Operating sensitivities
// take the largest sensitivity with fp_per_scan <= the operating point (0 if
// none). Throws UndefinedMetricError without annotations, ConfigError when
// n_scans < 1.
FrocCurve froc_curve(const MatchResult& match, int n_scans);

struct RecallReport {
  double recall = 0.0;
  std::size_t candidate_count = 0;
  std::size_t detected = 0;
  std::size_t total = 0;
};

RecallReport recall_report(const MatchResult& match);

// "Model\tRecall rate / %\tNumber of nodules/n" header and one row.
std::string format_recall_table(const std::string& model_name, const RecallReport& report);

// `fp_per_scan,sensitivity` header then one row per curve point.
std::string write_froc_csv(const FrocCurve& curve);

// Standalone SVG: log-scaled x over [0.125, 8], sensitivity on y, the step
// curve and the seven operating points marked.
std::string render_froc_svg(const FrocCurve& curve, const std::string& title);

}  // namespace pnd
