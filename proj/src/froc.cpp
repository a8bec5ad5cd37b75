#include "pnd/froc.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <unordered_map>

#include "pnd/error.hpp"

namespace pnd {

namespace {

double world_distance(const Vec3& a, const Vec3& b) {
  const double dz = a[0] - b[0], dy = a[1] - b[1], dx = a[2] - b[2];
  return std::sqrt(dz * dz + dy * dy + dx * dx);
}

std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string fmt2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

bool is_hit(const Candidate& candidate, const Annotation& annotation) {
  return candidate.scan_id == annotation.scan_id &&
         world_distance(candidate.center_world, annotation.center_world) < annotation.diameter_mm / 2.0;
}

std::size_t MatchResult::detected_count() const {
  return static_cast<std::size_t>(
      std::count_if(best_hit_probability.begin(), best_hit_probability.end(), [](double p) { return p >= 0.0; }));
}

MatchResult match_candidates(const std::vector<Candidate>& candidates,
                             const std::vector<Annotation>& annotations,
                             const std::vector<std::string>& extra_scans) {
  std::unordered_map<std::string, std::vector<std::size_t>> by_scan;
  for (std::size_t j = 0; j < annotations.size(); ++j) {
    if (!(annotations[j].diameter_mm > 0.0)) throw InputError("annotation diameter must be positive");
    by_scan[annotations[j].scan_id].push_back(j);
  }
  for (const auto& s : extra_scans) by_scan.try_emplace(s);

  MatchResult m;
  m.candidates = candidates;
  m.annotations = annotations;
  m.matched_annotation.assign(candidates.size(), -1);
  m.true_positive.assign(candidates.size(), false);
  m.best_hit_probability.assign(annotations.size(), -1.0);
  std::vector<int> best_hitter(annotations.size(), -1);

  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const Candidate& c = candidates[i];
    const auto it = by_scan.find(c.scan_id);
    if (it == by_scan.end()) throw InputError("candidate references unknown scan '" + c.scan_id + "'");
    double nearest = 0.0;
    for (std::size_t j : it->second) {
      const Annotation& a = annotations[j];
      const double d = world_distance(c.center_world, a.center_world);
      if (!(d < a.diameter_mm / 2.0)) continue;
      if (m.matched_annotation[i] < 0 || d < nearest) {
        m.matched_annotation[i] = static_cast<int>(j);
        nearest = d;
      }
      if (best_hitter[j] < 0 || c.probability > m.best_hit_probability[j]) {
        best_hitter[j] = static_cast<int>(i);
        m.best_hit_probability[j] = c.probability;
      }
    }
  }
  for (int i : best_hitter) {
    if (i >= 0) m.true_positive[static_cast<std::size_t>(i)] = true;
  }
  return m;
}

FrocCurve froc_curve(const MatchResult& match, int n_scans) {
  if (match.annotations.empty()) throw UndefinedMetricError("FROC is undefined without annotations");
  if (n_scans < 1) throw ConfigError("n_scans must be >= 1");
  const double total = static_cast<double>(match.annotations.size());

  std::vector<double> detected_probs;
  for (double p : match.best_hit_probability) {
    if (p >= 0.0) detected_probs.push_back(p);
  }
  std::vector<double> fp_probs;
  std::set<double, std::greater<>> thresholds;
  for (std::size_t i = 0; i < match.candidates.size(); ++i) {
    thresholds.insert(match.candidates[i].probability);
    if (match.false_positive(i)) fp_probs.push_back(match.candidates[i].probability);
  }
  std::sort(detected_probs.begin(), detected_probs.end(), std::greater<>());
  std::sort(fp_probs.begin(), fp_probs.end(), std::greater<>());

  FrocCurve curve;
  std::size_t di = 0, fi = 0;
  for (double t : thresholds) {
    while (di < detected_probs.size() && detected_probs[di] >= t) ++di;
    while (fi < fp_probs.size() && fp_probs[fi] >= t) ++fi;
    curve.points.push_back({t, static_cast<double>(fi) / n_scans, static_cast<double>(di) / total});
  }
  double sum = 0.0;
  for (std::size_t k = 0; k < kFrocOperatingPoints.size(); ++k) {
    double best = 0.0;
    for (const FrocPoint& p : curve.points) {
      if (p.fp_per_scan <= kFrocOperatingPoints[k]) best = std::max(best, p.sensitivity);
    }
    curve.operating_sensitivities[k] = best;
    sum += best;
  }
  curve.mean_sensitivity = sum / static_cast<double>(kFrocOperatingPoints.size());
  return curve;
}

RecallReport recall_report(const MatchResult& match) {
  if (match.annotations.empty()) throw UndefinedMetricError("recall is undefined without annotations");
  RecallReport r;
  r.total = match.annotations.size();
  r.detected = match.detected_count();
  r.candidate_count = match.candidates.size();
  r.recall = static_cast<double>(r.detected) / static_cast<double>(r.total);
  return r;
}

std::string format_recall_table(const std::string& model_name, const RecallReport& report) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f", report.recall);
  return "Model\tRecall rate / %\tNumber of nodules/n\n" + model_name + "\t" + buf + "\t" +
         std::to_string(report.candidate_count) + "\n";
}

std::string write_froc_csv(const FrocCurve& curve) {
  std::string out = "fp_per_scan,sensitivity\n";
  for (const FrocPoint& p : curve.points) out += fmt6(p.fp_per_scan) + "," + fmt6(p.sensitivity) + "\n";
  return out;
}

std::string render_froc_svg(const FrocCurve& curve, const std::string& title) {
  constexpr double kW = 640, kH = 480, kLeft = 70, kRight = 20, kTop = 40, kBottom = 60;
  const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
  const double lx0 = std::log2(kFrocOperatingPoints.front()), lx1 = std::log2(kFrocOperatingPoints.back());
  auto sx = [&](double fp) {
    const double l = std::clamp(std::log2(std::max(fp, kFrocOperatingPoints.front())), lx0, lx1);
    return kLeft + (l - lx0) / (lx1 - lx0) * pw;
  };
  auto sy = [&](double s) { return kTop + (1.0 - s) * ph; };

  std::string svg;
  svg += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"480\" viewBox=\"0 0 640 480\">\n";
  svg += "<rect x=\"0\" y=\"0\" width=\"640\" height=\"480\" fill=\"white\"/>\n";
  svg += "<text x=\"320\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" + xml_escape(title) + "</text>\n";
  svg += "<g id=\"axes\" stroke=\"black\" fill=\"none\">\n";
  svg += "<line x1=\"" + fmt2(kLeft) + "\" y1=\"" + fmt2(kTop + ph) + "\" x2=\"" + fmt2(kLeft + pw) + "\" y2=\"" +
         fmt2(kTop + ph) + "\"/>\n";
  svg += "<line x1=\"" + fmt2(kLeft) + "\" y1=\"" + fmt2(kTop) + "\" x2=\"" + fmt2(kLeft) + "\" y2=\"" +
         fmt2(kTop + ph) + "\"/>\n";
  svg += "</g>\n<g id=\"ticks\" font-size=\"12\">\n";
  for (double op : kFrocOperatingPoints) {
    svg += "<text x=\"" + fmt2(sx(op)) + "\" y=\"" + fmt2(kTop + ph + 18) + "\" text-anchor=\"middle\">" +
           (op < 1 ? fmt6(op).substr(0, 5) : std::to_string(static_cast<int>(op))) + "</text>\n";
  }
  for (int k = 0; k <= 5; ++k) {
    const double s = k / 5.0;
    svg += "<text x=\"" + fmt2(kLeft - 8) + "\" y=\"" + fmt2(sy(s) + 4) + "\" text-anchor=\"end\">" +
           fmt2(s) + "</text>\n";
  }
  svg += "</g>\n";
  svg += "<text x=\"" + fmt2(kLeft + pw / 2) + "\" y=\"" + fmt2(kH - 15) +
         "\" text-anchor=\"middle\" font-size=\"13\">Average number of false positives per scan</text>\n";
  svg += "<text x=\"18\" y=\"" + fmt2(kTop + ph / 2) + "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 18 " +
         fmt2(kTop + ph / 2) + ")\">Sensitivity</text>\n";

  // Step curve evaluated on a dense log grid using the same lookup as the
  // operating points.
  auto sensitivity_at = [&](double fp) {
    double best = 0.0;
    for (const FrocPoint& p : curve.points) {
      if (p.fp_per_scan <= fp) best = std::max(best, p.sensitivity);
    }
    return best;
  };
  std::string pts;
  constexpr int kSamples = 120;
  for (int k = 0; k <= kSamples; ++k) {
    const double fp = std::exp2(lx0 + (lx1 - lx0) * k / kSamples);
    pts += fmt2(sx(fp)) + "," + fmt2(sy(sensitivity_at(fp))) + " ";
  }
  pts.pop_back();
  svg += "<polyline id=\"froc\" fill=\"none\" stroke=\"#1f5fbf\" stroke-width=\"2\" points=\"" + pts + "\"/>\n";
  svg += "<g id=\"operating-points\" fill=\"#d9480f\">\n";
  for (std::size_t k = 0; k < kFrocOperatingPoints.size(); ++k) {
    svg += "<circle class=\"operating-point\" cx=\"" + fmt2(sx(kFrocOperatingPoints[k])) + "\" cy=\"" +
           fmt2(sy(curve.operating_sensitivities[k])) + "\" r=\"4\"/>\n";
  }
  svg += "</g>\n</svg>\n";
  return svg;
}

}  // namespace pnd
