#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "pnd/error.hpp"
#include "pnd/froc.hpp"

using namespace pnd;

namespace {

std::vector<std::string> scan_names(int n) {
  std::vector<std::string> out;
  for (int i = 0; i < n; ++i) out.push_back("s" + std::to_string(i));
  return out;
}

FrocCurve curve_for(const oracle::FrocInstance& inst) {
  return froc_curve(match_candidates(inst.candidates, inst.annotations, scan_names(inst.n_scans)), inst.n_scans);
}

void expect_same_curve(const FrocCurve& got, const FrocCurve& want) {
  ASSERT_EQ(got.points.size(), want.points.size());
  for (std::size_t i = 0; i < got.points.size(); ++i) {
    EXPECT_EQ(got.points[i].threshold, want.points[i].threshold);
    EXPECT_EQ(got.points[i].fp_per_scan, want.points[i].fp_per_scan);
    EXPECT_EQ(got.points[i].sensitivity, want.points[i].sensitivity);
  }
  EXPECT_EQ(got.operating_sensitivities, want.operating_sensitivities);
  EXPECT_EQ(got.mean_sensitivity, want.mean_sensitivity);
}

// Two scans, three nodules, five candidates: one per nodule, one far miss and
// one sitting exactly on a nodule's radius.
struct HandInstance {
  std::vector<Annotation> anns{{"a", {0, 0, 0}, 10.0}, {"a", {50, 0, 0}, 6.0}, {"b", {0, 0, 0}, 8.0}};
  std::vector<Candidate> cands{{"a", {1, 0, 0}, 0.9},
                               {"a", {20, 20, 20}, 0.8},
                               {"a", {51, 1, 0}, 0.6},
                               {"b", {0, 4, 0}, 0.7},
                               {"b", {0, 0, 2}, 0.3}};
};

}  // namespace

TEST(IsHit, StrictRadius) {
  const Annotation a{"s", {0, 0, 0}, 6.0};
  EXPECT_TRUE(is_hit({"s", {2.0, 0, 0}, 1.0}, a));
  EXPECT_FALSE(is_hit({"s", {3.0, 0, 0}, 1.0}, a));
  EXPECT_FALSE(is_hit({"t", {0, 0, 0}, 1.0}, a));
}

TEST(MatchCandidates, TwoHittersAndAMiss) {
  const std::vector<Annotation> anns{{"s", {0, 0, 0}, 10.0}};
  const std::vector<Candidate> cands{{"s", {1, 0, 0}, 0.6}, {"s", {0, 2, 0}, 0.8}, {"s", {40, 0, 0}, 0.9}};
  const MatchResult m = match_candidates(cands, anns);
  EXPECT_FALSE(m.true_positive[0]);
  EXPECT_TRUE(m.hit(0));
  EXPECT_FALSE(m.false_positive(0));
  EXPECT_TRUE(m.true_positive[1]);
  EXPECT_TRUE(m.false_positive(2));
  EXPECT_EQ(m.detected_count(), 1u);
  EXPECT_EQ(m.best_hit_probability[0], 0.8);
}

TEST(MatchCandidates, UnknownScanIsInputError) {
  const std::vector<Annotation> anns{{"s", {0, 0, 0}, 10.0}};
  EXPECT_THROW(match_candidates({{"x", {0, 0, 0}, 0.5}}, anns), InputError);
  EXPECT_NO_THROW(match_candidates({{"x", {0, 0, 0}, 0.5}}, anns, {"x"}));
}

TEST(MatchCandidatesProperty, AgreesWithOracle) {
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    const auto inst = oracle::random_froc_instance(seed);
    const MatchResult m = match_candidates(inst.candidates, inst.annotations, scan_names(inst.n_scans));
    const oracle::Match want = oracle::match(inst.candidates, inst.annotations);
    for (std::size_t i = 0; i < inst.candidates.size(); ++i) {
      EXPECT_EQ(m.hit(i), want.hit[i]);
      EXPECT_EQ(static_cast<bool>(m.true_positive[i]), want.tp[i]);
    }
  }
}

TEST(FrocCurve, HandInstance) {
  const HandInstance h;
  const FrocCurve c = froc_curve(match_candidates(h.cands, h.anns), 2);
  ASSERT_EQ(c.points.size(), 5u);
  const double third = 1.0 / 3.0;
  const std::vector<std::array<double, 3>> want{
      {0.9, 0.0, third}, {0.8, 0.5, third}, {0.7, 1.0, third}, {0.6, 1.0, 2 * third}, {0.3, 1.0, 1.0}};
  for (std::size_t i = 0; i < want.size(); ++i) {
    EXPECT_EQ(c.points[i].threshold, want[i][0]);
    EXPECT_DOUBLE_EQ(c.points[i].fp_per_scan, want[i][1]);
    EXPECT_DOUBLE_EQ(c.points[i].sensitivity, want[i][2]);
  }
  const std::array<double, 7> ops{third, third, third, 1.0, 1.0, 1.0, 1.0};
  for (std::size_t k = 0; k < 7; ++k) EXPECT_DOUBLE_EQ(c.operating_sensitivities[k], ops[k]);
  EXPECT_NEAR(c.mean_sensitivity, 5.0 / 7.0, 1e-15);
  expect_same_curve(c, oracle::froc(h.cands, h.anns, 2));
}

TEST(FrocCurve, PerfectAndEmptyDetectors) {
  const HandInstance h;
  std::vector<Candidate> perfect;
  for (const auto& a : h.anns) perfect.push_back({a.scan_id, a.center_world, 1.0});
  const FrocCurve p = froc_curve(match_candidates(perfect, h.anns), 2);
  for (double s : p.operating_sensitivities) EXPECT_EQ(s, 1.0);
  EXPECT_EQ(p.mean_sensitivity, 1.0);

  const FrocCurve e = froc_curve(match_candidates({}, h.anns), 2);
  EXPECT_TRUE(e.points.empty());
  for (double s : e.operating_sensitivities) EXPECT_EQ(s, 0.0);
  EXPECT_EQ(e.mean_sensitivity, 0.0);
}

TEST(FrocCurve, Errors) {
  EXPECT_THROW(froc_curve(match_candidates({}, {}), 1), UndefinedMetricError);
  const HandInstance h;
  EXPECT_THROW(froc_curve(match_candidates(h.cands, h.anns), 0), ConfigError);
  EXPECT_THROW(recall_report(match_candidates({}, {})), UndefinedMetricError);
}

TEST(FrocCurveProperty, EqualsExhaustiveSweep) {
  for (std::uint64_t seed = 0; seed < 500; ++seed) {
    const auto inst = oracle::random_froc_instance(seed, 50);
    SCOPED_TRACE(seed);
    expect_same_curve(curve_for(inst), oracle::froc(inst.candidates, inst.annotations, inst.n_scans));
  }
}

TEST(FrocCurveProperty, MonotoneBoundedAndMeanExact) {
  for (std::uint64_t seed = 1000; seed < 1300; ++seed) {
    const FrocCurve c = curve_for(oracle::random_froc_instance(seed));
    for (std::size_t i = 1; i < c.points.size(); ++i) {
      EXPECT_LT(c.points[i].threshold, c.points[i - 1].threshold);
      EXPECT_GE(c.points[i].sensitivity, c.points[i - 1].sensitivity);
      EXPECT_GE(c.points[i].fp_per_scan, c.points[i - 1].fp_per_scan);
    }
    double sum = 0.0;
    for (std::size_t k = 0; k < 7; ++k) {
      EXPECT_GE(c.operating_sensitivities[k], 0.0);
      EXPECT_LE(c.operating_sensitivities[k], 1.0);
      if (k > 0) {
        EXPECT_GE(c.operating_sensitivities[k], c.operating_sensitivities[k - 1]);
      }
      sum += c.operating_sensitivities[k];
    }
    EXPECT_EQ(c.mean_sensitivity, sum / 7.0);
  }
}

TEST(FrocCurveProperty, ExtraCandidates) {
  for (std::uint64_t seed = 2000; seed < 2200; ++seed) {
    auto inst = oracle::random_froc_instance(seed, 30);
    const auto names = scan_names(inst.n_scans);
    const FrocCurve before = curve_for(inst);
    const RecallReport recall_before = recall_report(match_candidates(inst.candidates, inst.annotations, names));

    // A miss far from every nodule.
    auto with_miss = inst;
    with_miss.candidates.push_back({"s0", {1000, 1000, 1000}, 0.55});
    const FrocCurve after_miss = curve_for(with_miss);
    for (std::size_t k = 0; k < 7; ++k) {
      EXPECT_LE(after_miss.operating_sensitivities[k], before.operating_sensitivities[k]);
    }

    // A hit on the first nodule.
    auto with_hit = inst;
    const Annotation& a = inst.annotations.front();
    with_hit.candidates.push_back({a.scan_id, a.center_world, 0.35});
    const RecallReport recall_after =
        recall_report(match_candidates(with_hit.candidates, with_hit.annotations, names));
    EXPECT_GE(recall_after.recall, recall_before.recall);
  }
}

TEST(RecallReport, TwoOfThree) {
  const std::vector<Annotation> anns{{"s", {0, 0, 0}, 4.0}, {"s", {10, 0, 0}, 4.0}, {"s", {20, 0, 0}, 4.0}};
  const std::vector<Candidate> cands{{"s", {0, 0, 0}, 0.1}, {"s", {10, 1, 0}, 0.2}, {"s", {50, 0, 0}, 0.9}};
  const RecallReport r = recall_report(match_candidates(cands, anns));
  EXPECT_NEAR(r.recall, 0.666667, 1e-6);
  EXPECT_EQ(r.candidate_count, 3u);
  EXPECT_EQ(r.detected, 2u);
  EXPECT_EQ(r.total, 3u);
}

TEST(RecallReport, TableRowLayout) {
  // Tab-separated, recall to three decimals.
  RecallReport r;
  r.recall = 0.898;
  r.candidate_count = 21;
  EXPECT_EQ(format_recall_table("Ours", r), "Model\tRecall rate / %\tNumber of nodules/n\nOurs\t0.898\t21\n");
  r.recall = 0.892;
  r.candidate_count = 350;
  EXPECT_EQ(format_recall_table("ISI CAD", r), "Model\tRecall rate / %\tNumber of nodules/n\nISI CAD\t0.892\t350\n");
}

TEST(FrocOutput, CsvAndSvg) {
  const HandInstance h;
  const FrocCurve c = froc_curve(match_candidates(h.cands, h.anns), 2);
  const std::string csv = write_froc_csv(c);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "fp_per_scan,sensitivity");
  EXPECT_NE(csv.find("0.500000,0.333333\n"), std::string::npos);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 6);

  const std::string svg = render_froc_svg(c, "a < b & c");
  std::size_t circles = 0;
  for (std::size_t pos = 0; (pos = svg.find("class=\"operating-point\"", pos)) != std::string::npos; ++pos) ++circles;
  EXPECT_EQ(circles, 7u);
  EXPECT_NE(svg.find("a &lt; b &amp; c"), std::string::npos);
  EXPECT_EQ(svg.find("a < b"), std::string::npos);
  EXPECT_NE(svg.rfind("</svg>"), std::string::npos);
}
