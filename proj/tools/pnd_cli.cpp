#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pnd/checkpoint.hpp"
#include "pnd/config.hpp"
#include "pnd/error.hpp"
#include "pnd/froc.hpp"
#include "pnd/gradcheck_suite.hpp"
#include "pnd/metaimage.hpp"
#include "pnd/pipeline.hpp"
#include "pnd/records.hpp"
#include "pnd/rng.hpp"

namespace fs = std::filesystem;
using namespace pnd;

namespace {

enum ExitCode { kOk = 0, kCheckFailed = 1, kConfigError = 2, kDiverged = 3, kCheckpointMismatch = 4, kUndefinedMetric = 5 };

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c, bool with_config) {
  if (with_config) {
    cmd->add_option("--config", c.config_path, "run config file (key = value under [section] headers)");
    cmd->add_option("--set", c.overrides, "override a config key, e.g. --set train.epochs=5 (repeatable)");
  }
  cmd->add_option("--seed", c.seed, "base seed for all randomness (default: train.seed, 42)");
}

RunConfig resolve_config(const Common& c) {
  RunConfig cfg = c.config_path.empty() ? RunConfig{} : load_run_config(c.config_path);
  for (const auto& o : c.overrides) apply_config_override(cfg, o);
  if (c.seed) cfg.train.seed = *c.seed;
  cfg.validate();
  return cfg;
}

void print_result(const std::string& line) { std::cout << "RESULT " << line << "\n"; }

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

void save_log(const std::string& out, const TrainLog& log) {
  write_text_file(out + ".loss.csv", write_loss_csv(log));
}

void report_training(const std::string& out, const TrainLog& log) {
  save_log(out, log);
  if (log.epoch_means.empty()) {
    print_result("epochs=0");
    return;
  }
  print_result("first_epoch_loss=" + fixed6(log.epoch_means.front()) +
               " final_epoch_loss=" + fixed6(log.epoch_means.back()));
}

EpochCallback epoch_printer(const char* stage) {
  return [stage](int epoch, double loss) {
    std::cout << stage << " epoch " << epoch << " loss " << fixed6(loss) << std::endl;
  };
}

int cmd_synth(const Common& common, const std::string& out, int count, const std::string& split) {
  const RunConfig cfg = resolve_config(common);
  if (count < 0) throw ConfigError("--count must be >= 0");
  const auto scans = synthesize_phantoms(cfg.phantom, count, split_seed(cfg.train.seed, split));
  write_dataset(out, scans);
  std::size_t nodules = 0;
  for (const auto& s : scans) nodules += s.annotations.size();
  print_result("scans=" + std::to_string(scans.size()) + " nodules=" + std::to_string(nodules));
  return kOk;
}

int cmd_gradcheck(const Common& common, const std::string& corrupt) {
  const std::uint64_t seed = common.seed.value_or(42);
  const auto results = run_gradcheck_suite(seed, corrupt);
  std::vector<std::string> failing;
  std::cout << "component,max_rel_err\n";
  for (const auto& r : results) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%s,%.3e\n", r.component.c_str(), r.max_rel_error);
    std::cout << buf;
    if (!r.passed()) failing.push_back(r.component);
  }
  if (failing.empty()) {
    print_result("gradcheck=pass components=" + std::to_string(results.size()));
    return kOk;
  }
  std::string list;
  for (const auto& f : failing) list += (list.empty() ? "" : ",") + f;
  std::cerr << "gradient check failed for: " << list << "\n";
  print_result("gradcheck=fail failing=" + list);
  return kCheckFailed;
}

int cmd_train_rpn(const Common& common, const std::string& data, const std::string& out) {
  const RunConfig cfg = resolve_config(common);
  const auto scans = load_dataset(data);
  RpnModel model(cfg.stage1);
  model.init(derive_seed(cfg.train.seed, "rpn-init"));
  const TrainLog log = train_stage1(scans, model, cfg.stage1, cfg.optimizer_for_stage(1), cfg.focal,
                                    epoch_printer("stage1"));
  save_checkpoint(out, make_checkpoint(model));
  report_training(out, log);
  return kOk;
}

RpnModel load_rpn(const std::string& path, RunConfig& cfg) {
  RpnModel model = rpn_from_checkpoint(load_checkpoint(path));
  cfg.stage1.feature_stride = model.feature_stride();
  cfg.stage1.anchor_scales = model.anchor_scales();
  return model;
}

int cmd_train_fpr(const Common& common, const std::string& data, const std::string& out, const std::string& rpn_path) {
  RunConfig cfg = resolve_config(common);
  RpnModel rpn = load_rpn(rpn_path, cfg);
  const auto scans = load_dataset(data);
  const auto samples = build_stage2_samples(scans, rpn, cfg.stage1, cfg.stage2, derive_seed(cfg.train.seed, "stage2-samples"));
  std::size_t positives = 0;
  for (const auto& s : samples) positives += static_cast<std::size_t>(s.label);
  std::cout << "stage2 samples " << samples.size() << " positive " << positives << std::endl;
  FprModel model(cfg.stage2);
  model.init(derive_seed(cfg.train.seed, "fpr-init"));
  const TrainLog log = train_stage2(samples, model, cfg.optimizer_for_stage(2), cfg.focal, epoch_printer("stage2"));
  save_checkpoint(out, make_checkpoint(model));
  report_training(out, log);
  return kOk;
}

int cmd_detect(const Common& common, const std::vector<std::string>& scan_args, const std::string& rpn_path,
               const std::string& fpr_path, const std::string& out, std::optional<double> threshold) {
  RunConfig cfg = resolve_config(common);
  RpnModel rpn = load_rpn(rpn_path, cfg);
  std::optional<FprModel> fpr;
  if (!fpr_path.empty()) fpr.emplace(fpr_from_checkpoint(load_checkpoint(fpr_path)));
  const double t = threshold.value_or(cfg.stage2.threshold);
  if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("--threshold must be in [0, 1]");

  std::vector<fs::path> files;
  for (const auto& a : scan_args) {
    if (fs::is_directory(a)) {
      const auto listed = list_scan_files(a);
      files.insert(files.end(), listed.begin(), listed.end());
    } else {
      files.emplace_back(a);
    }
  }
  if (files.empty()) throw InputError("no scans to process");
  std::vector<Candidate> all;
  for (const auto& f : files) {
    const Volume v = load_scan(f);
    const auto c = detect_candidates(v, f.stem().string(), rpn, cfg.stage1, fpr ? &*fpr : nullptr, cfg.stage2, t);
    std::cout << f.stem().string() << ": " << c.size() << " candidates" << std::endl;
    all.insert(all.end(), c.begin(), c.end());
  }
  write_text_file(out, write_candidates_csv(all));
  print_result("scans=" + std::to_string(files.size()) + " candidates=" + std::to_string(all.size()));
  return kOk;
}

int cmd_evaluate(const std::string& cand_path, const std::string& ann_path, int n_scans, const std::string& out,
                 const std::string& svg, const std::string& name) {
  const auto candidates = read_candidates_csv(read_text_file(cand_path));
  std::vector<std::string> warnings;
  const auto annotations = read_annotations_csv(read_text_file(ann_path), &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
  // Scans without nodules only show up through their candidates; they count
  // toward --scans like any other.
  std::set<std::string> seen;
  for (const auto& a : annotations) seen.insert(a.scan_id);
  std::vector<std::string> extra;
  for (const auto& c : candidates) {
    if (seen.insert(c.scan_id).second) extra.push_back(c.scan_id);
  }
  if (static_cast<int>(seen.size()) > n_scans) {
    throw InputError("candidates and annotations cover " + std::to_string(seen.size()) + " scans but --scans is " +
                     std::to_string(n_scans));
  }
  const MatchResult match = match_candidates(candidates, annotations, extra);
  const FrocCurve curve = froc_curve(match, n_scans);
  const RecallReport recall = recall_report(match);
  write_text_file(out, write_froc_csv(curve));
  if (!svg.empty()) write_text_file(svg, render_froc_svg(curve, "FROC - " + name));

  for (std::size_t k = 0; k < kFrocOperatingPoints.size(); ++k) {
    print_result("sensitivity@" + format_double(kFrocOperatingPoints[k]) + "=" + fixed6(curve.operating_sensitivities[k]));
  }
  print_result("mean_sensitivity=" + fixed6(curve.mean_sensitivity));
  print_result("recall=" + fixed6(recall.recall) + " detected=" + std::to_string(recall.detected) + "/" +
               std::to_string(recall.total) + " candidates=" + std::to_string(recall.candidate_count));
  std::cout << format_recall_table(name, recall);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pnd: two-stage pulmonary nodule detection on 3-D CT volumes"};
  app.require_subcommand(1);
  const std::string keys = "\nConfig keys (section.key = default):\n" + describe_config_keys();

  Common common;
  std::string out, data, rpn_path, fpr_path, split, corrupt, cand_path, ann_path, svg, name = "ours";
  std::vector<std::string> scans;
  int count = 0, n_scans = 0;
  std::optional<double> threshold;

  auto* synth = app.add_subcommand("synth", "generate phantom scans (.mhd/.raw) and annotations.csv");
  add_common(synth, common, true);
  synth->add_option("--out", out, "output directory")->required();
  synth->add_option("--count", count, "number of phantoms")->required();
  synth->add_option("--split", split, "split name salting the seed, e.g. train or heldout");
  synth->footer(keys);

  auto* grad = app.add_subcommand("gradcheck", "compare analytic gradients with central differences");
  add_common(grad, common, false);
  grad->add_option("--corrupt", corrupt, "scale one component's backward by 1.1 (negative control)");

  auto* trpn = app.add_subcommand("train-rpn", "train the stage-1 proposal network");
  add_common(trpn, common, true);
  trpn->add_option("--data", data, "dataset directory from synth")->required();
  trpn->add_option("--out", out, "checkpoint path; the loss log goes to <out>.loss.csv")->required();
  trpn->footer(keys);

  auto* tfpr = app.add_subcommand("train-fpr", "train the stage-2 false-positive classifier");
  add_common(tfpr, common, true);
  tfpr->add_option("--data", data, "dataset directory from synth")->required();
  tfpr->add_option("--out", out, "checkpoint path; the loss log goes to <out>.loss.csv")->required();
  tfpr->add_option("--rpn", rpn_path, "stage-1 checkpoint producing the training candidates")->required();
  tfpr->footer(keys);

  auto* det = app.add_subcommand("detect", "write candidate nodules for one or more scans");
  add_common(det, common, true);
  det->add_option("--scan", scans, "scan .mhd file or directory of scans (repeatable)")->required();
  det->add_option("--rpn", rpn_path, "stage-1 checkpoint")->required();
  det->add_option("--fpr", fpr_path, "stage-2 checkpoint; omit for raw stage-1 candidates");
  det->add_option("--out", out, "candidates CSV")->required();
  det->add_option("--threshold", threshold, "stage-2 probability cut (default stage2.threshold)");
  det->footer(keys);

  auto* eval = app.add_subcommand("evaluate", "FROC analysis of a candidates CSV");
  eval->add_option("--candidates", cand_path, "candidates CSV")->required();
  eval->add_option("--annotations", ann_path, "annotations CSV")->required();
  eval->add_option("--scans", n_scans, "number of scans the candidates cover")->required();
  eval->add_option("--out", out, "FROC points CSV")->required();
  eval->add_option("--svg", svg, "optional FROC plot");
  eval->add_option("--name", name, "model name for the recall table");
  eval->add_option("--seed", common.seed, "accepted for uniformity; evaluation is deterministic");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*synth) return cmd_synth(common, out, count, split);
    if (*grad) return cmd_gradcheck(common, corrupt);
    if (*trpn) return cmd_train_rpn(common, data, out);
    if (*tfpr) return cmd_train_fpr(common, data, out, rpn_path);
    if (*det) return cmd_detect(common, scans, rpn_path, fpr_path, out, threshold);
    if (*eval) return cmd_evaluate(cand_path, ann_path, n_scans, out, svg, name);
  } catch (const DivergedError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDiverged;
  } catch (const CheckpointError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kCheckpointMismatch;
  } catch (const UndefinedMetricError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUndefinedMetric;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfigError;
  }
  return kConfigError;
}
