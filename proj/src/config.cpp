#include "pnd/config.hpp"

#include <charconv>
#include <functional>
#include <map>
#include <sstream>

#include "pnd/error.hpp"
#include "pnd/metaimage.hpp"

namespace pnd {

void PhantomSettings::validate() const {
  if (size_min < 8 || size_max < size_min) throw ConfigError("phantom size range must satisfy 8 <= size_min <= size_max");
  if (!(spacing > 0.0)) throw ConfigError("phantom spacing must be > 0");
  if (nodules_min < 0 || nodules_max < nodules_min) throw ConfigError("phantom nodule count range is invalid");
  if (!(diameter_min >= 3.0 && diameter_max <= 30.0 && diameter_min <= diameter_max)) {
    throw ConfigError("phantom diameter range must satisfy 3 <= diameter_min <= diameter_max <= 30 mm");
  }
  if (!(contrast > 0.0)) throw ConfigError("phantom contrast must be > 0");
  if (!(noise_sigma >= 0.0)) throw ConfigError("phantom noise_sigma must be >= 0");
}

OptimizerConfig RunConfig::optimizer_for_stage(int stage) const {
  if (stage != 1 && stage != 2) throw ConfigError("stage must be 1 or 2");
  OptimizerConfig o = train;
  const StageSchedule& s = stage == 1 ? stage1_schedule : stage2_schedule;
  if (s.epochs) o.epochs = *s.epochs;
  if (s.learning_rate) o.learning_rate = *s.learning_rate;
  if (s.batch_size) o.batch_size = *s.batch_size;
  return o;
}

void RunConfig::validate() const {
  train.validate();
  optimizer_for_stage(1).validate();
  optimizer_for_stage(2).validate();
  focal.validate();
  stage1.validate();
  stage2.validate();
  phantom.validate();
  if (eval.train_count < 0 || eval.heldout_count < 0) throw ConfigError("eval counts must be >= 0");
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& v) {
  T out{};
  const char* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc{} || ptr != end) throw ConfigError("'" + v + "' is not a valid number");
  return out;
}

template <typename T>
std::vector<T> parse_list(const std::string& v) {
  std::vector<T> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<T>(trim(item)));
  if (out.empty()) throw ConfigError("empty list");
  return out;
}

template <typename T>
std::string show(const T& v) {
  if constexpr (std::is_same_v<T, std::string>) {
    return v;
  } else if constexpr (std::is_floating_point_v<T>) {
    return format_double(v);
  } else {
    return std::to_string(v);
  }
}

template <typename T>
std::string show_list(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + show(v[i]);
  return out;
}

struct KeySpec {
  std::string help;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(RunConfig)> get;
};

using KeyTable = std::map<std::string, KeySpec>;

template <typename T, typename Access>
void scalar(KeyTable& t, const std::string& key, const std::string& help, Access access) {
  t[key] = {help,
            [access](RunConfig& c, const std::string& v) {
              if constexpr (std::is_same_v<T, std::string>) {
                access(c) = v;
              } else {
                access(c) = parse_number<T>(v);
              }
            },
            [access](RunConfig c) { return show(access(c)); }};
}

template <typename T, typename Access>
void optional_scalar(KeyTable& t, const std::string& key, const std::string& help, Access access) {
  t[key] = {help, [access](RunConfig& c, const std::string& v) { access(c) = parse_number<T>(v); },
            [access](RunConfig c) {
              const auto& o = access(c);
              return o ? show(*o) : std::string("(from [train])");
            }};
}

template <typename T, typename Access>
void list(KeyTable& t, const std::string& key, const std::string& help, Access access) {
  t[key] = {help, [access](RunConfig& c, const std::string& v) { access(c) = parse_list<T>(v); },
            [access](RunConfig c) { return show_list(access(c)); }};
}

const KeyTable& key_table() {
  static const KeyTable table = [] {
    KeyTable t;
    scalar<double>(t, "train.learning_rate", "SGD step size", [](RunConfig& c) -> auto& { return c.train.learning_rate; });
    scalar<double>(t, "train.momentum", "SGD momentum in [0,1)", [](RunConfig& c) -> auto& { return c.train.momentum; });
    scalar<int>(t, "train.batch_size", "samples per update", [](RunConfig& c) -> auto& { return c.train.batch_size; });
    scalar<int>(t, "train.epochs", "passes over the data", [](RunConfig& c) -> auto& { return c.train.epochs; });
    scalar<std::uint64_t>(t, "train.seed", "base seed (overridden by --seed)", [](RunConfig& c) -> auto& { return c.train.seed; });
    scalar<double>(t, "train.clip_norm", "gradient norm clip, <=0 disables", [](RunConfig& c) -> auto& { return c.train.clip_norm; });
    scalar<double>(t, "train.focal_eta", "focal loss scale", [](RunConfig& c) -> auto& { return c.focal.eta; });
    scalar<double>(t, "train.focal_zeta", "focal loss focusing exponent", [](RunConfig& c) -> auto& { return c.focal.zeta; });

    list<int>(t, "stage1.backbone_channels", "conv-conv-pool stage widths", [](RunConfig& c) -> auto& { return c.stage1.backbone_channels; });
    scalar<int>(t, "stage1.head_channels", "shared head width", [](RunConfig& c) -> auto& { return c.stage1.head_channels; });
    scalar<int>(t, "stage1.feature_stride", "anchor grid stride (power of two)", [](RunConfig& c) -> auto& { return c.stage1.feature_stride; });
    list<double>(t, "stage1.anchor_scales", "cubic anchor edges, voxels", [](RunConfig& c) -> auto& { return c.stage1.anchor_scales; });
    scalar<int>(t, "stage1.patch_size", "inference tile edge", [](RunConfig& c) -> auto& { return c.stage1.patch_size; });
    scalar<int>(t, "stage1.overlap", "inference tile overlap", [](RunConfig& c) -> auto& { return c.stage1.overlap; });
    scalar<double>(t, "stage1.pos_iou", "anchor positive IoU", [](RunConfig& c) -> auto& { return c.stage1.pos_iou; });
    scalar<double>(t, "stage1.neg_iou", "anchor negative IoU", [](RunConfig& c) -> auto& { return c.stage1.neg_iou; });
    scalar<double>(t, "stage1.nms_iou", "NMS IoU threshold", [](RunConfig& c) -> auto& { return c.stage1.nms_iou; });
    scalar<int>(t, "stage1.max_candidates", "candidates kept per scan", [](RunConfig& c) -> auto& { return c.stage1.max_candidates; });
    scalar<int>(t, "stage1.pre_nms_top", "boxes per tile entering NMS", [](RunConfig& c) -> auto& { return c.stage1.pre_nms_top; });
    scalar<int>(t, "stage1.train_patch_size", "training crop edge", [](RunConfig& c) -> auto& { return c.stage1.train_patch_size; });
    scalar<double>(t, "stage1.negative_ratio", "sampled negatives per positive", [](RunConfig& c) -> auto& { return c.stage1.negative_ratio; });
    scalar<int>(t, "stage1.min_negatives", "minimum sampled negatives per crop", [](RunConfig& c) -> auto& { return c.stage1.min_negatives; });
    scalar<double>(t, "stage1.smooth_l1_beta", "smooth-L1 transition point", [](RunConfig& c) -> auto& { return c.stage1.smooth_l1_beta; });
    optional_scalar<int>(t, "stage1.epochs", "overrides train.epochs", [](RunConfig& c) -> auto& { return c.stage1_schedule.epochs; });
    optional_scalar<double>(t, "stage1.learning_rate", "overrides train.learning_rate", [](RunConfig& c) -> auto& { return c.stage1_schedule.learning_rate; });
    optional_scalar<int>(t, "stage1.batch_size", "overrides train.batch_size", [](RunConfig& c) -> auto& { return c.stage1_schedule.batch_size; });

    scalar<int>(t, "stage2.channels_a", "width before the pool", [](RunConfig& c) -> auto& { return c.stage2.path_channels_a; });
    scalar<int>(t, "stage2.channels_b", "width after the pool", [](RunConfig& c) -> auto& { return c.stage2.path_channels_b; });
    scalar<int>(t, "stage2.crop_size", "candidate crop edge", [](RunConfig& c) -> auto& { return c.stage2.crop_size; });
    scalar<double>(t, "stage2.threshold", "detect keeps candidates scoring >= this", [](RunConfig& c) -> auto& { return c.stage2.threshold; });
    scalar<int>(t, "stage2.max_negatives_per_scan", "hardest stage-1 false positives kept per scan", [](RunConfig& c) -> auto& { return c.stage2.max_negatives_per_scan; });
    scalar<int>(t, "stage2.positive_jitter", "voxel jitter of annotation-centred crops", [](RunConfig& c) -> auto& { return c.stage2.positive_jitter; });
    optional_scalar<int>(t, "stage2.epochs", "overrides train.epochs", [](RunConfig& c) -> auto& { return c.stage2_schedule.epochs; });
    optional_scalar<double>(t, "stage2.learning_rate", "overrides train.learning_rate", [](RunConfig& c) -> auto& { return c.stage2_schedule.learning_rate; });
    optional_scalar<int>(t, "stage2.batch_size", "overrides train.batch_size", [](RunConfig& c) -> auto& { return c.stage2_schedule.batch_size; });

    scalar<int>(t, "phantom.size_min", "smallest volume edge, voxels", [](RunConfig& c) -> auto& { return c.phantom.size_min; });
    scalar<int>(t, "phantom.size_max", "largest volume edge, voxels", [](RunConfig& c) -> auto& { return c.phantom.size_max; });
    scalar<double>(t, "phantom.spacing", "isotropic voxel spacing, mm", [](RunConfig& c) -> auto& { return c.phantom.spacing; });
    scalar<int>(t, "phantom.nodules_min", "fewest nodules per scan", [](RunConfig& c) -> auto& { return c.phantom.nodules_min; });
    scalar<int>(t, "phantom.nodules_max", "most nodules per scan", [](RunConfig& c) -> auto& { return c.phantom.nodules_max; });
    scalar<double>(t, "phantom.diameter_min", "smallest nodule, mm", [](RunConfig& c) -> auto& { return c.phantom.diameter_min; });
    scalar<double>(t, "phantom.diameter_max", "largest nodule, mm", [](RunConfig& c) -> auto& { return c.phantom.diameter_max; });
    scalar<double>(t, "phantom.contrast", "nodule peak above background", [](RunConfig& c) -> auto& { return c.phantom.contrast; });
    scalar<double>(t, "phantom.noise_sigma", "background noise sigma", [](RunConfig& c) -> auto& { return c.phantom.noise_sigma; });
    scalar<double>(t, "phantom.background_mean", "background level", [](RunConfig& c) -> auto& { return c.phantom.background_mean; });

    scalar<int>(t, "eval.train_count", "phantoms in the training split", [](RunConfig& c) -> auto& { return c.eval.train_count; });
    scalar<int>(t, "eval.heldout_count", "phantoms in the held-out split", [](RunConfig& c) -> auto& { return c.eval.heldout_count; });
    scalar<std::string>(t, "eval.model_name", "row label in the recall table", [](RunConfig& c) -> auto& { return c.eval.model_name; });
    return t;
  }();
  return table;
}

void set_key(RunConfig& config, const std::string& key, const std::string& value) {
  const auto& table = key_table();
  const auto it = table.find(key);
  if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
  try {
    it->second.set(config, value);
  } catch (const ConfigError& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

}  // namespace

RunConfig parse_run_config(std::string_view text) {
  RunConfig config;
  std::string section;
  std::istringstream in{std::string(text)};
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(line_no) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section != "train" && section != "stage1" && section != "stage2" && section != "phantom" &&
          section != "eval") {
        throw ConfigError(where + "unknown section [" + section + "]");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    if (section.empty()) throw ConfigError(where + "key outside of a section");
    try {
      set_key(config, section + "." + trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  config.validate();
  return config;
}

RunConfig load_run_config(const std::string& path) { return parse_run_config(read_text_file(path)); }

void apply_config_override(RunConfig& config, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError("override '" + std::string(assignment) + "' must look like section.key=value");
  }
  set_key(config, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

std::string describe_config_keys() {
  const RunConfig defaults;
  std::string out;
  for (const auto& [key, spec] : key_table()) {
    out += "  " + key + " = " + spec.get(defaults) + "    " + spec.help + "\n";
  }
  return out;
}

}  // namespace pnd
