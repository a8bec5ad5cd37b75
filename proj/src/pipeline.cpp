#include "pnd/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "pnd/error.hpp"
#include "pnd/froc.hpp"
#include "pnd/metaimage.hpp"
#include "pnd/records.hpp"
#include "pnd/rng.hpp"

namespace pnd {

namespace fs = std::filesystem;

std::string scan_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "scan_%03zu", index);
  return buf;
}

std::uint64_t split_seed(std::uint64_t seed, std::string_view split) {
  return split.empty() ? seed : derive_seed(seed, split);
}

PhantomConfig phantom_config_for(const PhantomSettings& settings, std::uint64_t seed, std::size_t index) {
  settings.validate();
  const std::uint64_t scan_seed = derive_seed(seed, static_cast<std::uint64_t>(index));
  Rng rng(derive_seed(scan_seed, "shape"));
  PhantomConfig c;
  const auto span = static_cast<std::uint64_t>(settings.size_max - settings.size_min + 1);
  for (int a = 0; a < 3; ++a) {
    c.dims[a] = settings.size_min + static_cast<int>(rng.below(span));
    c.spacing[a] = settings.spacing;
  }
  c.nodule_count =
      settings.nodules_min + static_cast<int>(rng.below(static_cast<std::uint64_t>(settings.nodules_max - settings.nodules_min + 1)));
  c.diameter_lo_mm = settings.diameter_min;
  c.diameter_hi_mm = settings.diameter_max;
  c.contrast = settings.contrast;
  c.noise_sigma = settings.noise_sigma;
  c.background_mean = settings.background_mean;
  c.seed = derive_seed(scan_seed, "phantom");
  return c;
}

std::vector<LabeledScan> synthesize_phantoms(const PhantomSettings& settings, int count, std::uint64_t seed) {
  if (count < 0) throw ConfigError("phantom count must be >= 0");
  std::vector<LabeledScan> scans;
  for (int i = 0; i < count; ++i) {
    const std::string id = scan_name(static_cast<std::size_t>(i));
    Phantom p = generate_phantom(phantom_config_for(settings, seed, static_cast<std::size_t>(i)), id);
    scans.push_back({id, std::move(p.volume), std::move(p.annotations)});
  }
  return scans;
}

void write_dataset(const fs::path& dir, const std::vector<LabeledScan>& scans) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
  std::vector<Annotation> all;
  for (const LabeledScan& s : scans) {
    write_metaimage(dir / (s.scan_id + ".mhd"), s.volume, ElementType::MetFloat);
    all.insert(all.end(), s.annotations.begin(), s.annotations.end());
  }
  write_text_file(dir / "annotations.csv", write_annotations_csv(all));
}

std::vector<fs::path> list_scan_files(const fs::path& dir) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw IoError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".mhd") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

Volume load_scan(const fs::path& mhd_path) {
  LoadedVolume lv = read_metaimage(mhd_path);
  if (lv.meta.element_type == ElementType::MetShort) return normalize_hu(lv.volume);
  return std::move(lv.volume);
}

std::vector<LabeledScan> load_dataset(const fs::path& dir) {
  const auto files = list_scan_files(dir);
  if (files.empty()) throw InputError("no .mhd scans in " + dir.string());
  std::vector<std::string> warnings;
  const std::vector<Annotation> annotations = read_annotations_csv(read_text_file(dir / "annotations.csv"), &warnings);
  std::vector<LabeledScan> scans;
  for (const auto& f : files) {
    LabeledScan s;
    s.scan_id = f.stem().string();
    s.volume = load_scan(f);
    for (const Annotation& a : annotations) {
      if (a.scan_id == s.scan_id) s.annotations.push_back(a);
    }
    scans.push_back(std::move(s));
  }
  for (const Annotation& a : annotations) {
    const bool known = std::any_of(scans.begin(), scans.end(), [&](const LabeledScan& s) { return s.scan_id == a.scan_id; });
    if (!known) throw InputError("annotation references unknown scan '" + a.scan_id + "'");
  }
  return scans;
}

std::vector<CropSample> build_stage2_samples(const std::vector<LabeledScan>& scans, RpnModel& rpn,
                                             const RpnConfig& rpn_config, const FprConfig& fpr_config,
                                             std::uint64_t seed) {
  fpr_config.validate();
  const int size = fpr_config.crop_size;
  std::vector<CropSample> samples;
  for (std::size_t s = 0; s < scans.size(); ++s) {
    const LabeledScan& scan = scans[s];
    const std::vector<Candidate> cands = propose(scan.volume, rpn, rpn_config, scan.scan_id);
    int negatives = 0;
    for (const Candidate& c : cands) {
      const bool hit = std::any_of(scan.annotations.begin(), scan.annotations.end(),
                                   [&](const Annotation& a) { return is_hit(c, a); });
      if (!hit && negatives >= fpr_config.max_negatives_per_scan) continue;
      samples.push_back({extract_candidate_patch(scan.volume, c.center_world, size), hit ? 1 : 0});
      negatives += hit ? 0 : 1;
    }
    Rng rng(derive_seed(seed, s));
    const int j = fpr_config.positive_jitter;
    for (const Annotation& a : scan.annotations) {
      samples.push_back({extract_candidate_patch(scan.volume, a.center_world, size), 1});
      for (int copy = 0; copy < 2; ++copy) {
        Vec3 w = a.center_world;
        for (int k = 0; k < 3; ++k) {
          w[k] += (static_cast<int>(rng.below(static_cast<std::uint64_t>(2 * j + 1))) - j) * scan.volume.spacing[k];
        }
        if (!inside_physical_bounds(scan.volume, w)) w = a.center_world;
        samples.push_back({extract_candidate_patch(scan.volume, w, size), 1});
      }
    }
  }
  return samples;
}

std::vector<Candidate> detect_candidates(const Volume& volume, const std::string& scan_id, RpnModel& rpn,
                                         const RpnConfig& rpn_config, FprModel* fpr, const FprConfig& fpr_config,
                                         double threshold) {
  std::vector<Candidate> cands = propose(volume, rpn, rpn_config, scan_id);
  if (fpr == nullptr) return cands;
  return reject_false_positives(cands, volume, *fpr, threshold, fpr_config.crop_size);
}

}  // namespace pnd
