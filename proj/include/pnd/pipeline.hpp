#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "pnd/config.hpp"
#include "pnd/fpr.hpp"
#include "pnd/phantom.hpp"
#include "pnd/rpn.hpp"
#include "pnd/trainer.hpp"

namespace pnd {

// "scan_007"
std::string scan_name(std::size_t index);

// Seed of a named split; an empty split name keeps the base seed.
std::uint64_t split_seed(std::uint64_t seed, std::string_view split);

// Generator settings for the index-th phantom of a split: edge lengths and
// nodule count drawn uniformly from the configured ranges.
PhantomConfig phantom_config_for(const PhantomSettings& settings, std::uint64_t split_seed, std::size_t index);

std::vector<LabeledScan> synthesize_phantoms(const PhantomSettings& settings, int count, std::uint64_t split_seed);

// <dir>/scan_NNN.mhd + .raw (MET_FLOAT) and <dir>/annotations.csv.
void write_dataset(const std::filesystem::path& dir, const std::vector<LabeledScan>& scans);

// Sorted .mhd files of a directory.
std::vector<std::filesystem::path> list_scan_files(const std::filesystem::path& dir);

// Reads a MetaImage scan. MET_SHORT is treated as HU and windowed into [0,1];
// MET_FLOAT is taken as already normalized.
Volume load_scan(const std::filesystem::path& mhd_path);

// Every .mhd in `dir` plus the annotations of `dir`/annotations.csv; the scan
// id is the file stem. Throws InputError when there are no scans.
std::vector<LabeledScan> load_dataset(const std::filesystem::path& dir);

// Crops for the false-positive classifier: stage-1 candidates that hit a
// nodule and annotation-centred crops (exact plus two jittered) are
// positives; the highest-scoring non-hitting candidates of each scan, up to
// the configured cap, are negatives.
std::vector<CropSample> build_stage2_samples(const std::vector<LabeledScan>& scans, RpnModel& rpn,
                                             const RpnConfig& rpn_config, const FprConfig& fpr_config,
                                             std::uint64_t seed);

// Stage-1 proposals, optionally rescored and filtered by stage 2.
std::vector<Candidate> detect_candidates(const Volume& volume, const std::string& scan_id, RpnModel& rpn,
                                         const RpnConfig& rpn_config, FprModel* fpr, const FprConfig& fpr_config,
                                         double threshold);

}  // namespace pnd
