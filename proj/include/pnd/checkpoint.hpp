#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pnd/fpr.hpp"
#include "pnd/rpn.hpp"
#include "pnd/tensor.hpp"

namespace pnd {

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class StageTag : std::uint8_t { Proposal = 1, FalsePositive = 2 };

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct Checkpoint {
  StageTag stage = StageTag::Proposal;
  std::vector<NamedTensor> tensors;

  // Throws CheckpointError when absent.
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;
};

// "PNDM", u32 version, u8 stage tag, u32 tensor count, then per tensor:
// u32 name length, name bytes, u32 rank, u32 dims, f32 values. All
// little-endian.
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint);
// Throws CheckpointError on bad magic, version, stage tag or truncation.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::string& path);

Checkpoint make_checkpoint(RpnModel& model);
Checkpoint make_checkpoint(FprModel& model);

// Rebuild a model from tensor shapes and copy the values in. A checkpoint
// of the other stage raises StageMismatchError.
RpnModel rpn_from_checkpoint(const Checkpoint& checkpoint);
FprModel fpr_from_checkpoint(const Checkpoint& checkpoint);

}  // namespace pnd
