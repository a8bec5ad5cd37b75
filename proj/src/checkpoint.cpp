#include "pnd/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "pnd/error.hpp"
#include "pnd/metaimage.hpp"

namespace pnd {

namespace {

constexpr char kMagic[4] = {'P', 'N', 'D', 'M'};
const std::string kScalesName = "meta.anchor_scales";

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw CheckpointError(std::string("truncated checkpoint while reading ") + what);
    }
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint32_t u32(const char* what) {
    auto s = take(4, what);
    return static_cast<std::uint32_t>(s[0]) | static_cast<std::uint32_t>(s[1]) << 8 |
           static_cast<std::uint32_t>(s[2]) << 16 | static_cast<std::uint32_t>(s[3]) << 24;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

const char* stage_name(StageTag s) { return s == StageTag::Proposal ? "stage-1" : "stage-2"; }

void require_stage(const Checkpoint& c, StageTag want) {
  if (c.stage != want) {
    throw StageMismatchError(std::string("checkpoint holds a ") + stage_name(c.stage) + " model, expected " +
                             stage_name(want));
  }
}

void fill_from(const Checkpoint& c, const NamedParams<float>& params) {
  std::size_t used = 0;
  for (const auto& [name, p] : params) {
    const Tensor& t = c.get(name);
    if (t.shape() != p->shape()) {
      throw CheckpointError("tensor '" + name + "' has shape " + shape_to_string(t.shape()) + ", model expects " +
                            shape_to_string(p->shape()));
    }
    std::copy(t.data().begin(), t.data().end(), p->data().begin());
    ++used;
  }
  std::size_t meta = 0;
  for (const auto& nt : c.tensors) meta += nt.name.rfind("meta.", 0) == 0 ? 1 : 0;
  if (used + meta != c.tensors.size()) throw CheckpointError("checkpoint has tensors the model does not use");
}

}  // namespace

const Tensor& Checkpoint::get(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t.tensor;
  }
  throw CheckpointError("checkpoint has no tensor '" + name + "'");
}

bool Checkpoint::contains(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return true;
  }
  return false;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_u32(out, kCheckpointVersion);
  out.push_back(static_cast<std::uint8_t>(checkpoint.stage));
  put_u32(out, static_cast<std::uint32_t>(checkpoint.tensors.size()));
  for (const auto& [name, t] : checkpoint.tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : t.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  auto magic = r.take(4, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw CheckpointError("bad checkpoint magic");
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint8_t tag = r.take(1, "stage tag")[0];
  if (tag != 1 && tag != 2) throw CheckpointError("invalid stage tag " + std::to_string(tag));
  Checkpoint c;
  c.stage = static_cast<StageTag>(tag);
  const std::uint32_t count = r.u32("tensor count");
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::uint32_t len = r.u32("name length");
    auto name_bytes = r.take(len, "tensor name");
    std::string name(name_bytes.begin(), name_bytes.end());
    const std::uint32_t rank = r.u32("rank");
    if (rank == 0 || rank > 8) throw CheckpointError("tensor '" + name + "' has invalid rank");
    Shape shape;
    std::size_t n = 1;
    for (std::uint32_t a = 0; a < rank; ++a) {
      const std::uint32_t d = r.u32("dims");
      if (d == 0 || d > (1u << 28)) throw CheckpointError("tensor '" + name + "' has invalid dim");
      shape.push_back(static_cast<int>(d));
      n *= d;
      if (n > (std::size_t{1} << 32)) throw CheckpointError("tensor '" + name + "' is too large");
    }
    auto raw = r.take(n * 4, "tensor values");
    std::vector<float> values(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint32_t u = static_cast<std::uint32_t>(raw[4 * i]) | static_cast<std::uint32_t>(raw[4 * i + 1]) << 8 |
                              static_cast<std::uint32_t>(raw[4 * i + 2]) << 16 |
                              static_cast<std::uint32_t>(raw[4 * i + 3]) << 24;
      values[i] = std::bit_cast<float>(u);
    }
    c.tensors.push_back({std::move(name), Tensor(std::move(shape), std::move(values))});
  }
  if (!r.done()) throw CheckpointError("trailing bytes after checkpoint");
  return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint) {
  write_binary_file(path, encode_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::string& path) {
  const std::vector<std::uint8_t> bytes = read_binary_file(path);
  return decode_checkpoint(bytes);
}

Checkpoint make_checkpoint(RpnModel& model) {
  Checkpoint c;
  c.stage = StageTag::Proposal;
  for (const auto& [name, p] : model.parameters()) c.tensors.push_back({name, Tensor(p->shape(), p->values())});
  std::vector<float> scales(model.anchor_scales().begin(), model.anchor_scales().end());
  const int n = static_cast<int>(scales.size());
  c.tensors.push_back({kScalesName, Tensor({n}, std::move(scales))});
  return c;
}

Checkpoint make_checkpoint(FprModel& model) {
  Checkpoint c;
  c.stage = StageTag::FalsePositive;
  for (const auto& [name, p] : model.parameters()) c.tensors.push_back({name, Tensor(p->shape(), p->values())});
  return c;
}

RpnModel rpn_from_checkpoint(const Checkpoint& checkpoint) {
  require_stage(checkpoint, StageTag::Proposal);
  std::vector<int> stages;
  while (checkpoint.contains("backbone.stage" + std::to_string(stages.size()) + ".conv1.weight")) {
    stages.push_back(checkpoint.get("backbone.stage" + std::to_string(stages.size()) + ".conv1.weight").dim(0));
  }
  if (stages.empty()) throw CheckpointError("checkpoint has no backbone stages");
  const int head = checkpoint.get("head.conv.weight").dim(0);
  const Tensor& s = checkpoint.get(kScalesName);
  std::vector<double> scales(s.data().begin(), s.data().end());
  RpnModel model(stages, head, scales);
  fill_from(checkpoint, model.parameters());
  return model;
}

FprModel fpr_from_checkpoint(const Checkpoint& checkpoint) {
  require_stage(checkpoint, StageTag::FalsePositive);
  const int c1 = checkpoint.get("path_a.0.weight").dim(0);
  const int c2 = checkpoint.get("path_a.4.weight").dim(0);
  FprModel model(c1, c2);
  fill_from(checkpoint, model.parameters());
  return model;
}

}  // namespace pnd
