#include "pnd/metaimage.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "pnd/error.hpp"

namespace pnd {

std::string_view element_type_name(ElementType type) {
  return type == ElementType::MetShort ? "MET_SHORT" : "MET_FLOAT";
}

std::size_t element_size(ElementType type) { return type == ElementType::MetShort ? 2 : 4; }

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    const std::size_t b = i;
    while (i < s.size() && s[i] != ' ' && s[i] != '\t') ++i;
    if (i > b) out.push_back(s.substr(b, i - b));
  }
  return out;
}

double parse_number(std::string_view token, std::string_view key) {
  double v = 0.0;
  const auto res = std::from_chars(token.data(), token.data() + token.size(), v);
  if (res.ec != std::errc{} || res.ptr != token.data() + token.size() || !std::isfinite(v)) {
    throw ParseError("MetaImage key " + std::string(key) + ": invalid number '" +
                     std::string(token) + "'");
  }
  return v;
}

std::vector<double> parse_numbers(std::string_view value, std::string_view key, std::size_t n) {
  const auto tokens = split_ws(value);
  if (tokens.size() != n) {
    throw ParseError("MetaImage key " + std::string(key) + ": expected " + std::to_string(n) +
                     " values");
  }
  std::vector<double> out;
  for (auto t : tokens) out.push_back(parse_number(t, key));
  return out;
}

bool parse_bool(std::string_view value, std::string_view key) {
  std::string v(trim(value));
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ParseError("MetaImage key " + std::string(key) + ": expected True/False");
}

Vec3 reversed(const std::vector<double>& xyz) { return {xyz[2], xyz[1], xyz[0]}; }

}  // namespace

VolumeMeta parse_mhd(std::string_view header_text) {
  std::map<std::string, std::string, std::less<>> kv;
  std::istringstream in{std::string(header_text)};
  std::string line;
  while (std::getline(in, line)) {
    const std::string_view l = trim(line);
    if (l.empty()) continue;
    const auto eq = l.find('=');
    if (eq == std::string_view::npos) continue;
    kv[std::string(trim(l.substr(0, eq)))] = std::string(trim(l.substr(eq + 1)));
  }

  auto require = [&](std::string_view key) -> const std::string& {
    const auto it = kv.find(key);
    if (it == kv.end()) throw ParseError("MetaImage header missing required key " + std::string(key));
    return it->second;
  };
  auto find_any = [&](std::initializer_list<std::string_view> keys) -> const std::string* {
    for (auto k : keys) {
      const auto it = kv.find(k);
      if (it != kv.end()) return &it->second;
    }
    return nullptr;
  };

  VolumeMeta meta;
  const auto ndims = parse_numbers(require("NDims"), "NDims", 1);
  if (ndims[0] != 3.0) throw ParseError("MetaImage key NDims: only 3-D volumes are supported");

  const auto dims = parse_numbers(require("DimSize"), "DimSize", 3);
  for (int a = 0; a < 3; ++a) {
    const double d = dims[static_cast<std::size_t>(2 - a)];
    if (d < 1 || d != std::floor(d)) throw ParseError("MetaImage key DimSize: invalid dimension");
    meta.dims[static_cast<std::size_t>(a)] = static_cast<int>(d);
  }
  meta.spacing = reversed(parse_numbers(require("ElementSpacing"), "ElementSpacing", 3));
  for (double s : meta.spacing) {
    if (!(s > 0.0)) throw ParseError("MetaImage key ElementSpacing: spacing must be positive");
  }
  meta.origin = reversed(parse_numbers(require("Offset"), "Offset", 3));

  const std::string& type = require("ElementType");
  if (type == "MET_SHORT") {
    meta.element_type = ElementType::MetShort;
  } else if (type == "MET_FLOAT") {
    meta.element_type = ElementType::MetFloat;
  } else {
    throw ParseError("MetaImage key ElementType: unsupported type " + type);
  }

  meta.data_file = require("ElementDataFile");
  if (meta.data_file == "LOCAL" || meta.data_file.starts_with("LIST")) {
    throw ParseError("MetaImage key ElementDataFile: only a separate raw file is supported");
  }

  if (const auto* v = find_any({"BinaryDataByteOrderMSB", "ElementByteOrderMSB"})) {
    meta.msb = parse_bool(*v, "BinaryDataByteOrderMSB");
  }
  if (const auto* v = find_any({"CompressedData"}); v && parse_bool(*v, "CompressedData")) {
    throw ParseError("MetaImage key CompressedData: compressed volumes are not supported");
  }
  if (const auto* v = find_any({"TransformMatrix", "Rotation", "Orientation"})) {
    const auto m = parse_numbers(*v, "TransformMatrix", 9);
    for (int i = 0; i < 9; ++i) {
      const double expect = (i % 4 == 0) ? 1.0 : 0.0;
      if (std::abs(m[static_cast<std::size_t>(i)] - expect) > 1e-9) {
        throw ParseError("MetaImage key TransformMatrix: only identity orientation is supported");
      }
    }
  }
  return meta;
}

std::string emit_mhd(const VolumeMeta& m) {
  std::ostringstream os;
  auto xyz = [](const auto& zyx) {
    return format_double(zyx[2]) + " " + format_double(zyx[1]) + " " + format_double(zyx[0]);
  };
  os << "ObjectType = Image\n";
  os << "NDims = 3\n";
  os << "BinaryData = True\n";
  os << "BinaryDataByteOrderMSB = " << (m.msb ? "True" : "False") << "\n";
  os << "CompressedData = False\n";
  os << "TransformMatrix = 1 0 0 0 1 0 0 0 1\n";
  os << "Offset = " << xyz(m.origin) << "\n";
  os << "CenterOfRotation = 0 0 0\n";
  os << "AnatomicalOrientation = RAI\n";
  os << "ElementSpacing = " << xyz(m.spacing) << "\n";
  os << "DimSize = " << m.dims[2] << " " << m.dims[1] << " " << m.dims[0] << "\n";
  os << "ElementType = " << element_type_name(m.element_type) << "\n";
  os << "ElementDataFile = " << m.data_file << "\n";
  return os.str();
}

namespace {

constexpr bool kHostIsLittle = std::endian::native == std::endian::little;

constexpr std::uint16_t swap_bytes(std::uint16_t v) {
  return static_cast<std::uint16_t>((v >> 8) | (v << 8));
}

constexpr std::uint32_t swap_bytes(std::uint32_t v) {
  return ((v >> 24) & 0xffu) | ((v >> 8) & 0xff00u) | ((v << 8) & 0xff0000u) | (v << 24);
}

template <typename U>
U load_word(const std::uint8_t* p, bool msb) {
  U v;
  std::memcpy(&v, p, sizeof(U));
  if (msb == kHostIsLittle) v = swap_bytes(v);
  return v;
}

template <typename U>
void store_word(std::uint8_t* p, U v, bool msb) {
  if (msb == kHostIsLittle) v = swap_bytes(v);
  std::memcpy(p, &v, sizeof(U));
}

}  // namespace

Volume load_volume(const VolumeMeta& meta, std::span<const std::uint8_t> raw) {
  Volume vol(meta.dims, meta.spacing, meta.origin);
  const std::size_t n = vol.voxel_count();
  const std::size_t esize = element_size(meta.element_type);
  if (raw.size() != n * esize) {
    throw IoError("raw data has " + std::to_string(raw.size()) + " bytes, expected " +
                  std::to_string(n * esize));
  }
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* p = raw.data() + i * esize;
    if (meta.element_type == ElementType::MetShort) {
      vol.data[i] = static_cast<float>(static_cast<std::int16_t>(load_word<std::uint16_t>(p, meta.msb)));
    } else {
      vol.data[i] = std::bit_cast<float>(load_word<std::uint32_t>(p, meta.msb));
    }
  }
  if (!all_finite<float>(vol.data)) throw IoError("raw data contains non-finite values");
  return vol;
}

std::vector<std::uint8_t> encode_volume(const Volume& volume, ElementType type, bool msb) {
  const std::size_t esize = element_size(type);
  std::vector<std::uint8_t> out(volume.data.size() * esize);
  for (std::size_t i = 0; i < volume.data.size(); ++i) {
    std::uint8_t* p = out.data() + i * esize;
    if (type == ElementType::MetShort) {
      const double r = std::clamp(std::round(static_cast<double>(volume.data[i])), -32768.0, 32767.0);
      store_word(p, static_cast<std::uint16_t>(static_cast<std::int16_t>(r)), msb);
    } else {
      store_word(p, std::bit_cast<std::uint32_t>(volume.data[i]), msb);
    }
  }
  return out;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::uint8_t> read_binary_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

void write_binary_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

LoadedVolume read_metaimage(const std::filesystem::path& path) {
  LoadedVolume lv;
  lv.meta = parse_mhd(read_text_file(path));
  const auto raw_path = path.parent_path() / lv.meta.data_file;
  const auto bytes = read_binary_file(raw_path);
  lv.volume = load_volume(lv.meta, bytes);
  return lv;
}

void write_metaimage(const std::filesystem::path& mhd_path, const Volume& volume, ElementType type) {
  VolumeMeta meta;
  meta.dims = volume.dims;
  meta.spacing = volume.spacing;
  meta.origin = volume.origin;
  meta.element_type = type;
  meta.msb = false;
  auto raw_path = mhd_path;
  raw_path.replace_extension(".raw");
  meta.data_file = raw_path.filename().string();
  write_text_file(mhd_path, emit_mhd(meta));
  write_binary_file(raw_path, encode_volume(volume, type, false));
}

}  // namespace pnd
