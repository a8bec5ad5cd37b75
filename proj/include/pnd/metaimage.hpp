#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pnd/volume.hpp"

namespace pnd {

enum class ElementType { MetShort, MetFloat };

std::string_view element_type_name(ElementType type);
std::size_t element_size(ElementType type);

// Header fields of a MetaImage (.mhd) file, converted to the internal
// (z, y, x) axis order. The file itself lists DimSize/ElementSpacing/Offset
// in (x, y, z) order.
struct VolumeMeta {
  Index3 dims{0, 0, 0};
  Vec3 spacing{1.0, 1.0, 1.0};
  Vec3 origin{0.0, 0.0, 0.0};
  ElementType element_type = ElementType::MetFloat;
  std::string data_file;
  bool msb = false;  // BinaryDataByteOrderMSB

  bool operator==(const VolumeMeta&) const = default;
};

// Parses `Key = Value` lines. Required: NDims (== 3), DimSize, ElementSpacing,
// Offset, ElementType (MET_SHORT | MET_FLOAT), ElementDataFile. Unknown keys
// are ignored. A TransformMatrix other than identity, compressed data and
// ElementDataFile = LOCAL are rejected. Errors name the offending key.
VolumeMeta parse_mhd(std::string_view header_text);

// Writes the supported key set; parse_mhd(emit_mhd(m)) == m.
std::string emit_mhd(const VolumeMeta& meta);

// Decodes raw voxel bytes; throws IoError on a length mismatch.
Volume load_volume(const VolumeMeta& meta, std::span<const std::uint8_t> raw_bytes);

// Encodes volume intensities with the meta's element type and byte order.
// MET_SHORT values are rounded and saturated to int16.
std::vector<std::uint8_t> encode_volume(const Volume& volume, ElementType type, bool msb);

struct LoadedVolume {
  VolumeMeta meta;
  Volume volume;
};

// Reads `path` (.mhd) and the raw file it names (resolved next to the header).
LoadedVolume read_metaimage(const std::filesystem::path& path);

// Writes `<stem>.mhd` + `<stem>.raw` at `mhd_path`.
void write_metaimage(const std::filesystem::path& mhd_path, const Volume& volume,
                     ElementType type = ElementType::MetFloat);

std::string read_text_file(const std::filesystem::path& path);
std::vector<std::uint8_t> read_binary_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);
void write_binary_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

// Shortest decimal that round-trips the double exactly.
std::string format_double(double v);

}  // namespace pnd
