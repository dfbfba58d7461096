#pragma once

// Tensor archive: the on-disk format for teacher weights and student bank
// checkpoints.
//
//   "FIMW" | u32 version | u32 n_meta | n_meta x (str key, str value)
//          | u32 n_tensors | n_tensors x (str name, u8 dtype, u32 rank,
//                                        rank x i64 dim, data)
//
// str is u32 length + bytes; dtype 0 = float32, 1 = float64; all integers and
// floats little-endian. Keys and names are written in sorted order so equal
// archives serialize to equal bytes.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace featimit {

struct ArchiveTensor {
  std::vector<std::int64_t> dims;
  std::vector<double> values;
};

struct Archive {
  std::map<std::string, std::string> meta;
  std::map<std::string, ArchiveTensor> tensors;
};

enum class ArchiveDtype : std::uint8_t { float32 = 0, float64 = 1 };

void write_archive(const std::filesystem::path& path, const Archive& archive,
                   ArchiveDtype dtype = ArchiveDtype::float64);
Archive read_archive(const std::filesystem::path& path);

}  // namespace featimit
