#include "featimit/npy.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <regex>

#include "featimit/error.hpp"

namespace featimit {

namespace {
constexpr char kMagic[] = "\x93NUMPY";
}

void save_npy(const std::filesystem::path& path, const ScoreMap& map) {
  std::string header = "{'descr': '<f4', 'fortran_order': False, 'shape': (" + std::to_string(map.height) + ", " +
                       std::to_string(map.width) + "), }";
  const std::size_t prefix = 10;
  const std::size_t total = (prefix + header.size() + 1 + 63) / 64 * 64;
  header.append(total - prefix - header.size() - 1, ' ');
  header.push_back('\n');

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
  out.write(kMagic, 6);
  const char version[2] = {1, 0};
  out.write(version, 2);
  const auto len = static_cast<std::uint16_t>(header.size());
  const char len_bytes[2] = {static_cast<char>(len & 0xff), static_cast<char>(len >> 8)};
  out.write(len_bytes, 2);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (double v : map.data) {
    const float f = static_cast<float>(v);
    out.write(reinterpret_cast<const char*>(&f), sizeof(f));
  }
  if (!out) fail(ErrorKind::io, "write failed: " + path.string());
}

ScoreMap load_npy(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot read " + path.string());
  char magic[6];
  in.read(magic, 6);
  unsigned char ver[2], len[2];
  in.read(reinterpret_cast<char*>(ver), 2);
  in.read(reinterpret_cast<char*>(len), 2);
  if (!in || std::memcmp(magic, kMagic, 6) != 0 || ver[0] != 1)
    fail(ErrorKind::io, path.string() + " is not a version 1 .npy file");
  std::string header(static_cast<std::size_t>(len[0] | (len[1] << 8)), '\0');
  in.read(header.data(), static_cast<std::streamsize>(header.size()));
  static const std::regex descr(R"('descr':\s*'<f4')"), fortran(R"('fortran_order':\s*False)"),
      shape(R"('shape':\s*\((\d+),\s*(\d+)\))");
  std::smatch m;
  if (!std::regex_search(header, descr) || !std::regex_search(header, fortran) ||
      !std::regex_search(header, m, shape))
    fail(ErrorKind::io, path.string() + ": expected a C-order float32 2-D array");
  ScoreMap map(std::stoi(m[1]), std::stoi(m[2]));
  std::vector<float> buf(map.data.size());
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!in) fail(ErrorKind::io, path.string() + ": truncated array data");
  for (std::size_t i = 0; i < buf.size(); ++i) map.data[i] = buf[i];
  return map;
}

}  // namespace featimit
