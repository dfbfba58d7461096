#include "featimit/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "featimit/error.hpp"

namespace featimit {

static_assert(std::endian::native == std::endian::little,
              "archive I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'F', 'I', 'M', 'W'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  explicit Writer(std::ofstream& out) : out_(out) {}
  template <class T>
  void pod(const T& v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void str(const std::string& s) {
    pod(static_cast<std::uint32_t>(s.size()));
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }

 private:
  std::ofstream& out_;
};

class Reader {
 public:
  Reader(std::ifstream& in, std::string path) : in_(in), path_(std::move(path)) {}
  template <class T>
  T pod() {
    T v{};
    in_.read(reinterpret_cast<char*>(&v), sizeof(T));
    check();
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint32_t>();
    if (n > (1u << 24)) fail(ErrorKind::load, "corrupt archive (string length) in " + path_);
    std::string s(n, '\0');
    in_.read(s.data(), n);
    check();
    return s;
  }
  void raw(void* dst, std::size_t bytes) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(bytes));
    check();
  }

 private:
  void check() {
    if (!in_) fail(ErrorKind::load, "truncated archive: " + path_);
  }
  std::ifstream& in_;
  std::string path_;
};

}  // namespace

void write_archive(const std::filesystem::path& path, const Archive& archive,
                   ArchiveDtype dtype) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot open for writing: " + path.string());
  Writer w(out);
  out.write(kMagic, 4);
  w.pod(kVersion);
  w.pod(static_cast<std::uint32_t>(archive.meta.size()));
  for (const auto& [k, v] : archive.meta) {
    w.str(k);
    w.str(v);
  }
  w.pod(static_cast<std::uint32_t>(archive.tensors.size()));
  for (const auto& [name, t] : archive.tensors) {
    w.str(name);
    w.pod(static_cast<std::uint8_t>(dtype));
    w.pod(static_cast<std::uint32_t>(t.dims.size()));
    for (auto d : t.dims) w.pod(d);
    if (dtype == ArchiveDtype::float64) {
      out.write(reinterpret_cast<const char*>(t.values.data()),
                static_cast<std::streamsize>(t.values.size() * sizeof(double)));
    } else {
      for (double v : t.values) w.pod(static_cast<float>(v));
    }
  }
  out.flush();
  if (!out) fail(ErrorKind::io, "write failed: " + path.string());
}

Archive read_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::load, "cannot read weights file: " + path.string());
  Reader r(in, path.string());
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0)
    fail(ErrorKind::load, "not a featimit archive (bad magic): " + path.string());
  const auto version = r.pod<std::uint32_t>();
  if (version != kVersion)
    fail(ErrorKind::load, "unsupported archive version " +
                              std::to_string(version) + ": " + path.string());
  Archive a;
  const auto n_meta = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string k = r.str();
    a.meta[k] = r.str();
  }
  const auto n_tensors = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    std::string name = r.str();
    const auto dtype = r.pod<std::uint8_t>();
    if (dtype > 1) fail(ErrorKind::load, "unknown dtype for '" + name + "' in " + path.string());
    const auto rank = r.pod<std::uint32_t>();
    if (rank > 8) fail(ErrorKind::load, "corrupt rank for '" + name + "' in " + path.string());
    ArchiveTensor t;
    std::size_t count = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto dim = r.pod<std::int64_t>();
      if (dim < 0 || dim > (1LL << 32))
        fail(ErrorKind::load, "corrupt dims for '" + name + "' in " + path.string());
      t.dims.push_back(dim);
      count *= static_cast<std::size_t>(dim);
    }
    t.values.resize(count);
    if (dtype == 1) {
      r.raw(t.values.data(), count * sizeof(double));
    } else {
      std::vector<float> tmp(count);
      r.raw(tmp.data(), count * sizeof(float));
      for (std::size_t j = 0; j < count; ++j) t.values[j] = tmp[j];
    }
    a.tensors.emplace(std::move(name), std::move(t));
  }
  return a;
}

}  // namespace featimit
