#include "featimit/student.hpp"

#include <random>
#include <sstream>

#include "featimit/archive.hpp"
#include "featimit/error.hpp"

namespace featimit {

namespace {

std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << v;
  return os.str();
}

std::string join_levels(const std::vector<int>& levels) {
  std::string s;
  for (std::size_t i = 0; i < levels.size(); ++i) s += (i ? "," : "") + std::to_string(levels[i]);
  return s;
}

std::string block_prefix(int level) { return "level" + std::to_string(level); }

}  // namespace

std::string BlockId::str() const {
  return "s" + std::to_string(scale) + "/l" + std::to_string(level);
}

std::vector<int> ScaleBank::levels() const {
  std::vector<int> out;
  for (const auto& [l, b] : blocks_) out.push_back(l);
  return out;
}

StudentBlock& ScaleBank::block(int level) {
  auto it = blocks_.find(level);
  require(it != blocks_.end(), "bank " + std::to_string(scale_) + " has no level " + std::to_string(level));
  return it->second;
}

const StudentBlock& ScaleBank::block(int level) const {
  auto it = blocks_.find(level);
  require(it != blocks_.end(), "bank " + std::to_string(scale_) + " has no level " + std::to_string(level));
  return it->second;
}

void ScaleBank::insert(StudentBlock block) {
  require(block.scale() == scale_, "block scale does not match bank scale");
  const int level = block.level();
  blocks_.insert_or_assign(level, std::move(block));
}

void ScaleBank::remove(int level) {
  require(blocks_.erase(level) == 1, "bank " + std::to_string(scale_) + " has no level " + std::to_string(level));
}

std::uint64_t ScaleBank::checksum() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& [l, b] : blocks_) {
    const std::uint64_t part = nn::checksum(b.net());
    h = fnv1a(&l, sizeof(l), h);
    h = fnv1a(&part, sizeof(part), h);
  }
  return h;
}

ScaleBank init_student_bank(const TeacherNetwork& teacher, int scale, std::uint64_t seed,
                            std::vector<int> levels) {
  const int L = teacher.level_count();
  if (L < 2) fail(ErrorKind::contract, "teacher needs at least 2 levels to train students, has " + std::to_string(L));
  if (levels.empty())
    for (int l = 2; l <= L; ++l) levels.push_back(l);
  ScaleBank bank(scale, teacher.architecture(), teacher.topology_fingerprint());
  for (int l : levels) {
    require(l >= 2 && l <= L, "student level " + std::to_string(l) + " outside 2.." + std::to_string(L));
    nn::Sequential net = build_level(teacher.architecture(), l);
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(scale), static_cast<std::uint32_t>(l)};
    std::mt19937_64 rng(seq);
    nn::init_fan_in_normal(net, rng);
    bank.insert(StudentBlock(l, scale, std::move(net)));
  }
  return bank;
}

std::vector<FeatureMap> student_forward(const ScaleBank& bank,
                                        std::span<const FeatureMap> teacher_features) {
  for (std::size_t i = 0; i < teacher_features.size(); ++i)
    if (teacher_features[i].level != static_cast<int>(i) + 1)
      fail(ErrorKind::contract, "teacher features must be levels 1..L in order; entry " +
                                    std::to_string(i) + " is level " +
                                    std::to_string(teacher_features[i].level));
  std::vector<FeatureMap> out;
  for (const auto& [l, block] : bank.blocks()) {
    if (static_cast<int>(teacher_features.size()) < l)
      fail(ErrorKind::contract, "block level " + std::to_string(l) + " needs teacher levels " +
                                    std::to_string(l - 1) + " and " + std::to_string(l) + ", got " +
                                    std::to_string(teacher_features.size()) + " level(s)");
    const FeatureMap& input = teacher_features[l - 2];
    const FeatureMap& target = teacher_features[l - 1];
    Tensor pred;
    try {
      pred = block.net().infer(input.data);
    } catch (const Error& e) {
      fail(ErrorKind::contract, "level " + std::to_string(l) + " input " + input.data.shape_string() +
                                    " rejected: " + e.what());
    }
    if (!pred.same_shape(target.data))
      fail(ErrorKind::contract, "level " + std::to_string(l) + " student output " + pred.shape_string() +
                                    " does not match teacher " + target.data.shape_string());
    out.push_back({std::move(pred), l, FeatureSource::student});
  }
  return out;
}

void save_bank(const ScaleBank& bank, const std::filesystem::path& path,
               const std::map<std::string, std::string>& extra_meta) {
  Archive a;
  a.meta = extra_meta;
  a.meta["format"] = "featimit-bank";
  a.meta["format_version"] = std::to_string(kBankFormatVersion);
  a.meta["architecture"] = to_string(bank.architecture());
  a.meta["scale"] = std::to_string(bank.scale());
  a.meta["levels"] = join_levels(bank.levels());
  a.meta["teacher_fingerprint"] = hex(bank.teacher_fingerprint());
  for (const auto& [l, b] : bank.blocks()) {
    b.net().visit(block_prefix(l), nn::ConstParamVisitor([&](const std::string& name, const nn::Parameter& p) {
                    a.tensors[name] = ArchiveTensor{p.dims, {p.value.values().begin(), p.value.values().end()}};
                  }));
  }
  write_archive(path, a, ArchiveDtype::float64);
}

ScaleBank load_bank(const std::filesystem::path& path, const TeacherNetwork& teacher,
                    std::map<std::string, std::string>* meta_out) {
  Archive a;
  try {
    a = read_archive(path);
  } catch (const Error& e) {
    fail(ErrorKind::io, std::string("cannot load checkpoint: ") + e.what());
  }
  auto get = [&](const std::string& key) {
    auto it = a.meta.find(key);
    if (it == a.meta.end()) fail(ErrorKind::checkpoint, path.string() + ": header lacks '" + key + "'");
    return it->second;
  };
  if (get("format") != "featimit-bank")
    fail(ErrorKind::checkpoint, path.string() + " is not a student bank checkpoint");
  const std::string version = get("format_version");
  if (version != std::to_string(kBankFormatVersion))
    fail(ErrorKind::checkpoint, path.string() + ": checkpoint format version " + version +
                                    ", this build reads version " + std::to_string(kBankFormatVersion));
  const std::string arch = get("architecture");
  if (arch != to_string(teacher.architecture()))
    fail(ErrorKind::checkpoint, path.string() + " (format v" + version + ") was trained for " + arch +
                                    ", teacher is " + to_string(teacher.architecture()));
  if (get("teacher_fingerprint") != hex(teacher.topology_fingerprint()))
    fail(ErrorKind::checkpoint, path.string() + " (format v" + version +
                                    "): teacher level topology fingerprint mismatch");
  const int scale = std::stoi(get("scale"));
  std::vector<int> levels;
  {
    std::stringstream ss(get("levels"));
    std::string tok;
    while (std::getline(ss, tok, ',')) levels.push_back(std::stoi(tok));
  }
  ScaleBank bank(scale, teacher.architecture(), teacher.topology_fingerprint());
  for (int l : levels) {
    if (l < 2 || l > teacher.level_count())
      fail(ErrorKind::checkpoint, path.string() + ": level " + std::to_string(l) + " not in teacher");
    nn::Sequential net = build_level(teacher.architecture(), l);
    net.visit(block_prefix(l), nn::ParamVisitor([&](const std::string& name, nn::Parameter& p) {
                auto it = a.tensors.find(name);
                if (it == a.tensors.end() || it->second.dims != p.dims)
                  fail(ErrorKind::checkpoint, path.string() + " (format v" + version +
                                                  "): topology mismatch at " + name);
                std::copy(it->second.values.begin(), it->second.values.end(), p.value.data());
              }));
    bank.insert(StudentBlock(l, scale, std::move(net)));
  }
  if (meta_out) *meta_out = a.meta;
  return bank;
}

}  // namespace featimit
