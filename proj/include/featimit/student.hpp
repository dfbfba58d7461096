#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "featimit/backbone.hpp"
#include "featimit/nn.hpp"

namespace featimit {

// Identifies one student block across all scale banks.
struct BlockId {
  int scale = 0;
  int level = 0;
  auto operator<=>(const BlockId&) const = default;
  std::string str() const;
};

// Trainable block S^l: maps teacher level l-1 features to a prediction of
// teacher level l features. Topology mirrors the teacher's level-l stage.
class StudentBlock {
 public:
  StudentBlock(int level, int scale, nn::Sequential net)
      : level_(level), scale_(scale), net_(std::move(net)) {}

  int level() const { return level_; }
  int scale() const { return scale_; }
  BlockId id() const { return {scale_, level_}; }
  nn::Sequential& net() { return net_; }
  const nn::Sequential& net() const { return net_; }

 private:
  int level_;
  int scale_;
  nn::Sequential net_;
};

// All student blocks trained for one input scale.
class ScaleBank {
 public:
  ScaleBank(int scale, Architecture arch, std::uint64_t teacher_fingerprint)
      : scale_(scale), arch_(arch), teacher_fingerprint_(teacher_fingerprint) {}

  int scale() const { return scale_; }
  Architecture architecture() const { return arch_; }
  std::uint64_t teacher_fingerprint() const { return teacher_fingerprint_; }

  std::vector<int> levels() const;
  bool has_level(int level) const { return blocks_.count(level) != 0; }
  StudentBlock& block(int level);
  const StudentBlock& block(int level) const;
  std::map<int, StudentBlock>& blocks() { return blocks_; }
  const std::map<int, StudentBlock>& blocks() const { return blocks_; }

  void insert(StudentBlock block);
  void remove(int level);

  std::uint64_t checksum() const;

 private:
  int scale_;
  Architecture arch_;
  std::uint64_t teacher_fingerprint_;
  std::map<int, StudentBlock> blocks_;
};

// One freshly initialised block per level in `levels` (default: 2..L).
ScaleBank init_student_bank(const TeacherNetwork& teacher, int scale, std::uint64_t seed,
                            std::vector<int> levels = {});

// Student predictions for every block in the bank, ordered by level. Block l
// reads teacher level l-1 only. `teacher_features` must hold levels 1..L.
std::vector<FeatureMap> student_forward(const ScaleBank& bank,
                                        std::span<const FeatureMap> teacher_features);

// Checkpoint I/O. `extra_meta` is stored verbatim in the header (e.g. the
// run's config fingerprint).
void save_bank(const ScaleBank& bank, const std::filesystem::path& path,
               const std::map<std::string, std::string>& extra_meta = {});
ScaleBank load_bank(const std::filesystem::path& path, const TeacherNetwork& teacher,
                    std::map<std::string, std::string>* meta_out = nullptr);

constexpr int kBankFormatVersion = 1;

}  // namespace featimit
