#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "featimit/nn.hpp"
#include "featimit/tensor.hpp"

namespace featimit {

enum class Architecture { resnet18, resnet50, wide_resnet50, toy };

std::string to_string(Architecture arch);
Architecture parse_architecture(const std::string& name);

struct FeatureLevelSpec {
  int level = 0;     // 1-based; level 1 is the stem
  int channels = 0;
  int stride = 0;    // downsampling factor relative to the input image
};

enum class FeatureSource { teacher, student };

// One hidden activation of a single image: data has shape (1, C, H, W).
struct FeatureMap {
  Tensor data;
  int level = 0;
  FeatureSource source = FeatureSource::teacher;

  int channels() const { return data.c(); }
  int height() const { return data.h(); }
  int width() const { return data.w(); }
};

std::vector<FeatureLevelSpec> level_specs(Architecture arch);

// Freshly constructed (untrained) module for one level of an architecture.
// Teacher stages and student blocks are both built from this.
nn::Sequential build_level(Architecture arch, int level);

// Parameter-name prefix of a level inside a weights archive
// ("" for the stem, "layer<l-1>" otherwise, torchvision naming).
std::string level_prefix(int level);

// Frozen multi-level feature extractor. Copies share the same immutable
// stages.
class TeacherNetwork {
 public:
  TeacherNetwork(Architecture arch, std::vector<nn::Sequential> stages);

  Architecture architecture() const { return arch_; }
  const std::vector<FeatureLevelSpec>& levels() const { return specs_; }
  int level_count() const { return static_cast<int>(specs_.size()); }
  int deepest_stride() const { return specs_.back().stride; }
  bool frozen() const { return true; }

  const nn::Sequential& level_module(int level) const;

  // Hash of every parameter and buffer.
  std::uint64_t checksum() const;
  // Hash of the architecture id and the level topology (no values).
  std::uint64_t topology_fingerprint() const;

 private:
  Architecture arch_;
  std::vector<FeatureLevelSpec> specs_;
  std::vector<std::shared_ptr<const nn::Sequential>> stages_;
};

// weights_source is one of
//   a path to a weights archive,
//   "registry"   resolves to <FEATIMIT_WEIGHTS_DIR or ~/.cache/featimit>/<arch>.fimw,
//   "seed:<n>"   deterministic random weights (toy architecture only).
TeacherNetwork load_teacher(Architecture arch, const std::string& weights_source);
TeacherNetwork make_toy_teacher(std::uint64_t seed);
std::filesystem::path registry_path(Architecture arch);

// Writes all teacher parameters in the archive layout load_teacher reads.
void save_teacher(const TeacherNetwork& teacher, const std::filesystem::path& path);

// ImageNet channel normalisation applied before the teacher.
Tensor normalize_input(const Tensor& images);

// Teacher features of a batch of [0,1] RGB images, one (N,C,H,W) tensor per
// level 1..L.
std::vector<Tensor> extract_feature_batch(const TeacherNetwork& teacher,
                                          const Tensor& images);

// Teacher features of one (1,3,H,W) image, levels 1..L.
std::vector<FeatureMap> extract_features(const TeacherNetwork& teacher,
                                         const Tensor& image);

}  // namespace featimit
