#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "featimit/image.hpp"
#include "featimit/tensor.hpp"

namespace featimit {

enum class Split { train, val, test };
std::string to_string(Split split);

struct SampleRecord {
  std::filesystem::path image_path;
  std::optional<std::filesystem::path> mask_path;  // set for defect images
  std::string category;
  std::string defect_type;  // "good" for normal images
  Split split = Split::train;

  bool is_good() const { return defect_type == "good"; }
  // "<defect>_<stem>", unique within a category.
  std::string key() const;
};

struct Sample {
  Tensor image;                // (1, 3, H, W) in [0, 1]
  std::optional<Mask> mask;    // present iff the sample is a defect image
  std::string category;
  std::string defect_type;
  Split split = Split::train;
};

struct SplitCounts {
  std::size_t train = 0, val = 0, test = 0;
};

struct DatasetIndex {
  std::filesystem::path root;
  std::string category;
  std::vector<SampleRecord> samples;  // sorted by image path

  SplitCounts counts() const;
  std::vector<SampleRecord> of(Split split) const;
  std::vector<std::string> defect_types() const;  // sorted, excludes "good"
};

// Expects <root>/<category>/{train/good, test/<defect>, ground_truth/<defect>}.
DatasetIndex index_dataset(const std::filesystem::path& root, const std::string& category);

// Reads the image (and mask, if any). Good images get no mask.
Sample load_sample(const SampleRecord& record);
// Mask of a record, all zeros for good images.
Mask load_mask_or_empty(const SampleRecord& record, int height, int width);

struct ValidationSplit {
  DatasetIndex val;
  DatasetIndex test;
};

// Moves `per_type_fraction` (at least one image) of each of
// ceil(coverage * #defect types) seeded-chosen defect types, plus as many
// good test images, from the test split into a validation split.
ValidationSplit build_validation_split(const DatasetIndex& index, double coverage,
                                       double per_type_fraction, std::uint64_t seed);

struct PyramidSpec {
  std::vector<int> scales{128, 256, 384};
  // Strictly increasing, positive, each divisible by `stride`.
  void validate(int stride = 1) const;
};

// One square resize per scale, clamped to [0, 1].
std::vector<Tensor> make_pyramid(const Tensor& image, const PyramidSpec& spec);

struct FixtureOptions {
  int n_normal = 16;       // train/good
  int n_anomalous = 8;     // test/<defect>, alternating defect types
  int n_test_good = 0;     // test/good
  int image_size = 64;
  std::uint64_t seed = 0;
  std::string category = "synthetic";
  double min_patch_side = 0.10;  // patch side as a fraction of the image side
  double max_patch_side = 0.25;
  int max_patches = 2;
};

// Writes a procedural MVTec-style tree under out_root and indexes it.
DatasetIndex generate_synthetic_fixture(const std::filesystem::path& out_root, const FixtureOptions& options);

}  // namespace featimit
