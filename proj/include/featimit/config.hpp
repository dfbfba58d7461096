#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "featimit/backbone.hpp"
#include "featimit/dataset.hpp"
#include "featimit/scale_search.hpp"
#include "featimit/scoring.hpp"
#include "featimit/training.hpp"

namespace featimit {

struct RunConfig {
  std::string architecture = "wide_resnet50";
  std::string weights = "registry";
  std::vector<int> scales{128, 256, 384};
  std::vector<int> levels{2, 3, 4};
  TrainConfig train;
  std::filesystem::path data_root;
  std::string category;
  double val_coverage = 1.0;
  double val_fraction = 0.10;
  SearchConfig search;
  int k = 0;  // blocks kept after the weight search; 0 keeps all
  int reference_size = 256;
  FusionOrder fusion = FusionOrder::flat;
  std::filesystem::path output_dir = "featimit_run";
  std::uint64_t seed = 0;
  int threads = 1;

  // Checks ranges and, given the teacher, level and scale compatibility.
  void validate() const;
  void validate_against(const TeacherNetwork& teacher) const;
  ReferenceSize reference() const { return {reference_size, reference_size}; }
};

// Parses a YAML document; unknown keys are rejected.
RunConfig load_config(const std::filesystem::path& path);
RunConfig parse_config(const std::string& yaml_text);

// Effective configuration as YAML (round-trips through parse_config).
std::string to_yaml(const RunConfig& config);

// Hash of everything that determines the trained model and its score maps
// (teacher, scales, levels, training settings, data, seed, reference size).
std::string config_fingerprint(const RunConfig& config);

std::vector<int> parse_int_list(const std::string& text);

}  // namespace featimit
