#pragma once

#include <filesystem>

#include "featimit/scoring.hpp"

namespace featimit {

// Score maps as NumPy .npy v1.0 files: little-endian float32, C order,
// shape (height, width).
void save_npy(const std::filesystem::path& path, const ScoreMap& map);
ScoreMap load_npy(const std::filesystem::path& path);

}  // namespace featimit
