#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "featimit/backbone.hpp"
#include "featimit/student.hpp"

namespace featimit {

// Single-channel anomaly scores in [0, 1], row-major.
struct ScoreMap {
  int height = 0;
  int width = 0;
  std::vector<double> data;
  std::optional<BlockId> block;  // empty for fused maps

  ScoreMap() = default;
  ScoreMap(int h, int w, double fill = 0.0)
      : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}
  double& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
  double at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
  bool same_size(const ScoreMap& o) const { return height == o.height && width == o.width; }
};

struct ReferenceSize {
  int height = 256;
  int width = 256;
};

// Factor mapping squared distances of unit vectors ([0, 4]) into [0, 1].
inline constexpr double kScoreScale = 0.25;

// 0.25 * |t_hat(p) - s_hat(p)|^2 at every pixel of one level.
ScoreMap level_score_map(const FeatureMap& teacher, const FeatureMap& student, double epsilon);

// Bilinear upsampling (half-pixel centres). Downscaling is rejected.
ScoreMap upsample_score(const ScoreMap& map, ReferenceSize target);

// Upsample every map to `target` and take the arithmetic mean.
ScoreMap fuse_levels(std::span<const ScoreMap> maps, ReferenceSize target);

enum class FusionOrder {
  flat,       // mean over all (scale, level) maps
  per_scale,  // mean within each scale, then mean over scales
};

struct WeightVector;

// Score maps of every block of every bank for one image, upsampled to
// `target`, ordered by (scale, level).
std::vector<ScoreMap> per_block_score_maps(std::span<const ScaleBank> banks, const TeacherNetwork& teacher,
                                           const Tensor& image, ReferenceSize target, double epsilon);

// Image pyramid inference. Without weights the maps are averaged (see
// FusionOrder); with weights they are combined as sum_i w_i * map_i and the
// weights' block ids must equal the banks' blocks in (scale, level) order.
ScoreMap multi_scale_score(std::span<const ScaleBank> banks, const TeacherNetwork& teacher, const Tensor& image,
                           ReferenceSize target, const WeightVector* weights = nullptr,
                           double epsilon = 1e-12, FusionOrder order = FusionOrder::flat);

}  // namespace featimit
