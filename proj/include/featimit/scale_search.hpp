#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "featimit/image.hpp"
#include "featimit/scoring.hpp"
#include "featimit/student.hpp"

namespace featimit {

// Unnormalised per-block fusion parameters.
struct WeightLogits {
  std::vector<double> values;
  std::vector<BlockId> block_ids;
  int iteration = 0;
  double learning_rate = 0.1;
  std::vector<double> loss_trace;  // validation loss before each step, then the final loss
};

// Convex fusion weights (softmax of the logits).
struct WeightVector {
  std::vector<double> values;
  std::vector<BlockId> block_ids;
};

WeightLogits uniform_logits(std::vector<BlockId> block_ids, double learning_rate = 0.1);

WeightVector softmax_weights(const WeightLogits& logits);

// sum_i w_i * map_i, pixel-wise.
ScoreMap weighted_fusion(std::span<const ScoreMap> maps, const WeightVector& weights);

inline constexpr double kProbabilityClamp = 1e-7;

// Mean pixel-wise binary cross-entropy with the fused scores used as
// anomaly probabilities, clamped to [1e-7, 1 - 1e-7].
double validation_loss(const ScoreMap& fused, const Mask& gt);

// Per-block maps of the validation images, computed once with the networks
// frozen.
struct ValidationCache {
  std::vector<BlockId> block_ids;
  std::vector<std::vector<ScoreMap>> maps;  // [image][block], at reference size
  std::vector<Mask> masks;                  // [image], at reference size
};

ValidationCache build_validation_cache(std::span<const ScaleBank> banks, const TeacherNetwork& teacher,
                                       std::span<const Tensor> images, std::span<const Mask> masks,
                                       ReferenceSize target, double epsilon = 1e-12);

struct LossGradientOmega {
  double loss = 0.0;
  std::vector<double> grad;  // d loss / d logits
};

// Mean validation loss over the cached images and its analytic gradient with
// respect to the logits.
LossGradientOmega validation_loss_gradient(const ValidationCache& cache, const WeightLogits& logits);

struct SearchConfig {
  int iterations = 500;
  double learning_rate = 0.1;
};

// Plain gradient descent on the logits: w <- w - lr * grad. Starts from
// `initial`; appends the loss before each step plus the final loss to
// loss_trace.
WeightLogits search_weights(const ValidationCache& cache, WeightLogits initial, const SearchConfig& config);

// Convenience overload: precomputes the cache and starts from uniform logits.
WeightLogits search_weights(std::span<const ScaleBank> banks, const TeacherNetwork& teacher,
                            std::span<const Tensor> images, std::span<const Mask> masks, ReferenceSize target,
                            const SearchConfig& config);

struct PruneResult {
  std::vector<BlockId> kept;  // in original block order
  WeightVector weights;       // kept weights renormalised to sum to 1
  std::vector<bool> kept_mask;
};

// Keep the k highest-weight blocks; ties go to the lower index.
PruneResult prune_top_k(const WeightLogits& logits, int k);

// Weight file I/O (text, versioned).
void write_weight_file(const std::filesystem::path& path, const WeightLogits& logits,
                       const std::vector<bool>& kept, const std::string& config_fingerprint);
struct WeightFile {
  WeightLogits logits;
  std::vector<bool> kept;
  std::string config_fingerprint;
};
WeightFile read_weight_file(const std::filesystem::path& path);

// Drop from `banks` every block not in `kept`; empty banks are removed.
void apply_pruning(std::vector<ScaleBank>& banks, std::span<const BlockId> kept);

}  // namespace featimit
