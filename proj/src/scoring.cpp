#include "featimit/scoring.hpp"

#include <algorithm>
#include <cmath>

#include "featimit/error.hpp"
#include "featimit/image.hpp"
#include "featimit/scale_search.hpp"
#include "featimit/training.hpp"

namespace featimit {

namespace {

Tensor to_tensor(const ScoreMap& m) {
  Tensor t(1, 1, m.height, m.width);
  std::copy(m.data.begin(), m.data.end(), t.data());
  return t;
}

}  // namespace

ScoreMap level_score_map(const FeatureMap& teacher, const FeatureMap& student, double epsilon) {
  if (!teacher.data.same_shape(student.data) || teacher.data.n() != 1)
    fail(ErrorKind::contract, "level_score_map: teacher " + teacher.data.shape_string() + " vs student " +
                                  student.data.shape_string());
  const Tensor t = normalize_per_pixel(teacher.data, epsilon);
  const Tensor s = normalize_per_pixel(student.data, epsilon);
  ScoreMap out(t.h(), t.w());
  const std::size_t plane = t.plane_size();
  for (std::size_t p = 0; p < plane; ++p) {
    double d2 = 0.0;
    for (int c = 0; c < t.c(); ++c) {
      const double d = t.data()[c * plane + p] - s.data()[c * plane + p];
      d2 += d * d;
    }
    out.data[p] = std::clamp(kScoreScale * d2, 0.0, 1.0);
  }
  return out;
}

ScoreMap upsample_score(const ScoreMap& map, ReferenceSize target) {
  require(map.height > 0 && map.width > 0, "upsample_score: empty map");
  if (target.height < map.height || target.width < map.width)
    fail(ErrorKind::contract, "upsample_score: target " + std::to_string(target.height) + "x" +
                                  std::to_string(target.width) + " is smaller than the map " +
                                  std::to_string(map.height) + "x" + std::to_string(map.width));
  ScoreMap out(target.height, target.width);
  out.block = map.block;
  const Tensor r = resize_bilinear(to_tensor(map), target.height, target.width);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = std::clamp(r.data()[i], 0.0, 1.0);
  return out;
}

ScoreMap fuse_levels(std::span<const ScoreMap> maps, ReferenceSize target) {
  require(!maps.empty(), "fuse_levels: no maps");
  ScoreMap out(target.height, target.width);
  for (const ScoreMap& m : maps) {
    const ScoreMap up = upsample_score(m, target);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += up.data[i];
  }
  for (double& v : out.data) v = std::clamp(v / static_cast<double>(maps.size()), 0.0, 1.0);
  return out;
}

std::vector<ScoreMap> per_block_score_maps(std::span<const ScaleBank> banks, const TeacherNetwork& teacher,
                                           const Tensor& image, ReferenceSize target, double epsilon) {
  require(image.n() == 1 && image.c() == 3, "score input must be (1,3,H,W), got " + image.shape_string());
  std::vector<const ScaleBank*> ordered;
  for (const ScaleBank& b : banks) ordered.push_back(&b);
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const ScaleBank* a, const ScaleBank* b) { return a->scale() < b->scale(); });
  std::vector<ScoreMap> maps;
  for (const ScaleBank* bank : ordered) {
    Tensor scaled = resize_bilinear(image, bank->scale(), bank->scale());
    for (double& v : scaled.values()) v = std::clamp(v, 0.0, 1.0);
    const auto tf = extract_features(teacher, scaled);
    const auto sf = student_forward(*bank, tf);
    for (const FeatureMap& s : sf) {
      ScoreMap m = upsample_score(level_score_map(tf[s.level - 1], s, epsilon), target);
      m.block = BlockId{bank->scale(), s.level};
      maps.push_back(std::move(m));
    }
  }
  return maps;
}

ScoreMap multi_scale_score(std::span<const ScaleBank> banks, const TeacherNetwork& teacher, const Tensor& image,
                           ReferenceSize target, const WeightVector* weights, double epsilon,
                           FusionOrder order) {
  require(!banks.empty(), "multi_scale_score: no banks");
  std::vector<ScoreMap> maps = per_block_score_maps(banks, teacher, image, target, epsilon);
  if (weights) {
    if (weights->values.size() != maps.size())
      fail(ErrorKind::contract, "weight vector has " + std::to_string(weights->values.size()) +
                                    " entries but " + std::to_string(maps.size()) + " blocks are retained");
    for (std::size_t i = 0; i < maps.size(); ++i)
      if (weights->block_ids[i] != *maps[i].block)
        fail(ErrorKind::contract, "weight " + std::to_string(i) + " belongs to block " +
                                      weights->block_ids[i].str() + ", expected " + maps[i].block->str());
    return weighted_fusion(maps, *weights);
  }
  if (order == FusionOrder::flat) return fuse_levels(maps, target);
  std::vector<ScoreMap> per_scale;
  std::size_t i = 0;
  while (i < maps.size()) {
    std::size_t j = i;
    while (j < maps.size() && maps[j].block->scale == maps[i].block->scale) ++j;
    per_scale.push_back(fuse_levels(std::span<const ScoreMap>(maps).subspan(i, j - i), target));
    i = j;
  }
  return fuse_levels(per_scale, target);
}

}  // namespace featimit
