#include "featimit/scale_search.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "featimit/error.hpp"

namespace featimit {

namespace {

constexpr const char* kWeightMagic = "featimit-weights";
constexpr int kWeightVersion = 1;

void check_mask(const ScoreMap& fused, const Mask& gt) {
  if (fused.height != gt.height || fused.width != gt.width)
    fail(ErrorKind::contract, "score map " + std::to_string(fused.height) + "x" + std::to_string(fused.width) +
                                  " vs mask " + std::to_string(gt.height) + "x" + std::to_string(gt.width));
}

}  // namespace

WeightLogits uniform_logits(std::vector<BlockId> block_ids, double learning_rate) {
  WeightLogits w;
  w.values.assign(block_ids.size(), 0.0);
  w.block_ids = std::move(block_ids);
  w.learning_rate = learning_rate;
  return w;
}

WeightVector softmax_weights(const WeightLogits& logits) {
  require(logits.values.size() == logits.block_ids.size(), "logits and block ids differ in length");
  WeightVector w;
  w.block_ids = logits.block_ids;
  if (logits.values.empty()) return w;
  const double top = *std::max_element(logits.values.begin(), logits.values.end());
  w.values.resize(logits.values.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < w.values.size(); ++i) {
    w.values[i] = std::exp(logits.values[i] - top);
    sum += w.values[i];
  }
  for (double& v : w.values) v /= sum;
  return w;
}

ScoreMap weighted_fusion(std::span<const ScoreMap> maps, const WeightVector& weights) {
  require(!maps.empty(), "weighted_fusion: no maps");
  if (maps.size() != weights.values.size())
    fail(ErrorKind::contract, "weighted_fusion: " + std::to_string(maps.size()) + " maps but " +
                                  std::to_string(weights.values.size()) + " weights");
  ScoreMap out(maps.front().height, maps.front().width);
  for (std::size_t i = 0; i < maps.size(); ++i) {
    if (!maps[i].same_size(out)) fail(ErrorKind::contract, "weighted_fusion: maps differ in size");
    const double w = weights.values[i];
    require(w >= 0.0, "weighted_fusion: negative weight");
    for (std::size_t p = 0; p < out.data.size(); ++p) out.data[p] += w * maps[i].data[p];
  }
  for (double& v : out.data) v = std::clamp(v, 0.0, 1.0);
  return out;
}

double validation_loss(const ScoreMap& fused, const Mask& gt) {
  check_mask(fused, gt);
  require(!fused.data.empty(), "validation_loss: empty map");
  double sum = 0.0;
  for (std::size_t p = 0; p < fused.data.size(); ++p) {
    const double q = std::clamp(fused.data[p], kProbabilityClamp, 1.0 - kProbabilityClamp);
    sum -= gt.data[p] ? std::log(q) : std::log(1.0 - q);
  }
  return sum / static_cast<double>(fused.data.size());
}

ValidationCache build_validation_cache(std::span<const ScaleBank> banks, const TeacherNetwork& teacher,
                                       std::span<const Tensor> images, std::span<const Mask> masks,
                                       ReferenceSize target, double epsilon) {
  if (images.empty()) fail(ErrorKind::contract, "validation set is empty");
  require(images.size() == masks.size(), "validation images and masks differ in count");
  ValidationCache cache;
  for (std::size_t i = 0; i < images.size(); ++i) {
    auto maps = per_block_score_maps(banks, teacher, images[i], target, epsilon);
    if (cache.block_ids.empty())
      for (const auto& m : maps) cache.block_ids.push_back(*m.block);
    cache.maps.push_back(std::move(maps));
    cache.masks.push_back(resize_mask(masks[i], target.height, target.width));
  }
  return cache;
}

LossGradientOmega validation_loss_gradient(const ValidationCache& cache, const WeightLogits& logits) {
  if (cache.maps.empty()) fail(ErrorKind::contract, "validation set is empty");
  const std::size_t n_blocks = logits.values.size();
  require(n_blocks == cache.block_ids.size(), "logit count does not match cached blocks");
  const WeightVector w = softmax_weights(logits);
  std::vector<double> grad_w(n_blocks, 0.0);
  LossGradientOmega out;
  const double inv_images = 1.0 / static_cast<double>(cache.maps.size());
  for (std::size_t im = 0; im < cache.maps.size(); ++im) {
    const auto& maps = cache.maps[im];
    const Mask& gt = cache.masks[im];
    const std::size_t pixels = gt.data.size();
    const double inv_pixels = 1.0 / static_cast<double>(pixels);
    for (std::size_t p = 0; p < pixels; ++p) {
      double fused = 0.0;
      for (std::size_t b = 0; b < n_blocks; ++b) fused += w.values[b] * maps[b].data[p];
      const bool inside = fused > kProbabilityClamp && fused < 1.0 - kProbabilityClamp;
      const double q = std::clamp(fused, kProbabilityClamp, 1.0 - kProbabilityClamp);
      const double g = gt.data[p] ? 1.0 : 0.0;
      out.loss -= (g ? std::log(q) : std::log(1.0 - q)) * inv_pixels * inv_images;
      if (!inside) continue;
      const double dfused = (q - g) / (q * (1.0 - q)) * inv_pixels * inv_images;
      for (std::size_t b = 0; b < n_blocks; ++b) grad_w[b] += dfused * maps[b].data[p];
    }
  }
  // Back through the softmax: d/dz_j = w_j (g_j - sum_i w_i g_i).
  const double mean = std::inner_product(w.values.begin(), w.values.end(), grad_w.begin(), 0.0);
  out.grad.resize(n_blocks);
  for (std::size_t j = 0; j < n_blocks; ++j) out.grad[j] = w.values[j] * (grad_w[j] - mean);
  return out;
}

WeightLogits search_weights(const ValidationCache& cache, WeightLogits logits, const SearchConfig& config) {
  require(config.iterations >= 0, "iterations must be >= 0");
  require(config.learning_rate >= 0.0, "search learning rate must be >= 0");
  if (cache.maps.empty()) fail(ErrorKind::contract, "validation set is empty");
  logits.learning_rate = config.learning_rate;
  for (int m = 0; m < config.iterations; ++m) {
    const LossGradientOmega lg = validation_loss_gradient(cache, logits);
    if (!std::isfinite(lg.loss))
      fail(ErrorKind::numerical, "validation loss is not finite at search iteration " + std::to_string(m));
    logits.loss_trace.push_back(lg.loss);
    for (std::size_t i = 0; i < logits.values.size(); ++i) logits.values[i] -= config.learning_rate * lg.grad[i];
    ++logits.iteration;
  }
  const double final_loss = validation_loss_gradient(cache, logits).loss;
  if (!std::isfinite(final_loss)) fail(ErrorKind::numerical, "final validation loss is not finite");
  logits.loss_trace.push_back(final_loss);
  return logits;
}

WeightLogits search_weights(std::span<const ScaleBank> banks, const TeacherNetwork& teacher,
                            std::span<const Tensor> images, std::span<const Mask> masks, ReferenceSize target,
                            const SearchConfig& config) {
  const ValidationCache cache = build_validation_cache(banks, teacher, images, masks, target);
  return search_weights(cache, uniform_logits(cache.block_ids, config.learning_rate), config);
}

PruneResult prune_top_k(const WeightLogits& logits, int k) {
  const int n = static_cast<int>(logits.values.size());
  if (k < 1 || k > n)
    fail(ErrorKind::contract, "prune_top_k: k = " + std::to_string(k) + " outside 1.." + std::to_string(n));
  const WeightVector w = softmax_weights(logits);
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return w.values[a] > w.values[b]; });
  PruneResult r;
  r.kept_mask.assign(n, false);
  for (int i = 0; i < k; ++i) r.kept_mask[order[i]] = true;
  double sum = 0.0;
  for (int i = 0; i < n; ++i)
    if (r.kept_mask[i]) sum += w.values[i];
  for (int i = 0; i < n; ++i) {
    if (!r.kept_mask[i]) continue;
    r.kept.push_back(logits.block_ids[i]);
    r.weights.block_ids.push_back(logits.block_ids[i]);
    r.weights.values.push_back(k == n ? w.values[i] : w.values[i] / sum);
  }
  return r;
}

void write_weight_file(const std::filesystem::path& path, const WeightLogits& logits,
                       const std::vector<bool>& kept, const std::string& config_fingerprint) {
  require(kept.size() == logits.values.size(), "kept flags do not match logits");
  const WeightVector w = softmax_weights(logits);
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write weight file: " + path.string());
  out.precision(17);
  out << kWeightMagic << " " << kWeightVersion << "\n";
  out << "config " << (config_fingerprint.empty() ? "-" : config_fingerprint) << "\n";
  out << "iterations " << logits.iteration << "\n";
  out << "learning_rate " << logits.learning_rate << "\n";
  out << "# scale level logit weight kept\n";
  for (std::size_t i = 0; i < logits.values.size(); ++i)
    out << logits.block_ids[i].scale << " " << logits.block_ids[i].level << " " << logits.values[i] << " "
        << w.values[i] << " " << (kept[i] ? 1 : 0) << "\n";
  if (!out) fail(ErrorKind::io, "write failed: " + path.string());
}

WeightFile read_weight_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot read weight file: " + path.string());
  WeightFile wf;
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != kWeightMagic) fail(ErrorKind::config, path.string() + " is not a weight file");
  if (version != kWeightVersion)
    fail(ErrorKind::config, path.string() + ": unsupported weight file version " + std::to_string(version));
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "config") {
      ls >> wf.config_fingerprint;
      if (wf.config_fingerprint == "-") wf.config_fingerprint.clear();
    } else if (key == "iterations") {
      ls >> wf.logits.iteration;
    } else if (key == "learning_rate") {
      ls >> wf.logits.learning_rate;
    } else {
      std::istringstream row(line);
      BlockId id;
      double logit = 0.0, weight = 0.0;
      int kept = 0;
      if (!(row >> id.scale >> id.level >> logit >> weight >> kept))
        fail(ErrorKind::config, path.string() + ": malformed row '" + line + "'");
      wf.logits.block_ids.push_back(id);
      wf.logits.values.push_back(logit);
      wf.kept.push_back(kept != 0);
    }
  }
  return wf;
}

void apply_pruning(std::vector<ScaleBank>& banks, std::span<const BlockId> kept) {
  for (ScaleBank& bank : banks) {
    for (int level : bank.levels())
      if (std::find(kept.begin(), kept.end(), BlockId{bank.scale(), level}) == kept.end()) bank.remove(level);
  }
  std::erase_if(banks, [](const ScaleBank& b) { return b.blocks().empty(); });
}

}  // namespace featimit
