#include "featimit/training.hpp"

#include <algorithm>
#include <chrono>
#include <limits>
#include <cmath>
#include <numeric>
#include <random>

#include "featimit/error.hpp"
#include "featimit/image.hpp"

namespace featimit {

namespace {

// Upper bound on cached teacher features before falling back to per-batch
// extraction.
constexpr std::size_t kFeatureCacheBytes = std::size_t{1} << 31;

void check_pair(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b))
    fail(ErrorKind::contract, "feature shapes differ: teacher " + a.shape_string() + " vs student " +
                                  b.shape_string());
}

Tensor gather(const Tensor& all, std::span<const int> idx) {
  Tensor out(static_cast<int>(idx.size()), all.c(), all.h(), all.w());
  for (std::size_t i = 0; i < idx.size(); ++i) all.copy_sample_to(idx[i], out, static_cast<int>(i));
  return out;
}

Tensor stack_at_scale(std::span<const Tensor> images, int scale) {
  std::vector<Tensor> resized;
  resized.reserve(images.size());
  for (const Tensor& im : images) {
    require(im.n() == 1 && im.c() == 3, "training images must be (1,3,H,W), got " + im.shape_string());
    resized.push_back(im.h() == scale && im.w() == scale ? im : resize_bilinear(im, scale, scale));
  }
  return stack(resized);
}

}  // namespace

void TrainConfig::validate() const {
  require(learning_rate >= 0.0 && std::isfinite(learning_rate), "learning rate must be >= 0");
  require(momentum >= 0.0 && momentum < 1.0, "momentum must lie in [0, 1)");
  require(batch_size > 0, "batch size must be positive");
  require(epochs > 0, "epochs must be positive");
  require(epsilon > 0.0, "normalization epsilon must be positive");
}

Tensor normalize_per_pixel(const Tensor& features, double epsilon) {
  require(epsilon > 0.0, "normalization epsilon must be positive");
  if (!features.all_finite()) fail(ErrorKind::contract, "normalize_per_pixel: non-finite feature values");
  Tensor out = features;
  const std::size_t plane = features.plane_size();
  for (int n = 0; n < features.n(); ++n) {
    double* s = out.sample(n);
    for (std::size_t p = 0; p < plane; ++p) {
      double sq = 0.0;
      for (int c = 0; c < features.c(); ++c) sq += s[c * plane + p] * s[c * plane + p];
      const double norm = std::sqrt(sq);
      const double inv = norm < epsilon ? 0.0 : 1.0 / norm;
      for (int c = 0; c < features.c(); ++c) s[c * plane + p] *= inv;
    }
  }
  return out;
}

FeatureMap normalize_per_pixel(const FeatureMap& features, double epsilon) {
  return {normalize_per_pixel(features.data, epsilon), features.level, features.source};
}

double layer_loss(const FeatureMap& teacher, const FeatureMap& student, double epsilon) {
  if (teacher.level != student.level)
    fail(ErrorKind::contract, "layer_loss: level " + std::to_string(teacher.level) + " vs " +
                                  std::to_string(student.level));
  check_pair(teacher.data, student.data);
  const Tensor t = normalize_per_pixel(teacher.data, epsilon);
  const Tensor s = normalize_per_pixel(student.data, epsilon);
  const std::size_t plane = t.plane_size();
  double total = 0.0;
  for (int n = 0; n < t.n(); ++n) {
    double acc = 0.0;
    for (std::size_t p = 0; p < plane; ++p) {
      double d2 = 0.0;
      for (int c = 0; c < t.c(); ++c) {
        const double d = t.sample(n)[c * plane + p] - s.sample(n)[c * plane + p];
        d2 += d * d;
      }
      acc += d2;
    }
    total += acc / static_cast<double>(plane);
  }
  return total / t.n();
}

LossGradient layer_loss_gradient(const Tensor& teacher, const Tensor& student, double epsilon) {
  check_pair(teacher, student);
  const Tensor t = normalize_per_pixel(teacher, epsilon);
  LossGradient out;
  out.grad = Tensor(student.n(), student.c(), student.h(), student.w());
  const std::size_t plane = student.plane_size();
  const int channels = student.c();
  const double scale = 1.0 / (static_cast<double>(plane) * student.n());
  std::vector<double> unit(channels), g(channels);
  double total = 0.0;
  for (int n = 0; n < student.n(); ++n) {
    const double* sv = student.sample(n);
    const double* tv = t.sample(n);
    double* gv = out.grad.sample(n);
    for (std::size_t p = 0; p < plane; ++p) {
      double sq = 0.0;
      for (int c = 0; c < channels; ++c) sq += sv[c * plane + p] * sv[c * plane + p];
      const double norm = std::sqrt(sq);
      const bool dead = norm < epsilon;
      double d2 = 0.0;
      double dot = 0.0;
      for (int c = 0; c < channels; ++c) {
        unit[c] = dead ? 0.0 : sv[c * plane + p] / norm;
        const double d = tv[c * plane + p] - unit[c];
        d2 += d * d;
        g[c] = -2.0 * d * scale;  // d loss / d unit
        dot += unit[c] * g[c];
      }
      total += d2 * scale;
      for (int c = 0; c < channels; ++c)
        gv[c * plane + p] = dead ? 0.0 : (g[c] - unit[c] * dot) / norm;
    }
  }
  out.loss = total;
  return out;
}

double total_loss(std::span<const double> level_losses) {
  return std::accumulate(level_losses.begin(), level_losses.end(), 0.0);
}

double evaluate_bank_loss(const ScaleBank& bank, const TeacherNetwork& teacher,
                          std::span<const Tensor> images, double epsilon) {
  require(!images.empty(), "evaluate_bank_loss: no images");
  double sum = 0.0;
  for (const Tensor& im : images) {
    const Tensor scaled = im.h() == bank.scale() && im.w() == bank.scale()
                              ? im
                              : resize_bilinear(im, bank.scale(), bank.scale());
    const auto tf = extract_features(teacher, scaled);
    const auto sf = student_forward(bank, tf);
    std::vector<double> losses;
    for (const FeatureMap& s : sf) losses.push_back(layer_loss(tf[s.level - 1], s, epsilon));
    sum += total_loss(losses);
  }
  return sum / static_cast<double>(images.size());
}

TrainState fit(ScaleBank& bank, const TeacherNetwork& teacher, std::span<const Tensor> images,
               const TrainConfig& config, const TrainCallbacks& callbacks) {
  config.validate();
  if (images.empty()) fail(ErrorKind::contract, "fit: training set is empty");
  require(!bank.blocks().empty(), "fit: bank has no blocks");
  const auto start = std::chrono::steady_clock::now();

  const Tensor all = stack_at_scale(images, bank.scale());
  const int count = all.n();
  const std::vector<int> levels = bank.levels();
  const int deepest = levels.back();

  // Teacher features are fixed, so they are computed once when they fit in
  // memory.
  std::size_t cache_bytes = 0;
  {
    const Tensor probe = all.slice(0, 1);
    for (const Tensor& f : extract_feature_batch(teacher, probe))
      cache_bytes += f.size() * sizeof(double) * static_cast<std::size_t>(count);
  }
  std::vector<Tensor> cached;
  if (cache_bytes <= kFeatureCacheBytes) cached = extract_feature_batch(teacher, all);

  TrainState state;
  state.initial_loss = evaluate_bank_loss(bank, teacher, images, config.epsilon);
  state.best_loss = std::numeric_limits<double>::infinity();

  // Momentum buffers, one per trainable parameter, keyed by block then name.
  std::map<int, std::map<std::string, Tensor>> velocity;

  std::seed_seq seq{static_cast<std::uint32_t>(config.seed), static_cast<std::uint32_t>(config.seed >> 32),
                    static_cast<std::uint32_t>(bank.scale())};
  std::mt19937_64 rng(seq);
  std::vector<int> order(count);
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    std::map<int, double> epoch_loss;
    int batch_index = 0;
    for (int first = 0; first < count; first += config.batch_size, ++batch_index) {
      const int size = std::min(config.batch_size, count - first);
      const std::span<const int> idx(order.data() + first, size);
      std::vector<Tensor> feats;
      if (!cached.empty()) {
        for (int l = 1; l <= deepest; ++l) feats.push_back(gather(cached[l - 1], idx));
      } else {
        feats = extract_feature_batch(teacher, gather(all, idx));
      }
      for (int l : levels) {
        nn::Sequential& net = bank.block(l).net();
        net.zero_grad();
        const Tensor pred = net.train_forward(feats[l - 2]);
        LossGradient lg = layer_loss_gradient(feats[l - 1], pred, config.epsilon);
        if (!std::isfinite(lg.loss) || !lg.grad.all_finite())
          fail(ErrorKind::numerical, "non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                         std::to_string(batch_index) + ", level " + std::to_string(l) +
                                         " (scale " + std::to_string(bank.scale()) + ")");
        net.backward(lg.grad);
        net.clear_cache();
        auto& vel = velocity[l];
        net.visit("", nn::ParamVisitor([&](const std::string& name, nn::Parameter& p) {
                    if (!p.trainable) return;
                    auto [it, inserted] = vel.try_emplace(name, p.grad);
                    Tensor& v = it->second;
                    if (!inserted) {
                      double* vd = v.data();
                      const double* gd = p.grad.data();
                      for (std::size_t i = 0; i < v.size(); ++i) vd[i] = config.momentum * vd[i] + gd[i];
                    }
                    double* pd = p.value.data();
                    const double* vd = v.data();
                    for (std::size_t i = 0; i < v.size(); ++i) pd[i] -= config.learning_rate * vd[i];
                    if (!p.value.all_finite())
                      fail(ErrorKind::numerical, "parameter " + name + " diverged at epoch " +
                                                     std::to_string(epoch) + ", batch " +
                                                     std::to_string(batch_index));
                  }));
        epoch_loss[l] += lg.loss * size;
      }
    }
    state.epoch = epoch;
    state.level_loss.clear();
    double total = 0.0;
    for (auto& [l, v] : epoch_loss) {
      state.level_loss[l] = v / count;
      total += v / count;
    }
    state.total_loss = total;
    if (total < state.best_loss) {
      state.best_loss = total;
      state.best_epoch = epoch;
    }
    state.elapsed_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (callbacks.on_epoch) callbacks.on_epoch(state);
  }
  state.final_loss = evaluate_bank_loss(bank, teacher, images, config.epsilon);
  state.elapsed_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return state;
}

}  // namespace featimit
