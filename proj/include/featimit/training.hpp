#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <vector>

#include "featimit/backbone.hpp"
#include "featimit/student.hpp"

namespace featimit {

struct TrainConfig {
  double learning_rate = 0.5;
  double momentum = 0.9;
  int batch_size = 16;
  int epochs = 600;
  double epsilon = 1e-12;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainState {
  int epoch = 0;                       // 1-based, 0 before training
  std::map<int, double> level_loss;    // mean training loss per level this epoch
  double total_loss = 0.0;
  double elapsed_seconds = 0.0;
  int best_epoch = 0;                  // epoch with the lowest total loss so far
  double best_loss = 0.0;
  double initial_loss = 0.0;           // inference-mode loss before the first step
  double final_loss = 0.0;             // inference-mode loss after the last step
};

struct TrainCallbacks {
  std::function<void(const TrainState&)> on_epoch;
};

// Unit-normalise the channel vector at every pixel. Vectors with norm below
// epsilon become zero.
Tensor normalize_per_pixel(const Tensor& features, double epsilon);
FeatureMap normalize_per_pixel(const FeatureMap& features, double epsilon);

// Mean over pixels of the squared distance between normalised teacher and
// student vectors. Range [0, 4].
double layer_loss(const FeatureMap& teacher, const FeatureMap& student, double epsilon);

struct LossGradient {
  double loss = 0.0;
  Tensor grad;  // d loss / d student, same shape as the student input
};

// Batched layer loss (mean of per-image losses) and its gradient with respect
// to the raw (unnormalised) student features.
LossGradient layer_loss_gradient(const Tensor& teacher, const Tensor& student, double epsilon);

double total_loss(std::span<const double> level_losses);

// Total loss of the bank on `images` with every block in inference mode.
double evaluate_bank_loss(const ScaleBank& bank, const TeacherNetwork& teacher,
                          std::span<const Tensor> images, double epsilon);

// SGD with momentum on the summed level losses over normal images. Images are
// (1, 3, H, W) in [0, 1]; they are resized to the bank's scale if needed.
TrainState fit(ScaleBank& bank, const TeacherNetwork& teacher, std::span<const Tensor> images,
               const TrainConfig& config, const TrainCallbacks& callbacks = {});

}  // namespace featimit
