#pragma once

#include <span>
#include <string>
#include <vector>

#include "featimit/image.hpp"
#include "featimit/scoring.hpp"

namespace featimit {

struct CurvePoint {
  double fpr = 0.0;
  double value = 0.0;  // TPR for ROC, mean region overlap for PRO
};

struct EvalResult {
  double auroc = 0.0;
  double aupro = 0.0;
  std::vector<CurvePoint> roc;  // sorted by fpr
  std::vector<CurvePoint> pro;  // sorted by fpr, up to fpr = 1
};

// Area under the ROC curve via the midrank statistic; equals
// P(score_pos > score_neg) + 0.5 P(score_pos == score_neg).
double auroc(std::span<const double> scores, std::span<const std::uint8_t> labels);

// Connected regions of a binary mask under 8-connectivity. Labels are
// 1..count in row-major order of each region's first pixel; 0 = background.
struct Components {
  int count = 0;
  std::vector<int> labels;  // row-major, same size as the mask
};
Components connected_components(const Mask& mask);

struct AuproOptions {
  double fpr_limit = 0.30;
  std::size_t max_thresholds = 5000;  // above this many unique scores, use quantiles
};

// Per-region-overlap curve integrated over FPR in [0, fpr_limit] and divided
// by fpr_limit. FPR is pooled over the normal pixels of all maps.
double aupro(std::span<const ScoreMap> maps, std::span<const Mask> masks, const AuproOptions& options = {});

// Both metrics plus curve samples. AUROC pools all pixels of all images.
EvalResult evaluate(std::span<const ScoreMap> maps, std::span<const Mask> masks,
                    const AuproOptions& options = {});

}  // namespace featimit
