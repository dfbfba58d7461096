#include "featimit/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "featimit/error.hpp"

namespace featimit {

namespace {

void check_aligned(std::span<const ScoreMap> maps, std::span<const Mask> masks) {
  if (maps.size() != masks.size())
    fail(ErrorKind::contract, std::to_string(maps.size()) + " score maps but " + std::to_string(masks.size()) +
                                  " masks");
  for (std::size_t i = 0; i < maps.size(); ++i)
    if (maps[i].height != masks[i].height || maps[i].width != masks[i].width)
      fail(ErrorKind::contract, "image " + std::to_string(i) + ": score map " + std::to_string(maps[i].height) +
                                    "x" + std::to_string(maps[i].width) + " vs mask " +
                                    std::to_string(masks[i].height) + "x" + std::to_string(masks[i].width));
}

double integrate_to(const std::vector<CurvePoint>& curve, double limit) {
  double area = 0.0;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    const CurvePoint& a = curve[i - 1];
    const CurvePoint& b = curve[i];
    if (a.fpr >= limit) break;
    if (b.fpr <= limit) {
      area += (b.fpr - a.fpr) * (a.value + b.value) * 0.5;
    } else {
      const double t = (limit - a.fpr) / (b.fpr - a.fpr);
      const double y = a.value + t * (b.value - a.value);
      area += (limit - a.fpr) * (a.value + y) * 0.5;
      break;
    }
  }
  return area;
}

struct Curves {
  std::vector<CurvePoint> roc;
  std::vector<CurvePoint> pro;
};

// Sweeps thresholds from high to low; a pixel is predicted anomalous when
// its score is >= the threshold.
Curves sweep(std::span<const ScoreMap> maps, std::span<const Mask> masks, const AuproOptions& options) {
  check_aligned(maps, masks);
  std::vector<double> scores;
  std::vector<int> region;  // global region id, -1 for normal pixels
  std::vector<double> region_size;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    const Components cc = connected_components(masks[i]);
    const int base = static_cast<int>(region_size.size());
    region_size.resize(region_size.size() + cc.count, 0.0);
    for (std::size_t p = 0; p < cc.labels.size(); ++p) {
      scores.push_back(maps[i].data[p]);
      const int lab = cc.labels[p];
      region.push_back(lab ? base + lab - 1 : -1);
      if (lab) region_size[base + lab - 1] += 1.0;
    }
  }
  const std::size_t n_regions = region_size.size();
  if (n_regions == 0) fail(ErrorKind::contract, "no anomalous pixels in the evaluated set");
  const double negatives = static_cast<double>(std::count(region.begin(), region.end(), -1));
  if (negatives == 0) fail(ErrorKind::contract, "no normal pixels in the evaluated set");
  const double positives = static_cast<double>(scores.size()) - negatives;

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  std::size_t unique = 0;
  for (std::size_t i = 0; i < order.size(); ++i)
    if (i == 0 || scores[order[i]] != scores[order[i - 1]]) ++unique;
  // Indices (in descending unique order) at which a curve point is recorded.
  std::vector<bool> record(unique, true);
  if (unique > options.max_thresholds && options.max_thresholds >= 2) {
    std::fill(record.begin(), record.end(), false);
    for (std::size_t k = 0; k < options.max_thresholds; ++k)
      record[k * (unique - 1) / (options.max_thresholds - 1)] = true;
  }

  Curves c;
  c.roc.push_back({0.0, 0.0});
  c.pro.push_back({0.0, 0.0});
  std::vector<double> covered(n_regions, 0.0);
  double fp = 0.0, tp = 0.0, pro_sum = 0.0;
  std::size_t u = 0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const std::size_t px = order[i];
    const int r = region[px];
    if (r < 0) {
      fp += 1.0;
    } else {
      tp += 1.0;
      covered[r] += 1.0;
      pro_sum += 1.0 / region_size[r];
    }
    const bool group_end = i + 1 == order.size() || scores[order[i + 1]] != scores[px];
    if (!group_end) continue;
    if (record[u]) {
      c.roc.push_back({fp / negatives, tp / positives});
      c.pro.push_back({fp / negatives, pro_sum / static_cast<double>(n_regions)});
    }
    ++u;
  }
  return c;
}

}  // namespace

double auroc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size())
    fail(ErrorKind::contract, "auroc: " + std::to_string(scores.size()) + " scores vs " +
                                  std::to_string(labels.size()) + " labels");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  double n_pos = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    // Ranks i+1 .. j share the midrank.
    const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) * 0.5;
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]]) {
        rank_sum += midrank;
        n_pos += 1.0;
      }
    i = j;
  }
  const double n_neg = static_cast<double>(scores.size()) - n_pos;
  if (n_pos == 0 || n_neg == 0) fail(ErrorKind::contract, "auroc needs both positive and negative labels");
  return (rank_sum - n_pos * (n_pos + 1.0) * 0.5) / (n_pos * n_neg);
}

Components connected_components(const Mask& mask) {
  Components cc;
  cc.labels.assign(mask.data.size(), 0);
  std::vector<std::size_t> stack;
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      const std::size_t start = static_cast<std::size_t>(y) * mask.width + x;
      if (!mask.data[start] || cc.labels[start]) continue;
      const int label = ++cc.count;
      cc.labels[start] = label;
      stack.push_back(start);
      while (!stack.empty()) {
        const std::size_t p = stack.back();
        stack.pop_back();
        const int py = static_cast<int>(p / mask.width), px = static_cast<int>(p % mask.width);
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int ny = py + dy, nx = px + dx;
            if (ny < 0 || nx < 0 || ny >= mask.height || nx >= mask.width) continue;
            const std::size_t q = static_cast<std::size_t>(ny) * mask.width + nx;
            if (mask.data[q] && !cc.labels[q]) {
              cc.labels[q] = label;
              stack.push_back(q);
            }
          }
      }
    }
  }
  return cc;
}

double aupro(std::span<const ScoreMap> maps, std::span<const Mask> masks, const AuproOptions& options) {
  require(options.fpr_limit > 0.0 && options.fpr_limit <= 1.0, "fpr limit must lie in (0, 1]");
  const Curves c = sweep(maps, masks, options);
  return integrate_to(c.pro, options.fpr_limit) / options.fpr_limit;
}

EvalResult evaluate(std::span<const ScoreMap> maps, std::span<const Mask> masks, const AuproOptions& options) {
  check_aligned(maps, masks);
  std::vector<double> scores;
  std::vector<std::uint8_t> labels;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    scores.insert(scores.end(), maps[i].data.begin(), maps[i].data.end());
    for (auto v : masks[i].data) labels.push_back(v ? 1 : 0);
  }
  EvalResult r;
  r.auroc = auroc(scores, labels);
  Curves c = sweep(maps, masks, options);
  r.aupro = integrate_to(c.pro, options.fpr_limit) / options.fpr_limit;
  r.roc = std::move(c.roc);
  r.pro = std::move(c.pro);
  return r;
}

}  // namespace featimit
