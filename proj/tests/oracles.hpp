#pragma once
// Independent reference implementations used as test oracles.

#include <algorithm>
#include <cmath>
#include <functional>
#include <queue>
#include <set>
#include <vector>

#include "featimit/image.hpp"
#include "featimit/scoring.hpp"
#include "featimit/tensor.hpp"

namespace oracle {

// mean_p |t/|t| - s/|s||^2 evaluated pixel by pixel.
inline double layer_loss(const featimit::Tensor& t, const featimit::Tensor& s) {
  double total = 0.0;
  for (int n = 0; n < t.n(); ++n) {
    double acc = 0.0;
    for (int y = 0; y < t.h(); ++y)
      for (int x = 0; x < t.w(); ++x) {
        double nt = 0.0, ns = 0.0;
        for (int c = 0; c < t.c(); ++c) {
          nt += t.at(n, c, y, x) * t.at(n, c, y, x);
          ns += s.at(n, c, y, x) * s.at(n, c, y, x);
        }
        nt = std::sqrt(nt);
        ns = std::sqrt(ns);
        for (int c = 0; c < t.c(); ++c) {
          const double d = t.at(n, c, y, x) / nt - s.at(n, c, y, x) / ns;
          acc += d * d;
        }
      }
    total += acc / (t.h() * t.w());
  }
  return total / t.n();
}

// Fraction of (positive, negative) pairs ranked correctly, ties count half.
inline double pairwise_auroc(const std::vector<double>& s, const std::vector<std::uint8_t>& y) {
  double wins = 0.0, pos = 0.0, neg = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) (y[i] ? pos : neg) += 1.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] && !y[j]) wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
  return wins / (pos * neg);
}

// Regions by breadth-first flood fill over the 8-neighbourhood.
inline std::vector<std::vector<std::size_t>> regions_of(const featimit::Mask& m) {
  std::vector<int> seen(m.data.size(), 0);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t s = 0; s < m.data.size(); ++s) {
    if (!m.data[s] || seen[s]) continue;
    std::vector<std::size_t> region;
    std::queue<std::size_t> q;
    q.push(s);
    seen[s] = 1;
    while (!q.empty()) {
      const std::size_t p = q.front();
      q.pop();
      region.push_back(p);
      const int y = static_cast<int>(p) / m.width, x = static_cast<int>(p) % m.width;
      for (int ny = y - 1; ny <= y + 1; ++ny)
        for (int nx = x - 1; nx <= x + 1; ++nx) {
          if (ny < 0 || nx < 0 || ny >= m.height || nx >= m.width) continue;
          const std::size_t n = static_cast<std::size_t>(ny) * m.width + nx;
          if (m.data[n] && !seen[n]) {
            seen[n] = 1;
            q.push(n);
          }
        }
    }
    out.push_back(region);
  }
  return out;
}

// Every distinct score is a threshold; FPR pooled over all normal pixels;
// trapezoid area up to `limit`, normalised by `limit`.
inline double aupro(const std::vector<featimit::ScoreMap>& maps, const std::vector<featimit::Mask>& masks,
                    double limit) {
  std::set<double, std::greater<>> thresholds;
  for (const auto& m : maps) thresholds.insert(m.data.begin(), m.data.end());
  double negatives = 0.0;
  std::vector<std::vector<std::vector<std::size_t>>> regions;
  for (const auto& mk : masks) {
    regions.push_back(regions_of(mk));
    for (auto v : mk.data) negatives += v ? 0.0 : 1.0;
  }
  std::vector<std::pair<double, double>> curve{{0.0, 0.0}};
  for (double t : thresholds) {
    double fp = 0.0, pro = 0.0, count = 0.0;
    for (std::size_t i = 0; i < maps.size(); ++i) {
      for (std::size_t p = 0; p < maps[i].data.size(); ++p)
        if (!masks[i].data[p] && maps[i].data[p] >= t) fp += 1.0;
      for (const auto& r : regions[i]) {
        double hit = 0.0;
        for (auto p : r) hit += maps[i].data[p] >= t ? 1.0 : 0.0;
        pro += hit / static_cast<double>(r.size());
        count += 1.0;
      }
    }
    curve.push_back({fp / negatives, pro / count});
  }
  double area = 0.0;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    auto [x0, y0] = curve[i - 1];
    auto [x1, y1] = curve[i];
    if (x0 >= limit) break;
    if (x1 > limit) {
      y1 = y0 + (y1 - y0) * (limit - x0) / (x1 - x0);
      x1 = limit;
    }
    area += (x1 - x0) * (y0 + y1) / 2.0;
  }
  return area / limit;
}

// Mask with two axis-aligned rectangles in opposite halves of the image.
template <class Rng>
featimit::Mask two_regions(Rng& rng, int h, int w) {
  featimit::Mask m{h, w, std::vector<std::uint8_t>(static_cast<std::size_t>(h) * w, 0)};
  std::uniform_int_distribution<int> side(1, std::max(1, std::min(h, w / 2 - 1) / 2));
  for (int r = 0; r < 2; ++r) {
    const int rh = side(rng), rw = side(rng);
    const int lo = r == 0 ? 0 : w / 2 + 1;
    const int hi = (r == 0 ? w / 2 - 1 : w) - rw;
    std::uniform_int_distribution<int> py(0, h - rh), px(lo, std::max(lo, hi));
    const int y = py(rng), x = px(rng);
    for (int yy = y; yy < y + rh; ++yy)
      for (int xx = x; xx < std::min(w, x + rw); ++xx) m.data[static_cast<std::size_t>(yy) * w + xx] = 1;
  }
  return m;
}

// Noisy scores that are higher on the mask; optionally quantized to force ties.
template <class Rng>
featimit::ScoreMap noisy_scores(Rng& rng, const featimit::Mask& m, bool quantize) {
  std::normal_distribution<double> n(0.0, 0.3);
  featimit::ScoreMap s(m.height, m.width);
  for (std::size_t p = 0; p < s.data.size(); ++p) {
    double v = std::clamp((m.data[p] ? 0.6 : 0.3) + n(rng), 0.0, 1.0);
    if (quantize) v = std::round(v * 10.0) / 10.0;
    s.data[p] = v;
  }
  return s;
}

}  // namespace oracle
