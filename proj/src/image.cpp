#include "featimit/image.hpp"

#include <algorithm>
#include <cmath>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "featimit/error.hpp"

namespace featimit {

namespace {

struct AxisWeights {
  std::vector<int> first;              // first source index per output
  std::vector<std::vector<double>> w;  // normalised weights per output
};

AxisWeights axis_weights(int in_size, int out_size) {
  AxisWeights aw;
  const double scale = static_cast<double>(in_size) / out_size;
  const double support = std::max(scale, 1.0);
  aw.first.resize(out_size);
  aw.w.resize(out_size);
  for (int i = 0; i < out_size; ++i) {
    const double center = (i + 0.5) * scale;
    const int lo = std::max(0, static_cast<int>(std::floor(center - support)));
    const int hi = std::min(in_size, static_cast<int>(std::ceil(center + support)));
    double total = 0.0;
    std::vector<double> w;
    for (int j = lo; j < hi; ++j) {
      const double t = std::abs((j + 0.5 - center) / support);
      const double v = t < 1.0 ? 1.0 - t : 0.0;
      w.push_back(v);
      total += v;
    }
    for (double& v : w) v /= total;
    aw.first[i] = lo;
    aw.w[i] = std::move(w);
  }
  return aw;
}

}  // namespace

Mask::Mask(int h, int w, std::vector<std::uint8_t> values) : height(h), width(w), data(std::move(values)) {
  require(h >= 0 && w >= 0 && data.size() == static_cast<std::size_t>(h) * w,
          "mask data holds " + std::to_string(data.size()) + " values, expected " + std::to_string(h) + "x" +
              std::to_string(w));
}

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count_if(
      data.begin(), data.end(), [](std::uint8_t v) { return v != 0; }));
}

Tensor resize_bilinear(const Tensor& x, int out_h, int out_w) {
  require(out_h > 0 && out_w > 0, "resize target must be positive");
  require(x.h() > 0 && x.w() > 0, "resize of an empty tensor");
  if (out_h == x.h() && out_w == x.w()) return x;
  const AxisWeights wy = axis_weights(x.h(), out_h);
  const AxisWeights wx = axis_weights(x.w(), out_w);
  Tensor out(x.n(), x.c(), out_h, out_w);
  std::vector<double> rows(static_cast<std::size_t>(x.h()) * out_w);
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      const double* src = x.sample(n) + c * x.plane_size();
      // Horizontal pass.
      for (int y = 0; y < x.h(); ++y) {
        const double* row = src + static_cast<std::size_t>(y) * x.w();
        for (int ox = 0; ox < out_w; ++ox) {
          double acc = 0.0;
          const auto& w = wx.w[ox];
          for (std::size_t k = 0; k < w.size(); ++k) acc += w[k] * row[wx.first[ox] + k];
          rows[static_cast<std::size_t>(y) * out_w + ox] = acc;
        }
      }
      // Vertical pass.
      double* dst = out.sample(n) + c * out.plane_size();
      for (int oy = 0; oy < out_h; ++oy) {
        const auto& w = wy.w[oy];
        for (int ox = 0; ox < out_w; ++ox) {
          double acc = 0.0;
          for (std::size_t k = 0; k < w.size(); ++k)
            acc += w[k] * rows[static_cast<std::size_t>(wy.first[oy] + k) * out_w + ox];
          dst[static_cast<std::size_t>(oy) * out_w + ox] = acc;
        }
      }
    }
  }
  return out;
}

Mask resize_mask(const Mask& m, int out_h, int out_w) {
  if (m.height == out_h && m.width == out_w) return m;
  Tensor t(1, 1, m.height, m.width);
  for (std::size_t i = 0; i < m.data.size(); ++i) t.data()[i] = m.data[i] ? 1.0 : 0.0;
  Tensor r = resize_bilinear(t, out_h, out_w);
  Mask out(out_h, out_w);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = r.data()[i] >= 0.5 ? 1 : 0;
  return out;
}

Tensor load_image(const std::filesystem::path& path) {
  cv::Mat img = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (img.empty()) fail(ErrorKind::io, "cannot decode image: " + path.string());
  Tensor t(1, 3, img.rows, img.cols);
  for (int y = 0; y < img.rows; ++y) {
    const auto* row = img.ptr<cv::Vec3b>(y);
    for (int x = 0; x < img.cols; ++x) {
      // OpenCV stores BGR.
      t.at(0, 0, y, x) = row[x][2] / 255.0;
      t.at(0, 1, y, x) = row[x][1] / 255.0;
      t.at(0, 2, y, x) = row[x][0] / 255.0;
    }
  }
  return t;
}

void save_image(const std::filesystem::path& path, const Tensor& image) {
  require(image.n() == 1 && image.c() == 3, "save_image expects (1,3,H,W)");
  cv::Mat img(image.h(), image.w(), CV_8UC3);
  auto to8 = [](double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
  };
  for (int y = 0; y < image.h(); ++y) {
    auto* row = img.ptr<cv::Vec3b>(y);
    for (int x = 0; x < image.w(); ++x)
      row[x] = cv::Vec3b(to8(image.at(0, 2, y, x)), to8(image.at(0, 1, y, x)),
                         to8(image.at(0, 0, y, x)));
  }
  if (!cv::imwrite(path.string(), img))
    fail(ErrorKind::io, "cannot write image: " + path.string());
}

Mask load_mask(const std::filesystem::path& path) {
  cv::Mat img = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (img.empty()) fail(ErrorKind::io, "cannot decode mask: " + path.string());
  Mask m(img.rows, img.cols);
  for (int y = 0; y < img.rows; ++y) {
    const auto* row = img.ptr<std::uint8_t>(y);
    for (int x = 0; x < img.cols; ++x) m.at(y, x) = row[x] > 127 ? 1 : 0;
  }
  return m;
}

void save_mask(const std::filesystem::path& path, const Mask& mask) {
  cv::Mat img(mask.height, mask.width, CV_8UC1);
  for (int y = 0; y < mask.height; ++y) {
    auto* row = img.ptr<std::uint8_t>(y);
    for (int x = 0; x < mask.width; ++x) row[x] = mask.at(y, x) ? 255 : 0;
  }
  if (!cv::imwrite(path.string(), img))
    fail(ErrorKind::io, "cannot write mask: " + path.string());
}

}  // namespace featimit
