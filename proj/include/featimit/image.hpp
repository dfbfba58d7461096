#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "featimit/tensor.hpp"

namespace featimit {

// Binary mask, 1 = anomalous pixel, row-major.
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  Mask() = default;
  Mask(int h, int w) : height(h), width(w), data(static_cast<std::size_t>(h) * w, 0) {}
  // `values` must hold h * w entries.
  Mask(int h, int w, std::vector<std::uint8_t> values);
  std::uint8_t& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
  std::size_t count() const;
};

// Separable bilinear (triangle filter) resize with half-pixel centres.
// When shrinking, the filter support is widened by the scale factor so that
// every source pixel contributes (anti-aliasing). Works on any N and C.
Tensor resize_bilinear(const Tensor& x, int out_h, int out_w);

// Resize a mask by area-weighted resampling followed by a 0.5 threshold.
Mask resize_mask(const Mask& m, int out_h, int out_w);

// 8-bit RGB PNG <-> (1, 3, H, W) tensor with values in [0, 1].
Tensor load_image(const std::filesystem::path& path);
void save_image(const std::filesystem::path& path, const Tensor& image);

// 8-bit single channel PNG, binarised with value > 127.
Mask load_mask(const std::filesystem::path& path);
void save_mask(const std::filesystem::path& path, const Mask& mask);

}  // namespace featimit
