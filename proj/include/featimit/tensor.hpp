#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace featimit {

// Dense NCHW tensor of doubles. Everything in the library (images, feature
// maps, parameters, gradients) is stored this way.
class Tensor {
 public:
  Tensor() = default;
  Tensor(int n, int c, int h, int w, double fill = 0.0);

  int n() const { return n_; }
  int c() const { return c_; }
  int h() const { return h_; }
  int w() const { return w_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // Elements of one sample.
  std::size_t sample_size() const {
    return static_cast<std::size_t>(c_) * h_ * w_;
  }
  std::size_t plane_size() const { return static_cast<std::size_t>(h_) * w_; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  double* sample(int i) { return data_.data() + i * sample_size(); }
  const double* sample(int i) const {
    return data_.data() + i * sample_size();
  }

  double& at(int n, int c, int y, int x) {
    return data_[((static_cast<std::size_t>(n) * c_ + c) * h_ + y) * w_ + x];
  }
  double at(int n, int c, int y, int x) const {
    return data_[((static_cast<std::size_t>(n) * c_ + c) * h_ + y) * w_ + x];
  }

  bool same_shape(const Tensor& other) const {
    return n_ == other.n_ && c_ == other.c_ && h_ == other.h_ &&
           w_ == other.w_;
  }

  void fill(double v);
  void add_(const Tensor& other);  // in place, shapes must agree

  // Copy of samples [first, first + count).
  Tensor slice(int first, int count) const;
  // Copy sample `i` of this tensor into sample `dst` of `out`.
  void copy_sample_to(int i, Tensor& out, int dst) const;

  bool all_finite() const;

  std::string shape_string() const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.same_shape(b) && a.data_ == b.data_;
  }

 private:
  int n_ = 0, c_ = 0, h_ = 0, w_ = 0;
  std::vector<double> data_;
};

// Stack single-sample tensors (n == 1) along the batch axis.
Tensor stack(std::span<const Tensor> samples);

// FNV-1a over raw bytes; used for parameter checksums and config fingerprints.
std::uint64_t fnv1a(const void* bytes, std::size_t count,
                    std::uint64_t seed = 1469598103934665603ULL);

}  // namespace featimit
