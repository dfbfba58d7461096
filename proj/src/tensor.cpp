#include "featimit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "featimit/error.hpp"

namespace featimit {

Tensor::Tensor(int n, int c, int h, int w, double fill)
    : n_(n), c_(c), h_(h), w_(w) {
  require(n >= 0 && c >= 0 && h >= 0 && w >= 0, "negative tensor dimension");
  data_.assign(static_cast<std::size_t>(n) * c * h * w, fill);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::add_(const Tensor& other) {
  if (!same_shape(other))
    fail(ErrorKind::shape, "add_: " + shape_string() + " vs " +
                               other.shape_string());
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
}

Tensor Tensor::slice(int first, int count) const {
  require(first >= 0 && count >= 0 && first + count <= n_,
          "slice out of range");
  Tensor out(count, c_, h_, w_);
  std::memcpy(out.data(), sample(first),
              sizeof(double) * sample_size() * count);
  return out;
}

void Tensor::copy_sample_to(int i, Tensor& out, int dst) const {
  require(out.c_ == c_ && out.h_ == h_ && out.w_ == w_,
          "copy_sample_to: shape mismatch");
  std::memcpy(out.sample(dst), sample(i), sizeof(double) * sample_size());
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

std::string Tensor::shape_string() const {
  std::ostringstream os;
  os << "(" << n_ << "," << c_ << "," << h_ << "," << w_ << ")";
  return os.str();
}

Tensor stack(std::span<const Tensor> samples) {
  require(!samples.empty(), "stack of zero tensors");
  const Tensor& first = samples.front();
  Tensor out(static_cast<int>(samples.size()), first.c(), first.h(),
             first.w());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Tensor& s = samples[i];
    if (s.n() != 1 || s.c() != first.c() || s.h() != first.h() ||
        s.w() != first.w())
      fail(ErrorKind::shape, "stack: sample " + std::to_string(i) +
                                 " has shape " + s.shape_string());
    s.copy_sample_to(0, out, static_cast<int>(i));
  }
  return out;
}

std::uint64_t fnv1a(const void* bytes, std::size_t count, std::uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < count; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace featimit
