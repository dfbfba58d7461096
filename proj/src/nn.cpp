#include "featimit/nn.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

#include "featimit/error.hpp"

namespace featimit::nn {

namespace {

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMatrix = Eigen::Map<RowMatrix>;
using ConstMapMatrix = Eigen::Map<const RowMatrix>;

Tensor tensor_for_dims(const std::vector<std::int64_t>& dims) {
  int d[4] = {1, 1, 1, 1};
  require(dims.size() <= 4, "parameter rank above 4");
  for (std::size_t i = 0; i < dims.size(); ++i)
    d[i] = static_cast<int>(dims[i]);
  return Tensor(d[0], d[1], d[2], d[3]);
}

std::string join(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

// Unfold one CHW sample into a (C*k*k) x (Ho*Wo) row-major matrix.
void im2col(const double* x, int c, int h, int w, int k, int stride, int pad,
            int ho, int wo, double* cols) {
  const std::size_t spatial = static_cast<std::size_t>(ho) * wo;
  for (int ch = 0; ch < c; ++ch) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* row = cols + ((static_cast<std::size_t>(ch) * k + ky) * k + kx) * spatial;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          double* dst = row + static_cast<std::size_t>(oy) * wo;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + wo, 0.0);
            continue;
          }
          const double* src = x + (static_cast<std::size_t>(ch) * h + iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            dst[ox] = (ix < 0 || ix >= w) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

void col2im(const double* cols, int c, int h, int w, int k, int stride,
            int pad, int ho, int wo, double* x) {
  const std::size_t spatial = static_cast<std::size_t>(ho) * wo;
  for (int ch = 0; ch < c; ++ch) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* row =
            cols + ((static_cast<std::size_t>(ch) * k + ky) * k + kx) * spatial;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          double* dst = x + (static_cast<std::size_t>(ch) * h + iy) * w;
          const double* src = row + static_cast<std::size_t>(oy) * wo;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Parameter::Parameter(std::vector<std::int64_t> logical_dims, bool is_trainable)
    : value(tensor_for_dims(logical_dims)),
      grad(tensor_for_dims(logical_dims)),
      trainable(is_trainable),
      dims(std::move(logical_dims)) {}

void Module::visit(const std::string& prefix,
                   const ConstParamVisitor& f) const {
  // Visiting never mutates; the non-const overload only hands out mutable
  // references so optimizers can reuse the same traversal.
  const_cast<Module*>(this)->visit(
      prefix, ParamVisitor([&](const std::string& name, Parameter& p) {
        f(name, p);
      }));
}

void Module::zero_grad() {
  visit("", ParamVisitor([](const std::string&, Parameter& p) {
          p.zero_grad();
        }));
}

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, int stride,
               int padding)
    : in_(in_channels),
      out_(out_channels),
      k_(kernel),
      stride_(stride),
      pad_(padding),
      weight_({out_channels, in_channels, kernel, kernel}, true) {
  require(in_ > 0 && out_ > 0 && k_ > 0 && stride_ > 0 && pad_ >= 0,
          "invalid convolution hyperparameters");
}

Tensor Conv2d::infer(const Tensor& x) const {
  if (x.c() != in_)
    fail(ErrorKind::shape, "conv expects " + std::to_string(in_) +
                               " input channels, got " + x.shape_string());
  const int ho = output_size(x.h()), wo = output_size(x.w());
  require(ho > 0 && wo > 0, "convolution input too small: " + x.shape_string());
  Tensor out(x.n(), out_, ho, wo);
  const int rows = in_ * k_ * k_;
  const std::size_t spatial = static_cast<std::size_t>(ho) * wo;
  std::vector<double> cols(static_cast<std::size_t>(rows) * spatial);
  ConstMapMatrix wmat(weight_.value.data(), out_, rows);
  for (int i = 0; i < x.n(); ++i) {
    im2col(x.sample(i), in_, x.h(), x.w(), k_, stride_, pad_, ho, wo,
           cols.data());
    ConstMapMatrix cmat(cols.data(), rows, static_cast<Eigen::Index>(spatial));
    MapMatrix omat(out.sample(i), out_, static_cast<Eigen::Index>(spatial));
    omat.noalias() = wmat * cmat;
  }
  return out;
}

Tensor Conv2d::train_forward(const Tensor& x) {
  input_ = x;
  return infer(x);
}

Tensor Conv2d::backward(const Tensor& grad_out) {
  require(!input_.empty(), "conv backward without train_forward");
  const Tensor& x = input_;
  const int ho = output_size(x.h()), wo = output_size(x.w());
  if (grad_out.n() != x.n() || grad_out.c() != out_ || grad_out.h() != ho ||
      grad_out.w() != wo)
    fail(ErrorKind::shape, "conv backward: gradient " +
                               grad_out.shape_string() + " for input " +
                               x.shape_string());
  const int rows = in_ * k_ * k_;
  const std::size_t spatial = static_cast<std::size_t>(ho) * wo;
  std::vector<double> cols(static_cast<std::size_t>(rows) * spatial);
  std::vector<double> dcols(cols.size());
  Tensor grad_in(x.n(), x.c(), x.h(), x.w());
  ConstMapMatrix wmat(weight_.value.data(), out_, rows);
  MapMatrix gw(weight_.grad.data(), out_, rows);
  for (int i = 0; i < x.n(); ++i) {
    im2col(x.sample(i), in_, x.h(), x.w(), k_, stride_, pad_, ho, wo,
           cols.data());
    ConstMapMatrix cmat(cols.data(), rows, static_cast<Eigen::Index>(spatial));
    ConstMapMatrix gout(grad_out.sample(i), out_,
                        static_cast<Eigen::Index>(spatial));
    gw.noalias() += gout * cmat.transpose();
    MapMatrix dc(dcols.data(), rows, static_cast<Eigen::Index>(spatial));
    dc.noalias() = wmat.transpose() * gout;
    col2im(dcols.data(), in_, x.h(), x.w(), k_, stride_, pad_, ho, wo,
           grad_in.sample(i));
  }
  return grad_in;
}

void Conv2d::visit(const std::string& prefix, const ParamVisitor& f) {
  f(join(prefix, "weight"), weight_);
}

std::unique_ptr<Module> Conv2d::clone() const {
  auto c = std::make_unique<Conv2d>(*this);
  c->input_ = Tensor();
  return c;
}

std::string Conv2d::describe() const {
  std::ostringstream os;
  os << "conv(" << in_ << "," << out_ << ",k" << k_ << ",s" << stride_ << ",p"
     << pad_ << ")";
  return os.str();
}

// ----------------------------------------------------------- BatchNorm2d

BatchNorm2d::BatchNorm2d(int channels, double eps, double momentum)
    : channels_(channels),
      eps_(eps),
      momentum_(momentum),
      weight_({channels}, true),
      bias_({channels}, true),
      running_mean_({channels}, false),
      running_var_({channels}, false) {
  weight_.value.fill(1.0);
  running_var_.value.fill(1.0);
}

Tensor BatchNorm2d::infer(const Tensor& x) const {
  if (x.c() != channels_)
    fail(ErrorKind::shape, "batch norm expects " + std::to_string(channels_) +
                               " channels, got " + x.shape_string());
  Tensor out(x.n(), x.c(), x.h(), x.w());
  const std::size_t plane = x.plane_size();
  for (int c = 0; c < channels_; ++c) {
    const double scale =
        weight_.value.data()[c] / std::sqrt(running_var_.value.data()[c] + eps_);
    const double shift =
        bias_.value.data()[c] - running_mean_.value.data()[c] * scale;
    for (int n = 0; n < x.n(); ++n) {
      const double* src = x.sample(n) + c * plane;
      double* dst = out.sample(n) + c * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i] * scale + shift;
    }
  }
  return out;
}

Tensor BatchNorm2d::train_forward(const Tensor& x) {
  if (x.c() != channels_)
    fail(ErrorKind::shape, "batch norm expects " + std::to_string(channels_) +
                               " channels, got " + x.shape_string());
  const std::size_t plane = x.plane_size();
  const double count = static_cast<double>(plane) * x.n();
  require(count > 1, "batch norm training needs more than one value per channel");
  Tensor out(x.n(), x.c(), x.h(), x.w());
  xhat_ = Tensor(x.n(), x.c(), x.h(), x.w());
  inv_std_.assign(channels_, 0.0);
  for (int c = 0; c < channels_; ++c) {
    double mean = 0.0;
    for (int n = 0; n < x.n(); ++n) {
      const double* src = x.sample(n) + c * plane;
      for (std::size_t i = 0; i < plane; ++i) mean += src[i];
    }
    mean /= count;
    double var = 0.0;
    for (int n = 0; n < x.n(); ++n) {
      const double* src = x.sample(n) + c * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double d = src[i] - mean;
        var += d * d;
      }
    }
    var /= count;
    const double inv_std = 1.0 / std::sqrt(var + eps_);
    inv_std_[c] = inv_std;
    const double gamma = weight_.value.data()[c];
    const double beta = bias_.value.data()[c];
    for (int n = 0; n < x.n(); ++n) {
      const double* src = x.sample(n) + c * plane;
      double* xh = xhat_.sample(n) + c * plane;
      double* dst = out.sample(n) + c * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        xh[i] = (src[i] - mean) * inv_std;
        dst[i] = gamma * xh[i] + beta;
      }
    }
    double& rm = running_mean_.value.data()[c];
    double& rv = running_var_.value.data()[c];
    rm = (1.0 - momentum_) * rm + momentum_ * mean;
    rv = (1.0 - momentum_) * rv + momentum_ * var * count / (count - 1.0);
  }
  return out;
}

Tensor BatchNorm2d::backward(const Tensor& grad_out) {
  require(!xhat_.empty(), "batch norm backward without train_forward");
  if (!grad_out.same_shape(xhat_))
    fail(ErrorKind::shape, "batch norm backward: gradient " +
                               grad_out.shape_string() + " vs cached " +
                               xhat_.shape_string());
  const std::size_t plane = xhat_.plane_size();
  const double count = static_cast<double>(plane) * xhat_.n();
  Tensor grad_in(xhat_.n(), xhat_.c(), xhat_.h(), xhat_.w());
  for (int c = 0; c < channels_; ++c) {
    double sum_g = 0.0, sum_gx = 0.0;
    for (int n = 0; n < xhat_.n(); ++n) {
      const double* g = grad_out.sample(n) + c * plane;
      const double* xh = xhat_.sample(n) + c * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        sum_g += g[i];
        sum_gx += g[i] * xh[i];
      }
    }
    weight_.grad.data()[c] += sum_gx;
    bias_.grad.data()[c] += sum_g;
    const double k = weight_.value.data()[c] * inv_std_[c] / count;
    for (int n = 0; n < xhat_.n(); ++n) {
      const double* g = grad_out.sample(n) + c * plane;
      const double* xh = xhat_.sample(n) + c * plane;
      double* dst = grad_in.sample(n) + c * plane;
      for (std::size_t i = 0; i < plane; ++i)
        dst[i] = k * (count * g[i] - sum_g - xh[i] * sum_gx);
    }
  }
  return grad_in;
}

void BatchNorm2d::visit(const std::string& prefix, const ParamVisitor& f) {
  f(join(prefix, "weight"), weight_);
  f(join(prefix, "bias"), bias_);
  f(join(prefix, "running_mean"), running_mean_);
  f(join(prefix, "running_var"), running_var_);
}

std::unique_ptr<Module> BatchNorm2d::clone() const {
  auto c = std::make_unique<BatchNorm2d>(*this);
  c->clear_cache();
  return c;
}

std::string BatchNorm2d::describe() const {
  return "bn(" + std::to_string(channels_) + ")";
}

void BatchNorm2d::clear_cache() {
  xhat_ = Tensor();
  inv_std_.clear();
}

// ------------------------------------------------------------------ ReLU

Tensor ReLU::infer(const Tensor& x) const {
  Tensor out = x;
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return out;
}

Tensor ReLU::train_forward(const Tensor& x) {
  output_ = infer(x);
  return output_;
}

Tensor ReLU::backward(const Tensor& grad_out) {
  if (!grad_out.same_shape(output_))
    fail(ErrorKind::shape, "relu backward: gradient " +
                               grad_out.shape_string() + " vs cached " +
                               output_.shape_string());
  Tensor grad_in = grad_out;
  const double* y = output_.data();
  double* g = grad_in.data();
  for (std::size_t i = 0; i < grad_in.size(); ++i)
    if (!(y[i] > 0.0)) g[i] = 0.0;
  return grad_in;
}

std::unique_ptr<Module> ReLU::clone() const { return std::make_unique<ReLU>(); }

// ------------------------------------------------------------- MaxPool2d

MaxPool2d::MaxPool2d(int kernel, int stride, int padding)
    : k_(kernel), stride_(stride), pad_(padding) {
  require(k_ > 0 && stride_ > 0 && pad_ >= 0 && 2 * pad_ <= k_,
          "invalid max-pool hyperparameters");
}

Tensor MaxPool2d::pool(const Tensor& x,
                       std::vector<std::size_t>* argmax) const {
  const int ho = (x.h() + 2 * pad_ - k_) / stride_ + 1;
  const int wo = (x.w() + 2 * pad_ - k_) / stride_ + 1;
  require(ho > 0 && wo > 0, "max-pool input too small: " + x.shape_string());
  Tensor out(x.n(), x.c(), ho, wo);
  if (argmax) argmax->assign(out.size(), 0);
  std::size_t o = 0;
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox, ++o) {
          double best = -std::numeric_limits<double>::infinity();
          std::size_t best_at = 0;
          for (int ky = 0; ky < k_; ++ky) {
            const int iy = oy * stride_ - pad_ + ky;
            if (iy < 0 || iy >= x.h()) continue;
            for (int kx = 0; kx < k_; ++kx) {
              const int ix = ox * stride_ - pad_ + kx;
              if (ix < 0 || ix >= x.w()) continue;
              const std::size_t at =
                  ((static_cast<std::size_t>(n) * x.c() + c) * x.h() + iy) *
                      x.w() + ix;
              if (x.data()[at] > best) {
                best = x.data()[at];
                best_at = at;
              }
            }
          }
          out.data()[o] = best;
          if (argmax) (*argmax)[o] = best_at;
        }
      }
    }
  }
  return out;
}

Tensor MaxPool2d::infer(const Tensor& x) const { return pool(x, nullptr); }

Tensor MaxPool2d::train_forward(const Tensor& x) {
  in_n_ = x.n();
  in_c_ = x.c();
  in_h_ = x.h();
  in_w_ = x.w();
  return pool(x, &argmax_);
}

Tensor MaxPool2d::backward(const Tensor& grad_out) {
  require(grad_out.size() == argmax_.size(),
          "max-pool backward without matching train_forward");
  Tensor grad_in(in_n_, in_c_, in_h_, in_w_);
  for (std::size_t i = 0; i < argmax_.size(); ++i)
    grad_in.data()[argmax_[i]] += grad_out.data()[i];
  return grad_in;
}

std::unique_ptr<Module> MaxPool2d::clone() const {
  return std::make_unique<MaxPool2d>(k_, stride_, pad_);
}

std::string MaxPool2d::describe() const {
  std::ostringstream os;
  os << "maxpool(k" << k_ << ",s" << stride_ << ",p" << pad_ << ")";
  return os.str();
}

void MaxPool2d::clear_cache() { argmax_.clear(); }

// ------------------------------------------------------------ Sequential

Sequential::Sequential(const Sequential& other) {
  for (const auto& [name, m] : other.layers_) layers_.emplace_back(name, m->clone());
}

Sequential& Sequential::operator=(const Sequential& other) {
  if (this != &other) {
    Sequential copy(other);
    layers_ = std::move(copy.layers_);
  }
  return *this;
}

Sequential& Sequential::add(std::string name, std::unique_ptr<Module> m) {
  layers_.emplace_back(std::move(name), std::move(m));
  return *this;
}

Tensor Sequential::infer(const Tensor& x) const {
  Tensor h = x;
  for (const auto& [name, m] : layers_) h = m->infer(h);
  return h;
}

Tensor Sequential::train_forward(const Tensor& x) {
  Tensor h = x;
  for (auto& [name, m] : layers_) h = m->train_forward(h);
  return h;
}

Tensor Sequential::backward(const Tensor& grad_out) {
  Tensor g = grad_out;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it)
    g = it->second->backward(g);
  return g;
}

void Sequential::visit(const std::string& prefix, const ParamVisitor& f) {
  for (auto& [name, m] : layers_) m->visit(join(prefix, name), f);
}

std::unique_ptr<Module> Sequential::clone() const {
  return std::make_unique<Sequential>(*this);
}

std::string Sequential::describe() const {
  std::string s = "[";
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (i) s += ",";
    s += layers_[i].first + ":" + layers_[i].second->describe();
  }
  return s + "]";
}

void Sequential::clear_cache() {
  for (auto& [name, m] : layers_) m->clear_cache();
}

// --------------------------------------------------------- ResidualBlock

ResidualBlock::ResidualBlock(BlockKind kind, int in_channels, int width,
                             int out_channels, int stride)
    : kind_(kind) {
  if (kind == BlockKind::basic) {
    main_.add("conv1", std::make_unique<Conv2d>(in_channels, out_channels, 3, stride, 1))
        .add("bn1", std::make_unique<BatchNorm2d>(out_channels))
        .add("relu", std::make_unique<ReLU>())
        .add("conv2", std::make_unique<Conv2d>(out_channels, out_channels, 3, 1, 1))
        .add("bn2", std::make_unique<BatchNorm2d>(out_channels));
  } else {
    main_.add("conv1", std::make_unique<Conv2d>(in_channels, width, 1, 1, 0))
        .add("bn1", std::make_unique<BatchNorm2d>(width))
        .add("relu1", std::make_unique<ReLU>())
        .add("conv2", std::make_unique<Conv2d>(width, width, 3, stride, 1))
        .add("bn2", std::make_unique<BatchNorm2d>(width))
        .add("relu2", std::make_unique<ReLU>())
        .add("conv3", std::make_unique<Conv2d>(width, out_channels, 1, 1, 0))
        .add("bn3", std::make_unique<BatchNorm2d>(out_channels));
  }
  if (stride != 1 || in_channels != out_channels) {
    downsample_ = std::make_unique<Sequential>();
    downsample_->add("0", std::make_unique<Conv2d>(in_channels, out_channels, 1, stride, 0))
        .add("1", std::make_unique<BatchNorm2d>(out_channels));
  }
}

ResidualBlock::ResidualBlock(const ResidualBlock& other)
    : kind_(other.kind_), main_(other.main_) {
  if (other.downsample_)
    downsample_ = std::make_unique<Sequential>(*other.downsample_);
}

Tensor ResidualBlock::infer(const Tensor& x) const {
  Tensor out = main_.infer(x);
  out.add_(downsample_ ? downsample_->infer(x) : x);
  return out_relu_.infer(out);
}

Tensor ResidualBlock::train_forward(const Tensor& x) {
  Tensor out = main_.train_forward(x);
  out.add_(downsample_ ? downsample_->train_forward(x) : x);
  return out_relu_.train_forward(out);
}

Tensor ResidualBlock::backward(const Tensor& grad_out) {
  Tensor g = out_relu_.backward(grad_out);
  Tensor grad_in = main_.backward(g);
  grad_in.add_(downsample_ ? downsample_->backward(g) : g);
  return grad_in;
}

void ResidualBlock::visit(const std::string& prefix, const ParamVisitor& f) {
  main_.visit(prefix, f);
  if (downsample_) downsample_->visit(join(prefix, "downsample"), f);
}

std::unique_ptr<Module> ResidualBlock::clone() const {
  auto c = std::make_unique<ResidualBlock>(*this);
  c->clear_cache();
  return c;
}

std::string ResidualBlock::describe() const {
  std::string s = kind_ == BlockKind::basic ? "basic" : "bottleneck";
  s += "{" + main_.describe();
  if (downsample_) s += ",downsample:" + downsample_->describe();
  return s + "}";
}

void ResidualBlock::clear_cache() {
  main_.clear_cache();
  if (downsample_) downsample_->clear_cache();
  out_relu_.clear_cache();
}

// --------------------------------------------------------------- helpers

std::uint64_t checksum(const Module& m) {
  std::uint64_t h = 1469598103934665603ULL;
  m.visit("", ConstParamVisitor([&](const std::string& name,
                                    const Parameter& p) {
            h = fnv1a(name.data(), name.size(), h);
            h = fnv1a(p.value.data(), sizeof(double) * p.value.size(), h);
          }));
  return h;
}

void init_fan_in_normal(Module& m, std::mt19937_64& rng) {
  m.visit("", ParamVisitor([&](const std::string& name, Parameter& p) {
            if (p.dims.size() == 4) {
              const double fan_in =
                  static_cast<double>(p.dims[1] * p.dims[2] * p.dims[3]);
              std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
              for (double& v : p.value.values()) v = dist(rng);
            } else if (name.ends_with("running_var") || name.ends_with("weight")) {
              p.value.fill(1.0);
            } else {
              p.value.fill(0.0);
            }
            p.zero_grad();
          }));
}

}  // namespace featimit::nn
