#pragma once

// Minimal convolutional building blocks with hand-written backward passes.
//
// Every module offers two forward paths:
//   infer()          inference mode; const, keeps no state, safe to share
//   train_forward()  training mode; caches what backward() needs and updates
//                    batch-norm running statistics
// backward() consumes the cache of the most recent train_forward() and
// accumulates parameter gradients into Parameter::grad.

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "featimit/tensor.hpp"

namespace featimit::nn {

struct Parameter {
  Tensor value;
  Tensor grad;
  bool trainable = true;       // false for batch-norm running statistics
  std::vector<std::int64_t> dims;  // logical shape used for serialization

  Parameter() = default;
  Parameter(std::vector<std::int64_t> logical_dims, bool is_trainable);
  void zero_grad() { grad.fill(0.0); }
};

using ParamVisitor = std::function<void(const std::string&, Parameter&)>;
using ConstParamVisitor =
    std::function<void(const std::string&, const Parameter&)>;

class Module {
 public:
  virtual ~Module() = default;

  virtual Tensor infer(const Tensor& x) const = 0;
  virtual Tensor train_forward(const Tensor& x) = 0;
  virtual Tensor backward(const Tensor& grad_out) = 0;

  // Visit parameters with dotted names ("layer1.0.conv1.weight" style).
  virtual void visit(const std::string& prefix, const ParamVisitor& f) = 0;
  void visit(const std::string& prefix, const ConstParamVisitor& f) const;
  void visit(const std::string& prefix, const ConstParamVisitor& f) {
    std::as_const(*this).visit(prefix, f);
  }

  virtual std::unique_ptr<Module> clone() const = 0;
  // Structural description (layer kinds and hyperparameters, no values).
  virtual std::string describe() const = 0;
  virtual void clear_cache() {}

  void zero_grad();
};

class Conv2d final : public Module {
 public:
  Conv2d(int in_channels, int out_channels, int kernel, int stride,
         int padding);

  Tensor infer(const Tensor& x) const override;
  Tensor train_forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  using Module::visit;
  void visit(const std::string& prefix, const ParamVisitor& f) override;
  std::unique_ptr<Module> clone() const override;
  std::string describe() const override;
  void clear_cache() override { input_ = Tensor(); }

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  int output_size(int input) const { return (input + 2 * pad_ - k_) / stride_ + 1; }

 private:
  int in_, out_, k_, stride_, pad_;
  Parameter weight_;
  Tensor input_;
};

class BatchNorm2d final : public Module {
 public:
  explicit BatchNorm2d(int channels, double eps = 1e-5, double momentum = 0.1);

  Tensor infer(const Tensor& x) const override;
  Tensor train_forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  using Module::visit;
  void visit(const std::string& prefix, const ParamVisitor& f) override;
  std::unique_ptr<Module> clone() const override;
  std::string describe() const override;
  void clear_cache() override;

 private:
  int channels_;
  double eps_, momentum_;
  Parameter weight_, bias_, running_mean_, running_var_;
  Tensor xhat_;
  std::vector<double> inv_std_;
};

class ReLU final : public Module {
 public:
  Tensor infer(const Tensor& x) const override;
  Tensor train_forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  using Module::visit;
  void visit(const std::string&, const ParamVisitor&) override {}
  std::unique_ptr<Module> clone() const override;
  std::string describe() const override { return "relu"; }
  void clear_cache() override { output_ = Tensor(); }

 private:
  Tensor output_;
};

class MaxPool2d final : public Module {
 public:
  MaxPool2d(int kernel, int stride, int padding);

  Tensor infer(const Tensor& x) const override;
  Tensor train_forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  using Module::visit;
  void visit(const std::string&, const ParamVisitor&) override {}
  std::unique_ptr<Module> clone() const override;
  std::string describe() const override;
  void clear_cache() override;

 private:
  Tensor pool(const Tensor& x, std::vector<std::size_t>* argmax) const;

  int k_, stride_, pad_;
  std::vector<std::size_t> argmax_;
  int in_n_ = 0, in_c_ = 0, in_h_ = 0, in_w_ = 0;
};

class Sequential final : public Module {
 public:
  Sequential() = default;
  Sequential(const Sequential& other);
  Sequential& operator=(const Sequential& other);
  Sequential(Sequential&&) = default;
  Sequential& operator=(Sequential&&) = default;

  Sequential& add(std::string name, std::unique_ptr<Module> m);
  std::size_t size() const { return layers_.size(); }
  Module& layer(std::size_t i) { return *layers_[i].second; }

  Tensor infer(const Tensor& x) const override;
  Tensor train_forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  using Module::visit;
  void visit(const std::string& prefix, const ParamVisitor& f) override;
  std::unique_ptr<Module> clone() const override;
  std::string describe() const override;
  void clear_cache() override;

 private:
  std::vector<std::pair<std::string, std::unique_ptr<Module>>> layers_;
};

enum class BlockKind { basic, bottleneck };

// ResNet residual block (torchvision v1.5 layout: the stride sits on the
// 3x3 convolution).
class ResidualBlock final : public Module {
 public:
  // `width` is the inner width of a bottleneck (ignored for basic blocks).
  ResidualBlock(BlockKind kind, int in_channels, int width, int out_channels,
                int stride);
  ResidualBlock(const ResidualBlock& other);

  Tensor infer(const Tensor& x) const override;
  Tensor train_forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  using Module::visit;
  void visit(const std::string& prefix, const ParamVisitor& f) override;
  std::unique_ptr<Module> clone() const override;
  std::string describe() const override;
  void clear_cache() override;

 private:
  BlockKind kind_;
  Sequential main_;
  std::unique_ptr<Sequential> downsample_;
  ReLU out_relu_;
};

// FNV hash over the names and raw bytes of every parameter and buffer.
std::uint64_t checksum(const Module& m);

// Fan-in scaled normal initialisation for convolutions; batch norm layers
// are reset to identity (weight 1, bias 0, mean 0, var 1).
void init_fan_in_normal(Module& m, std::mt19937_64& rng);

}  // namespace featimit::nn
