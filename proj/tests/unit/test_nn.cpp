#include <doctest.h>

#include <cmath>
#include <random>
#include <utility>

#include "featimit/error.hpp"
#include "featimit/nn.hpp"
#include "support.hpp"

using namespace featimit;
using testing::random_tensor;

namespace {

double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i] * b.data()[i];
  return s;
}

// Checks input and parameter gradients of <module(x), r> against central
// differences of the training-mode forward pass.
void check_gradients(nn::Module& m, const Tensor& x, std::mt19937_64& rng, double tol = 1e-5) {
  const Tensor out = m.train_forward(x);
  const Tensor r = random_tensor(rng, out.n(), out.c(), out.h(), out.w());
  m.zero_grad();
  const Tensor gx = m.backward(r);
  m.clear_cache();
  const double h = 1e-6;
  auto objective = [&](const Tensor& in) {
    const double v = dot(m.train_forward(in), r);
    m.clear_cache();
    return v;
  };
  std::uniform_int_distribution<std::size_t> pick(0, x.size() - 1);
  for (int t = 0; t < 12; ++t) {
    const std::size_t i = pick(rng);
    Tensor xp = x, xm = x;
    xp.data()[i] += h;
    xm.data()[i] -= h;
    const double fd = (objective(xp) - objective(xm)) / (2 * h);
    CHECK(std::abs(fd - gx.data()[i]) <= tol * std::max(1.0, std::abs(fd)));
  }
  m.visit("", nn::ParamVisitor([&](const std::string& name, nn::Parameter& p) {
            if (!p.trainable) return;
            std::uniform_int_distribution<std::size_t> pp(0, p.value.size() - 1);
            for (int t = 0; t < 4; ++t) {
              const std::size_t i = pp(rng);
              const double saved = p.value.data()[i];
              const double analytic = p.grad.data()[i];
              p.value.data()[i] = saved + h;
              const double fp = objective(x);
              p.value.data()[i] = saved - h;
              const double fm = objective(x);
              p.value.data()[i] = saved;
              const double fd = (fp - fm) / (2 * h);
              INFO(name);
              CHECK(std::abs(fd - analytic) <= tol * std::max(1.0, std::abs(fd)));
            }
          }));
}

void randomize(nn::Module& m, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, 0.5);
  m.visit("", nn::ParamVisitor([&](const std::string& name, nn::Parameter& p) {
            if (name.ends_with("running_var")) {
              for (double& v : p.value.values()) v = 0.5 + std::abs(d(rng));
            } else {
              for (double& v : p.value.values()) v = d(rng);
            }
          }));
}

}  // namespace

TEST_CASE("conv2d forward matches a direct loop") {
  std::mt19937_64 rng(1);
  for (auto [k, s, p] : {std::tuple{3, 1, 1}, {3, 2, 1}, {1, 2, 0}, {7, 2, 3}}) {
    nn::Conv2d conv(3, 4, k, s, p);
    randomize(conv, rng);
    const Tensor x = random_tensor(rng, 2, 3, 9, 8);
    const Tensor y = conv.infer(x);
    Tensor w;
    conv.visit("", nn::ParamVisitor([&](const std::string&, nn::Parameter& prm) { w = prm.value; }));
    REQUIRE(y.h() == conv.output_size(9));
    REQUIRE(y.w() == conv.output_size(8));
    for (int n = 0; n < 2; ++n)
      for (int o = 0; o < 4; ++o)
        for (int oy = 0; oy < y.h(); ++oy)
          for (int ox = 0; ox < y.w(); ++ox) {
            double acc = 0.0;
            for (int c = 0; c < 3; ++c)
              for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                  const int iy = oy * s - p + ky, ix = ox * s - p + kx;
                  if (iy < 0 || ix < 0 || iy >= 9 || ix >= 8) continue;
                  acc += w.data()[((o * 3 + c) * k + ky) * k + kx] * x.at(n, c, iy, ix);
                }
            CHECK(y.at(n, o, oy, ox) == doctest::Approx(acc).epsilon(1e-12));
          }
  }
}

TEST_CASE("backward passes match finite differences") {
  std::mt19937_64 rng(2);
  SUBCASE("conv") {
    nn::Conv2d conv(3, 5, 3, 2, 1);
    randomize(conv, rng);
    check_gradients(conv, random_tensor(rng, 2, 3, 7, 6), rng);
  }
  SUBCASE("batchnorm") {
    nn::BatchNorm2d bn(4);
    randomize(bn, rng);
    check_gradients(bn, random_tensor(rng, 3, 4, 3, 2), rng);
  }
  SUBCASE("maxpool") {
    nn::MaxPool2d pool(3, 2, 1);
    check_gradients(pool, random_tensor(rng, 2, 2, 7, 7), rng);
  }
  SUBCASE("relu") {
    nn::ReLU relu;
    check_gradients(relu, random_tensor(rng, 2, 2, 5, 5), rng);
  }
  SUBCASE("basic block with downsample") {
    nn::ResidualBlock block(nn::BlockKind::basic, 3, 0, 6, 2);
    randomize(block, rng);
    check_gradients(block, random_tensor(rng, 2, 3, 6, 6), rng);
  }
  SUBCASE("bottleneck block") {
    nn::ResidualBlock block(nn::BlockKind::bottleneck, 8, 4, 8, 1);
    randomize(block, rng);
    check_gradients(block, random_tensor(rng, 2, 8, 4, 4), rng);
  }
}

TEST_CASE("batchnorm statistics") {
  std::mt19937_64 rng(3);
  nn::BatchNorm2d bn(2);
  const Tensor x = random_tensor(rng, 4, 2, 3, 3, 2.0);
  const Tensor y = bn.train_forward(x);
  // Unit weight, zero bias: each channel is standardized over (n, h, w).
  for (int c = 0; c < 2; ++c) {
    double mean = 0.0, sq = 0.0, xmean = 0.0, xsq = 0.0;
    const int count = 4 * 9;
    for (int n = 0; n < 4; ++n)
      for (int i = 0; i < 9; ++i) {
        mean += y.sample(n)[c * 9 + i];
        xmean += x.sample(n)[c * 9 + i];
      }
    mean /= count;
    xmean /= count;
    for (int n = 0; n < 4; ++n)
      for (int i = 0; i < 9; ++i) {
        sq += std::pow(y.sample(n)[c * 9 + i] - mean, 2);
        xsq += std::pow(x.sample(n)[c * 9 + i] - xmean, 2);
      }
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(sq / count == doctest::Approx(xsq / count / (xsq / count + 1e-5)).epsilon(1e-9));
    std::as_const(bn).visit("", nn::ConstParamVisitor([&](const std::string& name, const nn::Parameter& p) {
               if (name == "running_mean") CHECK(p.value.data()[c] == doctest::Approx(0.1 * xmean));
               if (name == "running_var")
                 CHECK(p.value.data()[c] == doctest::Approx(0.9 + 0.1 * xsq / (count - 1)));
             }));
  }
}

TEST_CASE("running statistics are not trainable") {
  nn::BatchNorm2d bn(3);
  int buffers = 0;
  std::as_const(bn).visit("", nn::ConstParamVisitor([&](const std::string& name, const nn::Parameter& p) {
             if (name.starts_with("running")) {
               CHECK_FALSE(p.trainable);
               ++buffers;
             }
           }));
  CHECK(buffers == 2);
}

TEST_CASE("residual block parameter names follow the torchvision layout") {
  nn::ResidualBlock block(nn::BlockKind::bottleneck, 64, 64, 256, 1);
  std::vector<std::string> names;
  std::as_const(block).visit("layer1.0", nn::ConstParamVisitor([&](const std::string& n, const nn::Parameter&) { names.push_back(n); }));
  auto has = [&](const std::string& n) { return std::find(names.begin(), names.end(), n) != names.end(); };
  CHECK(has("layer1.0.conv1.weight"));
  CHECK(has("layer1.0.conv3.weight"));
  CHECK(has("layer1.0.bn3.running_var"));
  CHECK(has("layer1.0.downsample.0.weight"));
  CHECK(has("layer1.0.downsample.1.bias"));
}

TEST_CASE("sequential copies are deep") {
  std::mt19937_64 rng(4);
  nn::Sequential a;
  a.add("conv", std::make_unique<nn::Conv2d>(2, 2, 3, 1, 1));
  randomize(a, rng);
  nn::Sequential b = a;
  CHECK(nn::checksum(a) == nn::checksum(b));
  b.visit("", nn::ParamVisitor([](const std::string&, nn::Parameter& p) { p.value.data()[0] += 1.0; }));
  CHECK(nn::checksum(a) != nn::checksum(b));
}

TEST_CASE("fan-in init is reproducible and scaled") {
  nn::Conv2d c1(64, 64, 3, 1, 1), c2(64, 64, 3, 1, 1);
  std::mt19937_64 r1(9), r2(9);
  nn::init_fan_in_normal(c1, r1);
  nn::init_fan_in_normal(c2, r2);
  CHECK(nn::checksum(c1) == nn::checksum(c2));
  double sq = 0.0;
  std::size_t n = 0;
  std::as_const(c1).visit("", nn::ConstParamVisitor([&](const std::string&, const nn::Parameter& p) {
             for (double v : p.value.values()) sq += v * v;
             n += p.value.size();
           }));
  CHECK(sq / n == doctest::Approx(2.0 / (64 * 9)).epsilon(0.05));
}

TEST_CASE("tensor helpers") {
  Tensor a(2, 1, 1, 2, 1.0);
  CHECK(a.shape_string() == "(2,1,1,2)");
  Tensor b = a;
  b.add_(a);
  CHECK(b.at(1, 0, 0, 1) == 2.0);
  CHECK_THROWS_AS(b.add_(Tensor(1, 1, 1, 2)), Error);
  const Tensor s = a.slice(1, 1);
  CHECK(s.n() == 1);
  b.data()[0] = std::nan("");
  CHECK_FALSE(b.all_finite());
  std::vector<Tensor> parts{Tensor(1, 1, 1, 1, 1.0), Tensor(1, 1, 1, 1, 2.0)};
  const Tensor st = stack(parts);
  CHECK(st.n() == 2);
  CHECK(st.at(1, 0, 0, 0) == 2.0);
}
