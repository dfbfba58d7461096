#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "featimit/archive.hpp"
#include "featimit/error.hpp"
#include "featimit/image.hpp"
#include "featimit/npy.hpp"
#include "support.hpp"

using namespace featimit;
using testing::TempDir;

namespace {

double tri(double t) { return std::abs(t) < 1.0 ? 1.0 - std::abs(t) : 0.0; }

// Direct 2-D evaluation of the anti-aliased triangle filter: every source
// pixel contributes with weight tri(dy/sy) * tri(dx/sx), normalised.
Tensor direct_resize(const Tensor& x, int oh, int ow) {
  const double sy = static_cast<double>(x.h()) / oh, sx = static_cast<double>(x.w()) / ow;
  const double ry = std::max(sy, 1.0), rx = std::max(sx, 1.0);
  Tensor out(x.n(), x.c(), oh, ow);
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          const double cy = (oy + 0.5) * sy, cx = (ox + 0.5) * sx;
          double acc = 0.0, total = 0.0;
          for (int y = 0; y < x.h(); ++y)
            for (int xx = 0; xx < x.w(); ++xx) {
              const double w = tri((y + 0.5 - cy) / ry) * tri((xx + 0.5 - cx) / rx);
              acc += w * x.at(n, c, y, xx);
              total += w;
            }
          out.at(n, c, oy, ox) = acc / total;
        }
  return out;
}

}  // namespace

TEST_CASE("upsampling is classic bilinear with half-pixel centres") {
  std::mt19937_64 rng(5);
  const Tensor x = testing::random_tensor(rng, 1, 1, 3, 4);
  const Tensor y = resize_bilinear(x, 7, 10);
  for (int oy = 0; oy < 7; ++oy)
    for (int ox = 0; ox < 10; ++ox) {
      auto coord = [](int o, int in, int out) {
        const double u = (o + 0.5) * in / out - 0.5;
        return std::clamp(u, 0.0, static_cast<double>(in - 1));
      };
      const double u = coord(oy, 3, 7), v = coord(ox, 4, 10);
      const int y0 = static_cast<int>(std::floor(u)), x0 = static_cast<int>(std::floor(v));
      const int y1 = std::min(y0 + 1, 2), x1 = std::min(x0 + 1, 3);
      const double fy = u - y0, fx = v - x0;
      const double expect = (1 - fy) * ((1 - fx) * x.at(0, 0, y0, x0) + fx * x.at(0, 0, y0, x1)) +
                            fy * ((1 - fx) * x.at(0, 0, y1, x0) + fx * x.at(0, 0, y1, x1));
      CHECK(y.at(0, 0, oy, ox) == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("resize matches the direct 2-D filter in both directions") {
  std::mt19937_64 rng(6);
  const Tensor x = testing::random_tensor(rng, 2, 3, 9, 13);
  for (auto [h, w] : {std::pair{4, 5}, {18, 7}, {3, 26}, {9, 6}}) {
    const Tensor a = resize_bilinear(x, h, w);
    const Tensor b = direct_resize(x, h, w);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.data()[i] == doctest::Approx(b.data()[i]).epsilon(1e-12));
  }
}

TEST_CASE("resize identities") {
  std::mt19937_64 rng(7);
  const Tensor x = testing::random_tensor(rng, 1, 3, 6, 6);
  CHECK(resize_bilinear(x, 6, 6) == x);
  const Tensor flat(1, 1, 5, 5, 0.3);
  const Tensor stretched = resize_bilinear(flat, 17, 3);
  for (double v : stretched.values()) CHECK(v == doctest::Approx(0.3).epsilon(1e-14));
  CHECK_THROWS_AS(resize_bilinear(x, 0, 3), Error);
}

TEST_CASE("mask resize thresholds at one half") {
  Mask m{4, 4, std::vector<std::uint8_t>(16, 0)};
  m.data[5] = m.data[6] = m.data[9] = m.data[10] = 1;
  const Mask up = resize_mask(m, 8, 8);
  CHECK(up.count() > 0);
  const Mask down = resize_mask(m, 2, 2);
  CHECK(down.count() == 0);
  const Mask same = resize_mask(m, 4, 4);
  CHECK(same.data == m.data);
}

TEST_CASE("png round trips") {
  TempDir dir("png");
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor img(1, 3, 5, 7);
  for (double& v : img.values()) v = std::round(u(rng) * 255.0) / 255.0;
  save_image(dir.path() / "a.png", img);
  const Tensor back = load_image(dir.path() / "a.png");
  CHECK(back == img);

  Mask m{3, 4, {0, 1, 1, 0, 0, 0, 1, 0, 1, 0, 0, 0}};
  save_mask(dir.path() / "m.png", m);
  CHECK(load_mask(dir.path() / "m.png").data == m.data);

  CHECK_THROWS_AS(load_image(dir.path() / "missing.png"), Error);
  std::ofstream(dir.path() / "junk.png") << "not an image";
  CHECK_THROWS_AS(load_image(dir.path() / "junk.png"), Error);
}

TEST_CASE("archive round trip and corruption") {
  TempDir dir("archive");
  Archive a;
  a.meta["b"] = "2";
  a.meta["a"] = "one";
  a.tensors["w"] = {{2, 3}, {1, 2, 3, 4, 5, 6.25}};
  a.tensors["v"] = {{1}, {0.1}};
  write_archive(dir.path() / "x.fimw", a);
  const Archive b = read_archive(dir.path() / "x.fimw");
  CHECK(b.meta == a.meta);
  CHECK(b.tensors.at("w").dims == a.tensors.at("w").dims);
  CHECK(b.tensors.at("w").values == a.tensors.at("w").values);
  CHECK(b.tensors.at("v").values == a.tensors.at("v").values);

  write_archive(dir.path() / "f.fimw", a, ArchiveDtype::float32);
  CHECK(read_archive(dir.path() / "f.fimw").tensors.at("v").values[0] == static_cast<double>(0.1f));

  auto read_bytes = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  write_archive(dir.path() / "y.fimw", b);
  CHECK(read_bytes(dir.path() / "x.fimw") == read_bytes(dir.path() / "y.fimw"));

  const std::string bytes = read_bytes(dir.path() / "x.fimw");
  std::ofstream(dir.path() / "t.fimw", std::ios::binary) << bytes.substr(0, bytes.size() - 5);
  CHECK_THROWS_AS(read_archive(dir.path() / "t.fimw"), Error);
  std::ofstream(dir.path() / "m.fimw", std::ios::binary) << "XXXX" << bytes.substr(4);
  try {
    read_archive(dir.path() / "m.fimw");
    FAIL("expected a load error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::load);
  }
}

TEST_CASE("npy round trip stores float32") {
  TempDir dir("npy");
  ScoreMap m(3, 5);
  for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = 0.01 * static_cast<double>(i);
  save_npy(dir.path() / "m.npy", m);
  const ScoreMap back = load_npy(dir.path() / "m.npy");
  REQUIRE(back.height == 3);
  REQUIRE(back.width == 5);
  for (std::size_t i = 0; i < m.data.size(); ++i) CHECK(back.data[i] == static_cast<double>(static_cast<float>(m.data[i])));
  std::ifstream in(dir.path() / "m.npy", std::ios::binary);
  std::string head(10, '\0');
  in.read(head.data(), 10);
  CHECK(head.substr(1, 5) == "NUMPY");
}
