#include <doctest.h>

#include <cstdlib>
#include <fstream>

#include "featimit/archive.hpp"
#include "featimit/backbone.hpp"
#include "featimit/error.hpp"
#include "support.hpp"

using namespace featimit;
using testing::TempDir;

namespace {

std::size_t trainable_count(const nn::Sequential& s) {
  std::size_t n = 0;
  s.visit("", nn::ConstParamVisitor([&](const std::string&, const nn::Parameter& p) {
            if (p.trainable) n += p.value.size();
          }));
  return n;
}

ErrorKind kind_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no error raised");
  return ErrorKind::contract;
}

}  // namespace

TEST_CASE("level specs of the supported architectures") {
  const auto r18 = level_specs(Architecture::resnet18);
  REQUIRE(r18.size() == 5);
  CHECK(r18[0].channels == 64);
  CHECK(r18[4].channels == 512);
  const auto w50 = level_specs(Architecture::wide_resnet50);
  CHECK(w50[1].channels == 256);
  CHECK(w50[4].channels == 2048);
  const int strides[5] = {4, 4, 8, 16, 32};
  for (int i = 0; i < 5; ++i) CHECK(w50[i].stride == strides[i]);
  const auto toy = level_specs(Architecture::toy);
  REQUIRE(toy.size() == 3);
  CHECK(toy[2].stride == 16);
}

TEST_CASE("resnet18 parameter count matches torchvision without the classifier") {
  // torchvision resnet18: 11,689,512 parameters, of which fc holds 512*1000 + 1000.
  std::size_t total = 0;
  for (int l = 1; l <= 5; ++l) total += trainable_count(build_level(Architecture::resnet18, l));
  CHECK(total == 11689512 - 513000);
}

TEST_CASE("resnet50 conv2_x parameter count") {
  // Three bottlenecks 64->256 plus the projection shortcut.
  const std::size_t block0 = 64 * 64 + 64 * 64 * 9 + 64 * 256 + 2 * 64 * 2 + 2 * 256 + 64 * 256 + 2 * 256;
  const std::size_t block = 256 * 64 + 64 * 64 * 9 + 64 * 256 + 2 * 64 * 2 + 2 * 256;
  CHECK(trainable_count(build_level(Architecture::resnet50, 2)) == block0 + 2 * block);
}

TEST_CASE("toy teacher feature shapes and determinism") {
  const TeacherNetwork t = make_toy_teacher(0);
  Tensor img(1, 3, 64, 64, 0.5);
  const auto f = extract_features(t, img);
  REQUIRE(f.size() == 3);
  CHECK(f[0].data.shape_string() == "(1,16,16,16)");
  CHECK(f[1].data.shape_string() == "(1,32,8,8)");
  CHECK(f[2].data.shape_string() == "(1,64,4,4)");
  CHECK(f[1].level == 2);
  CHECK(make_toy_teacher(0).checksum() == t.checksum());
  CHECK(make_toy_teacher(1).checksum() != t.checksum());
  CHECK(extract_features(t, img)[2].data == f[2].data);
  CHECK(kind_of([&] { extract_features(t, Tensor(1, 3, 60, 64)); }) == ErrorKind::contract);
}

TEST_CASE("teacher save and load") {
  TempDir dir("teacher");
  const TeacherNetwork t = make_toy_teacher(4);
  save_teacher(t, dir.path() / "toy.fimw");
  const TeacherNetwork a = load_teacher(Architecture::toy, (dir.path() / "toy.fimw").string());
  save_teacher(a, dir.path() / "toy2.fimw");
  const TeacherNetwork b = load_teacher(Architecture::toy, (dir.path() / "toy2.fimw").string());
  CHECK(a.checksum() == b.checksum());
  const Tensor img(1, 3, 32, 32, 0.25);
  const auto fa = extract_features(t, img), fb = extract_features(a, img);
  for (std::size_t i = 0; i < fa[2].data.size(); ++i)
    CHECK(fb[2].data.data()[i] == doctest::Approx(fa[2].data.data()[i]).epsilon(1e-4));

  SUBCASE("registry resolves through the environment") {
    setenv("FEATIMIT_WEIGHTS_DIR", dir.path().c_str(), 1);
    CHECK(registry_path(Architecture::toy) == dir.path() / "toy.fimw");
    CHECK(load_teacher(Architecture::toy, "registry").checksum() == a.checksum());
    unsetenv("FEATIMIT_WEIGHTS_DIR");
  }
  SUBCASE("missing file") {
    CHECK(kind_of([&] { load_teacher(Architecture::toy, (dir.path() / "none.fimw").string()); }) == ErrorKind::load);
  }
  SUBCASE("wrong architecture lists the mismatches") {
    try {
      load_teacher(Architecture::resnet18, (dir.path() / "toy.fimw").string());
      FAIL("expected a shape error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::shape);
      const std::string msg = e.what();
      CHECK(msg.find("conv1.weight: expected [64,3,7,7], found [16,3,3,3]") != std::string::npos);
      CHECK(msg.find("layer(s)") != std::string::npos);
    }
  }
  SUBCASE("seeded weights are toy only") {
    CHECK(kind_of([] { load_teacher(Architecture::resnet18, "seed:1"); }) == ErrorKind::load);
    CHECK(kind_of([] { load_teacher(Architecture::toy, "seed:x"); }) == ErrorKind::config);
  }
}

TEST_CASE("architecture names") {
  CHECK(parse_architecture("wide_resnet50_2") == Architecture::wide_resnet50);
  CHECK(to_string(parse_architecture("resnet50")) == "resnet50");
  CHECK(kind_of([] { parse_architecture("vgg16"); }) == ErrorKind::config);
  CHECK(level_prefix(1).empty());
  CHECK(level_prefix(3) == "layer2");
}
