#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "featimit/error.hpp"
#include "featimit/scale_search.hpp"
#include "support.hpp"

using namespace featimit;
using testing::random_map;
using testing::TempDir;

namespace {

std::vector<BlockId> ids(int n) {
  std::vector<BlockId> out;
  for (int i = 0; i < n; ++i) out.push_back({32 * (1 + i / 3), 2 + i % 3});
  return out;
}

WeightLogits random_logits(std::mt19937_64& rng, int n, double sd = 1.0) {
  WeightLogits w = uniform_logits(ids(n));
  std::normal_distribution<double> d(0.0, sd);
  for (double& v : w.values) v = d(rng);
  return w;
}

Mask random_mask(std::mt19937_64& rng, int h, int w) {
  Mask m{h, w, std::vector<std::uint8_t>(static_cast<std::size_t>(h) * w)};
  std::bernoulli_distribution b(0.3);
  for (auto& v : m.data) v = b(rng);
  return m;
}

ValidationCache random_cache(std::mt19937_64& rng, int images, int blocks, int size) {
  ValidationCache c;
  c.block_ids = ids(blocks);
  for (int i = 0; i < images; ++i) {
    std::vector<ScoreMap> maps;
    for (int b = 0; b < blocks; ++b) maps.push_back(random_map(rng, size, size));
    c.maps.push_back(maps);
    c.masks.push_back(random_mask(rng, size, size));
  }
  return c;
}

double cache_loss(const ValidationCache& c, const WeightLogits& l) {
  const WeightVector w = softmax_weights(l);
  double s = 0.0;
  for (std::size_t i = 0; i < c.maps.size(); ++i) s += validation_loss(weighted_fusion(c.maps[i], w), c.masks[i]);
  return s / static_cast<double>(c.maps.size());
}

}  // namespace

TEST_CASE("softmax weights") {
  std::mt19937_64 rng(41);
  for (int i = 0; i < 100; ++i) {
    WeightLogits l = random_logits(rng, 1 + i % 9, 5.0);
    const WeightVector w = softmax_weights(l);
    double sum = 0.0;
    for (double v : w.values) {
      CHECK(v > 0.0);
      sum += v;
    }
    CHECK(std::abs(sum - 1.0) < 1e-9);
    const double shift = std::normal_distribution<double>(0.0, 100.0)(rng);
    WeightLogits shifted = l;
    for (double& v : shifted.values) v += shift;
    const WeightVector ws = softmax_weights(shifted);
    for (std::size_t j = 0; j < w.values.size(); ++j) CHECK(std::abs(ws.values[j] - w.values[j]) < 1e-12);
    const int k = 1 + i % static_cast<int>(l.values.size());
    CHECK(prune_top_k(l, k).kept == prune_top_k(shifted, k).kept);
  }
  WeightLogits big = uniform_logits(ids(2));
  big.values = {1000.0, 0.0};
  CHECK(softmax_weights(big).values[0] == doctest::Approx(1.0));
  CHECK(uniform_logits(ids(4)).values == std::vector<double>(4, 0.0));
}

TEST_CASE("weighted fusion") {
  std::mt19937_64 rng(42);
  std::vector<ScoreMap> maps{random_map(rng, 5, 5), random_map(rng, 5, 5), random_map(rng, 5, 5)};
  WeightVector onehot{{0.0, 1.0, 0.0}, ids(3)};
  CHECK(weighted_fusion(maps, onehot).data == maps[1].data);
  WeightVector w{{0.2, 0.3, 0.5}, ids(3)};
  const ScoreMap f = weighted_fusion(maps, w);
  for (std::size_t p = 0; p < f.data.size(); ++p)
    CHECK(f.data[p] == doctest::Approx(0.2 * maps[0].data[p] + 0.3 * maps[1].data[p] + 0.5 * maps[2].data[p]));
  WeightVector short_w{{1.0}, ids(1)};
  CHECK_THROWS_AS(weighted_fusion(maps, short_w), Error);
}

TEST_CASE("validation loss is clamped binary cross-entropy") {
  ScoreMap m(1, 4);
  m.data = {0.0, 1.0, 0.25, 0.9};
  Mask g{1, 4, {1, 0, 1, 0}};
  const double d = kProbabilityClamp;
  const double expect = (-std::log(d) - std::log(d) - std::log(0.25) - std::log(0.1)) / 4.0;
  CHECK(validation_loss(m, g) == doctest::Approx(expect).epsilon(1e-9));
  CHECK(std::isfinite(validation_loss(m, g)));
  CHECK_THROWS_AS(validation_loss(m, Mask{2, 2, {0, 0, 0, 0}}), Error);
}

TEST_CASE("validation loss gradient matches central differences") {
  std::mt19937_64 rng(43);
  for (int inst = 0; inst < 25; ++inst) {
    const int blocks = 2 + inst % 5;
    const ValidationCache c = random_cache(rng, 1 + inst % 3, blocks, 6);
    const WeightLogits l = random_logits(rng, blocks);
    const LossGradientOmega lg = validation_loss_gradient(c, l);
    CHECK(lg.loss == doctest::Approx(cache_loss(c, l)).epsilon(1e-12));
    for (int j = 0; j < blocks; ++j) {
      const double h = 1e-6;
      WeightLogits lp = l, lm = l;
      lp.values[j] += h;
      lm.values[j] -= h;
      const double fd = (cache_loss(c, lp) - cache_loss(c, lm)) / (2 * h);
      CHECK(testing::rel_error(fd, lg.grad[j]) < 1e-4);
    }
  }
}

TEST_CASE("weight search") {
  std::mt19937_64 rng(44);
  const ValidationCache c = random_cache(rng, 3, 6, 8);
  SUBCASE("descends") {
    const WeightLogits r = search_weights(c, uniform_logits(c.block_ids), {});
    CHECK(r.iteration == 500);
    CHECK(r.loss_trace.size() == 501);
    CHECK(r.loss_trace.back() <= r.loss_trace.front());
  }
  SUBCASE("zero iterations keep uniform weights") {
    const WeightLogits r = search_weights(c, uniform_logits(c.block_ids), {0, 0.1});
    for (double v : softmax_weights(r).values) CHECK(v == doctest::Approx(1.0 / 6.0));
    CHECK(r.loss_trace.size() == 1);
  }
  SUBCASE("an informative block gains weight") {
    ValidationCache d = c;
    for (std::size_t i = 0; i < d.maps.size(); ++i)
      for (std::size_t p = 0; p < d.masks[i].data.size(); ++p) d.maps[i][4].data[p] = d.masks[i].data[p] ? 0.9 : 0.1;
    const WeightVector w = softmax_weights(search_weights(d, uniform_logits(d.block_ids), {}));
    CHECK(std::max_element(w.values.begin(), w.values.end()) - w.values.begin() == 4);
  }
  CHECK_THROWS_AS(search_weights(ValidationCache{}, uniform_logits({}), {}), Error);
}

TEST_CASE("top-k pruning") {
  std::mt19937_64 rng(45);
  const WeightLogits l = random_logits(rng, 6);
  const WeightVector w = softmax_weights(l);
  SUBCASE("k = N is an identity") {
    const PruneResult all = prune_top_k(l, 6);
    CHECK(all.kept == l.block_ids);
    CHECK(all.weights.values == w.values);
    std::vector<ScoreMap> maps;
    for (int i = 0; i < 6; ++i) maps.push_back(random_map(rng, 4, 4));
    CHECK(weighted_fusion(maps, all.weights).data == weighted_fusion(maps, w).data);
  }
  SUBCASE("keeps the heaviest blocks in original order") {
    const PruneResult two = prune_top_k(l, 2);
    std::vector<std::size_t> order(6);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return w.values[a] > w.values[b]; });
    std::vector<std::size_t> top{order[0], order[1]};
    std::sort(top.begin(), top.end());
    CHECK(two.kept == std::vector<BlockId>{l.block_ids[top[0]], l.block_ids[top[1]]});
    CHECK(two.weights.values[0] + two.weights.values[1] == doctest::Approx(1.0));
    CHECK(two.weights.values[0] / two.weights.values[1] == doctest::Approx(w.values[top[0]] / w.values[top[1]]));
  }
  SUBCASE("ties resolve by position") {
    const PruneResult r = prune_top_k(uniform_logits(ids(4)), 2);
    CHECK(r.kept == std::vector<BlockId>{ids(4)[0], ids(4)[1]});
  }
  CHECK_THROWS_AS(prune_top_k(l, 0), Error);
  CHECK_THROWS_AS(prune_top_k(l, 7), Error);
}

TEST_CASE("weight file round trip") {
  TempDir dir("weights");
  std::mt19937_64 rng(46);
  WeightLogits l = random_logits(rng, 5);
  l.iteration = 17;
  l.learning_rate = 0.1;
  const std::vector<bool> kept{true, false, true, true, false};
  write_weight_file(dir.path() / "w.txt", l, kept, "abc123");
  const WeightFile wf = read_weight_file(dir.path() / "w.txt");
  CHECK(wf.logits.values == l.values);
  CHECK(wf.logits.block_ids == l.block_ids);
  CHECK(wf.logits.iteration == 17);
  CHECK(wf.kept == kept);
  CHECK(wf.config_fingerprint == "abc123");
  std::ofstream(dir.path() / "bad.txt") << "something else\n";
  CHECK_THROWS_AS(read_weight_file(dir.path() / "bad.txt"), Error);
}

TEST_CASE("search leaves networks untouched and pruning drops blocks") {
  std::mt19937_64 rng(47);
  const TeacherNetwork t = make_toy_teacher(0);
  std::vector<ScaleBank> banks{init_student_bank(t, 32, 1), init_student_bank(t, 48, 1)};
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Tensor> images;
  std::vector<Mask> masks;
  for (int i = 0; i < 2; ++i) {
    Tensor img(1, 3, 32, 32);
    for (double& v : img.values()) v = u(rng);
    images.push_back(img);
    masks.push_back(random_mask(rng, 32, 32));
  }
  const auto before = t.checksum() ^ banks[0].checksum() ^ banks[1].checksum();
  const WeightLogits r = search_weights(banks, t, images, masks, {32, 32}, {50, 0.1});
  CHECK((t.checksum() ^ banks[0].checksum() ^ banks[1].checksum()) == before);
  CHECK(r.loss_trace.back() <= r.loss_trace.front());

  std::vector<BlockId> kept{{48, 2}, {48, 3}};
  apply_pruning(banks, kept);
  REQUIRE(banks.size() == 1);
  CHECK(banks[0].scale() == 48);
  CHECK(banks[0].levels() == std::vector<int>{2, 3});
}
