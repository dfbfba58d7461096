#include "featimit/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "featimit/error.hpp"

namespace featimit {

namespace fs = std::filesystem;

namespace {

std::vector<fs::path> list_pngs(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png") out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<fs::path> list_dirs(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_directory()) out.push_back(entry.path());
  std::sort(out.begin(), out.end());
  return out;
}

void sort_samples(std::vector<SampleRecord>& s) {
  std::sort(s.begin(), s.end(),
            [](const SampleRecord& a, const SampleRecord& b) { return a.image_path < b.image_path; });
}

std::string zero_pad(int i) {
  std::string s = std::to_string(i);
  return std::string(s.size() < 3 ? 3 - s.size() : 0, '0') + s;
}

}  // namespace

std::string to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

std::string SampleRecord::key() const { return defect_type + "_" + image_path.stem().string(); }

SplitCounts DatasetIndex::counts() const {
  SplitCounts c;
  for (const auto& s : samples) {
    if (s.split == Split::train) ++c.train;
    else if (s.split == Split::val) ++c.val;
    else ++c.test;
  }
  return c;
}

std::vector<SampleRecord> DatasetIndex::of(Split split) const {
  std::vector<SampleRecord> out;
  for (const auto& s : samples)
    if (s.split == split) out.push_back(s);
  return out;
}

std::vector<std::string> DatasetIndex::defect_types() const {
  std::set<std::string> types;
  for (const auto& s : samples)
    if (!s.is_good()) types.insert(s.defect_type);
  return {types.begin(), types.end()};
}

DatasetIndex index_dataset(const fs::path& root, const std::string& category) {
  const fs::path base = root / category;
  if (!fs::is_directory(base)) fail(ErrorKind::layout, "dataset category directory not found: " + base.string());
  const fs::path train_good = base / "train" / "good";
  const fs::path test_dir = base / "test";
  if (!fs::is_directory(train_good))
    fail(ErrorKind::layout, "expected <category>/train/good under " + base.string());
  if (!fs::is_directory(test_dir)) fail(ErrorKind::layout, "expected <category>/test under " + base.string());

  DatasetIndex index;
  index.root = root;
  index.category = category;
  for (const auto& p : list_pngs(train_good))
    index.samples.push_back({p, std::nullopt, category, "good", Split::train});
  if (index.samples.empty()) fail(ErrorKind::contract, "no training images in " + train_good.string());

  for (const auto& dir : list_dirs(test_dir)) {
    const std::string defect = dir.filename().string();
    for (const auto& p : list_pngs(dir)) {
      SampleRecord r{p, std::nullopt, category, defect, Split::test};
      if (defect != "good") {
        const fs::path mask = base / "ground_truth" / defect / (p.stem().string() + "_mask.png");
        if (!fs::is_regular_file(mask))
          fail(ErrorKind::integrity, "missing ground-truth mask " + mask.string() + " for " + p.string());
        r.mask_path = mask;
      }
      index.samples.push_back(std::move(r));
    }
  }
  sort_samples(index.samples);
  return index;
}

Sample load_sample(const SampleRecord& record) {
  Sample s;
  s.image = load_image(record.image_path);
  if (record.mask_path) {
    s.mask = load_mask(*record.mask_path);
    if (s.mask->height != s.image.h() || s.mask->width != s.image.w())
      fail(ErrorKind::integrity, "mask " + record.mask_path->string() + " does not match image size");
  }
  s.category = record.category;
  s.defect_type = record.defect_type;
  s.split = record.split;
  return s;
}

Mask load_mask_or_empty(const SampleRecord& record, int height, int width) {
  if (!record.mask_path) return Mask(height, width);
  return load_mask(*record.mask_path);
}

ValidationSplit build_validation_split(const DatasetIndex& index, double coverage, double per_type_fraction,
                                       std::uint64_t seed) {
  require(coverage >= 0.0 && coverage <= 1.0, "validation coverage must lie in [0, 1]");
  require(per_type_fraction > 0.0 && per_type_fraction <= 1.0, "per-type fraction must lie in (0, 1]");
  ValidationSplit out;
  out.val.root = out.test.root = index.root;
  out.val.category = out.test.category = index.category;

  std::vector<SampleRecord> test = index.of(Split::test);
  const std::vector<std::string> types = index.defect_types();
  if (coverage > 0.0 && types.empty())
    fail(ErrorKind::contract, "validation coverage > 0 but the test split has no defect types");

  std::mt19937_64 rng(seed);
  std::vector<std::string> chosen = types;
  std::shuffle(chosen.begin(), chosen.end(), rng);
  const auto n_types = static_cast<std::size_t>(std::ceil(coverage * static_cast<double>(types.size()) - 1e-9));
  chosen.resize(std::min(n_types, chosen.size()));
  std::sort(chosen.begin(), chosen.end());

  std::set<fs::path> moved;
  std::size_t moved_defects = 0;
  for (const std::string& type : chosen) {
    std::vector<fs::path> paths;
    for (const auto& r : test)
      if (r.defect_type == type) paths.push_back(r.image_path);
    std::shuffle(paths.begin(), paths.end(), rng);
    const std::size_t n = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(per_type_fraction * static_cast<double>(paths.size()))));
    for (std::size_t i = 0; i < std::min(n, paths.size()); ++i) {
      moved.insert(paths[i]);
      ++moved_defects;
    }
  }
  std::vector<fs::path> goods;
  for (const auto& r : test)
    if (r.is_good()) goods.push_back(r.image_path);
  std::shuffle(goods.begin(), goods.end(), rng);
  for (std::size_t i = 0; i < std::min(moved_defects, goods.size()); ++i) moved.insert(goods[i]);

  for (SampleRecord r : test) {
    if (moved.count(r.image_path)) {
      r.split = Split::val;
      out.val.samples.push_back(std::move(r));
    } else {
      out.test.samples.push_back(std::move(r));
    }
  }
  sort_samples(out.val.samples);
  sort_samples(out.test.samples);
  return out;
}

void PyramidSpec::validate(int stride) const {
  require(!scales.empty(), "pyramid needs at least one scale");
  for (std::size_t i = 0; i < scales.size(); ++i) {
    require(scales[i] > 0, "pyramid scales must be positive");
    require(i == 0 || scales[i] > scales[i - 1], "pyramid scales must be strictly increasing");
    require(scales[i] % stride == 0, "pyramid scale " + std::to_string(scales[i]) +
                                         " is not divisible by the teacher stride " + std::to_string(stride));
  }
}

std::vector<Tensor> make_pyramid(const Tensor& image, const PyramidSpec& spec) {
  spec.validate();
  std::vector<Tensor> out;
  for (int s : spec.scales) {
    Tensor r = resize_bilinear(image, s, s);
    for (double& v : r.values()) v = std::clamp(v, 0.0, 1.0);
    out.push_back(std::move(r));
  }
  return out;
}

// ------------------------------------------------------------------ fixture

namespace {

constexpr int kGridPeriod = 8;

class Texture {
 public:
  Texture(int size, std::mt19937_64& rng) : size_(size) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    coarse_ = size / kGridPeriod + 2;
    noise_.resize(static_cast<std::size_t>(coarse_) * coarse_);
    for (double& v : noise_) v = u(rng);
    std::uniform_int_distribution<int> phase(0, kGridPeriod - 1);
    ox_ = phase(rng);
    oy_ = phase(rng);
  }

  // Smooth value noise in [0, 1].
  double noise(int y, int x) const {
    const double fy = (y + 0.5) / kGridPeriod, fx = (x + 0.5) / kGridPeriod;
    const int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
    const double ty = fy - y0, tx = fx - x0;
    auto at = [&](int yy, int xx) { return noise_[static_cast<std::size_t>(yy) * coarse_ + xx]; };
    return (1 - ty) * ((1 - tx) * at(y0, x0) + tx * at(y0, x0 + 1)) +
           ty * ((1 - tx) * at(y0 + 1, x0) + tx * at(y0 + 1, x0 + 1));
  }
  bool grid(int y, int x) const { return (x + ox_) % kGridPeriod == 0 || (y + oy_) % kGridPeriod == 0; }
  int size() const { return size_; }

 private:
  int size_, coarse_, ox_ = 0, oy_ = 0;
  std::vector<double> noise_;
};

Tensor render_normal(const Texture& tex, std::mt19937_64& rng) {
  static constexpr double kBase[3] = {0.62, 0.50, 0.36};
  std::normal_distribution<double> grain(0.0, 0.02);
  const int n = tex.size();
  Tensor img(1, 3, n, n);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const double shade = (0.75 + 0.5 * (tex.noise(y, x) - 0.5)) * (tex.grid(y, x) ? 0.6 : 1.0);
      for (int c = 0; c < 3; ++c) img.at(0, c, y, x) = std::clamp(kBase[c] * shade + grain(rng), 0.0, 1.0);
    }
  return img;
}

void paint_defect(Tensor& img, const Texture& tex, const std::string& type, int y0, int x0, int h, int w) {
  static constexpr double kColor[3] = {0.15, 0.55, 0.85};
  for (int y = y0; y < y0 + h; ++y)
    for (int x = x0; x < x0 + w; ++x) {
      if (type == "color") {
        const double shade = 0.75 + 0.5 * (tex.noise(y, x) - 0.5);
        for (int c = 0; c < 3; ++c) img.at(0, c, y, x) = std::clamp(kColor[c] * shade, 0.0, 1.0);
      } else {
        const double v = ((x + y) % 2 == 0) ? 0.92 : 0.08;
        for (int c = 0; c < 3; ++c) img.at(0, c, y, x) = v;
      }
    }
}

}  // namespace

DatasetIndex generate_synthetic_fixture(const fs::path& out_root, const FixtureOptions& o) {
  require(o.image_size >= 32, "fixture image size must be >= 32");
  require(o.n_normal >= 1 && o.n_anomalous >= 0 && o.n_test_good >= 0, "fixture counts must be non-negative");
  require(o.min_patch_side > 0.0 && o.min_patch_side <= o.max_patch_side && o.max_patch_side <= 1.0,
          "patch side fractions must satisfy 0 < min <= max <= 1");
  require(o.max_patches >= 1, "max_patches must be >= 1");

  const fs::path base = out_root / o.category;
  static const std::string kTypes[2] = {"color", "texture"};
  std::error_code ec;
  for (const fs::path& d : {base / "train" / "good", base / "test" / "good", base / "test" / kTypes[0],
                            base / "test" / kTypes[1], base / "ground_truth" / kTypes[0],
                            base / "ground_truth" / kTypes[1]}) {
    fs::create_directories(d, ec);
    if (ec) fail(ErrorKind::io, "cannot create " + d.string() + ": " + ec.message());
  }

  std::mt19937_64 rng(o.seed);
  const int n = o.image_size;
  for (int i = 0; i < o.n_normal; ++i) {
    Texture tex(n, rng);
    save_image(base / "train" / "good" / (zero_pad(i) + ".png"), render_normal(tex, rng));
  }
  for (int i = 0; i < o.n_test_good; ++i) {
    Texture tex(n, rng);
    save_image(base / "test" / "good" / (zero_pad(i) + ".png"), render_normal(tex, rng));
  }
  std::uniform_real_distribution<double> side(o.min_patch_side, o.max_patch_side);
  std::uniform_int_distribution<int> patches(1, o.max_patches);
  int per_type[2] = {0, 0};
  for (int i = 0; i < o.n_anomalous; ++i) {
    const int t = i % 2;
    const std::string& type = kTypes[t];
    Texture tex(n, rng);
    Tensor img = render_normal(tex, rng);
    Mask mask(n, n);
    const int k = patches(rng);
    for (int p = 0; p < k; ++p) {
      const int h = std::max(1, static_cast<int>(std::lround(side(rng) * n)));
      const int w = std::max(1, static_cast<int>(std::lround(side(rng) * n)));
      std::uniform_int_distribution<int> py(0, n - h), px(0, n - w);
      const int y0 = py(rng), x0 = px(rng);
      paint_defect(img, tex, type, y0, x0, h, w);
      for (int y = y0; y < y0 + h; ++y)
        for (int x = x0; x < x0 + w; ++x) mask.at(y, x) = 1;
    }
    const std::string stem = zero_pad(per_type[t]++);
    save_image(base / "test" / type / (stem + ".png"), img);
    save_mask(base / "ground_truth" / type / (stem + "_mask.png"), mask);
  }
  return index_dataset(out_root, o.category);
}

}  // namespace featimit
