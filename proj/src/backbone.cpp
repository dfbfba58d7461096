#include "featimit/backbone.hpp"

#include <cstdlib>
#include <random>
#include <sstream>

#include "featimit/archive.hpp"
#include "featimit/error.hpp"

namespace featimit {

namespace {

struct ResNetConfig {
  nn::BlockKind kind;
  int blocks[4];
  int width_factor;  // bottleneck inner width multiplier (2 for wide)
};

ResNetConfig resnet_config(Architecture arch) {
  switch (arch) {
    case Architecture::resnet18:
      return {nn::BlockKind::basic, {2, 2, 2, 2}, 1};
    case Architecture::resnet50:
      return {nn::BlockKind::bottleneck, {3, 4, 6, 3}, 1};
    case Architecture::wide_resnet50:
      return {nn::BlockKind::bottleneck, {3, 4, 6, 3}, 2};
    case Architecture::toy:
      break;
  }
  fail(ErrorKind::contract, "toy architecture has no ResNet config");
}

constexpr int kToyChannels[3] = {16, 32, 64};

std::string dims_string(const std::vector<std::int64_t>& dims) {
  std::string s = "[";
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(dims[i]);
  }
  return s + "]";
}

}  // namespace

std::string to_string(Architecture arch) {
  switch (arch) {
    case Architecture::resnet18: return "resnet18";
    case Architecture::resnet50: return "resnet50";
    case Architecture::wide_resnet50: return "wide_resnet50";
    case Architecture::toy: return "toy";
  }
  return "unknown";
}

Architecture parse_architecture(const std::string& name) {
  if (name == "resnet18") return Architecture::resnet18;
  if (name == "resnet50") return Architecture::resnet50;
  if (name == "wide_resnet50" || name == "wide_resnet50_2") return Architecture::wide_resnet50;
  if (name == "toy") return Architecture::toy;
  fail(ErrorKind::config, "unknown architecture '" + name +
                              "' (expected resnet18 | resnet50 | wide_resnet50 | toy)");
}

std::vector<FeatureLevelSpec> level_specs(Architecture arch) {
  if (arch == Architecture::toy)
    return {{1, kToyChannels[0], 4}, {2, kToyChannels[1], 8}, {3, kToyChannels[2], 16}};
  const ResNetConfig cfg = resnet_config(arch);
  const int expansion = cfg.kind == nn::BlockKind::basic ? 1 : 4;
  std::vector<FeatureLevelSpec> specs{{1, 64, 4}};
  const int strides[4] = {4, 8, 16, 32};
  for (int s = 0; s < 4; ++s)
    specs.push_back({s + 2, (64 << s) * expansion, strides[s]});
  return specs;
}

std::string level_prefix(int level) {
  return level == 1 ? std::string() : "layer" + std::to_string(level - 1);
}

nn::Sequential build_level(Architecture arch, int level) {
  const auto specs = level_specs(arch);
  require(level >= 1 && level <= static_cast<int>(specs.size()),
          "level " + std::to_string(level) + " out of range for " + to_string(arch));
  nn::Sequential seq;
  if (arch == Architecture::toy) {
    if (level == 1) {
      seq.add("conv1", std::make_unique<nn::Conv2d>(3, kToyChannels[0], 3, 2, 1))
          .add("bn1", std::make_unique<nn::BatchNorm2d>(kToyChannels[0]))
          .add("relu", std::make_unique<nn::ReLU>())
          .add("maxpool", std::make_unique<nn::MaxPool2d>(3, 2, 1));
    } else {
      seq.add("0", std::make_unique<nn::ResidualBlock>(
                       nn::BlockKind::basic, kToyChannels[level - 2], 0,
                       kToyChannels[level - 1], 2));
    }
    return seq;
  }
  if (level == 1) {
    seq.add("conv1", std::make_unique<nn::Conv2d>(3, 64, 7, 2, 3))
        .add("bn1", std::make_unique<nn::BatchNorm2d>(64))
        .add("relu", std::make_unique<nn::ReLU>())
        .add("maxpool", std::make_unique<nn::MaxPool2d>(3, 2, 1));
    return seq;
  }
  const ResNetConfig cfg = resnet_config(arch);
  const int stage = level - 2;
  const int planes = 64 << stage;
  const int width = planes * cfg.width_factor;
  const int out = specs[level - 1].channels;
  int in = specs[level - 2].channels;
  for (int b = 0; b < cfg.blocks[stage]; ++b) {
    const int stride = (b == 0 && stage > 0) ? 2 : 1;
    seq.add(std::to_string(b),
            std::make_unique<nn::ResidualBlock>(cfg.kind, in, width, out, stride));
    in = out;
  }
  return seq;
}

TeacherNetwork::TeacherNetwork(Architecture arch, std::vector<nn::Sequential> stages)
    : arch_(arch), specs_(level_specs(arch)) {
  require(stages.size() == specs_.size(),
          "teacher for " + to_string(arch) + " needs " +
              std::to_string(specs_.size()) + " stages");
  for (auto& s : stages) {
    s.clear_cache();
    stages_.push_back(std::make_shared<const nn::Sequential>(std::move(s)));
  }
}

const nn::Sequential& TeacherNetwork::level_module(int level) const {
  require(level >= 1 && level <= level_count(),
          "teacher has no level " + std::to_string(level));
  return *stages_[level - 1];
}

std::uint64_t TeacherNetwork::checksum() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& s : stages_) {
    const std::uint64_t part = nn::checksum(*s);
    h = fnv1a(&part, sizeof(part), h);
  }
  return h;
}

std::uint64_t TeacherNetwork::topology_fingerprint() const {
  std::string desc = to_string(arch_);
  for (const auto& s : stages_) desc += "|" + s->describe();
  return fnv1a(desc.data(), desc.size());
}

std::filesystem::path registry_path(Architecture arch) {
  std::filesystem::path dir;
  if (const char* env = std::getenv("FEATIMIT_WEIGHTS_DIR"); env && *env) {
    dir = env;
  } else if (const char* home = std::getenv("HOME"); home && *home) {
    dir = std::filesystem::path(home) / ".cache" / "featimit";
  } else {
    dir = ".featimit_cache";
  }
  return dir / (to_string(arch) + ".fimw");
}

TeacherNetwork make_toy_teacher(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<nn::Sequential> stages;
  for (int l = 1; l <= 3; ++l) {
    nn::Sequential s = build_level(Architecture::toy, l);
    nn::init_fan_in_normal(s, rng);
    // Non-trivial affine batch-norm so the copy-teacher path is exercised.
    std::uniform_real_distribution<double> gamma(0.5, 1.5);
    std::normal_distribution<double> beta(0.0, 0.1);
    s.visit("", nn::ParamVisitor([&](const std::string& name, nn::Parameter& p) {
              if (p.dims.size() != 1) return;
              if (name.ends_with(".weight") || name == "weight")
                for (double& v : p.value.values()) v = gamma(rng);
              else if (name.ends_with(".bias") || name == "bias")
                for (double& v : p.value.values()) v = beta(rng);
            }));
    stages.push_back(std::move(s));
  }
  return TeacherNetwork(Architecture::toy, std::move(stages));
}

TeacherNetwork load_teacher(Architecture arch, const std::string& weights_source) {
  if (weights_source.rfind("seed:", 0) == 0) {
    if (arch != Architecture::toy)
      fail(ErrorKind::load, "seeded random weights are only available for the toy "
                            "architecture, not " + to_string(arch));
    std::uint64_t seed = 0;
    try {
      seed = std::stoull(weights_source.substr(5));
    } catch (const std::exception&) {
      fail(ErrorKind::config, "bad seed in weights source '" + weights_source + "'");
    }
    return make_toy_teacher(seed);
  }
  const std::filesystem::path path =
      weights_source == "registry" ? registry_path(arch) : std::filesystem::path(weights_source);
  if (!std::filesystem::exists(path))
    fail(ErrorKind::load, "weights file not found: " + path.string());
  const Archive archive = read_archive(path);

  std::vector<nn::Sequential> stages;
  std::vector<std::string> mismatches;
  for (int l = 1; l <= static_cast<int>(level_specs(arch).size()); ++l) {
    nn::Sequential s = build_level(arch, l);
    s.visit(level_prefix(l), nn::ParamVisitor([&](const std::string& name, nn::Parameter& p) {
              auto it = archive.tensors.find(name);
              if (it == archive.tensors.end()) {
                mismatches.push_back(name + ": expected " + dims_string(p.dims) + ", found missing");
                return;
              }
              if (it->second.dims != p.dims) {
                mismatches.push_back(name + ": expected " + dims_string(p.dims) + ", found " +
                                     dims_string(it->second.dims));
                return;
              }
              std::copy(it->second.values.begin(), it->second.values.end(), p.value.data());
            }));
    stages.push_back(std::move(s));
  }
  if (!mismatches.empty()) {
    std::ostringstream os;
    os << "weights in " << path.string() << " do not match " << to_string(arch) << " ("
       << mismatches.size() << " layer(s)):";
    const std::size_t shown = std::min<std::size_t>(mismatches.size(), 12);
    for (std::size_t i = 0; i < shown; ++i) os << "\n  " << mismatches[i];
    if (shown < mismatches.size()) os << "\n  ...";
    fail(ErrorKind::shape, os.str());
  }
  return TeacherNetwork(arch, std::move(stages));
}

void save_teacher(const TeacherNetwork& teacher, const std::filesystem::path& path) {
  Archive a;
  a.meta["architecture"] = to_string(teacher.architecture());
  for (int l = 1; l <= teacher.level_count(); ++l) {
    teacher.level_module(l).visit(
        level_prefix(l), nn::ConstParamVisitor([&](const std::string& name, const nn::Parameter& p) {
          a.tensors[name] = ArchiveTensor{p.dims, {p.value.values().begin(), p.value.values().end()}};
        }));
  }
  write_archive(path, a, ArchiveDtype::float32);
}

Tensor normalize_input(const Tensor& images) {
  require(images.c() == 3, "teacher input must have 3 channels, got " + images.shape_string());
  static constexpr double kMean[3] = {0.485, 0.456, 0.406};
  static constexpr double kStd[3] = {0.229, 0.224, 0.225};
  Tensor out = images;
  for (int n = 0; n < out.n(); ++n)
    for (int c = 0; c < 3; ++c) {
      double* p = out.sample(n) + c * out.plane_size();
      for (std::size_t i = 0; i < out.plane_size(); ++i) p[i] = (p[i] - kMean[c]) / kStd[c];
    }
  return out;
}

std::vector<Tensor> extract_feature_batch(const TeacherNetwork& teacher, const Tensor& images) {
  const int stride = teacher.deepest_stride();
  if (images.h() % stride != 0 || images.w() % stride != 0)
    fail(ErrorKind::contract, "input size " + std::to_string(images.h()) + "x" +
                                  std::to_string(images.w()) +
                                  " must be divisible by the deepest stride " +
                                  std::to_string(stride));
  std::vector<Tensor> out;
  Tensor h = normalize_input(images);
  for (int l = 1; l <= teacher.level_count(); ++l) {
    h = teacher.level_module(l).infer(h);
    out.push_back(h);
  }
  return out;
}

std::vector<FeatureMap> extract_features(const TeacherNetwork& teacher, const Tensor& image) {
  require(image.n() == 1, "extract_features expects a single image, got " + image.shape_string());
  std::vector<FeatureMap> maps;
  auto batch = extract_feature_batch(teacher, image);
  for (std::size_t i = 0; i < batch.size(); ++i)
    maps.push_back({std::move(batch[i]), static_cast<int>(i) + 1, FeatureSource::teacher});
  return maps;
}

}  // namespace featimit
