#include "featimit/config.hpp"

#include <yaml-cpp/yaml.h>

#include <fstream>
#include <set>
#include <sstream>

#include "featimit/error.hpp"

namespace featimit {

namespace {

template <class T>
T scalar(const YAML::Node& node, const std::string& key) {
  try {
    return node.as<T>();
  } catch (const YAML::Exception&) {
    fail(ErrorKind::config, "config key '" + key + "' has an invalid value");
  }
}

void check_keys(const YAML::Node& node, const std::string& where, const std::set<std::string>& allowed) {
  if (!node.IsMap()) fail(ErrorKind::config, "config section '" + where + "' must be a mapping");
  for (const auto& kv : node) {
    const std::string key = kv.first.as<std::string>();
    if (!allowed.count(key))
      fail(ErrorKind::config, "unknown config key '" + (where.empty() ? key : where + "." + key) + "'");
  }
}

std::vector<int> int_list(const YAML::Node& node, const std::string& key) {
  if (node.IsScalar()) return parse_int_list(node.as<std::string>());
  if (!node.IsSequence()) fail(ErrorKind::config, "config key '" + key + "' must be a list of integers");
  std::vector<int> out;
  for (const auto& v : node) out.push_back(scalar<int>(v, key));
  return out;
}

}  // namespace

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      fail(ErrorKind::config, "'" + text + "' is not a comma-separated integer list");
    }
  }
  return out;
}

void RunConfig::validate() const {
  parse_architecture(architecture);
  try {
    train.validate();
  } catch (const Error& e) {
    fail(ErrorKind::config, e.what());
  }
  if (levels.empty()) fail(ErrorKind::config, "at least one feature level is required");
  for (std::size_t i = 0; i < levels.size(); ++i)
    if (levels[i] < 2 || (i > 0 && levels[i] <= levels[i - 1]))
      fail(ErrorKind::config, "levels must be strictly increasing and >= 2");
  try {
    PyramidSpec{scales}.validate();
  } catch (const Error& e) {
    fail(ErrorKind::config, e.what());
  }
  if (val_coverage < 0.0 || val_coverage > 1.0) fail(ErrorKind::config, "validation.coverage must lie in [0, 1]");
  if (val_fraction <= 0.0 || val_fraction > 1.0) fail(ErrorKind::config, "validation.fraction must lie in (0, 1]");
  if (search.iterations < 0) fail(ErrorKind::config, "search.iterations must be >= 0");
  if (search.learning_rate < 0.0) fail(ErrorKind::config, "search.learning_rate must be >= 0");
  if (k < 0) fail(ErrorKind::config, "search.k must be >= 0");
  if (reference_size <= 0) fail(ErrorKind::config, "scoring.reference_size must be positive");
  if (threads < 1) fail(ErrorKind::config, "threads must be >= 1");
}

void RunConfig::validate_against(const TeacherNetwork& teacher) const {
  validate();
  for (int l : levels)
    if (l > teacher.level_count())
      fail(ErrorKind::config, "level " + std::to_string(l) + " is not available; " + to_string(teacher.architecture()) +
                                  " has levels 1.." + std::to_string(teacher.level_count()));
  try {
    PyramidSpec{scales}.validate(teacher.deepest_stride());
  } catch (const Error& e) {
    fail(ErrorKind::config, e.what());
  }
}

RunConfig parse_config(const std::string& yaml_text) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::Exception& e) {
    fail(ErrorKind::config, std::string("config is not valid YAML: ") + e.what());
  }
  RunConfig c;
  if (root.IsNull()) return c;
  check_keys(root, "", {"teacher", "pyramid", "levels", "train", "data", "validation", "search", "scoring", "output",
                        "seed", "threads"});
  if (auto t = root["teacher"]) {
    check_keys(t, "teacher", {"architecture", "weights"});
    if (t["architecture"]) c.architecture = scalar<std::string>(t["architecture"], "teacher.architecture");
    if (t["weights"]) c.weights = scalar<std::string>(t["weights"], "teacher.weights");
  }
  if (auto p = root["pyramid"]) {
    check_keys(p, "pyramid", {"scales"});
    if (p["scales"]) c.scales = int_list(p["scales"], "pyramid.scales");
  }
  if (root["levels"]) c.levels = int_list(root["levels"], "levels");
  if (auto t = root["train"]) {
    check_keys(t, "train", {"learning_rate", "momentum", "batch_size", "epochs", "epsilon"});
    if (t["learning_rate"]) c.train.learning_rate = scalar<double>(t["learning_rate"], "train.learning_rate");
    if (t["momentum"]) c.train.momentum = scalar<double>(t["momentum"], "train.momentum");
    if (t["batch_size"]) c.train.batch_size = scalar<int>(t["batch_size"], "train.batch_size");
    if (t["epochs"]) c.train.epochs = scalar<int>(t["epochs"], "train.epochs");
    if (t["epsilon"]) c.train.epsilon = scalar<double>(t["epsilon"], "train.epsilon");
  }
  if (auto d = root["data"]) {
    check_keys(d, "data", {"root", "category"});
    if (d["root"]) c.data_root = scalar<std::string>(d["root"], "data.root");
    if (d["category"]) c.category = scalar<std::string>(d["category"], "data.category");
  }
  if (auto v = root["validation"]) {
    check_keys(v, "validation", {"coverage", "fraction"});
    if (v["coverage"]) c.val_coverage = scalar<double>(v["coverage"], "validation.coverage");
    if (v["fraction"]) c.val_fraction = scalar<double>(v["fraction"], "validation.fraction");
  }
  if (auto s = root["search"]) {
    check_keys(s, "search", {"learning_rate", "iterations", "k"});
    if (s["learning_rate"]) c.search.learning_rate = scalar<double>(s["learning_rate"], "search.learning_rate");
    if (s["iterations"]) c.search.iterations = scalar<int>(s["iterations"], "search.iterations");
    if (s["k"]) c.k = scalar<int>(s["k"], "search.k");
  }
  if (auto s = root["scoring"]) {
    check_keys(s, "scoring", {"reference_size", "fusion"});
    if (s["reference_size"]) c.reference_size = scalar<int>(s["reference_size"], "scoring.reference_size");
    if (s["fusion"]) {
      const auto f = scalar<std::string>(s["fusion"], "scoring.fusion");
      if (f == "flat") c.fusion = FusionOrder::flat;
      else if (f == "per_scale") c.fusion = FusionOrder::per_scale;
      else fail(ErrorKind::config, "scoring.fusion must be 'flat' or 'per_scale'");
    }
  }
  if (root["output"]) c.output_dir = scalar<std::string>(root["output"], "output");
  if (root["seed"]) c.seed = scalar<std::uint64_t>(root["seed"], "seed");
  if (root["threads"]) c.threads = scalar<int>(root["threads"], "threads");
  c.train.seed = c.seed;
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::config, "cannot read config file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

namespace {

void emit_model_section(YAML::Emitter& e, const RunConfig& c) {
  e << YAML::Key << "teacher" << YAML::Value << YAML::BeginMap << YAML::Key << "architecture" << YAML::Value
    << c.architecture << YAML::Key << "weights" << YAML::Value << c.weights << YAML::EndMap;
  e << YAML::Key << "pyramid" << YAML::Value << YAML::BeginMap << YAML::Key << "scales" << YAML::Value << YAML::Flow
    << c.scales << YAML::EndMap;
  e << YAML::Key << "levels" << YAML::Value << YAML::Flow << c.levels;
  e << YAML::Key << "train" << YAML::Value << YAML::BeginMap << YAML::Key << "learning_rate" << YAML::Value
    << c.train.learning_rate << YAML::Key << "momentum" << YAML::Value << c.train.momentum << YAML::Key
    << "batch_size" << YAML::Value << c.train.batch_size << YAML::Key << "epochs" << YAML::Value << c.train.epochs
    << YAML::Key << "epsilon" << YAML::Value << c.train.epsilon << YAML::EndMap;
  e << YAML::Key << "data" << YAML::Value << YAML::BeginMap << YAML::Key << "root" << YAML::Value
    << c.data_root.string() << YAML::Key << "category" << YAML::Value << c.category << YAML::EndMap;
  e << YAML::Key << "scoring" << YAML::Value << YAML::BeginMap << YAML::Key << "reference_size" << YAML::Value
    << c.reference_size << YAML::Key << "fusion" << YAML::Value
    << (c.fusion == FusionOrder::flat ? "flat" : "per_scale") << YAML::EndMap;
  e << YAML::Key << "seed" << YAML::Value << c.seed;
}

}  // namespace

std::string to_yaml(const RunConfig& c) {
  YAML::Emitter e;
  e.SetDoublePrecision(17);
  e << YAML::BeginMap;
  emit_model_section(e, c);
  e << YAML::Key << "validation" << YAML::Value << YAML::BeginMap << YAML::Key << "coverage" << YAML::Value
    << c.val_coverage << YAML::Key << "fraction" << YAML::Value << c.val_fraction << YAML::EndMap;
  e << YAML::Key << "search" << YAML::Value << YAML::BeginMap << YAML::Key << "learning_rate" << YAML::Value
    << c.search.learning_rate << YAML::Key << "iterations" << YAML::Value << c.search.iterations << YAML::Key << "k"
    << YAML::Value << c.k << YAML::EndMap;
  e << YAML::Key << "output" << YAML::Value << c.output_dir.string();
  e << YAML::Key << "threads" << YAML::Value << c.threads;
  e << YAML::EndMap;
  return std::string(e.c_str()) + "\n";
}

std::string config_fingerprint(const RunConfig& c) {
  YAML::Emitter e;
  e.SetDoublePrecision(17);
  e << YAML::BeginMap;
  emit_model_section(e, c);
  e << YAML::EndMap;
  const std::string text = e.c_str();
  std::ostringstream os;
  os << std::hex << fnv1a(text.data(), text.size());
  return os.str();
}

}  // namespace featimit
