#include "featimit/commands.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <exception>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "featimit/error.hpp"
#include "featimit/npy.hpp"

namespace featimit {

namespace fs = std::filesystem;

namespace {

// Runs f(i) for i in [0, n) on up to `threads` workers. Results must be
// written to per-index slots so the outcome does not depend on scheduling.
template <class F>
void parallel_for(std::size_t n, int threads, F&& f) {
  const std::size_t workers = std::min<std::size_t>(std::max(threads, 1), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < workers; ++t)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          f(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::io, "cannot create directory " + dir.string() + ": " + ec.message());
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
  return out;
}

void echo_config(const RunConfig& config, const std::string& command) {
  ensure_dir(config.output_dir);
  open_out(config.output_dir / ("config." + command + ".yaml")) << to_yaml(config);
}

TeacherNetwork prepare_teacher(const RunConfig& config) {
  config.validate();
  TeacherNetwork teacher = load_teacher(parse_architecture(config.architecture), config.weights);
  config.validate_against(teacher);
  return teacher;
}

DatasetIndex prepare_index(const RunConfig& config) {
  if (config.data_root.empty()) fail(ErrorKind::config, "data.root is not set");
  if (config.category.empty()) fail(ErrorKind::config, "data.category is not set");
  return index_dataset(config.data_root, config.category);
}

ValidationSplit split_of(const RunConfig& config, const DatasetIndex& index) {
  if (config.val_coverage == 0.0) {
    ValidationSplit s;
    s.val.root = s.test.root = index.root;
    s.val.category = s.test.category = index.category;
    s.test.samples = index.of(Split::test);
    return s;
  }
  return build_validation_split(index, config.val_coverage, config.val_fraction, config.seed);
}

std::vector<ScaleBank> load_banks(const RunConfig& config, const TeacherNetwork& teacher,
                                  const std::optional<fs::path>& dir_override, bool force, std::ostream& log) {
  const fs::path dir = dir_override ? *dir_override : checkpoint_dir(config);
  const std::string fp = config_fingerprint(config);
  std::vector<ScaleBank> banks;
  for (int scale : config.scales) {
    const fs::path path = dir / ("bank_" + std::to_string(scale) + ".fimb");
    if (!fs::exists(path))
      fail(ErrorKind::checkpoint, "missing checkpoint " + path.string() + " (run 'featimit train' first)");
    std::map<std::string, std::string> meta;
    ScaleBank bank = load_bank(path, teacher, &meta);
    const std::string found = meta.count("config_fingerprint") ? meta["config_fingerprint"] : "-";
    if (found != fp) {
      if (!force)
        fail(ErrorKind::checkpoint, path.string() + " was trained with config " + found + ", current config is " + fp +
                                        " (pass --force to use it anyway)");
      log << "warning: " << path.filename().string() << " has config " << found << ", current is " << fp << "\n";
    }
    if (bank.levels() != config.levels)
      fail(ErrorKind::checkpoint, path.string() + " does not hold the configured levels");
    banks.push_back(std::move(bank));
  }
  return banks;
}

// Loads a weight file and prunes `banks` to its kept blocks. Returns the
// renormalized weights of the kept blocks.
std::optional<WeightVector> resolve_weights(const RunConfig& config, const std::optional<fs::path>& explicit_path,
                                            bool uniform, bool force, std::vector<ScaleBank>& banks,
                                            std::ostream& log) {
  if (uniform) return std::nullopt;
  fs::path path;
  if (explicit_path) {
    path = *explicit_path;
  } else {
    path = config.output_dir / "weights.txt";
    if (!fs::exists(path)) return std::nullopt;
  }
  const WeightFile wf = read_weight_file(path);
  const std::string fp = config_fingerprint(config);
  if (wf.config_fingerprint != fp) {
    if (!force)
      fail(ErrorKind::checkpoint, path.string() + " was searched under config " + wf.config_fingerprint +
                                      ", current config is " + fp + " (pass --force to use it anyway)");
    log << "warning: " << path.string() << " has config " << wf.config_fingerprint << "\n";
  }
  std::vector<BlockId> expected;
  for (const ScaleBank& b : banks)
    for (int l : b.levels()) expected.push_back({b.scale(), l});
  if (wf.logits.block_ids != expected)
    fail(ErrorKind::checkpoint, path.string() + " lists different blocks than the loaded checkpoints");
  const WeightVector all = softmax_weights(wf.logits);
  WeightVector kept;
  double sum = 0.0;
  for (std::size_t i = 0; i < all.values.size(); ++i)
    if (wf.kept[i]) {
      kept.block_ids.push_back(all.block_ids[i]);
      kept.values.push_back(all.values[i]);
      sum += all.values[i];
    }
  if (kept.values.empty()) fail(ErrorKind::config, path.string() + " keeps no blocks");
  if (kept.values.size() != all.values.size())
    for (double& v : kept.values) v /= sum;
  apply_pruning(banks, kept.block_ids);
  log << "using weights " << path.string() << " (" << kept.values.size() << " of " << all.values.size()
      << " blocks kept)\n";
  return kept;
}

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

// Unique output keys for explicitly listed input files.
std::vector<std::string> keys_for(const std::vector<fs::path>& inputs) {
  std::vector<std::string> keys;
  std::map<std::string, int> seen;
  for (const auto& p : inputs) {
    std::string k = p.stem().string();
    if (int n = seen[k]++; n > 0) k += "_" + std::to_string(n);
    keys.push_back(k);
  }
  return keys;
}

void save_overlay(const fs::path& path, const Tensor& image, const ScoreMap& map) {
  const Tensor resized = resize_bilinear(image, map.height, map.width);
  cv::Mat heat(map.height, map.width, CV_8UC1);
  for (int y = 0; y < map.height; ++y)
    for (int x = 0; x < map.width; ++x)
      heat.at<std::uint8_t>(y, x) = cv::saturate_cast<std::uint8_t>(std::clamp(map.at(y, x), 0.0, 1.0) * 255.0);
  cv::Mat colored;
  cv::applyColorMap(heat, colored, cv::COLORMAP_VIRIDIS);
  cv::Mat out(map.height, map.width, CV_8UC3);
  const std::size_t plane = resized.plane_size();
  for (int y = 0; y < map.height; ++y)
    for (int x = 0; x < map.width; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * map.width + x;
      const auto c = colored.at<cv::Vec3b>(y, x);
      cv::Vec3b o;
      for (int ch = 0; ch < 3; ++ch) {
        // OpenCV stores BGR; the tensor is RGB.
        const double rgb = std::clamp(resized.data()[(2 - ch) * plane + p], 0.0, 1.0) * 255.0;
        o[ch] = cv::saturate_cast<std::uint8_t>(0.5 * rgb + 0.5 * c[ch]);
      }
      out.at<cv::Vec3b>(y, x) = o;
    }
  if (!cv::imwrite(path.string(), out)) fail(ErrorKind::io, "cannot write " + path.string());
}

struct EvalItem {
  ScoreMap map;
  Mask mask;
};

}  // namespace

fs::path checkpoint_dir(const RunConfig& config) { return config.output_dir / "checkpoints"; }

fs::path bank_path(const RunConfig& config, int scale) {
  return checkpoint_dir(config) / ("bank_" + std::to_string(scale) + ".fimb");
}

void save_heatmap(const fs::path& path, const ScoreMap& map) {
  cv::Mat gray(map.height, map.width, CV_8UC1);
  for (int y = 0; y < map.height; ++y)
    for (int x = 0; x < map.width; ++x)
      gray.at<std::uint8_t>(y, x) = cv::saturate_cast<std::uint8_t>(std::clamp(map.at(y, x), 0.0, 1.0) * 255.0);
  cv::Mat colored;
  cv::applyColorMap(gray, colored, cv::COLORMAP_VIRIDIS);
  if (!cv::imwrite(path.string(), colored)) fail(ErrorKind::io, "cannot write " + path.string());
}

int cmd_train(const RunConfig& config, std::ostream& log) {
  const TeacherNetwork teacher = prepare_teacher(config);
  const DatasetIndex index = prepare_index(config);
  const auto records = index.of(Split::train);
  std::vector<Tensor> images;
  for (const auto& r : records) images.push_back(load_sample(r).image);
  log << "train: " << images.size() << " normal images, category " << config.category << ", scales";
  for (int s : config.scales) log << " " << s;
  log << ", levels";
  for (int l : config.levels) log << " " << l;
  log << "\n";

  echo_config(config, "train");
  ensure_dir(checkpoint_dir(config));
  const std::string fp = config_fingerprint(config);
  std::ofstream csv = open_out(config.output_dir / "train_log.csv");
  csv.precision(17);
  csv << "scale,epoch";
  for (int l : config.levels) csv << ",loss_l" << l;
  csv << ",total\n";

  for (int scale : config.scales) {
    ScaleBank bank = init_student_bank(teacher, scale, config.seed, config.levels);
    TrainCallbacks cb;
    cb.on_epoch = [&](const TrainState& s) {
      csv << scale << "," << s.epoch;
      for (int l : config.levels) csv << "," << s.level_loss.at(l);
      csv << "," << s.total_loss << "\n";
    };
    const TrainState state = fit(bank, teacher, images, config.train, cb);
    save_bank(bank, bank_path(config, scale),
              {{"config_fingerprint", fp}, {"epochs", std::to_string(config.train.epochs)}});
    log << "  scale " << scale << ": loss " << fixed(state.initial_loss, 4) << " -> " << fixed(state.final_loss, 4)
        << " (" << fixed(state.elapsed_seconds, 1) << " s)\n";
  }
  csv.flush();
  if (!csv) fail(ErrorKind::io, "write failed: train_log.csv");
  log << "checkpoints written to " << checkpoint_dir(config).string() << "\n";
  return 0;
}

int cmd_score(const RunConfig& config, const ScoreOptions& options, std::ostream& log) {
  const TeacherNetwork teacher = prepare_teacher(config);
  std::vector<ScaleBank> banks = load_banks(config, teacher, options.checkpoints, options.force, log);
  const std::optional<WeightVector> weights =
      resolve_weights(config, options.weights, options.uniform, options.force, banks, log);

  std::vector<fs::path> inputs = options.inputs;
  std::vector<std::string> keys;
  if (inputs.empty()) {
    const auto test = split_of(config, prepare_index(config)).test.samples;
    for (const auto& r : test) {
      inputs.push_back(r.image_path);
      keys.push_back(r.key());
    }
  } else {
    keys = keys_for(inputs);
  }
  echo_config(config, "score");
  const fs::path scores_dir = config.output_dir / "scores";
  const fs::path heat_dir = config.output_dir / "heatmaps";
  const fs::path overlay_dir = config.output_dir / "overlays";
  ensure_dir(scores_dir);
  ensure_dir(heat_dir);
  if (options.overlay) ensure_dir(overlay_dir);

  std::vector<std::string> errors(inputs.size());
  parallel_for(inputs.size(), config.threads, [&](std::size_t i) {
    try {
      const Tensor image = load_image(inputs[i]);
      const ScoreMap map = multi_scale_score(banks, teacher, image, config.reference(),
                                             weights ? &*weights : nullptr, config.train.epsilon, config.fusion);
      save_npy(scores_dir / (keys[i] + ".npy"), map);
      save_heatmap(heat_dir / (keys[i] + ".png"), map);
      if (options.overlay) save_overlay(overlay_dir / (keys[i] + ".png"), image, map);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::numerical) throw;
      errors[i] = e.what();
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });

  std::ofstream manifest = open_out(scores_dir / "manifest.csv");
  manifest << "# featimit-scores 1\n# config " << config_fingerprint(config) << "\nkey,source\n";
  std::size_t failed = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (!errors[i].empty()) {
      ++failed;
      continue;
    }
    manifest << keys[i] << "," << inputs[i].string() << "\n";
  }
  log << "score: " << inputs.size() - failed << " of " << inputs.size() << " images scored\n";
  if (failed) {
    log << "failures:\n";
    for (std::size_t i = 0; i < inputs.size(); ++i)
      if (!errors[i].empty()) log << "  " << inputs[i].string() << ": " << errors[i] << "\n";
    return 2;
  }
  return 0;
}

int cmd_search(const RunConfig& config, const SearchOptions& options, std::ostream& log) {
  const TeacherNetwork teacher = prepare_teacher(config);
  const std::vector<ScaleBank> banks = load_banks(config, teacher, options.checkpoints, options.force, log);
  if (config.val_coverage == 0.0)
    fail(ErrorKind::config, "validation.coverage is 0, so there is no validation split to search on");
  const ValidationSplit split = split_of(config, prepare_index(config));
  const auto& val = split.val.samples;
  if (val.empty()) fail(ErrorKind::contract, "validation split is empty");

  std::vector<Tensor> images(val.size());
  std::vector<Mask> masks(val.size());
  for (std::size_t i = 0; i < val.size(); ++i) {
    images[i] = load_sample(val[i]).image;
    masks[i] = load_mask_or_empty(val[i], images[i].h(), images[i].w());
  }
  const std::uint64_t checksum_before = [&] {
    std::uint64_t h = teacher.checksum();
    for (const auto& b : banks) h ^= b.checksum();
    return h;
  }();

  ValidationCache cache;
  {
    std::vector<std::vector<ScoreMap>> per_image(val.size());
    parallel_for(val.size(), config.threads, [&](std::size_t i) {
      const ValidationCache one =
          build_validation_cache(banks, teacher, std::span(&images[i], 1), std::span(&masks[i], 1),
                                 config.reference(), config.train.epsilon);
      per_image[i] = one.maps.front();
    });
    for (const auto& m : per_image.front()) cache.block_ids.push_back(*m.block);
    cache.maps = std::move(per_image);
    for (const Mask& m : masks) cache.masks.push_back(resize_mask(m, config.reference_size, config.reference_size));
  }
  const std::size_t n_blocks = cache.block_ids.size();
  const int k = config.k == 0 ? static_cast<int>(n_blocks) : config.k;
  if (k > static_cast<int>(n_blocks))
    fail(ErrorKind::config, "search.k = " + std::to_string(k) + " exceeds the " + std::to_string(n_blocks) +
                                " trained blocks");

  const WeightLogits result =
      search_weights(cache, uniform_logits(cache.block_ids, config.search.learning_rate), config.search);
  const PruneResult pruned = prune_top_k(result, k);

  std::uint64_t checksum_after = teacher.checksum();
  for (const auto& b : banks) checksum_after ^= b.checksum();
  if (checksum_after != checksum_before)
    fail(ErrorKind::numerical, "network parameters changed during the weight search");

  echo_config(config, "search");
  const std::string fp = config_fingerprint(config);
  write_weight_file(config.output_dir / "weights.txt", result, pruned.kept_mask, fp);

  const double initial = result.loss_trace.front();
  const double final_loss = result.loss_trace.back();
  const bool descent = final_loss <= initial;
  std::size_t defects = 0;
  for (const auto& r : val) defects += r.is_good() ? 0 : 1;
  const WeightVector w = softmax_weights(result);

  std::ostringstream report;
  report << "featimit weight search\n";
  report << "config " << fp << "\n";
  report << "validation images " << val.size() << " (" << defects << " defect, " << val.size() - defects
         << " good)\n";
  report << "iterations " << config.search.iterations << "\n";
  report << "learning_rate " << config.search.learning_rate << "\n";
  report << "initial_loss " << fixed(initial, 6) << "\n";
  report << "final_loss " << fixed(final_loss, 6) << "\n";
  report << "descent " << (descent ? "ok" : "violated") << "\n";
  report << "kept " << k << " of " << n_blocks << "\n";
  report << "block weight kept\n";
  for (std::size_t i = 0; i < n_blocks; ++i)
    report << cache.block_ids[i].str() << " " << fixed(w.values[i], 6) << " " << (pruned.kept_mask[i] ? "yes" : "no")
           << "\n";
  open_out(config.output_dir / "search_report.txt") << report.str();
  log << report.str();
  if (!descent) fail(ErrorKind::numerical, "weight search increased the validation loss");
  return 0;
}

void write_report(const fs::path& dir, const std::vector<CategoryResult>& rows, const std::string& fingerprint,
                  const AuproOptions& options) {
  ensure_dir(dir);
  double mean_auroc = 0.0, mean_aupro = 0.0;
  std::size_t images = 0;
  for (const auto& r : rows) {
    mean_auroc += r.result.auroc / static_cast<double>(rows.size());
    mean_aupro += r.result.aupro / static_cast<double>(rows.size());
    images += r.images;
  }
  std::ofstream csv = open_out(dir / "report.csv");
  csv.precision(17);
  csv << "category,images,auroc,aupro,config\n";
  for (const auto& r : rows)
    csv << r.category << "," << r.images << "," << r.result.auroc << "," << r.result.aupro << "," << fingerprint
        << "\n";
  csv << "mean," << images << "," << mean_auroc << "," << mean_aupro << "," << fingerprint << "\n";

  std::ofstream txt = open_out(dir / "report.txt");
  txt << "featimit evaluation report\n";
  txt << "config " << fingerprint << "\n";
  txt << "pixel AUROC, AUPRO integrated to FPR " << fixed(options.fpr_limit, 2) << "\n\n";
  std::size_t width = 8;
  for (const auto& r : rows) width = std::max(width, r.category.size());
  txt << std::left << std::setw(static_cast<int>(width) + 2) << "category" << std::right << std::setw(8) << "images"
      << std::setw(8) << "AUROC" << std::setw(8) << "AUPRO" << "\n";
  auto row = [&](const std::string& name, std::size_t n, double a, double p) {
    txt << std::left << std::setw(static_cast<int>(width) + 2) << name << std::right << std::setw(8) << n
        << std::setw(8) << fixed(a, 3) << std::setw(8) << fixed(p, 3) << "\n";
  };
  for (const auto& r : rows) row(r.category, r.images, r.result.auroc, r.result.aupro);
  row("mean", images, mean_auroc, mean_aupro);

  std::ofstream curves = open_out(dir / "curves.csv");
  curves.precision(17);
  curves << "category,curve,fpr,value\n";
  for (const auto& r : rows) {
    for (const auto& p : r.result.roc) curves << r.category << ",roc," << p.fpr << "," << p.value << "\n";
    for (const auto& p : r.result.pro) curves << r.category << ",pro," << p.fpr << "," << p.value << "\n";
  }
}

int cmd_eval(const RunConfig& config, const EvalOptions& options, std::ostream& log) {
  config.validate();
  const ValidationSplit split = split_of(config, prepare_index(config));
  const auto& test = split.test.samples;
  if (test.empty()) fail(ErrorKind::contract, "test split is empty");
  const std::string fp = config_fingerprint(config);
  std::vector<EvalItem> items(test.size());

  if (options.scores) {
    const fs::path manifest_path = *options.scores / "manifest.csv";
    std::ifstream manifest(manifest_path);
    if (!manifest) fail(ErrorKind::io, "cannot read " + manifest_path.string());
    std::string line, found_fp = "-";
    std::set<std::string> keys;
    while (std::getline(manifest, line)) {
      if (line.rfind("# config ", 0) == 0) found_fp = line.substr(9);
      if (line.empty() || line[0] == '#' || line == "key,source") continue;
      keys.insert(line.substr(0, line.find(',')));
    }
    if (found_fp != fp) {
      if (!options.force)
        fail(ErrorKind::checkpoint, "score maps in " + options.scores->string() + " come from config " + found_fp +
                                        ", current config is " + fp + " (pass --force to evaluate anyway)");
      log << "warning: score maps have config " << found_fp << ", current is " << fp << "\n";
    }
    std::vector<std::string> missing;
    for (const auto& r : test)
      if (!keys.count(r.key())) missing.push_back(r.key());
    if (keys.size() != test.size() || !missing.empty()) {
      std::string msg = std::to_string(keys.size()) + " score maps but " + std::to_string(test.size()) +
                        " test images with ground truth";
      if (!missing.empty()) msg += "; first missing: " + missing.front();
      fail(ErrorKind::integrity, msg);
    }
    parallel_for(test.size(), config.threads, [&](std::size_t i) {
      items[i].map = load_npy(*options.scores / (test[i].key() + ".npy"));
      const Tensor image = load_image(test[i].image_path);
      items[i].mask = resize_mask(load_mask_or_empty(test[i], image.h(), image.w()), items[i].map.height,
                                  items[i].map.width);
    });
  } else {
    const TeacherNetwork teacher = prepare_teacher(config);
    std::vector<ScaleBank> banks = load_banks(config, teacher, options.checkpoints, options.force, log);
    const std::optional<WeightVector> weights =
        resolve_weights(config, options.weights, options.uniform, options.force, banks, log);
    parallel_for(test.size(), config.threads, [&](std::size_t i) {
      const Sample s = load_sample(test[i]);
      items[i].map = multi_scale_score(banks, teacher, s.image, config.reference(), weights ? &*weights : nullptr,
                                       config.train.epsilon, config.fusion);
      items[i].mask = resize_mask(s.mask ? *s.mask : load_mask_or_empty(test[i], s.image.h(), s.image.w()),
                                  items[i].map.height, items[i].map.width);
    });
  }

  std::vector<ScoreMap> maps;
  std::vector<Mask> masks;
  for (auto& it : items) {
    maps.push_back(std::move(it.map));
    masks.push_back(std::move(it.mask));
  }
  const AuproOptions opts;
  CategoryResult row{config.category, maps.size(), evaluate(maps, masks, opts)};
  echo_config(config, "eval");
  write_report(config.output_dir, {row}, fp, opts);
  log << "eval: " << config.category << " images " << row.images << " AUROC " << fixed(row.result.auroc, 3)
      << " AUPRO " << fixed(row.result.aupro, 3) << "\n";
  return 0;
}

int cmd_fixture(const fs::path& root, const FixtureOptions& options, std::ostream& log) {
  const DatasetIndex index = generate_synthetic_fixture(root, options);
  const SplitCounts c = index.counts();
  log << "fixture: " << (root / options.category).string() << " train " << c.train << ", test " << c.test << "\n";
  return 0;
}

}  // namespace featimit
