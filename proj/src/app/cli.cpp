#include <CLI11.hpp>

#include "featimit/commands.hpp"
#include "featimit/error.hpp"

namespace featimit {

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> threads;
  std::optional<std::string> scales;
  std::optional<std::string> levels;
  std::optional<int> k;
  std::optional<int> epochs;
  std::optional<std::string> data_root;
  std::optional<std::string> category;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "YAML run configuration")->required();
  cmd->add_option("--seed", f.seed, "global seed");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--threads", f.threads, "worker threads");
  cmd->add_option("--scales", f.scales, "pyramid scales, e.g. 128,256,384");
  cmd->add_option("--levels", f.levels, "student levels, e.g. 2,3,4");
  cmd->add_option("--k", f.k, "blocks kept after the weight search (0 keeps all)");
  cmd->add_option("--epochs", f.epochs, "training epochs");
  cmd->add_option("--data-root", f.data_root, "dataset root");
  cmd->add_option("--category", f.category, "dataset category");
}

RunConfig resolve(const CommonFlags& f) {
  RunConfig c = load_config(f.config);
  if (f.seed) c.seed = c.train.seed = *f.seed;
  if (f.out) c.output_dir = *f.out;
  if (f.threads) c.threads = *f.threads;
  if (f.scales) c.scales = parse_int_list(*f.scales);
  if (f.levels) c.levels = parse_int_list(*f.levels);
  if (f.k) c.k = *f.k;
  if (f.epochs) c.train.epochs = *f.epochs;
  if (f.data_root) c.data_root = *f.data_root;
  if (f.category) c.category = *f.category;
  c.validate();
  return c;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-scale teacher-student anomaly localization", "featimit"};
  app.require_subcommand(1);

  CommonFlags train_f, score_f, search_f, eval_f;
  auto* train = app.add_subcommand("train", "train one student bank per pyramid scale");
  add_common(train, train_f);

  auto* score = app.add_subcommand("score", "write score maps and heatmaps");
  add_common(score, score_f);
  ScoreOptions score_o;
  std::string score_ckpt, score_weights;
  std::vector<std::string> score_inputs;
  score->add_option("--checkpoints", score_ckpt, "checkpoint directory");
  score->add_option("--weights", score_weights, "weight file from 'search'");
  score->add_flag("--uniform", score_o.uniform, "ignore weight files and average all blocks");
  score->add_flag("--overlay", score_o.overlay, "also write heatmap overlays");
  score->add_flag("--force", score_o.force, "accept artifacts from a different config");
  score->add_option("inputs", score_inputs, "images to score (default: test split)");

  auto* search = app.add_subcommand("search", "learn per-block fusion weights on the validation split");
  add_common(search, search_f);
  SearchOptions search_o;
  std::string search_ckpt;
  search->add_option("--checkpoints", search_ckpt, "checkpoint directory");
  search->add_flag("--force", search_o.force, "accept checkpoints from a different config");

  auto* eval = app.add_subcommand("eval", "pixel AUROC and AUPRO on the test split");
  add_common(eval, eval_f);
  EvalOptions eval_o;
  std::string eval_ckpt, eval_weights, eval_scores;
  eval->add_option("--checkpoints", eval_ckpt, "checkpoint directory");
  eval->add_option("--weights", eval_weights, "weight file from 'search'");
  eval->add_option("--scores", eval_scores, "evaluate exported score maps from this directory");
  eval->add_flag("--uniform", eval_o.uniform, "ignore weight files and average all blocks");
  eval->add_flag("--force", eval_o.force, "accept artifacts from a different config");

  auto* fixture = app.add_subcommand("fixture", "generate a synthetic dataset");
  std::string fixture_out;
  FixtureOptions fixture_o;
  fixture->add_option("--out", fixture_out, "dataset root")->required();
  fixture->add_option("--category", fixture_o.category, "category name");
  fixture->add_option("--n-normal", fixture_o.n_normal, "normal training images");
  fixture->add_option("--n-anomalous", fixture_o.n_anomalous, "defect test images");
  fixture->add_option("--n-test-good", fixture_o.n_test_good, "normal test images");
  fixture->add_option("--size", fixture_o.image_size, "image side in pixels");
  fixture->add_option("--seed", fixture_o.seed, "generator seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 1;
  }

  try {
    if (*train) return cmd_train(resolve(train_f), out);
    if (*score) {
      if (!score_ckpt.empty()) score_o.checkpoints = score_ckpt;
      if (!score_weights.empty()) score_o.weights = score_weights;
      score_o.inputs.assign(score_inputs.begin(), score_inputs.end());
      return cmd_score(resolve(score_f), score_o, out);
    }
    if (*search) {
      if (!search_ckpt.empty()) search_o.checkpoints = search_ckpt;
      return cmd_search(resolve(search_f), search_o, out);
    }
    if (*eval) {
      if (!eval_ckpt.empty()) eval_o.checkpoints = eval_ckpt;
      if (!eval_weights.empty()) eval_o.weights = eval_weights;
      if (!eval_scores.empty()) eval_o.scores = eval_scores;
      return cmd_eval(resolve(eval_f), eval_o, out);
    }
    if (*fixture) return cmd_fixture(fixture_out, fixture_o, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace featimit
