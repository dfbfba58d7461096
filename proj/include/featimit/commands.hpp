#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "featimit/config.hpp"
#include "featimit/metrics.hpp"

namespace featimit {

// Artifact locations below RunConfig::output_dir.
std::filesystem::path checkpoint_dir(const RunConfig& config);
std::filesystem::path bank_path(const RunConfig& config, int scale);

struct ScoreOptions {
  std::optional<std::filesystem::path> checkpoints;  // default <out>/checkpoints
  std::optional<std::filesystem::path> weights;      // default <out>/weights.txt when present
  bool uniform = false;                              // ignore any weight file
  bool overlay = false;
  bool force = false;                                // accept fingerprint mismatches
  std::vector<std::filesystem::path> inputs;         // empty: the dataset's test split
};

struct EvalOptions {
  std::optional<std::filesystem::path> checkpoints;
  std::optional<std::filesystem::path> weights;
  std::optional<std::filesystem::path> scores;  // evaluate exported maps instead of recomputing
  bool uniform = false;
  bool force = false;
};

struct SearchOptions {
  std::optional<std::filesystem::path> checkpoints;
  bool force = false;
};

struct CategoryResult {
  std::string category;
  std::size_t images = 0;
  EvalResult result;
};

// Each command writes its artifacts and returns the process exit code.
// Failures are raised as featimit::Error (see exit_code_for).
int cmd_train(const RunConfig& config, std::ostream& log);
int cmd_score(const RunConfig& config, const ScoreOptions& options, std::ostream& log);
int cmd_search(const RunConfig& config, const SearchOptions& options, std::ostream& log);
int cmd_eval(const RunConfig& config, const EvalOptions& options, std::ostream& log);
int cmd_fixture(const std::filesystem::path& root, const FixtureOptions& options, std::ostream& log);

void write_report(const std::filesystem::path& dir, const std::vector<CategoryResult>& rows,
                  const std::string& fingerprint, const AuproOptions& options);

// Colorizes a score map with the viridis colormap over the fixed range [0, 1].
void save_heatmap(const std::filesystem::path& path, const ScoreMap& map);

// Full command line entry point; never throws.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace featimit
