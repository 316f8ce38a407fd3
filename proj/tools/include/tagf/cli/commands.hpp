// SPDX-License-Identifier: Apache-2.0
//
// Subcommand implementations behind the `tagf` executable. Each command
// writes its artifacts plus a resolved `config.json` snapshot into its output
// directory, reports to `log`, and signals failure by throwing a tagf::Error
// (mapped to an exit code by exit_code_for).
#pragma once

#include <cstddef>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "tagf/cli/experiment.hpp"
#include "tagf/gradcheck.hpp"
#include "tagf/objectives.hpp"
#include "tagf/training.hpp"

namespace tagf::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitData = 3,
  kExitNumeric = 4,
  kExitVerification = 5,
};

/// Raised when a verification command (gradcheck) completes but fails.
class VerificationError : public Error {
 public:
  using Error::Error;
};

int exit_code_for(const std::exception& e);

struct GenerateResult {
  std::filesystem::path dir;
  std::size_t episodes = 0;
  std::uint64_t checksum = 0;
};
GenerateResult cmd_generate(const ExperimentConfig& cfg,
                            const std::filesystem::path& out_dir,
                            std::ostream& log);

/// Splits a loaded dataset: the last `val_episodes` episodes validate.
struct Split {
  std::vector<synth::Episode> train;
  std::vector<synth::Episode> val;
};
Split split_dataset(std::vector<synth::Episode> episodes, std::size_t val_episodes);

struct TrainRunResult {
  std::filesystem::path dir;
  train::TrainHistory history;
};
/// Writes checkpoint.bin (best epoch), history.csv and config.json.
TrainRunResult cmd_train(const ExperimentConfig& cfg,
                         const std::filesystem::path& data_dir,
                         const std::filesystem::path& out_dir, std::ostream& log);

struct EvalResult {
  objectives::MetricsReport report;
  std::size_t prediction_rows = 0;
};
/// Writes metrics.csv and predictions.csv (one row per frame).
EvalResult cmd_eval(const std::filesystem::path& checkpoint,
                    const std::filesystem::path& data_dir,
                    const std::filesystem::path& out_dir, std::ostream& log);

/// Random unit-scale episode for gradient checks: N(0, 1) features and
/// U(-1, 1) targets, every frame valid.
synth::Episode gradcheck_episode(const fusion::ModelConfig& model,
                                 std::size_t length, std::uint64_t seed);

/// CCC loss of the full model on `ep`, as a finite_diff_check objective.
Objective ccc_objective(const fusion::ModelConfig& model, const synth::Episode& ep);

struct GradcheckResult {
  bool passed = false;
  double max_rel_error = 0.0;
  std::vector<GradCheckReport> reports;  // one per seed
  std::map<std::string, double> group_worst;
};
/// Prints the worst relative error per parameter group. Does not throw on a
/// failed check; the caller decides (the CLI exits with kExitVerification).
GradcheckResult cmd_gradcheck(const ExperimentConfig& cfg, std::ostream& log);

struct BenchmarkCell {
  fusion::FusionStrategy strategy = fusion::FusionStrategy::Tagf;
  double level = 0.0;
  std::uint64_t seed = 0;
  /// FNV-1a over the encoded episodes this cell trained and validated on.
  std::uint64_t dataset_checksum = 0;
  bool ok = false;
  objectives::MetricsReport report;
  std::size_t epochs = 0;
  std::string error;
};

struct SeedComparison {
  std::uint64_t seed = 0;
  std::optional<double> tagf;
  std::optional<double> uniform;
};

struct BenchmarkResult {
  std::vector<BenchmarkCell> cells;
  /// TAGF vs uniform_average at the highest level, per seed.
  std::vector<SeedComparison> comparison;
  std::string table;
};

/// Trains every strategy at every level for every seed on shared datasets
/// (one per level and seed) and writes robustness.csv (seed means),
/// robustness_seeds.csv, robustness.txt and config.json. Failed cells are
/// recorded and the sweep continues.
BenchmarkResult cmd_benchmark(const ExperimentConfig& cfg,
                              const std::filesystem::path& out_dir,
                              std::ostream& log);

}  // namespace tagf::cli
