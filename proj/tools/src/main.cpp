// SPDX-License-Identifier: Apache-2.0
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "tagf/cli/commands.hpp"
#include "tagf/error.hpp"
#include "tagf/tensor.hpp"

namespace {

using namespace tagf;
using namespace tagf::cli;

struct Options {
  std::string config;
  std::string out;
  std::string data;
  std::string checkpoint;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  std::string inject_fault;
};

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config, "Experiment config file (JSON)");
  cmd->add_option("--out", o.out, "Output directory");
  cmd->add_option("--seed", o.seed, "Override generator, model and training seeds");
  cmd->add_option("--workers", o.workers, "Worker threads")->check(CLI::PositiveNumber);
}

ExperimentConfig resolve(const Options& o) {
  ExperimentConfig cfg = o.config.empty() ? ExperimentConfig{} : load_experiment(o.config);
  if (o.seed) {
    cfg.generator.seed = *o.seed;
    cfg.model.seed = *o.seed;
    cfg.training.seed = *o.seed;
  }
  if (o.workers) {
    cfg.workers = *o.workers;
    cfg.training.workers = *o.workers;
  }
  cfg.validate();
  return cfg;
}

std::string pick(const std::string& flag, const std::string& fallback) {
  return flag.empty() ? fallback : flag;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Time-aware gated fusion for valence/arousal regression"};
  app.require_subcommand(1);
  Options o;

  auto* gen = app.add_subcommand("generate", "Generate a synthetic dataset");
  add_common(gen, o);

  auto* trn = app.add_subcommand("train", "Train a model on a generated dataset");
  add_common(trn, o);
  trn->add_option("--data", o.data, "Dataset directory");

  auto* evl = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  add_common(evl, o);
  evl->add_option("--data", o.data, "Dataset directory");
  evl->add_option("--checkpoint", o.checkpoint, "Checkpoint file");

  auto* gck = app.add_subcommand("gradcheck", "Finite-difference gradient check");
  add_common(gck, o);
  gck->add_option("--inject-fault", o.inject_fault)->group("");

  auto* bench = app.add_subcommand("benchmark", "Robustness sweep over strategies");
  add_common(bench, o);

  auto* dflt = app.add_subcommand("print-default-config", "Print the default config");
  dflt->add_option("--out", o.out, "Write to this file instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (dflt->parsed()) {
      ExperimentConfig cfg;
      if (o.out.empty()) {
        std::cout << to_json(cfg).dump(2) << '\n';
      } else {
        save_experiment(o.out, cfg);
      }
      return kExitOk;
    }
    const ExperimentConfig cfg = resolve(o);
    if (gen->parsed()) {
      cmd_generate(cfg, pick(o.out, cfg.dataset_dir), std::cout);
    } else if (trn->parsed()) {
      cmd_train(cfg, pick(o.data, cfg.dataset_dir), pick(o.out, cfg.output_dir), std::cout);
    } else if (evl->parsed()) {
      const std::string out = pick(o.out, cfg.output_dir);
      const std::string ckpt =
          pick(o.checkpoint, (std::filesystem::path(cfg.output_dir) / "checkpoint.bin").string());
      cmd_eval(ckpt, pick(o.data, cfg.dataset_dir), out, std::cout);
    } else if (gck->parsed()) {
      if (!o.inject_fault.empty()) {
        const auto kind = op_from_name(o.inject_fault);
        if (!kind) throw ConfigError("unknown op '" + o.inject_fault + "'");
        fault::corrupt_backward(*kind);
      }
      if (!cmd_gradcheck(cfg, std::cout).passed) return kExitVerification;
    } else if (bench->parsed()) {
      cmd_benchmark(cfg, pick(o.out, cfg.output_dir), std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return kExitOk;
}
