// SPDX-License-Identifier: Apache-2.0
#include "tagf/cli/commands.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "tagf/checkpoint.hpp"
#include "tagf/dataset_io.hpp"
#include "tagf/error.hpp"
#include "tagf/rng.hpp"

namespace tagf::cli {

namespace fs = std::filesystem;

namespace {

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

std::string fixed6(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", x);
  return buf;
}

void check_dims(const fusion::ModelConfig& model, const synth::GenConfig& data,
                const std::string& what) {
  if (model.d_a != data.d_a || model.d_v != data.d_v) {
    std::ostringstream os;
    os << what << " expects d_a=" << model.d_a << ", d_v=" << model.d_v
       << " but the dataset has d_a=" << data.d_a << ", d_v=" << data.d_v;
    throw DataError(os.str());
  }
}

template <typename Fn>
void run_jobs(std::size_t n, std::size_t workers, Fn&& fn) {
  const std::size_t threads = std::min(std::max<std::size_t>(workers, 1), n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    });
  }
}

}  // namespace

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const VerificationError*>(&e)) return kExitVerification;
  if (dynamic_cast<const ConfigError*>(&e)) return kExitConfig;
  if (dynamic_cast<const DataError*>(&e)) return kExitData;
  if (dynamic_cast<const ShapeError*>(&e)) return kExitData;
  if (dynamic_cast<const AlignmentError*>(&e)) return kExitData;
  if (dynamic_cast<const NumericError*>(&e)) return kExitNumeric;
  return kExitFailure;
}

GenerateResult cmd_generate(const ExperimentConfig& cfg, const fs::path& out_dir,
                            std::ostream& log) {
  cfg.generator.validate();
  if (cfg.generator.near_degenerate()) {
    log << "warning: occlusion_rate " << cfg.generator.occlusion_rate
        << " leaves almost no visual frames (near-degenerate)\n";
  }
  const auto episodes = synth::generate_dataset(cfg.generator);
  GenerateResult result;
  result.dir = out_dir;
  result.episodes = episodes.size();
  result.checksum = synth::save_dataset(out_dir, cfg.generator, episodes);
  ExperimentConfig snapshot = cfg;
  snapshot.dataset_dir = out_dir.string();
  save_experiment(out_dir / "config.json", snapshot);
  log << "episodes: " << result.episodes << '\n'
      << "checksum: " << synth::checksum_hex(result.checksum) << '\n'
      << "dataset: " << out_dir.string() << '\n';
  return result;
}

Split split_dataset(std::vector<synth::Episode> episodes, std::size_t val_episodes) {
  if (val_episodes == 0 || val_episodes >= episodes.size()) {
    throw ConfigError("split.val_episodes=" + std::to_string(val_episodes) +
                      " must be in [1, " + std::to_string(episodes.size()) + ")");
  }
  Split s;
  const std::size_t n_train = episodes.size() - val_episodes;
  s.train.assign(std::make_move_iterator(episodes.begin()),
                 std::make_move_iterator(episodes.begin() + static_cast<long>(n_train)));
  s.val.assign(std::make_move_iterator(episodes.begin() + static_cast<long>(n_train)),
               std::make_move_iterator(episodes.end()));
  return s;
}

TrainRunResult cmd_train(const ExperimentConfig& cfg, const fs::path& data_dir,
                         const fs::path& out_dir, std::ostream& log) {
  cfg.model.validate();
  cfg.training.validate();
  if (!fs::exists(data_dir / "manifest.json")) {
    throw IoError("dataset not found: " + data_dir.string() +
                  " (run `tagf generate` first)");
  }
  auto loaded = synth::load_dataset(data_dir);
  check_dims(cfg.model, loaded.config, "model");
  auto split = split_dataset(std::move(loaded.episodes), cfg.val_episodes);
  ensure_dir(out_dir);

  log << "training " << fusion::to_string(cfg.model.strategy) << " on "
      << split.train.size() << " episodes, validating on " << split.val.size()
      << '\n';
  auto last = std::chrono::steady_clock::now();
  auto result = train::train(
      cfg.model, split.train, split.val, cfg.training,
      [&](const train::EpochRecord& r) {
        const auto now = std::chrono::steady_clock::now();
        const double secs = std::chrono::duration<double>(now - last).count();
        last = now;
        char buf[160];
        std::snprintf(buf, sizeof buf,
                      "epoch %3zu  loss %.4f  val V %.3f A %.3f avg %.4f  lr %.2e  %.2fs\n",
                      r.epoch, r.train_loss, r.val_valence_ccc, r.val_arousal_ccc,
                      r.val_avg_ccc, r.lr, secs);
        log << buf << std::flush;
      });

  save_checkpoint(out_dir / "checkpoint.bin", result.best);
  write_text(out_dir / "history.csv", train::history_csv(result.history));
  ExperimentConfig snapshot = cfg;
  snapshot.dataset_dir = data_dir.string();
  snapshot.output_dir = out_dir.string();
  save_experiment(out_dir / "config.json", snapshot);

  const auto& best = result.history.epochs.at(result.history.best_epoch);
  log << "best epoch " << result.history.best_epoch << " of "
      << result.history.epochs.size()
      << (result.history.stopped_early ? " (early stop)" : "") << '\n'
      << objectives::format_table(objectives::make_report(
             best.val_valence_ccc, best.val_arousal_ccc, 0))
      << "checkpoint: " << (out_dir / "checkpoint.bin").string() << '\n';
  return {out_dir, result.history};
}

EvalResult cmd_eval(const fs::path& checkpoint, const fs::path& data_dir,
                    const fs::path& out_dir, std::ostream& log) {
  const auto ckpt = load_checkpoint(checkpoint);
  if (!fs::exists(data_dir / "manifest.json")) {
    throw IoError("dataset not found: " + data_dir.string());
  }
  const auto loaded = synth::load_dataset(data_dir);
  check_dims(ckpt.model, loaded.config, "checkpoint");

  const auto preds = train::predict_episodes(ckpt.model, ckpt.params, loaded.episodes,
                                             ckpt.training.win_len,
                                             ckpt.training.workers);
  std::vector<VATrajectory> truths;
  std::vector<std::vector<std::uint8_t>> masks;
  for (const auto& ep : loaded.episodes) {
    truths.push_back(ep.truth);
    masks.push_back(ep.truth_mask);
  }
  EvalResult result;
  result.report = objectives::evaluate(preds, truths, masks);

  ensure_dir(out_dir);
  std::ostringstream rows;
  rows << "episode,frame,valence_pred,arousal_pred,valence_true,arousal_true,valid\n";
  for (std::size_t e = 0; e < loaded.episodes.size(); ++e) {
    const auto& ep = loaded.episodes[e];
    for (std::size_t l = 0; l < ep.length(); ++l) {
      rows << ep.meta.index << ',' << l << ',' << fixed6(preds[e].valence[l]) << ','
           << fixed6(preds[e].arousal[l]) << ',' << fixed6(ep.truth.valence[l]) << ','
           << fixed6(ep.truth.arousal[l]) << ',' << int(ep.truth_mask[l]) << '\n';
      ++result.prediction_rows;
    }
  }
  write_text(out_dir / "predictions.csv", rows.str());
  write_text(out_dir / "metrics.csv", objectives::csv_header() + "\n" +
                                          objectives::to_csv_row(result.report, "all") +
                                          "\n");
  log << objectives::format_table(result.report)
      << objectives::to_key_value(result.report);
  return result;
}

synth::Episode gradcheck_episode(const fusion::ModelConfig& model, std::size_t length,
                                 std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x67726164));
  synth::Episode ep;
  ep.audio = FeatureSequence(Modality::Audio, length, model.d_a);
  ep.visual = FeatureSequence(Modality::Visual, length, model.d_v);
  for (auto& v : ep.audio.values) v = rng.normal();
  for (auto& v : ep.visual.values) v = rng.normal();
  ep.truth = VATrajectory(length);
  for (auto& v : ep.truth.valence) v = rng.uniform(-1.0, 1.0);
  for (auto& v : ep.truth.arousal) v = rng.uniform(-1.0, 1.0);
  ep.truth_mask.assign(length, 1);
  ep.meta.seed = seed;
  return ep;
}

Objective ccc_objective(const fusion::ModelConfig& model, const synth::Episode& ep) {
  return [model, ep](Tape&, const BoundParameters& params) {
    const auto out = fusion::forward(params, model, ep.audio, ep.visual);
    return objectives::ccc_loss(out.fused.prediction, ep.truth, ep.truth_mask);
  };
}

GradcheckResult cmd_gradcheck(const ExperimentConfig& cfg, std::ostream& log) {
  const auto& gc = cfg.gradcheck;
  if (gc.model.d_model > 16 || gc.length > 8) {
    throw ConfigError("gradcheck requires d_model <= 16 and length <= 8");
  }
  GradcheckResult result;
  for (std::uint64_t seed : gc.seeds) {
    fusion::ModelConfig model = gc.model;
    model.seed = seed;
    const auto ep = gradcheck_episode(model, gc.length, seed);
    const auto params = fusion::init_parameters(model);
    auto report = finite_diff_check(ccc_objective(model, ep), params, gc.epsilon);
    char buf[200];
    std::snprintf(buf, sizeof buf, "seed %llu: %zu entries, max rel error %.3e (%s)\n",
                  static_cast<unsigned long long>(seed), report.entries_checked,
                  report.max_rel_error, report.worst_parameter.c_str());
    log << buf;
    for (const auto& [group, err] : group_worst(report)) {
      auto& worst = result.group_worst[group];
      worst = std::max(worst, err);
    }
    result.max_rel_error = std::max(result.max_rel_error, report.max_rel_error);
    result.reports.push_back(std::move(report));
  }
  log << "group                worst rel error\n";
  for (const auto& [group, err] : result.group_worst) {
    char buf[120];
    std::snprintf(buf, sizeof buf, "%-20s %.3e %s\n", group.c_str(), err,
                  err < gc.tolerance ? "ok" : "FAIL");
    log << buf;
  }
  result.passed = result.max_rel_error < gc.tolerance;
  char buf[120];
  std::snprintf(buf, sizeof buf, "%s: max rel error %.3e (tolerance %.1e, epsilon %.1e)\n",
                result.passed ? "PASS" : "FAIL", result.max_rel_error, gc.tolerance,
                gc.epsilon);
  log << buf;
  return result;
}

BenchmarkResult cmd_benchmark(const ExperimentConfig& cfg, const fs::path& out_dir,
                              std::ostream& log) {
  const auto& bc = cfg.benchmark;
  cfg.validate();
  ensure_dir(out_dir);

  // One dataset family per seed; every strategy sees the same episodes.
  std::vector<std::vector<std::vector<synth::Episode>>> datasets;  // [seed][level]
  for (std::uint64_t seed : bc.seeds) {
    synth::GenConfig gen = cfg.generator;
    gen.seed = seed;
    datasets.push_back(synth::corruption_sweep(gen, bc.axis, bc.levels));
  }
  auto dataset_checksum = [](const std::vector<synth::Episode>& episodes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& ep : episodes) h = fnv1a(synth::encode_episode(ep), h);
    return h;
  };

  std::vector<BenchmarkCell> cells;
  std::vector<std::pair<std::size_t, std::size_t>> cell_data;  // (seed idx, level idx)
  for (std::size_t li = 0; li < bc.levels.size(); ++li) {
    for (auto strategy : bc.strategies) {
      for (std::size_t si = 0; si < bc.seeds.size(); ++si) {
        BenchmarkCell c;
        c.strategy = strategy;
        c.level = bc.levels[li];
        c.seed = bc.seeds[si];
        c.dataset_checksum = dataset_checksum(datasets[si][li]);
        cells.push_back(c);
        cell_data.emplace_back(si, li);
      }
    }
  }

  std::mutex log_mutex;
  const auto t0 = std::chrono::steady_clock::now();
  run_jobs(cells.size(), cfg.workers, [&](std::size_t i) {
    auto& cell = cells[i];
    const auto [si, li] = cell_data[i];
    try {
      fusion::ModelConfig model = cfg.model;
      model.strategy = cell.strategy;
      model.seed = cell.seed;
      train::TrainConfig training = cfg.training;
      training.seed = cell.seed;
      training.workers = 1;
      const auto& episodes = datasets[si][li];
      const std::size_t n_train = episodes.size() - cfg.val_episodes;
      std::span<const synth::Episode> all(episodes);
      const auto result = train::train(model, all.first(n_train), all.subspan(n_train),
                                       training);
      cell.report = train::evaluate_model(model, result.best.params, all.subspan(n_train),
                                          training.win_len);
      cell.epochs = result.history.epochs.size();
      cell.ok = true;
    } catch (const std::exception& e) {
      cell.error = e.what();
    }
    std::lock_guard lock(log_mutex);
    char buf[200];
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (cell.ok) {
      std::snprintf(buf, sizeof buf,
                    "[%7.1fs] %-16s %s=%g seed=%llu  avg CCC %.4f (%zu epochs)\n", secs,
                    fusion::to_string(cell.strategy), synth::to_string(bc.axis), cell.level,
                    static_cast<unsigned long long>(cell.seed), cell.report.avg_ccc,
                    cell.epochs);
    } else {
      std::snprintf(buf, sizeof buf, "[%7.1fs] %-16s %s=%g seed=%llu  FAILED: %s\n", secs,
                    fusion::to_string(cell.strategy), synth::to_string(bc.axis), cell.level,
                    static_cast<unsigned long long>(cell.seed), cell.error.c_str());
    }
    log << buf << std::flush;
  });

  BenchmarkResult result;
  result.cells = cells;

  // Per-seed detail.
  std::ostringstream seeds_csv;
  seeds_csv << "strategy,axis,level,seed,dataset,valence_ccc,arousal_ccc,avg_ccc,epochs,"
               "status\n";
  for (const auto& c : cells) {
    seeds_csv << fusion::to_string(c.strategy) << ',' << synth::to_string(bc.axis) << ','
              << c.level << ',' << c.seed << ','
              << synth::checksum_hex(c.dataset_checksum) << ',';
    if (c.ok) {
      seeds_csv << fixed6(c.report.valence_ccc) << ',' << fixed6(c.report.arousal_ccc)
                << ',' << fixed6(c.report.avg_ccc) << ',' << c.epochs << ",ok\n";
    } else {
      seeds_csv << ",,,,failed\n";
    }
  }

  // Seed means; a cell with no successful seed is left empty.
  std::ostringstream mean_csv;
  mean_csv << "strategy,axis,level,valence_ccc,arousal_ccc,avg_ccc\n";
  std::ostringstream table;
  table << "avg CCC by " << synth::to_string(bc.axis) << " level (mean over "
        << bc.seeds.size() << " seeds)\n";
  char head[64];
  std::snprintf(head, sizeof head, "%-16s", "strategy");
  table << head;
  for (double level : bc.levels) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%10g", level);
    table << buf;
  }
  table << '\n';
  for (auto strategy : bc.strategies) {
    char name[32];
    std::snprintf(name, sizeof name, "%-16s", fusion::to_string(strategy));
    table << name;
    for (double level : bc.levels) {
      double v = 0.0, a = 0.0;
      std::size_t n = 0;
      for (const auto& c : cells) {
        if (c.ok && c.strategy == strategy && c.level == level) {
          v += c.report.valence_ccc;
          a += c.report.arousal_ccc;
          ++n;
        }
      }
      mean_csv << fusion::to_string(strategy) << ',' << synth::to_string(bc.axis) << ','
               << level << ',';
      char buf[32];
      if (n > 0) {
        const double mv = v / double(n), ma = a / double(n);
        mean_csv << fixed6(mv) << ',' << fixed6(ma) << ',' << fixed6(0.5 * (mv + ma)) << '\n';
        std::snprintf(buf, sizeof buf, "%10s", objectives::format3(0.5 * (mv + ma)).c_str());
      } else {
        mean_csv << ",,\n";
        std::snprintf(buf, sizeof buf, "%10s", "-");
      }
      table << buf;
    }
    table << '\n';
  }

  // TAGF against uniform averaging at the highest level.
  const double top = *std::max_element(bc.levels.begin(), bc.levels.end());
  const bool comparable =
      std::count(bc.strategies.begin(), bc.strategies.end(), fusion::FusionStrategy::Tagf) &&
      std::count(bc.strategies.begin(), bc.strategies.end(),
                 fusion::FusionStrategy::UniformAverage);
  if (comparable) {
    std::size_t wins = 0, both = 0;
    table << "\ntagf vs uniform_average at " << synth::to_string(bc.axis) << "=" << top
          << '\n';
    for (std::uint64_t seed : bc.seeds) {
      SeedComparison cmp;
      cmp.seed = seed;
      for (const auto& c : cells) {
        if (!c.ok || c.seed != seed || c.level != top) continue;
        if (c.strategy == fusion::FusionStrategy::Tagf) cmp.tagf = c.report.avg_ccc;
        if (c.strategy == fusion::FusionStrategy::UniformAverage) {
          cmp.uniform = c.report.avg_ccc;
        }
      }
      char buf[160];
      if (cmp.tagf && cmp.uniform) {
        ++both;
        const bool win = *cmp.tagf >= *cmp.uniform;
        wins += win ? 1 : 0;
        std::snprintf(buf, sizeof buf, "  seed %llu: tagf %.4f  uniform_average %.4f  %s\n",
                      static_cast<unsigned long long>(seed), *cmp.tagf, *cmp.uniform,
                      win ? "tagf >= uniform" : "tagf < uniform");
      } else {
        std::snprintf(buf, sizeof buf, "  seed %llu: missing cell\n",
                      static_cast<unsigned long long>(seed));
      }
      table << buf;
      result.comparison.push_back(cmp);
    }
    table << "  tagf >= uniform_average on " << wins << " of " << both << " seeds\n";
  }
  result.table = table.str();

  write_text(out_dir / "robustness.csv", mean_csv.str());
  write_text(out_dir / "robustness_seeds.csv", seeds_csv.str());
  write_text(out_dir / "robustness.txt", result.table);
  ExperimentConfig snapshot = cfg;
  snapshot.output_dir = out_dir.string();
  save_experiment(out_dir / "config.json", snapshot);
  log << '\n' << result.table;
  return result;
}

}  // namespace tagf::cli
