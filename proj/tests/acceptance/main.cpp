// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// nonzero when any criterion fails. Long-running criteria (learnability,
// robustness benchmark) run at full scale; pass --quick to skip them.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "support/oracles.hpp"
#include "tagf/checkpoint.hpp"
#include "tagf/cli/commands.hpp"
#include "tagf/linear_probe.hpp"
#include "tagf/model.hpp"
#include "tagf/objectives.hpp"
#include "tagf/synthdata.hpp"
#include "tagf/training.hpp"

namespace {

namespace fs = std::filesystem;
using namespace tagf;
using testing::TestRng;

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

fs::path work_root() {
  const auto p = fs::temp_directory_path() / "tagf_acceptance";
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// ---------------------------------------------------------------------------

Outcome reporting_rounding() {
  const auto t1 = objectives::make_report(0.427, 0.676, 1);
  const auto t2 = objectives::make_report(0.512, 0.568, 1);
  const std::string a = objectives::format3(t1.avg_ccc);
  const std::string b = objectives::format3(t2.avg_ccc);
  const bool table_ok = objectives::format_table(t1).find("0.552") != std::string::npos &&
                        objectives::format_table(t2).find("0.540") != std::string::npos;
  return {a == "0.552" && b == "0.540" && table_ok,
          "avg(0.427, 0.676) -> " + a + ", avg(0.512, 0.568) -> " + b};
}

Outcome gradient_fidelity() {
  const auto t0 = Clock::now();
  cli::ExperimentConfig cfg;
  cfg.gradcheck.model.recursion_depth = 2;
  cfg.gradcheck.model.d_model = 8;
  cfg.gradcheck.length = 6;
  cfg.gradcheck.seeds = {1, 2, 3, 4, 5};
  std::ostringstream log;
  const auto model = cli::cmd_gradcheck(cfg, log);

  TestRng rng(2024);
  double prim_worst = 0.0;
  std::string prim_label;
  for (int trial = 0; trial < 20; ++trial) {
    for (const auto& pc : testing::primitive_cases(rng)) {
      const auto r = testing::check_primitive(pc, rng);
      if (r.max_rel_error > prim_worst) {
        prim_worst = r.max_rel_error;
        prim_label = r.name;
      }
    }
  }
  const double secs = seconds_since(t0);
  std::string seeds;
  for (const auto& r : model.reports) seeds += fmt(" %.2e", r.max_rel_error);
  return {model.max_rel_error < 1e-4 && prim_worst < 1e-5 && secs < 120.0,
          "model max rel error" + fmt(" %.3e", model.max_rel_error) + " (seeds:" + seeds +
              "), primitive max" + fmt(" %.3e", prim_worst) + " (" + prim_label + "), " +
              fmt("%.1fs", secs)};
}

fusion::ModelConfig gate_model(std::size_t steps) {
  fusion::ModelConfig cfg;
  cfg.d_a = 5;
  cfg.d_v = 6;
  cfg.d_model = 8;
  cfg.recursion_depth = steps;
  cfg.lstm_hidden = 4;
  cfg.mlp_hidden = 8;
  return cfg;
}

FeatureSequence random_sequence(Modality m, std::size_t len, std::size_t dim, TestRng& rng) {
  FeatureSequence s(m, len, dim);
  s.values = rng.normal_vec(len * dim);
  return s;
}

Outcome gate_invariants() {
  TestRng rng(7);
  double worst_sum = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    auto cfg = gate_model(1 + rng.below(5));
    cfg.seed = 500 + static_cast<std::uint64_t>(trial);
    const auto store = fusion::init_parameters(cfg);
    const std::size_t len = 1 + rng.below(10);
    Tape tape;
    BoundParameters p(tape, store);
    fusion::RecursionTrace tr;
    for (std::size_t t = 0; t <= cfg.recursion_depth; ++t) {
      tr.visual.push_back(tape.constant({len, cfg.d_model}, rng.normal_vec(len * cfg.d_model)));
      tr.audio.push_back(tape.constant({len, cfg.d_model}, rng.normal_vec(len * cfg.d_model)));
    }
    const auto g = fusion::temporal_gate(p, cfg, tr);
    for (const auto* m : {&g.visual, &g.audio}) {
      for (std::size_t l = 0; l < len; ++l) {
        double total = 0.0;
        for (std::size_t t = 0; t < cfg.recursion_depth; ++t) total += m->alpha(t, l);
        worst_sum = std::max(worst_sum, std::abs(total - 1.0));
      }
    }
  }

  bool single_ok = true;
  {
    const auto cfg = gate_model(1);
    const auto store = fusion::init_parameters(cfg);
    Tape tape;
    BoundParameters p(tape, store);
    const auto r = fusion::forward(p, cfg, random_sequence(Modality::Audio, 9, cfg.d_a, rng),
                                   random_sequence(Modality::Visual, 9, cfg.d_v, rng));
    for (double v : r.gates.visual.weights.values()) single_ok &= v == 1.0;
    for (double v : r.gates.audio.weights.values()) single_ok &= v == 1.0;
  }

  bool onehot_ok = true;
  for (std::size_t steps : {2u, 3u, 4u}) {
    const auto cfg = gate_model(steps);
    const auto store = fusion::init_parameters(cfg);
    const auto a = random_sequence(Modality::Audio, 8, cfg.d_a, rng);
    const auto v = random_sequence(Modality::Visual, 8, cfg.d_v, rng);
    for (std::size_t k = 1; k <= steps; ++k) {
      std::vector<double> onehot(steps, 0.0);
      onehot[k - 1] = 1.0;
      Tape t1, t2;
      BoundParameters p1(t1, store), p2(t2, store);
      const auto forced = fusion::forward(p1, cfg, a, v, {onehot, std::nullopt});
      const auto single = fusion::forward(p2, cfg, a, v, {std::nullopt, k});
      onehot_ok &= forced.fused.prediction.to_vector() == single.fused.prediction.to_vector();
    }
  }
  return {worst_sum <= 1e-9 && single_ok && onehot_ok,
          "max |sum alpha - 1| " + fmt("%.2e", worst_sum) + " over 100 inputs, T=1 " +
              (single_ok ? "alpha=1" : "VIOLATED") + ", one-hot " +
              (onehot_ok ? "bit-exact" : "MISMATCH")};
}

double tensor_ccc(const std::vector<double>& p, const std::vector<double>& t) {
  Tape tape;
  return objectives::ccc_tensor(tape.constant({p.size(), 1}, p), t).item();
}

Outcome ccc_oracle() {
  TestRng rng(99);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng.below(300);
    auto p = rng.uniform_vec(n, -1, 1);
    const auto t = rng.uniform_vec(n, -1, 1);
    // Half the pairs are correlated so the range of ccc is well covered.
    if (trial % 2) {
      for (std::size_t i = 0; i < n; ++i) p[i] = 0.8 * t[i] + 0.3 * p[i];
    }
    worst = std::max(worst, std::abs(tensor_ccc(p, t) - testing::naive_ccc(p, t).ccc));
  }
  const std::vector<double> x{0.1, -0.4, 0.7, 0.2};
  const std::vector<double> z{-0.3, 0.5, 0.1, -0.3};
  const std::vector<double> nz{0.3, -0.5, -0.1, 0.3};
  const std::vector<double> flat(4, 0.5);
  const double e1 = std::abs(tensor_ccc(x, x) - 1.0);
  const double e2 = std::abs(tensor_ccc(nz, z) + 1.0);
  const double e3 = std::abs(tensor_ccc(flat, x));
  const double fixed = std::max({e1, e2, e3});
  return {worst <= 1e-12 && fixed <= 1e-12,
          "max deviation " + fmt("%.2e", worst) + " on 1000 pairs, fixed cases " +
              fmt("%.2e", fixed)};
}

Outcome aggregation_oracle() {
  TestRng rng(5);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t steps = 1 + rng.below(5), len = 1 + rng.below(12), d = 1 + rng.below(9);
    std::vector<std::vector<double>> h, alpha(steps, std::vector<double>(len));
    for (std::size_t t = 0; t < steps; ++t) h.push_back(rng.normal_vec(len * d));
    std::vector<double> w(len * steps);
    for (std::size_t l = 0; l < len; ++l) {
      double z = 0.0;
      for (std::size_t t = 0; t < steps; ++t) z += alpha[t][l] = rng.uniform(0, 1);
      for (std::size_t t = 0; t < steps; ++t) w[l * steps + t] = alpha[t][l] /= z;
    }
    Tape tape;
    std::vector<Tensor> ts;
    for (const auto& x : h) ts.push_back(tape.constant({len, d}, x));
    const auto got = fusion::gated_aggregate(ts, tape.constant({len, steps}, w)).to_vector();
    const auto expect = testing::naive_aggregate(h, alpha, len, d);
    for (std::size_t i = 0; i < got.size(); ++i) {
      worst = std::max(worst, std::abs(got[i] - expect[i]));
    }
  }
  return {worst <= 1e-12, "max deviation " + fmt("%.2e", worst) + " on 200 random traces"};
}

Outcome learnability() {
  const auto t0 = Clock::now();
  cli::ExperimentConfig cfg;
  cfg.generator.n_episodes = 50;
  cfg.generator.length = 120;
  cfg.val_episodes = 10;
  cfg.training.max_epochs = 100;
  const auto episodes = synth::generate_dataset(cfg.generator);
  std::span<const synth::Episode> all(episodes);
  const auto train_set = all.first(40), val_set = all.subspan(40);

  const auto probe = synth::fit_linear_probe(train_set);
  const auto pr = synth::probe_report(probe, val_set);
  const bool probe_ok = pr.valence_ccc >= 0.99 && pr.arousal_ccc >= 0.99;

  const auto result = train::train(cfg.model, train_set, val_set, cfg.training);
  const auto& best = result.history.epochs[result.history.best_epoch];
  const double secs = seconds_since(t0);
  std::size_t first_hit = 0;
  bool hit = false;
  for (const auto& e : result.history.epochs) {
    if (e.val_avg_ccc >= 0.8) {
      first_hit = e.epoch;
      hit = true;
      break;
    }
  }
  std::string detail = "probe CCC v=" + fmt("%.4f", pr.valence_ccc) +
                       " a=" + fmt("%.4f", pr.arousal_ccc) + ", best val avg CCC " +
                       fmt("%.4f", best.val_avg_ccc) + " at epoch " +
                       std::to_string(best.epoch) + " of " +
                       std::to_string(result.history.epochs.size());
  if (hit) detail += ", >= 0.8 from epoch " + std::to_string(first_hit);
  detail += ", " + fmt("%.1fs", secs);
  return {probe_ok && best.val_avg_ccc >= 0.8 && secs < 900.0, detail};
}

Outcome windowing() {
  synth::GenConfig g;
  g.n_episodes = 1;
  g.length = 700;
  const auto ep = synth::generate_episode(g, 0);
  const auto w = synth::make_windows(ep, 300, 200);
  std::vector<std::size_t> starts;
  bool shape_ok = w.size() == 4;
  for (const auto& x : w) {
    starts.push_back(x.meta.window_start);
    shape_ok &= x.length() == 300;
  }
  shape_ok = shape_ok && starts == std::vector<std::size_t>{0, 200, 400, 600};
  bool tail_ok = shape_ok && w[3].meta.pad_frames == 200;
  if (tail_ok) {
    for (std::size_t l = 0; l < 300; ++l) tail_ok &= w[3].truth_mask[l] == (l < 100 ? 1 : 0);
  }
  bool full_ok = shape_ok;
  for (std::size_t i = 0; full_ok && i < 3; ++i) full_ok &= w[i].meta.pad_frames == 0;
  // Overlap measured on content: frame 200..299 of window 0 is frame 0..99 of window 1.
  bool overlap_ok = shape_ok;
  std::size_t overlap = 0;
  if (shape_ok) {
    for (std::size_t s = 1; s < 300; ++s) {
      bool same = true;
      for (std::size_t l = s; l < 300 && same; ++l) {
        same = w[0].truth.valence[l] == w[1].truth.valence[l - s];
      }
      if (same) {
        overlap = 300 - s;
        break;
      }
    }
    overlap_ok = overlap == 100;
  }
  std::string s;
  for (auto x : starts) s += (s.empty() ? "" : ",") + std::to_string(x);
  return {shape_ok && tail_ok && full_ok && overlap_ok,
          "starts {" + s + "}, tail padding " +
              (w.empty() ? std::string("-") : std::to_string(w.back().meta.pad_frames)) +
              " masked frames, overlap " + std::to_string(overlap) + " frames (" +
              fmt("%.1f%%", 100.0 * double(overlap) / 300.0) + ")"};
}

Outcome training_recipe() {
  // Scheduler floor under an endless plateau.
  train::TrainConfig cfg;
  cfg.lr_init = 1e-5;
  train::PlateauState plateau;
  double lr = cfg.lr_init, lowest = lr;
  for (int epoch = 0; epoch < 500; ++epoch) {
    lr = train::scheduler_step(lr, 0.3, plateau, cfg);
    lowest = std::min(lowest, lr);
  }
  const bool floor_ok = lowest >= 1e-8 && lr == 1e-8;

  // Early stopping under a frozen metric: the first epoch sets the reference
  // and training ends on epoch patience + 1.
  train::EarlyStopping stop(cfg.early_stop_patience, cfg.improvement_threshold);
  std::size_t stop_after = 0;
  for (std::size_t i = 1; i <= 50; ++i) {
    if (stop.update(0.5)) {
      stop_after = i;
      break;
    }
  }
  const bool stop_ok = stop_after == cfg.early_stop_patience + 1;

  // Best checkpoint on a short real run.
  fusion::ModelConfig model;
  model.d_a = 4;
  model.d_v = 5;
  model.d_model = 6;
  model.recursion_depth = 2;
  model.lstm_hidden = 3;
  model.mlp_hidden = 6;
  model.tcn = {1, 3, {1}};
  synth::GenConfig g;
  g.n_episodes = 8;
  g.length = 30;
  g.d_a = 4;
  g.d_v = 5;
  g.latent_dim = 3;
  g.smoothness = 10.0;
  const auto eps = synth::generate_dataset(g);
  std::span<const synth::Episode> all(eps);
  train::TrainConfig tc;
  tc.lr_init = 3e-3;
  tc.win_len = 20;
  tc.stride = 15;
  tc.batch_size = 4;
  tc.max_epochs = 8;
  const auto r = train::train(model, all.first(6), all.subspan(6), tc);
  std::size_t argmax = 0;
  for (const auto& e : r.history.epochs) {
    if (e.val_avg_ccc > r.history.epochs[argmax].val_avg_ccc) argmax = e.epoch;
  }
  const auto re = train::evaluate_model(model, r.best.params, all.subspan(6), tc.win_len);
  const bool best_ok = r.history.best_epoch == argmax &&
                       re.avg_ccc == r.history.epochs[argmax].val_avg_ccc;

  return {floor_ok && stop_ok && best_ok,
          "lowest lr " + fmt("%.1e", lowest) + ", early stop on epoch " +
              std::to_string(stop_after) + " of a frozen run (patience " +
              std::to_string(cfg.early_stop_patience) + "), best epoch " +
              std::to_string(r.history.best_epoch) + " vs argmax " + std::to_string(argmax)};
}

Outcome determinism(const fs::path& root) {
  cli::ExperimentConfig cfg;
  cfg.generator.n_episodes = 8;
  cfg.generator.length = 60;
  cfg.val_episodes = 2;
  cfg.training.max_epochs = 4;
  cfg.training.win_len = 30;
  cfg.training.stride = 20;
  std::ostringstream log;
  cli::cmd_generate(cfg, root / "det_data", log);
  cli::cmd_train(cfg, root / "det_data", root / "det_a", log);
  cli::cmd_train(cfg, root / "det_data", root / "det_b", log);
  const bool hist = slurp(root / "det_a" / "history.csv") == slurp(root / "det_b" / "history.csv");
  const auto ca = slurp(root / "det_a" / "checkpoint.bin");
  const bool ckpt = !ca.empty() && ca == slurp(root / "det_b" / "checkpoint.bin");
  return {hist && ckpt, std::string("history.csv ") + (hist ? "identical" : "DIFFERS") +
                            ", checkpoint.bin " + (ckpt ? "identical" : "DIFFERS") + " (" +
                            std::to_string(ca.size()) + " bytes)"};
}

Outcome robustness_benchmark(const fs::path& root) {
  const auto t0 = Clock::now();
  cli::ExperimentConfig cfg;  // 3 strategies x shift {0, 6, 12} x seeds {1, 2, 3}
  std::ostringstream log;
  const auto r = cli::cmd_benchmark(cfg, root / "bench", log);
  const double secs = seconds_since(t0);
  std::size_t ok = 0;
  for (const auto& c : r.cells) ok += c.ok ? 1 : 0;
  const bool csv = fs::exists(root / "bench" / "robustness.csv") &&
                   fs::exists(root / "bench" / "robustness_seeds.csv");
  std::cout << r.table;
  return {ok == 27 && r.cells.size() == 27 && csv && secs < 5400.0,
          std::to_string(ok) + "/27 cells trained, CSV " + (csv ? "written" : "MISSING") + ", " +
              fmt("%.1f min", secs / 60.0) +
              " (tagf vs uniform_average direction is reported above, not asserted)"};
}

}  // namespace

int main(int argc, char** argv) {
  bool quick = false;
  for (int i = 1; i < argc; ++i) quick |= std::strcmp(argv[i], "--quick") == 0;
  const fs::path root = work_root();

  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
    bool long_running;
  };
  const std::vector<Criterion> criteria{
      {"reporting_rounding", reporting_rounding, false},
      {"gradient_fidelity", gradient_fidelity, false},
      {"gate_invariants", gate_invariants, false},
      {"ccc_oracle", ccc_oracle, false},
      {"aggregation_oracle", aggregation_oracle, false},
      {"learnability", learnability, true},
      {"windowing", windowing, false},
      {"training_recipe", training_recipe, false},
      {"determinism", [&] { return determinism(root); }, false},
      {"robustness_benchmark", [&] { return robustness_benchmark(root); }, true},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    if (quick && c.long_running) {
      std::cout << "SKIP " << c.name << ": --quick\n" << std::flush;
      continue;
    }
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS " : "FAIL ") << c.name << ": " << o.detail << '\n'
              << std::flush;
  }
  fs::remove_all(root);
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " failed")
            << '\n';
  return failures == 0 ? 0 : 1;
}
