// SPDX-License-Identifier: Apache-2.0
#include "tagf/training.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <numeric>
#include <sstream>
#include <thread>

#include "tagf/error.hpp"
#include "tagf/rng.hpp"

namespace tagf::train {
namespace {

std::size_t valid_truth_frames(const synth::Episode& ep) {
  if (ep.truth_mask.empty()) return ep.length();
  return static_cast<std::size_t>(
      std::count(ep.truth_mask.begin(), ep.truth_mask.end(), 1));
}

std::span<const std::uint8_t> mask_of(const synth::Episode& ep) {
  return ep.truth_mask;
}

// Runs fn(i) for i in [0, n) over `workers` threads. Exceptions are
// collected per index and the lowest-index one is rethrown, so failures are
// reported the same way regardless of scheduling.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
  std::vector<std::exception_ptr> errors(n);
  const std::size_t threads = std::min(std::max<std::size_t>(workers, 1), n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
        break;
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
    pool.clear();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::string describe_window(const synth::Episode& w) {
  std::ostringstream os;
  os << "episode " << w.meta.index << " window@" << w.meta.window_start;
  return os.str();
}

bool all_finite(const GradientMap& grads) {
  for (const auto& [name, g] : grads) {
    for (double x : g) {
      if (!std::isfinite(x)) return false;
    }
  }
  return true;
}

}  // namespace

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("training: " + msg); };
  if (!(lr_init >= 0.0) || !std::isfinite(lr_init)) fail("lr_init must be >= 0");
  if (!(lr_min >= 0.0) || !std::isfinite(lr_min)) fail("lr_min must be >= 0");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
  if (batch_size == 0) fail("batch_size must be >= 1");
  if (max_epochs == 0) fail("max_epochs must be >= 1");
  if (early_stop_patience == 0) fail("early_stop_patience must be >= 1");
  if (scheduler_patience == 0) fail("scheduler_patience must be >= 1");
  if (lr_min > lr_init) fail("lr_min must not exceed lr_init");
  if (!(scheduler_factor > 0.0 && scheduler_factor < 1.0)) {
    fail("scheduler_factor must be in (0, 1)");
  }
  if (!(improvement_threshold >= 0.0)) fail("improvement_threshold must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) fail("beta1 must be in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) fail("beta2 must be in [0, 1)");
  if (!(adam_epsilon > 0.0)) fail("adam_epsilon must be > 0");
  if (win_len < 2) fail("win_len must be >= 2");
  if (stride == 0) fail("stride must be >= 1");
  if (workers == 0) fail("workers must be >= 1");
}

std::string history_csv(const TrainHistory& history) {
  std::ostringstream os;
  os.precision(12);
  os << "epoch,train_loss,val_valence_ccc,val_arousal_ccc,val_avg_ccc,lr,seconds\n";
  for (const auto& r : history.epochs) {
    os << r.epoch << ',' << r.train_loss << ',' << r.val_valence_ccc << ','
       << r.val_arousal_ccc << ',' << r.val_avg_ccc << ',' << r.lr << ','
       << r.seconds << '\n';
  }
  return os.str();
}

void adam_step(ParameterStore& params, const GradientMap& grads,
               AdamState& state, const TrainConfig& cfg, double lr) {
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& entry : params.entries()) {
    auto git = grads.find(entry.name);
    const std::size_t n = entry.values.size();
    auto& m = state.first_moment[entry.name];
    auto& v = state.second_moment[entry.name];
    if (m.empty()) m.assign(n, 0.0);
    if (v.empty()) v.assign(n, 0.0);
    if ((git != grads.end() && git->second.size() != n) || m.size() != n ||
        v.size() != n) {
      throw ContractError("adam_step: gradient or moment buffer for '" +
                          entry.name + "' does not match " +
                          to_string(entry.shape));
    }
    for (std::size_t i = 0; i < n; ++i) {
      const double g = git == grads.end() ? 0.0 : git->second[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      double& p = entry.values[i];
      p -= lr * cfg.weight_decay * p;
      p -= lr * m_hat / (std::sqrt(v_hat) + cfg.adam_epsilon);
    }
  }
}

double scheduler_step(double current_lr, double validation_avg_ccc,
                      PlateauState& state, const TrainConfig& cfg) {
  if (validation_avg_ccc > state.best + cfg.improvement_threshold) {
    state.best = validation_avg_ccc;
    state.stagnant_epochs = 0;
    return current_lr;
  }
  state.stagnant_epochs += 1;
  if (state.stagnant_epochs >= cfg.scheduler_patience) {
    state.stagnant_epochs = 0;
    return std::max(current_lr * cfg.scheduler_factor, cfg.lr_min);
  }
  return current_lr;
}

bool EarlyStopping::update(double metric) {
  if (metric > best_ + threshold_) {
    best_ = metric;
    stagnant_ = 0;
    return false;
  }
  stagnant_ += 1;
  return stagnant_ >= patience_;
}

BatchGradients batch_gradients(const fusion::ModelConfig& model_cfg,
                               const ParameterStore& params,
                               std::span<const synth::Episode* const> windows,
                               std::size_t workers) {
  struct Slot {
    bool used = false;
    double loss = 0.0;
    GradientMap grads;
  };
  std::vector<Slot> slots(windows.size());
  parallel_for(windows.size(), workers, [&](std::size_t i) {
    const synth::Episode& w = *windows[i];
    if (valid_truth_frames(w) < 2) return;
    try {
      Tape tape;
      BoundParameters bound(tape, params);
      auto result = fusion::forward(bound, model_cfg, w.audio, w.visual);
      Tensor loss =
          objectives::ccc_loss(result.fused.prediction, w.truth, mask_of(w));
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw NumericError("non-finite loss");
      }
      slots[i].grads = tape.backward(loss);
      if (!all_finite(slots[i].grads)) {
        throw NumericError("non-finite gradient");
      }
      slots[i].loss = value;
      slots[i].used = true;
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " (" + describe_window(w) + ")");
    }
  });

  BatchGradients out;
  for (const auto& s : slots) {
    if (s.used) out.windows_used += 1;
  }
  if (out.windows_used == 0) return out;
  const double weight = 1.0 / static_cast<double>(out.windows_used);
  out.grads = params.zeros_like();
  for (const auto& s : slots) {
    if (!s.used) continue;
    out.loss += weight * s.loss;
    accumulate(out.grads, s.grads, weight);
  }
  return out;
}

VATrajectory predict_episode(const fusion::ModelConfig& model_cfg,
                             const ParameterStore& params,
                             const synth::Episode& ep, std::size_t win_len) {
  const std::size_t length = ep.length();
  if (length == 0) throw ContractError("predict_episode: empty episode");
  const std::size_t win = std::min(win_len, length);
  VATrajectory out(length);
  Tape tape;
  for (const auto& w : synth::make_windows(ep, win, win)) {
    tape.reset();
    BoundParameters bound(tape, params);
    auto result = fusion::forward(bound, model_cfg, w.audio, w.visual);
    const std::size_t start = w.meta.window_start;
    for (std::size_t l = 0; l < win && start + l < length; ++l) {
      out.valence[start + l] = result.trajectory.valence[l];
      out.arousal[start + l] = result.trajectory.arousal[l];
    }
  }
  return out;
}

std::vector<VATrajectory> predict_episodes(
    const fusion::ModelConfig& model_cfg, const ParameterStore& params,
    std::span<const synth::Episode> episodes, std::size_t win_len,
    std::size_t workers) {
  std::vector<VATrajectory> preds(episodes.size());
  parallel_for(episodes.size(), workers, [&](std::size_t i) {
    preds[i] = predict_episode(model_cfg, params, episodes[i], win_len);
  });
  return preds;
}

objectives::MetricsReport evaluate_model(
    const fusion::ModelConfig& model_cfg, const ParameterStore& params,
    std::span<const synth::Episode> episodes, std::size_t win_len,
    std::size_t workers) {
  if (episodes.empty()) throw ContractError("evaluate_model: no episodes");
  auto preds = predict_episodes(model_cfg, params, episodes, win_len, workers);
  std::vector<VATrajectory> truths;
  std::vector<std::vector<std::uint8_t>> masks;
  truths.reserve(episodes.size());
  masks.reserve(episodes.size());
  for (const auto& ep : episodes) {
    truths.push_back(ep.truth);
    masks.push_back(ep.truth_mask.empty()
                        ? std::vector<std::uint8_t>(ep.length(), 1)
                        : ep.truth_mask);
  }
  return objectives::evaluate(preds, truths, masks);
}

TrainResult train(const fusion::ModelConfig& model_cfg,
                  std::span<const synth::Episode> train_set,
                  std::span<const synth::Episode> val_set,
                  const TrainConfig& cfg, const EpochCallback& on_epoch) {
  model_cfg.validate();
  cfg.validate();
  if (train_set.empty()) throw ContractError("train: empty training set");
  if (val_set.empty()) throw ContractError("train: empty validation set");

  std::vector<synth::Episode> windows;
  for (const auto& ep : train_set) {
    const std::size_t win = std::min(cfg.win_len, ep.length());
    for (auto& w : synth::make_windows(ep, win, cfg.stride)) {
      if (valid_truth_frames(w) >= 2) windows.push_back(std::move(w));
    }
  }
  if (windows.empty()) {
    throw ContractError("train: no training window has two labelled frames");
  }

  ParameterStore params = fusion::init_parameters(model_cfg);
  AdamState adam;
  PlateauState plateau;
  EarlyStopping stopper(cfg.early_stop_patience, cfg.improvement_threshold);
  double lr = cfg.lr_init;

  TrainResult result;
  result.best.model = model_cfg;
  result.best.training = cfg;
  result.best.params = params;
  double best_metric = -std::numeric_limits<double>::infinity();

  std::vector<std::size_t> order(windows.size());
  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng(derive_seed(cfg.seed, epoch)).shuffle(order);

    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    std::vector<const synth::Episode*> batch;
    std::size_t batch_index = 0;
    for (std::size_t begin = 0; begin < order.size();
         begin += cfg.batch_size, ++batch_index) {
      const std::size_t end = std::min(begin + cfg.batch_size, order.size());
      batch.clear();
      for (std::size_t i = begin; i < end; ++i) batch.push_back(&windows[order[i]]);
      BatchGradients bg;
      try {
        bg = batch_gradients(model_cfg, params, batch, cfg.workers);
      } catch (const NumericError& e) {
        std::ostringstream os;
        os << "training diverged at epoch " << epoch << ", batch "
           << batch_index << ": " << e.what();
        throw NumericError(os.str());
      }
      if (bg.windows_used == 0) continue;
      adam_step(params, bg.grads, adam, cfg, lr);
      loss_sum += bg.loss * static_cast<double>(bg.windows_used);
      loss_count += bg.windows_used;
    }

    const auto report =
        evaluate_model(model_cfg, params, val_set, cfg.win_len, cfg.workers);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(std::max<std::size_t>(loss_count, 1));
    rec.val_valence_ccc = report.valence_ccc;
    rec.val_arousal_ccc = report.arousal_ccc;
    rec.val_avg_ccc = report.avg_ccc;
    rec.lr = lr;
    if (cfg.record_wall_time) {
      rec.seconds = std::chrono::duration<double>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
    }
    result.history.epochs.push_back(rec);

    if (rec.val_avg_ccc > best_metric) {
      best_metric = rec.val_avg_ccc;
      result.history.best_epoch = epoch;
      result.best.params = params;
    }
    if (on_epoch) on_epoch(rec);

    const bool stop = stopper.update(rec.val_avg_ccc);
    lr = scheduler_step(lr, rec.val_avg_ccc, plateau, cfg);
    if (stop) {
      result.history.stopped_early = true;
      break;
    }
  }
  result.best.history = result.history;
  return result;
}

}  // namespace tagf::train
