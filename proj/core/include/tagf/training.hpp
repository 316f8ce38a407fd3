// SPDX-License-Identifier: Apache-2.0
//
// Optimization harness: Adam with decoupled weight decay, plateau-based
// learning-rate reduction on validation average CCC, early stopping, and
// best-epoch checkpoint selection.
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "tagf/model.hpp"
#include "tagf/objectives.hpp"
#include "tagf/synthdata.hpp"
#include "tagf/tensor.hpp"

namespace tagf::train {

struct TrainConfig {
  double lr_init = 1e-5;
  double lr_min = 1e-8;
  double weight_decay = 1e-3;
  std::size_t batch_size = 6;
  std::size_t max_epochs = 100;
  std::size_t early_stop_patience = 10;
  std::size_t scheduler_patience = 5;
  double scheduler_factor = 0.5;
  /// Validation avg CCC must beat the best by more than this to count as
  /// progress for the scheduler and early stopping.
  double improvement_threshold = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::uint64_t seed = 1;
  std::size_t win_len = 300;
  std::size_t stride = 200;
  std::size_t workers = 1;
  /// When false the `seconds` column is written as 0 so history files are
  /// reproducible byte for byte.
  bool record_wall_time = false;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_valence_ccc = 0.0;
  double val_arousal_ccc = 0.0;
  double val_avg_ccc = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
  bool operator==(const EpochRecord&) const = default;
};

/// Epochs are numbered from 0; best_epoch indexes `epochs`.
struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  bool stopped_early = false;
  bool operator==(const TrainHistory&) const = default;
};

/// Header: epoch,train_loss,val_valence_ccc,val_arousal_ccc,val_avg_ccc,lr,seconds
std::string history_csv(const TrainHistory& history);

struct AdamState {
  std::size_t step = 0;
  GradientMap first_moment;
  GradientMap second_moment;
};

/// p <- p - lr * wd * p - lr * m_hat / (sqrt(v_hat) + eps), in place.
void adam_step(ParameterStore& params, const GradientMap& grads,
               AdamState& state, const TrainConfig& cfg, double lr);

struct PlateauState {
  double best = -std::numeric_limits<double>::infinity();
  std::size_t stagnant_epochs = 0;
};

/// Returns the learning rate for the next epoch. After `scheduler_patience`
/// consecutive epochs without improvement the rate is multiplied by
/// `scheduler_factor` (floored at lr_min) and the counter restarts.
double scheduler_step(double current_lr, double validation_avg_ccc,
                      PlateauState& state, const TrainConfig& cfg);

class EarlyStopping {
 public:
  EarlyStopping(std::size_t patience, double threshold)
      : patience_(patience), threshold_(threshold) {}

  /// Feeds one epoch's metric; true once `patience` consecutive epochs
  /// failed to improve.
  bool update(double metric);
  [[nodiscard]] std::size_t stagnant_epochs() const { return stagnant_; }

 private:
  std::size_t patience_;
  double threshold_;
  double best_ = -std::numeric_limits<double>::infinity();
  std::size_t stagnant_ = 0;
};

struct Checkpoint {
  fusion::ModelConfig model;
  /// Settings the model was trained with; win_len also governs evaluation.
  TrainConfig training;
  ParameterStore params;
  TrainHistory history;
  bool operator==(const Checkpoint&) const = default;
};

struct TrainResult {
  Checkpoint best;
  TrainHistory history;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Throws ContractError for empty datasets and NumericError (with the epoch,
/// batch and window in the message) when a loss turns non-finite.
TrainResult train(const fusion::ModelConfig& model_cfg,
                  std::span<const synth::Episode> train_set,
                  std::span<const synth::Episode> val_set,
                  const TrainConfig& cfg, const EpochCallback& on_epoch = {});

/// Mean CCC loss and averaged gradients over `windows`.
struct BatchGradients {
  double loss = 0.0;
  GradientMap grads;
  std::size_t windows_used = 0;
};
BatchGradients batch_gradients(const fusion::ModelConfig& model_cfg,
                               const ParameterStore& params,
                               std::span<const synth::Episode* const> windows,
                               std::size_t workers);

/// Full-episode prediction assembled from non-overlapping windows of
/// min(win_len, L) frames.
VATrajectory predict_episode(const fusion::ModelConfig& model_cfg,
                             const ParameterStore& params,
                             const synth::Episode& ep, std::size_t win_len);

std::vector<VATrajectory> predict_episodes(
    const fusion::ModelConfig& model_cfg, const ParameterStore& params,
    std::span<const synth::Episode> episodes, std::size_t win_len,
    std::size_t workers);

objectives::MetricsReport evaluate_model(
    const fusion::ModelConfig& model_cfg, const ParameterStore& params,
    std::span<const synth::Episode> episodes, std::size_t win_len,
    std::size_t workers = 1);

}  // namespace tagf::train
