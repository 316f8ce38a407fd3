// SPDX-License-Identifier: Apache-2.0
//
// Concordance correlation coefficient (population moments, valid frames only):
//
//   CCC = 2 cov / (var_pred + var_true + (mu_pred - mu_true)^2)
//
// with the denominator guarded by 1e-8. The training loss is
//   L = (1 - CCC_valence) + (1 - CCC_arousal)  in [0, 4].

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tagf/sequence.hpp"
#include "tagf/tensor.hpp"

namespace tagf::objectives {

inline constexpr double kCccEpsilon = 1e-8;

struct CCCStats {
  double mu_pred = 0.0;
  double mu_true = 0.0;
  double var_pred = 0.0;
  double var_true = 0.0;
  double cov = 0.0;
  double rho = 0.0;
  double ccc = 0.0;
  std::size_t frames = 0;
  /// Denominator at or below the guard (both sequences constant and equal);
  /// ccc is reported as 0.
  bool degenerate = false;
};

/// An empty mask means every frame is valid. Throws DataError with fewer than
/// two valid frames and ContractError on length mismatch.
CCCStats ccc(std::span<const double> pred, std::span<const double> truth,
             std::span<const std::uint8_t> mask = {});

/// Differentiable CCC of an L x 1 prediction column against constant truth.
Tensor ccc_tensor(const Tensor& pred_column, std::span<const double> truth,
                  std::span<const std::uint8_t> mask = {});

/// Sum over valence and arousal of (1 - CCC); `prediction` is L x 2.
Tensor ccc_loss(const Tensor& prediction, const VATrajectory& truth,
                std::span<const std::uint8_t> mask = {});

struct MetricsReport {
  double valence_ccc = 0.0;
  double arousal_ccc = 0.0;
  double avg_ccc = 0.0;
  std::size_t frames_evaluated = 0;
  bool degenerate = false;
};

MetricsReport make_report(double valence_ccc, double arousal_ccc,
                          std::size_t frames);

/// Concatenates every valid frame across episodes, then computes CCC per
/// dimension. `masks` may be empty (all frames valid).
MetricsReport evaluate(std::span<const VATrajectory> preds,
                       std::span<const VATrajectory> truths,
                       std::span<const std::vector<std::uint8_t>> masks = {});

/// Round half away from zero at three decimals. A 1e-9 nudge absorbs binary
/// representation error so that e.g. 0.5515 reports as 0.552.
double round3(double x);
std::string format3(double x);

/// key=value lines: valence_ccc, arousal_ccc, avg_ccc, frames.
std::string to_key_value(const MetricsReport& r);
std::string csv_header();
std::string to_csv_row(const MetricsReport& r, std::string_view split);
/// Three-column table: Valence CCC / Arousal CCC / CCC Avg.
std::string format_table(const MetricsReport& r);

}  // namespace tagf::objectives
