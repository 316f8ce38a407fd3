// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "tagf/objectives.hpp"
#include "tagf/synthdata.hpp"

namespace tagf::synth {

/// Least-squares affine decoder from raw concatenated [audio, visual, 1]
/// features to (valence, arousal). Used to bound dataset difficulty.
struct LinearProbe {
  std::size_t features = 0;
  /// (features + 1) x 2, row-major.
  std::vector<double> weights;
};

LinearProbe fit_linear_probe(std::span<const Episode> episodes);
VATrajectory apply_probe(const LinearProbe& probe, const Episode& ep);
objectives::MetricsReport probe_report(const LinearProbe& probe,
                                       std::span<const Episode> episodes);

}  // namespace tagf::synth
