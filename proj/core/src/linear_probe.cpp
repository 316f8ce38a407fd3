// SPDX-License-Identifier: Apache-2.0
#include "tagf/linear_probe.hpp"

#include <Eigen/Dense>

#include "tagf/error.hpp"

namespace tagf::synth {

namespace {

std::size_t feature_width(const Episode& ep) {
  return ep.audio.dim + ep.visual.dim;
}

void fill_row(const Episode& ep, std::size_t l, double* out) {
  std::size_t c = 0;
  for (double v : ep.audio.row(l)) out[c++] = v;
  for (double v : ep.visual.row(l)) out[c++] = v;
  out[c] = 1.0;
}

}  // namespace

LinearProbe fit_linear_probe(std::span<const Episode> episodes) {
  if (episodes.empty()) throw DataError("fit_linear_probe: no episodes");
  const std::size_t width = feature_width(episodes.front());
  std::size_t rows = 0;
  for (const auto& ep : episodes) {
    if (feature_width(ep) != width) {
      throw ContractError("fit_linear_probe: episodes disagree on dims");
    }
    for (auto m : ep.truth_mask) rows += m != 0;
  }
  if (rows <= width) throw DataError("fit_linear_probe: too few frames");

  Eigen::MatrixXd x(rows, width + 1);
  Eigen::MatrixXd y(rows, 2);
  std::size_t r = 0;
  std::vector<double> buf(width + 1);
  for (const auto& ep : episodes) {
    for (std::size_t l = 0; l < ep.length(); ++l) {
      if (!ep.truth_mask[l]) continue;
      fill_row(ep, l, buf.data());
      for (std::size_t c = 0; c <= width; ++c) x(r, c) = buf[c];
      y(r, 0) = ep.truth.valence[l];
      y(r, 1) = ep.truth.arousal[l];
      ++r;
    }
  }
  const Eigen::MatrixXd w = x.colPivHouseholderQr().solve(y);
  LinearProbe probe;
  probe.features = width;
  probe.weights.resize((width + 1) * 2);
  for (std::size_t c = 0; c <= width; ++c) {
    probe.weights[c * 2] = w(c, 0);
    probe.weights[c * 2 + 1] = w(c, 1);
  }
  return probe;
}

VATrajectory apply_probe(const LinearProbe& probe, const Episode& ep) {
  if (feature_width(ep) != probe.features) {
    throw ContractError("apply_probe: feature width mismatch");
  }
  VATrajectory out(ep.length());
  std::vector<double> buf(probe.features + 1);
  for (std::size_t l = 0; l < ep.length(); ++l) {
    fill_row(ep, l, buf.data());
    double v = 0.0;
    double a = 0.0;
    for (std::size_t c = 0; c <= probe.features; ++c) {
      v += buf[c] * probe.weights[c * 2];
      a += buf[c] * probe.weights[c * 2 + 1];
    }
    out.valence[l] = v;
    out.arousal[l] = a;
  }
  return out;
}

objectives::MetricsReport probe_report(const LinearProbe& probe,
                                       std::span<const Episode> episodes) {
  std::vector<VATrajectory> preds;
  std::vector<VATrajectory> truths;
  std::vector<std::vector<std::uint8_t>> masks;
  for (const auto& ep : episodes) {
    preds.push_back(apply_probe(probe, ep));
    truths.push_back(ep.truth);
    masks.push_back(ep.truth_mask);
  }
  return objectives::evaluate(preds, truths, masks);
}

}  // namespace tagf::synth
