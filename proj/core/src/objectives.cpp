// SPDX-License-Identifier: Apache-2.0
#include "tagf/objectives.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "tagf/error.hpp"

namespace tagf::objectives {

namespace {

bool is_valid(std::span<const std::uint8_t> mask, std::size_t i) {
  return mask.empty() || mask[i] != 0;
}

void check_lengths(std::size_t pred, std::size_t truth, std::size_t mask) {
  if (pred != truth || (mask != 0 && mask != pred)) {
    std::ostringstream os;
    os << "ccc: length mismatch (pred " << pred << ", truth " << truth
       << ", mask " << mask << ")";
    throw ContractError(os.str());
  }
}

std::size_t count_valid(std::size_t n, std::span<const std::uint8_t> mask) {
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) count += is_valid(mask, i);
  if (count < 2) {
    throw DataError("ccc: need at least 2 valid frames, got " +
                    std::to_string(count));
  }
  return count;
}

}  // namespace

CCCStats ccc(std::span<const double> pred, std::span<const double> truth,
             std::span<const std::uint8_t> mask) {
  check_lengths(pred.size(), truth.size(), mask.size());
  CCCStats s;
  s.frames = count_valid(pred.size(), mask);
  const double n = static_cast<double>(s.frames);

  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!is_valid(mask, i)) continue;
    s.mu_pred += pred[i];
    s.mu_true += truth[i];
  }
  s.mu_pred /= n;
  s.mu_true /= n;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!is_valid(mask, i)) continue;
    const double dp = pred[i] - s.mu_pred;
    const double dt = truth[i] - s.mu_true;
    s.var_pred += dp * dp;
    s.var_true += dt * dt;
    s.cov += dp * dt;
  }
  s.var_pred /= n;
  s.var_true /= n;
  s.cov /= n;

  const double sd = std::sqrt(s.var_pred * s.var_true);
  s.rho = sd > 0.0 ? s.cov / sd : 0.0;
  const double diff = s.mu_pred - s.mu_true;
  const double denom = s.var_pred + s.var_true + diff * diff;
  if (denom <= kCccEpsilon) {
    s.degenerate = true;
    s.ccc = 0.0;
  } else {
    s.ccc = 2.0 * s.cov / denom;
  }
  return s;
}

Tensor ccc_tensor(const Tensor& pred_column, std::span<const double> truth,
                  std::span<const std::uint8_t> mask) {
  if (pred_column.rank() != 2 || pred_column.dim(1) != 1) {
    throw ShapeError("ccc_tensor: prediction must be L x 1, got " +
                     to_string(pred_column.shape()));
  }
  const std::size_t len = pred_column.dim(0);
  check_lengths(len, truth.size(), mask.size());
  const std::size_t count = count_valid(len, mask);
  const double inv_n = 1.0 / static_cast<double>(count);

  double mu_true = 0.0;
  for (std::size_t i = 0; i < len; ++i) {
    if (is_valid(mask, i)) mu_true += truth[i];
  }
  mu_true /= static_cast<double>(count);
  std::vector<double> m(len);
  std::vector<double> centered_truth(len, 0.0);
  double var_true = 0.0;
  for (std::size_t i = 0; i < len; ++i) {
    m[i] = is_valid(mask, i) ? 1.0 : 0.0;
    if (m[i] != 0.0) {
      centered_truth[i] = truth[i] - mu_true;
      var_true += centered_truth[i] * centered_truth[i];
    }
  }
  var_true /= static_cast<double>(count);

  Tape& tape = pred_column.tape();
  const Tensor mask_t = tape.constant({len, 1}, std::move(m));
  const Tensor dt = tape.constant({len, 1}, std::move(centered_truth));

  const Tensor mu_pred = scale(sum(pred_column * mask_t), inv_n);
  const Tensor dp = (pred_column - broadcast_to(mu_pred, {len, 1})) * mask_t;
  const Tensor var_pred = scale(sum(dp * dp), inv_n);
  const Tensor cov = scale(sum(dp * dt), inv_n);
  const Tensor diff = mu_pred - tape.constant({1}, mu_true);
  const Tensor denom = var_pred + tape.constant({1}, var_true) + diff * diff;
  return scale(cov * reciprocal_eps(denom, kCccEpsilon), 2.0);
}

Tensor ccc_loss(const Tensor& prediction, const VATrajectory& truth,
                std::span<const std::uint8_t> mask) {
  if (prediction.rank() != 2 || prediction.dim(1) != 2) {
    throw ShapeError("ccc_loss: prediction must be L x 2, got " +
                     to_string(prediction.shape()));
  }
  const Tensor v = ccc_tensor(slice(prediction, 1, 0, 1), truth.valence, mask);
  const Tensor a = ccc_tensor(slice(prediction, 1, 1, 2), truth.arousal, mask);
  return prediction.tape().constant({1}, 2.0) - (v + a);
}

MetricsReport make_report(double valence_ccc, double arousal_ccc,
                          std::size_t frames) {
  MetricsReport r;
  r.valence_ccc = valence_ccc;
  r.arousal_ccc = arousal_ccc;
  r.avg_ccc = (valence_ccc + arousal_ccc) / 2.0;
  r.frames_evaluated = frames;
  return r;
}

MetricsReport evaluate(std::span<const VATrajectory> preds,
                       std::span<const VATrajectory> truths,
                       std::span<const std::vector<std::uint8_t>> masks) {
  if (preds.empty()) throw DataError("evaluate: no episodes");
  if (preds.size() != truths.size() ||
      (!masks.empty() && masks.size() != preds.size())) {
    throw ContractError("evaluate: prediction, truth and mask lists differ");
  }
  VATrajectory all_pred;
  VATrajectory all_true;
  for (std::size_t e = 0; e < preds.size(); ++e) {
    const auto& p = preds[e];
    const auto& t = truths[e];
    if (p.size() != t.size() ||
        (!masks.empty() && masks[e].size() != p.size())) {
      throw ContractError("evaluate: episode " + std::to_string(e) +
                          " is not aligned");
    }
    for (std::size_t l = 0; l < p.size(); ++l) {
      if (!masks.empty() && !masks[e][l]) continue;
      all_pred.valence.push_back(p.valence[l]);
      all_pred.arousal.push_back(p.arousal[l]);
      all_true.valence.push_back(t.valence[l]);
      all_true.arousal.push_back(t.arousal[l]);
    }
  }
  if (all_pred.size() == 0) throw DataError("evaluate: no valid frames");
  const CCCStats v = ccc(all_pred.valence, all_true.valence);
  const CCCStats a = ccc(all_pred.arousal, all_true.arousal);
  MetricsReport r = make_report(v.ccc, a.ccc, all_pred.size());
  r.degenerate = v.degenerate || a.degenerate;
  return r;
}

double round3(double x) {
  const double mag = std::floor(std::abs(x) * 1000.0 + 0.5 + 1e-9) / 1000.0;
  return x < 0.0 ? -mag : mag;
}

std::string format3(double x) {
  char buf[32];
  const double r = round3(x);
  std::snprintf(buf, sizeof buf, "%.3f", r == 0.0 ? 0.0 : r);
  return buf;
}

std::string to_key_value(const MetricsReport& r) {
  std::ostringstream os;
  os.precision(17);
  os << "valence_ccc=" << r.valence_ccc << '\n'
     << "arousal_ccc=" << r.arousal_ccc << '\n'
     << "avg_ccc=" << r.avg_ccc << '\n'
     << "frames=" << r.frames_evaluated << '\n';
  if (r.degenerate) os << "degenerate=1\n";
  return os.str();
}

std::string csv_header() { return "split,valence_ccc,arousal_ccc,avg_ccc,frames"; }

std::string to_csv_row(const MetricsReport& r, std::string_view split) {
  std::ostringstream os;
  os << split << ',' << format3(r.valence_ccc) << ',' << format3(r.arousal_ccc)
     << ',' << format3(r.avg_ccc) << ',' << r.frames_evaluated;
  return os.str();
}

std::string format_table(const MetricsReport& r) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%-13s%-13s%s\n%-13s%-13s%s\n", "Valence CCC",
                "Arousal CCC", "CCC Avg", format3(r.valence_ccc).c_str(),
                format3(r.arousal_ccc).c_str(), format3(r.avg_ccc).c_str());
  return buf;
}

}  // namespace tagf::objectives
