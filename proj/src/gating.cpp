#include "sllmr/gating.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "sllmr/common.hpp"

namespace sllmr::gating {

UncertaintyMode uncertainty_mode_from_string(std::string_view s) {
  if (s == "confidence") return UncertaintyMode::confidence;
  if (s == "entropy") return UncertaintyMode::entropy;
  if (s == "ensemble") return UncertaintyMode::ensemble;
  throw ConfigError("unknown uncertainty mode '" + std::string(s) +
                    "' (expected confidence, entropy or ensemble)");
}

std::string_view to_string(UncertaintyMode m) {
  switch (m) {
    case UncertaintyMode::confidence: return "confidence";
    case UncertaintyMode::entropy: return "entropy";
    case UncertaintyMode::ensemble: return "ensemble";
  }
  return "confidence";
}

double confidence_uncertainty(double p) { return 2.0 * (1.0 - std::max(p, 1.0 - p)); }

double entropy_uncertainty(double p) {
  auto term = [](double x) { return x > 0.0 ? -x * std::log(x) : 0.0; };
  return std::clamp((term(p) + term(1.0 - p)) / std::numbers::ln2, 0.0, 1.0);
}

double ensemble_uncertainty(std::span<const double> probs) {
  if (probs.size() < 2) return 0.0;
  double mean = 0.0;
  for (double p : probs) mean += p;
  mean /= static_cast<double>(probs.size());
  double var = 0.0;
  for (double p : probs) var += (p - mean) * (p - mean);
  var /= static_cast<double>(probs.size());
  return std::clamp(var / 0.25, 0.0, 1.0);
}

double uncertainty_derivative(double p, UncertaintyMode mode) {
  switch (mode) {
    case UncertaintyMode::confidence:
      // q = 1 - |2p - 1|; the kink at p = 0.5 takes derivative 0.
      return p < 0.5 ? 2.0 : (p > 0.5 ? -2.0 : 0.0);
    case UncertaintyMode::entropy:
      return std::log((1.0 - p) / p) / std::numbers::ln2;
    case UncertaintyMode::ensemble:
      break;
  }
  throw ConfigError("ensemble uncertainty cannot be differentiated; keep q detached");
}

GateSignals compute_signals(std::size_t history_len, bool item_is_tail, double p,
                            UncertaintyMode mode, std::size_t tau_u,
                            std::span<const double> ensemble_probs) {
  GateSignals z;
  z.cold = history_len < tau_u ? 1.0 : 0.0;
  z.tail = item_is_tail ? 1.0 : 0.0;
  switch (mode) {
    case UncertaintyMode::confidence: z.q = confidence_uncertainty(p); break;
    case UncertaintyMode::entropy: z.q = entropy_uncertainty(p); break;
    case UncertaintyMode::ensemble:
      if (ensemble_probs.empty()) throw ContractError("ensemble mode needs sampled probabilities");
      z.q = ensemble_uncertainty(ensemble_probs);
      break;
  }
  return z;
}

double gate_alpha(const GateParams& params, const GateSignals& z) {
  const auto v = z.as_array();
  double x = params.b;
  for (int k = 0; k < 3; ++k) x += params.w[k] * v[k];
  return sigmoid(x);
}

void gate_backward(const GateParams& params, const GateSignals& z_i, const GateSignals& z_j,
                   double dloss_dalpha_pair, GateGrad& grad) {
  if (dloss_dalpha_pair == 0.0) return;
  const double ai = gate_alpha(params, z_i), aj = gate_alpha(params, z_j);
  const double si = 0.5 * ai * (1.0 - ai) * dloss_dalpha_pair;
  const double sj = 0.5 * aj * (1.0 - aj) * dloss_dalpha_pair;
  const auto vi = z_i.as_array(), vj = z_j.as_array();
  for (int k = 0; k < 3; ++k) grad.w[k] += si * vi[k] + sj * vj[k];
  grad.b += si + sj;
}

std::array<double, 2> pair_alpha_dq(const GateParams& params, const GateSignals& z_i,
                                    const GateSignals& z_j) {
  const double ai = gate_alpha(params, z_i), aj = gate_alpha(params, z_j);
  return {0.5 * ai * (1.0 - ai) * params.w[2], 0.5 * aj * (1.0 - aj) * params.w[2]};
}

}  // namespace sllmr::gating
