#include "sllmr/optim.hpp"

#include <cmath>

#include "sllmr/common.hpp"

namespace sllmr::optim {

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               const AdamConfig& cfg) {
  if (params.size() != grads.size() || state.m.size() != params.size())
    throw ContractError("adam_step: parameter, gradient and state shapes differ");
  ++state.t;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    const double g = grads[k];
    state.m[k] = cfg.beta1 * state.m[k] + (1.0 - cfg.beta1) * g;
    state.v[k] = cfg.beta2 * state.v[k] + (1.0 - cfg.beta2) * g * g;
    const double mhat = state.m[k] / c1;
    const double vhat = state.v[k] / c2;
    params[k] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

double clip_grad_norm(std::span<double> a, std::span<double> b, double max_norm) {
  double sq = 0.0;
  for (double x : a) sq += x * x;
  for (double x : b) sq += x * x;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (double& x : a) x *= s;
    for (double& x : b) x *= s;
  }
  return norm;
}

}  // namespace sllmr::optim
