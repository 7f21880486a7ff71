#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace sllmr::optim {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m, v;
  long long t = 0;

  explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

/// One bias-corrected Adam update in place.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               const AdamConfig& cfg);

/// Scales grads so their joint L2 norm is at most max_norm; returns the pre-clip norm.
double clip_grad_norm(std::span<double> a, std::span<double> b, double max_norm);

}  // namespace sllmr::optim
