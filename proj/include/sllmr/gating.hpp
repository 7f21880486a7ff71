#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>

namespace sllmr::gating {

enum class UncertaintyMode { confidence, entropy, ensemble };

UncertaintyMode uncertainty_mode_from_string(std::string_view s);
std::string_view to_string(UncertaintyMode m);

/// z = [cold(u), tail(i), q(u,i)].
struct GateSignals {
  double cold = 0.0;
  double tail = 0.0;
  double q = 0.0;

  std::array<double, 3> as_array() const { return {cold, tail, q}; }
  friend bool operator==(const GateSignals&, const GateSignals&) = default;
};

struct GateParams {
  std::array<double, 3> w{0.0, 0.0, 0.0};
  double b = 0.0;

  friend bool operator==(const GateParams&, const GateParams&) = default;
};

struct GateGrad {
  std::array<double, 3> w{0.0, 0.0, 0.0};
  double b = 0.0;

  void zero() { *this = GateGrad{}; }
};

// Bernoulli uncertainty, scaled to [0,1].
double confidence_uncertainty(double p);  // 2 * (1 - max(p, 1-p))
double entropy_uncertainty(double p);     // H(p) / ln 2
/// Population variance of the samples divided by 0.25, clamped to [0,1].
double ensemble_uncertainty(std::span<const double> probs);
/// dq/dp for the closed-form modes; used only when q is not detached.
double uncertainty_derivative(double p, UncertaintyMode mode);

/// `ensemble_probs` holds the dropout-masked probabilities and is required
/// (and only read) in ensemble mode.
GateSignals compute_signals(std::size_t history_len, bool item_is_tail, double p,
                            UncertaintyMode mode, std::size_t tau_u,
                            std::span<const double> ensemble_probs = {});

double gate_alpha(const GateParams& params, const GateSignals& z);
inline double pair_alpha(double alpha_i, double alpha_j) { return 0.5 * (alpha_i + alpha_j); }

/// Accumulates dL/dw and dL/db for alpha_pair = (alpha_i + alpha_j) / 2.
void gate_backward(const GateParams& params, const GateSignals& z_i, const GateSignals& z_j,
                   double dloss_dalpha_pair, GateGrad& grad);

/// d alpha_pair / d q_i and d q_j; feeds the optional undetached path.
std::array<double, 2> pair_alpha_dq(const GateParams& params, const GateSignals& z_i,
                                    const GateSignals& z_j);

}  // namespace sllmr::gating
