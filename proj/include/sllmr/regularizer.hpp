#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "sllmr/gating.hpp"
#include "sllmr/llm.hpp"
#include "sllmr/model.hpp"

namespace sllmr::reg {

using data::ItemId;
using data::UserId;

struct RankedPair {
  UserId user = 0;
  ItemId winner = 0;
  ItemId loser = 0;
  double delta = 0.0;  // table score of winner minus loser, > 0
  llm::ScoreSource source = llm::ScoreSource::history;

  friend bool operator==(const RankedPair&, const RankedPair&) = default;
};

struct PairBatch {
  std::vector<RankedPair> pairs;  // delta desc, then (user, winner, loser) asc
};

/// Order used for every pair ranking: delta desc, then (user, winner, loser) asc.
bool pair_before(const RankedPair& a, const RankedPair& b);

/// All strictly ordered pairs over u's stored entries, ranked by pair_before.
std::vector<RankedPair> user_pairs(const llm::LlmScoreTable& table, UserId u);

/// Per-user quota = max(1, min(per_user_cap, K / n_active)) where n_active
/// counts batch users that own at least one pair. The batch keeps each
/// active user's best pair, then fills up to max(n_active, min(K, sum of
/// quotas)) with the largest remaining deltas inside the quotas.
PairBatch construct_pairs(std::span<const UserId> users, const llm::LlmScoreTable& table,
                          std::size_t K, std::size_t per_user_cap);

/// Caches each user's best `per_user_cap` pairs so the per-step selection
/// avoids re-enumerating the table. select() equals construct_pairs().
class PairIndex {
 public:
  PairIndex() = default;
  PairIndex(const llm::LlmScoreTable& table, std::size_t num_users, std::size_t per_user_cap);

  PairBatch select(std::span<const UserId> users, std::size_t K) const;
  std::span<const RankedPair> pairs_of(UserId u) const { return per_user_[u]; }
  std::size_t per_user_cap() const noexcept { return cap_; }

 private:
  std::size_t cap_ = 0;
  std::vector<std::vector<RankedPair>> per_user_;
};

/// A pair together with the gate inputs of its two endpoints.
struct PairTerm {
  RankedPair pair;
  gating::GateSignals z_winner;
  gating::GateSignals z_loser;
};

struct HingeOptions {
  double margin = 0.2;
  double weight = 1.0;       // lambda; scales the accumulated gradients only
  bool gated = true;         // false forces alpha = 1 (global regularization)
  double gate_anchor = 0.0;  // gamma in gamma * sum (alpha - 0.5)^2
  bool detach_uncertainty = true;
  gating::UncertaintyMode mode = gating::UncertaintyMode::confidence;
};

struct PairDiag {
  RankedPair pair;
  double alpha = 0.0;
  double hinge = 0.0;
};

/// Returns L_LLM = sum alpha * max(0, m - (s_w - s_l)) + gamma * sum (alpha - 0.5)^2
/// (unscaled). Accumulates weight * dL_LLM into grad / gate_grad when given.
/// Pairs exactly at the margin take a zero subgradient.
double llm_loss_and_grad(std::span<const PairTerm> terms, const model::BackboneModel& model,
                         const gating::GateParams& gate, const HingeOptions& opt,
                         model::GradientBuffer* grad, gating::GateGrad* gate_grad,
                         std::vector<PairDiag>* diag = nullptr);

struct PointTarget {
  UserId user;
  ItemId item;
  double target;
};

/// Mean of (sigmoid(s) - target)^2; accumulates weight * gradient.
double pointwise_llm_loss(std::span<const PointTarget> entries, const model::BackboneModel& model,
                          double weight, model::GradientBuffer* grad);

}  // namespace sllmr::reg
