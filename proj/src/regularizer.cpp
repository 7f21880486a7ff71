#include "sllmr/regularizer.hpp"

#include <algorithm>

#include "sllmr/common.hpp"

namespace sllmr::reg {

bool pair_before(const RankedPair& a, const RankedPair& b) {
  if (a.delta != b.delta) return a.delta > b.delta;
  if (a.user != b.user) return a.user < b.user;
  if (a.winner != b.winner) return a.winner < b.winner;
  return a.loser < b.loser;
}

namespace {

llm::ScoreSource pair_source(llm::ScoreSource a, llm::ScoreSource b) {
  using llm::ScoreSource;
  if (a == ScoreSource::tail_aug || b == ScoreSource::tail_aug) return ScoreSource::tail_aug;
  if (a == ScoreSource::cold_aug || b == ScoreSource::cold_aug) return ScoreSource::cold_aug;
  if (a == ScoreSource::mock || b == ScoreSource::mock) return ScoreSource::mock;
  return ScoreSource::history;
}

PairBatch select_from(std::span<const std::span<const RankedPair>> lists, std::size_t K,
                      std::size_t cap) {
  PairBatch out;
  std::size_t active = 0;
  for (const auto& l : lists) active += !l.empty();
  if (active == 0) return out;
  const std::size_t quota = std::max<std::size_t>(1, std::min(cap, K / active));
  std::size_t quota_sum = 0;
  std::vector<RankedPair> rest;
  for (const auto& l : lists) {
    if (l.empty()) continue;
    const std::size_t take = std::min(quota, l.size());
    quota_sum += take;
    out.pairs.push_back(l[0]);
    rest.insert(rest.end(), l.begin() + 1, l.begin() + static_cast<std::ptrdiff_t>(take));
  }
  const std::size_t target = std::max(active, std::min(K, quota_sum));
  const std::size_t extra = std::min(target - active, rest.size());
  std::partial_sort(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(extra), rest.end(), pair_before);
  out.pairs.insert(out.pairs.end(), rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(extra));
  std::sort(out.pairs.begin(), out.pairs.end(), pair_before);
  return out;
}

std::vector<UserId> unique_users(std::span<const UserId> users) {
  std::vector<UserId> u(users.begin(), users.end());
  std::sort(u.begin(), u.end());
  u.erase(std::unique(u.begin(), u.end()), u.end());
  return u;
}

}  // namespace

std::vector<RankedPair> user_pairs(const llm::LlmScoreTable& table, UserId u) {
  auto entries = table.user_entries(u);
  std::stable_sort(entries.begin(), entries.end(),
                   [](const auto& a, const auto& b) { return a.score > b.score; });
  std::vector<RankedPair> pairs;
  for (std::size_t a = 0; a < entries.size(); ++a)
    for (std::size_t b = a + 1; b < entries.size(); ++b) {
      const double delta = entries[a].score - entries[b].score;
      if (!(delta > 0.0)) continue;
      pairs.push_back({u, entries[a].item, entries[b].item, delta,
                       pair_source(entries[a].source, entries[b].source)});
    }
  std::sort(pairs.begin(), pairs.end(), pair_before);
  return pairs;
}

PairBatch construct_pairs(std::span<const UserId> users, const llm::LlmScoreTable& table,
                          std::size_t K, std::size_t per_user_cap) {
  if (K == 0) throw ConfigError("pairs per batch K must be >= 1");
  const auto ids = unique_users(users);
  std::vector<std::vector<RankedPair>> owned;
  owned.reserve(ids.size());
  for (UserId u : ids) owned.push_back(user_pairs(table, u));
  std::vector<std::span<const RankedPair>> lists(owned.begin(), owned.end());
  return select_from(lists, K, per_user_cap);
}

PairIndex::PairIndex(const llm::LlmScoreTable& table, std::size_t num_users, std::size_t per_user_cap)
    : cap_(per_user_cap), per_user_(num_users) {
  for (UserId u = 0; u < num_users; ++u) {
    auto pairs = user_pairs(table, u);
    if (pairs.size() > std::max<std::size_t>(1, cap_)) pairs.resize(std::max<std::size_t>(1, cap_));
    per_user_[u] = std::move(pairs);
  }
}

PairBatch PairIndex::select(std::span<const UserId> users, std::size_t K) const {
  if (K == 0) throw ConfigError("pairs per batch K must be >= 1");
  std::vector<std::span<const RankedPair>> lists;
  for (UserId u : unique_users(users)) lists.emplace_back(per_user_.at(u));
  return select_from(lists, K, cap_);
}

namespace {

double uncertainty_of(double p, gating::UncertaintyMode mode) {
  return mode == gating::UncertaintyMode::confidence ? gating::confidence_uncertainty(p)
                                                     : gating::entropy_uncertainty(p);
}

}  // namespace

double llm_loss_and_grad(std::span<const PairTerm> terms, const model::BackboneModel& model,
                         const gating::GateParams& gate, const HingeOptions& opt,
                         model::GradientBuffer* grad, gating::GateGrad* gate_grad,
                         std::vector<PairDiag>* diag) {
  if (!(opt.margin > 0.0)) throw ConfigError("hinge margin must be positive");
  const bool undetached = opt.gated && !opt.detach_uncertainty;
  if (undetached && opt.mode == gating::UncertaintyMode::ensemble)
    throw ConfigError("ensemble uncertainty requires detach_uncertainty = true");
  double loss = 0.0;
  for (const auto& t : terms) {
    const auto& pr = t.pair;
    const double sw = model.score(pr.user, pr.winner);
    const double sl = model.score(pr.user, pr.loser);
    const double gap = opt.margin - (sw - sl);
    const double hinge = gap > 0.0 ? gap : 0.0;
    // Undetached q must follow the current parameters for the gradient to be exact.
    gating::GateSignals zw = t.z_winner, zl = t.z_loser;
    if (undetached) {
      zw.q = uncertainty_of(sigmoid(sw), opt.mode);
      zl.q = uncertainty_of(sigmoid(sl), opt.mode);
    }
    double alpha = 1.0;
    if (opt.gated) alpha = gating::pair_alpha(gating::gate_alpha(gate, zw), gating::gate_alpha(gate, zl));
    loss += alpha * hinge;
    if (opt.gated && opt.gate_anchor != 0.0) loss += opt.gate_anchor * (alpha - 0.5) * (alpha - 0.5);
    if (diag) diag->push_back({pr, alpha, hinge});

    if (grad && gap > 0.0) {
      add_score_grad(model, pr.user, pr.winner, -opt.weight * alpha, *grad);
      add_score_grad(model, pr.user, pr.loser, opt.weight * alpha, *grad);
    }
    if (!opt.gated) continue;
    const double dl_dalpha = hinge + 2.0 * opt.gate_anchor * (alpha - 0.5);
    if (gate_grad) gating::gate_backward(gate, zw, zl, opt.weight * dl_dalpha, *gate_grad);
    if (grad && undetached && dl_dalpha != 0.0) {
      const auto dq = gating::pair_alpha_dq(gate, zw, zl);
      const double pw = sigmoid(sw), pl = sigmoid(sl);
      const double cw = dq[0] * gating::uncertainty_derivative(pw, opt.mode) * pw * (1.0 - pw);
      const double cl = dq[1] * gating::uncertainty_derivative(pl, opt.mode) * pl * (1.0 - pl);
      add_score_grad(model, pr.user, pr.winner, opt.weight * dl_dalpha * cw, *grad);
      add_score_grad(model, pr.user, pr.loser, opt.weight * dl_dalpha * cl, *grad);
    }
  }
  return loss;
}

double pointwise_llm_loss(std::span<const PointTarget> entries, const model::BackboneModel& model,
                          double weight, model::GradientBuffer* grad) {
  if (entries.empty()) return 0.0;
  const double inv_n = 1.0 / static_cast<double>(entries.size());
  double loss = 0.0;
  for (const auto& e : entries) {
    const double p = model.predict_prob(e.user, e.item);
    const double r = p - e.target;
    loss += r * r;
    if (grad) add_score_grad(model, e.user, e.item, weight * inv_n * 2.0 * r * p * (1.0 - p), *grad);
  }
  return loss * inv_n;
}

}  // namespace sllmr::reg
