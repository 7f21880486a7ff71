// Serial reference versions of the ranking kernels. Kept deliberately naive:
// tests compare the parallel kernels against these.

#include "sllmr/eval.hpp"
#include "sllmr/kernels.hpp"

namespace sllmr::kernels::reference {

void score_all_items(const model::BackboneModel& model, data::UserId u, std::span<double> out) {
  for (data::ItemId i = 0; i < model.num_items(); ++i) out[i] = model.score(u, i);
}

std::vector<InteractionAuc> interaction_auc(const model::BackboneModel& model,
                                            const data::InteractionDataset& ds,
                                            std::span<const std::size_t> indices,
                                            const RankingOptions& opt) {
  std::vector<InteractionAuc> out;
  out.reserve(indices.size());
  std::vector<double> all(model.num_items());
  for (std::size_t k : indices) {
    const auto& x = ds.interactions[k];
    score_all_items(model, x.user, all);
    const auto negs = negative_items(ds, k, opt);
    std::vector<double> neg_scores;
    neg_scores.reserve(negs.size());
    for (auto j : negs) neg_scores.push_back(all[j]);
    const double pos = all[x.item];
    InteractionAuc r;
    r.negatives = negs.size();
    if (auto a = eval::auc(std::span<const double>(&pos, 1), neg_scores)) r.auc = *a;
    out.push_back(r);
  }
  return out;
}

}  // namespace sllmr::kernels::reference
