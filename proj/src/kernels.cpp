#include "sllmr/kernels.hpp"

#include <algorithm>

#include <omp.h>

#include "sllmr/common.hpp"

namespace sllmr::kernels {

std::vector<data::ItemId> negative_items(const data::InteractionDataset& ds, std::size_t k,
                                         const RankingOptions& opt) {
  const auto u = ds.interactions.at(k).user;
  std::vector<data::ItemId> out;
  out.reserve(ds.num_items);
  const auto& seen = ds.seen_items[u];
  auto it = seen.begin();
  for (data::ItemId j = 0; j < ds.num_items; ++j) {
    while (it != seen.end() && *it < j) ++it;
    if (it != seen.end() && *it == j) continue;
    out.push_back(j);
  }
  if (opt.policy == NegativePolicy::sampled && out.size() > opt.sample_size) {
    Rng rng(mix_seed(opt.seed, k));
    for (std::size_t a = 0; a < opt.sample_size; ++a)
      std::swap(out[a], out[a + rng.index(out.size() - a)]);
    out.resize(opt.sample_size);
    std::sort(out.begin(), out.end());
  }
  return out;
}

void score_all_items(const model::BackboneModel& model, data::UserId u, std::span<double> out) {
  const auto n = static_cast<std::ptrdiff_t>(model.num_items());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) out[i] = model.score_unchecked(u, static_cast<data::ItemId>(i));
}

std::vector<InteractionAuc> interaction_auc(const model::BackboneModel& model,
                                            const data::InteractionDataset& ds,
                                            std::span<const std::size_t> indices,
                                            const RankingOptions& opt) {
  std::vector<InteractionAuc> out(indices.size());
  const auto n = static_cast<std::ptrdiff_t>(indices.size());
#pragma omp parallel for schedule(dynamic, 16)
  for (std::ptrdiff_t t = 0; t < n; ++t) {
    const std::size_t k = indices[t];
    const auto& x = ds.interactions[k];
    const double pos = model.score_unchecked(x.user, x.item);
    const auto negs = negative_items(ds, k, opt);
    std::size_t below = 0, tied = 0;
    for (auto j : negs) {
      const double s = model.score_unchecked(x.user, j);
      below += s < pos;
      tied += s == pos;
    }
    InteractionAuc r;
    r.negatives = negs.size();
    if (r.negatives)
      r.auc = (static_cast<double>(below) + 0.5 * static_cast<double>(tied)) / static_cast<double>(r.negatives);
    out[t] = r;
  }
  return out;
}

}  // namespace sllmr::kernels
