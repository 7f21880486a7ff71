#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "sllmr/data.hpp"
#include "sllmr/model.hpp"

namespace sllmr::kernels {

enum class NegativePolicy { all, sampled };

struct RankingOptions {
  NegativePolicy policy = NegativePolicy::all;
  std::size_t sample_size = 1000;
  std::uint64_t seed = 0;
};

/// One held-out positive ranked against its negative set.
struct InteractionAuc {
  double auc = 0.0;  // (#neg below + 0.5 #neg tied) / #neg
  std::size_t negatives = 0;

  friend bool operator==(const InteractionAuc&, const InteractionAuc&) = default;
};

/// Negatives of interaction k: every item outside the user's train/val/test
/// sets, or a seeded uniform subsample of them under NegativePolicy::sampled.
std::vector<data::ItemId> negative_items(const data::InteractionDataset& ds, std::size_t k,
                                         const RankingOptions& opt);

/// OpenMP-parallel over interactions; each result lands in its own slot so
/// the output is independent of the thread count.
std::vector<InteractionAuc> interaction_auc(const model::BackboneModel& model,
                                            const data::InteractionDataset& ds,
                                            std::span<const std::size_t> indices,
                                            const RankingOptions& opt);

/// s(u, i) for every item, OpenMP-parallel over items.
void score_all_items(const model::BackboneModel& model, data::UserId u, std::span<double> out);

namespace reference {

/// Serial, sort-based counterpart of kernels::interaction_auc.
std::vector<InteractionAuc> interaction_auc(const model::BackboneModel& model,
                                            const data::InteractionDataset& ds,
                                            std::span<const std::size_t> indices,
                                            const RankingOptions& opt);

void score_all_items(const model::BackboneModel& model, data::UserId u, std::span<double> out);

}  // namespace reference

}  // namespace sllmr::kernels
