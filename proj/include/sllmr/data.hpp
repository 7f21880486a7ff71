#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace sllmr::data {

using UserId = std::uint32_t;
using ItemId = std::uint32_t;

enum class Split : std::uint8_t { train, val, test };

struct Interaction {
  UserId user = 0;
  ItemId item = 0;
  std::int64_t timestamp = 0;
  std::uint8_t label = 1;  // implicit feedback: always 1 for observed events

  friend bool operator==(const Interaction&, const Interaction&) = default;
};

/// Bidirectional external-id <-> dense-index table. Indices are assigned in
/// insertion order.
class IdMap {
 public:
  std::uint32_t add(const std::string& external);
  std::optional<std::uint32_t> find(const std::string& external) const;
  const std::string& external(std::uint32_t index) const { return names_.at(index); }
  std::size_t size() const noexcept { return names_.size(); }

  friend bool operator==(const IdMap& a, const IdMap& b) { return a.names_ == b.names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::uint32_t> index_;
};

/// Time-ordered interaction log with dense ids and, after
/// chronological_split, per-interaction split tags and per-user lookups.
struct InteractionDataset {
  std::vector<Interaction> interactions;  // sorted by (user, timestamp)
  std::vector<Split> split;               // parallel to interactions; empty until split
  std::size_t num_users = 0;
  std::size_t num_items = 0;
  IdMap users;
  IdMap items;
  std::size_t duplicates_dropped = 0;

  // CSR offsets: events of user u are interactions[user_offsets[u] .. user_offsets[u+1]).
  std::vector<std::size_t> user_offsets;

  // Filled by chronological_split.
  std::vector<std::vector<ItemId>> train_items;  // per user, sorted unique
  std::vector<std::vector<ItemId>> seen_items;   // train ∪ val ∪ test, sorted unique
  std::vector<std::size_t> train_length;         // per user, number of train events

  bool is_split() const noexcept { return split.size() == interactions.size() && !split.empty(); }
  std::span<const Interaction> user_events(UserId u) const;
  std::vector<std::size_t> indices_with(Split s) const;
  std::size_t count(Split s) const;
  /// Train items of u, most recent last, duplicates kept.
  std::vector<ItemId> train_history(UserId u) const;
  bool has_trained(UserId u, ItemId i) const;
  bool has_seen(UserId u, ItemId i) const;

  /// Rebuilds user_offsets from the sorted interaction list.
  void index_users();
};

enum class InputFormat { csv, jsonl };

/// Reads `user_id,item_id,timestamp` rows. Extra columns/keys (ratings, ...)
/// are ignored. Throws ParseError naming the offending line.
InteractionDataset load_interactions(const std::string& path, InputFormat format);
InteractionDataset parse_interactions(const std::string& text, InputFormat format);
InputFormat format_from_path(const std::string& path);

/// Canonical CSV with external ids, in (user, timestamp) order.
std::string to_csv(const InteractionDataset& ds);
void save_interactions(const InteractionDataset& ds, const std::string& path);
std::string dataset_hash(const InteractionDataset& ds);

/// Per-user leave-one-out: last -> test, second-to-last -> val (needs >= 3
/// events), the rest -> train. A user with one event is train-only.
void chronological_split(InteractionDataset& ds);

struct PopularityStats {
  std::vector<std::size_t> counts;  // train-split counts per item
  std::vector<bool> is_tail;
  std::size_t tail_threshold = 0;   // count of the most popular tail item
  std::size_t tail_size = 0;
  double tail_fraction = 0.0;

  bool tail(ItemId i) const { return is_tail[i]; }
  /// Items sorted by (count desc, index asc).
  std::vector<ItemId> by_popularity() const;
};

/// Tail set is the floor(tail_fraction * num_items) least popular items,
/// ties broken by ascending item index.
PopularityStats compute_popularity(const InteractionDataset& ds, double tail_fraction);

struct Strata {
  std::vector<std::size_t> overall;  // indices into ds.interactions
  std::vector<std::size_t> cold;
  std::vector<std::size_t> tail;

  friend bool operator==(const Strata&, const Strata&) = default;
};

Strata stratify(const InteractionDataset& ds, const PopularityStats& stats, std::size_t k_cold);

// ---------------------------------------------------------------------------
// Synthetic benchmark generator.

struct SynthConfig {
  std::size_t num_users = 2000;
  std::size_t num_items = 500;
  std::size_t latent_dim = 16;
  double cold_user_fraction = 0.5;   // share of users drawn with 2..4 events
  std::size_t min_dense_events = 5;
  std::size_t max_events = 60;
  double dense_count_alpha = 1.2;    // Pareto shape for dense users' event counts
  double affinity_scale = 3.0;       // multiplies the latent dot product
  double popularity_strength = 1.5;  // spread of the log-popularity item bias
  double temperature = 1.0;
};

/// Latent preference model the generator sampled from, in the dataset's
/// dense indexing.
struct SyntheticTruth {
  std::size_t dim = 0;
  double affinity_scale = 1.0;
  std::vector<double> user_factors;  // num_users x dim
  std::vector<double> item_factors;  // num_items x dim
  std::vector<double> item_bias;
  std::vector<std::string> user_ids;
  std::vector<std::string> item_ids;

  double affinity(UserId u, ItemId i) const;

  friend bool operator==(const SyntheticTruth&, const SyntheticTruth&) = default;
};

struct SyntheticData {
  InteractionDataset dataset;  // unsplit, ids in first-seen order
  SyntheticTruth truth;
};

SyntheticData synth_generate(const SynthConfig& cfg, std::uint64_t seed);

void save_truth(const SyntheticTruth& truth, const std::string& path);
/// Loads truth and re-indexes it onto `ds`'s dense ids.
SyntheticTruth load_truth(const std::string& path, const InteractionDataset& ds);

}  // namespace sllmr::data
