#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sllmr/common.hpp"
#include "sllmr/data.hpp"
#include "sllmr/gating.hpp"

namespace sllmr::model {

using data::ItemId;
using data::UserId;

enum class Variant { mf_bias, fm_lite };

Variant variant_from_string(std::string_view s);
std::string_view to_string(Variant v);

/// Positions of each named tensor inside the flat parameter vector.
struct ParamLayout {
  std::size_t num_users = 0, num_items = 0, dim = 0;
  std::size_t user_emb = 0, item_emb = 0, user_bias = 0, item_bias = 0, global_bias = 0;
  std::size_t projection = 0, gain = 0;  // fm_lite only
  std::size_t total = 0;

  static ParamLayout make(Variant v, std::size_t users, std::size_t items, std::size_t dim);
};

/// Embedding recommender with a hand-derived gradient.
///
///   mf_bias: s = <P_u, Q_i> + b_u + b_i + b_g
///   fm_lite: s = mf_bias + g * sum_k r_k P_uk Q_ik
///
/// where r is a learned projection over the elementwise interaction and g a
/// learned scalar gain (both zero-cost when the variant is mf_bias).
class BackboneModel {
 public:
  BackboneModel() = default;
  BackboneModel(Variant variant, std::size_t num_users, std::size_t num_items, std::size_t dim);

  /// Embeddings (and the fm_lite projection) ~ U(-0.1/sqrt(d), 0.1/sqrt(d)); biases and gain 0.
  static BackboneModel init(Variant variant, std::size_t num_users, std::size_t num_items,
                            std::size_t dim, std::uint64_t seed);

  Variant variant() const noexcept { return variant_; }
  const ParamLayout& layout() const noexcept { return layout_; }
  std::size_t num_users() const noexcept { return layout_.num_users; }
  std::size_t num_items() const noexcept { return layout_.num_items; }
  std::size_t dim() const noexcept { return layout_.dim; }

  std::span<double> params() noexcept { return params_; }
  std::span<const double> params() const noexcept { return params_; }

  std::span<double> user_vec(UserId u) { return {&params_[layout_.user_emb + u * layout_.dim], layout_.dim}; }
  std::span<const double> user_vec(UserId u) const {
    return {&params_[layout_.user_emb + u * layout_.dim], layout_.dim};
  }
  std::span<double> item_vec(ItemId i) { return {&params_[layout_.item_emb + i * layout_.dim], layout_.dim}; }
  std::span<const double> item_vec(ItemId i) const {
    return {&params_[layout_.item_emb + i * layout_.dim], layout_.dim};
  }
  double& user_bias(UserId u) { return params_[layout_.user_bias + u]; }
  double& item_bias(ItemId i) { return params_[layout_.item_bias + i]; }
  double& global_bias() { return params_[layout_.global_bias]; }
  std::span<double> projection() { return {&params_[layout_.projection], variant_ == Variant::fm_lite ? layout_.dim : 0}; }
  double& gain() { return params_[layout_.gain]; }

  /// Logit s(u, i). Throws ContractError for out-of-range indices.
  double score(UserId u, ItemId i) const;
  /// Same as score() without bounds checks.
  double score_unchecked(UserId u, ItemId i) const noexcept;
  double predict_prob(UserId u, ItemId i) const { return sigmoid(score(u, i)); }

  /// Score with a dropout mask on the embedding coordinates of the
  /// interaction term (kept coordinates rescaled by 1/keep).
  double score_masked(UserId u, ItemId i, std::span<const std::uint8_t> keep_mask, double keep) const;

  friend bool operator==(const BackboneModel& a, const BackboneModel& b) {
    return a.variant_ == b.variant_ && a.layout_.total == b.layout_.total && a.params_ == b.params_;
  }

 private:
  Variant variant_ = Variant::mf_bias;
  ParamLayout layout_;
  std::vector<double> params_;
};

/// dL/dtheta in the BackboneModel::params layout.
class GradientBuffer {
 public:
  GradientBuffer() = default;
  explicit GradientBuffer(const BackboneModel& model) : grad_(model.params().size(), 0.0) {}

  void zero() { std::fill(grad_.begin(), grad_.end(), 0.0); }
  std::span<double> values() noexcept { return grad_; }
  std::span<const double> values() const noexcept { return grad_; }
  bool congruent(const BackboneModel& m) const { return grad_.size() == m.params().size(); }

 private:
  std::vector<double> grad_;
};

/// grad += coeff * d s(u,i) / d theta.
void add_score_grad(const BackboneModel& model, UserId u, ItemId i, double coeff, GradientBuffer& grad);

struct LabeledExample {
  UserId user;
  ItemId item;
  double label;
};

/// Positives plus `neg_ratio` uniform negatives per positive, drawn from items
/// the user has not trained on.
std::vector<LabeledExample> with_sampled_negatives(const data::InteractionDataset& ds,
                                                   std::span<const data::Interaction> positives,
                                                   std::size_t neg_ratio, Rng& rng);

/// Mean binary cross-entropy; accumulates `scale * dBCE/dtheta` when grad is non-null.
double bce_loss_and_grad(const BackboneModel& model, std::span<const LabeledExample> examples,
                         double scale, GradientBuffer* grad);

/// Base recommendation loss: samples negatives, then BCE.
double rec_loss_and_grad(const BackboneModel& model, const data::InteractionDataset& ds,
                         std::span<const data::Interaction> positives, std::size_t neg_ratio,
                         Rng& rng, GradientBuffer* grad);

// ---------------------------------------------------------------------------
// Checkpoints: JSONL of named tensors, backbone.* then gate.*.

struct Checkpoint {
  BackboneModel model;
  gating::GateParams gate;
};

std::string serialize_checkpoint(const BackboneModel& model, const gating::GateParams& gate);
Checkpoint parse_checkpoint(const std::string& text);
void save_checkpoint(const BackboneModel& model, const gating::GateParams& gate, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace sllmr::model
