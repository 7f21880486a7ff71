#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sllmr/data.hpp"
#include "sllmr/gating.hpp"
#include "sllmr/llm.hpp"
#include "sllmr/model.hpp"
#include "sllmr/optim.hpp"
#include "sllmr/regularizer.hpp"

namespace sllmr::train {

enum class Mode { sllmr, global, pointwise, none };

Mode mode_from_string(std::string_view s);
std::string_view to_string(Mode m);

struct TrainConfig {
  double lr = 1e-3;
  double gate_lr = 1e-3;
  std::size_t batch_users = 16;
  std::size_t batch_size = 128;  // interactions per step
  std::size_t dim = 64;
  double lambda = 0.1;
  double margin = 0.2;
  std::size_t pairs_per_batch = 64;  // K
  std::size_t per_user_cap = 8;
  std::size_t tau_u = 3;
  double tail_fraction = 0.2;
  std::size_t neg_ratio = 4;
  gating::UncertaintyMode uncertainty_mode = gating::UncertaintyMode::entropy;
  double gate_anchor = 0.0;
  std::size_t epochs = 50;
  std::size_t patience = 5;
  std::uint64_t seed = 42;
  Mode mode = Mode::sllmr;
  model::Variant variant = model::Variant::mf_bias;
  std::size_t ensemble_size = 8;
  double dropout_rate = 0.1;
  bool detach_uncertainty = true;
  double grad_clip = 0.0;  // 0 disables; the CLI flag --clip sets 10
  bool dump_pairs = false;

  void validate() const;
};

// ---------------------------------------------------------------------------
// Flat key = value configuration.

using KeyValues = std::map<std::string, std::string>;

/// Parses `key = value` lines; `#`/`;` start comments, `[section]` headers
/// prefix subsequent keys with "section.". Keys outside a section stay bare.
KeyValues parse_ini(const std::string& text);
std::string to_ini(const TrainConfig& cfg);
/// Applies recognised keys; throws ConfigError for unknown keys or bad values.
void apply(const KeyValues& kv, TrainConfig& cfg);
std::vector<std::string> train_config_keys();
KeyValues to_key_values(const TrainConfig& cfg);

// ---------------------------------------------------------------------------

/// Everything one optimizer step consumes, materialised up front so the
/// objective is a pure function of (model, gate) for a fixed batch.
struct StepBatch {
  std::vector<data::UserId> users;
  std::vector<model::LabeledExample> examples;
  std::vector<reg::PairTerm> pair_terms;
  std::vector<reg::PointTarget> point_targets;
};

struct StepLoss {
  double rec = 0.0;
  double llm = 0.0;  // unscaled
  double total = 0.0;
};

enum class PairGroup { cold, tail, dense };
std::string_view to_string(PairGroup g);

struct GateDiagnostics {
  double alpha_cold = 0.0, alpha_tail = 0.0, alpha_dense = 0.0;
  std::size_t n_cold = 0, n_tail = 0, n_dense = 0;
  double active_fraction = 0.0;
  double mean_hinge = 0.0;
  std::size_t pairs = 0;
  std::optional<double> alpha_cold_or_tail() const;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  std::optional<double> val_auc;
  GateDiagnostics gate;
  gating::GateParams gate_params;
};

struct RunManifest {
  TrainConfig config;
  std::string dataset_hash;
  std::string table_hash;
  std::string code_version;
  std::vector<EpochMetrics> epochs;
  std::size_t best_epoch = 0;
  std::optional<double> best_val_auc;
};

/// Receives the manifest before training and each epoch as it completes.
struct RunObserver {
  std::function<void(const RunManifest&)> on_start;
  std::function<void(const EpochMetrics&, const std::vector<reg::PairDiag>&)> on_epoch;
};

struct TrainResult {
  model::BackboneModel model;
  gating::GateParams gate;
  RunManifest manifest;
  std::vector<double> step_losses;  // total loss per optimizer step
};

class Trainer {
 public:
  /// `table` may be null only in Mode::none.
  Trainer(TrainConfig cfg, const data::InteractionDataset& ds, const llm::LlmScoreTable* table);

  const TrainConfig& config() const noexcept { return cfg_; }
  const data::PopularityStats& popularity() const noexcept { return stats_; }
  model::BackboneModel& model() noexcept { return model_; }
  const model::BackboneModel& model() const noexcept { return model_; }
  gating::GateParams& gate() noexcept { return gate_; }
  const gating::GateParams& gate() const noexcept { return gate_; }

  /// Samples users, their positives and negatives, and LLM terms for one step.
  StepBatch sample_step();
  /// Builds the LLM terms (pairs and gate inputs, or pointwise targets) for
  /// the given users and examples using the current parameters.
  StepBatch prepare_step(std::vector<data::UserId> users, std::vector<model::LabeledExample> examples);
  /// Objective of `batch`; accumulates its full gradient when buffers are given.
  StepLoss evaluate_step(const StepBatch& batch, model::GradientBuffer* grad, gating::GateGrad* gate_grad,
                         std::vector<reg::PairDiag>* diag = nullptr) const;
  /// Gradient step on (theta, theta_g); returns the batch loss.
  StepLoss step(const StepBatch& batch);

  gating::GateSignals signals(data::UserId u, data::ItemId i);
  /// Alpha statistics over every user's reference pairs under the current parameters.
  GateDiagnostics gate_diagnostics(std::vector<reg::PairDiag>* pairs = nullptr);
  PairGroup group_of(const reg::RankedPair& p) const;
  std::optional<double> validation_auc() const;
  double validation_loss() const;

  TrainResult run(const RunObserver* observer = nullptr);

 private:
  TrainConfig cfg_;
  const data::InteractionDataset& ds_;
  const llm::LlmScoreTable* table_;
  data::PopularityStats stats_;
  model::BackboneModel model_;
  gating::GateParams gate_;
  reg::PairIndex pairs_;
  std::vector<data::UserId> train_users_;
  std::vector<std::vector<reg::PointTarget>> point_targets_;  // per user
  optim::AdamState adam_model_;
  optim::AdamState adam_gate_;
  Rng sample_rng_;
  Rng dropout_rng_;
  Rng diag_rng_;
  model::GradientBuffer grad_;
  std::vector<std::uint8_t> mask_;
  std::vector<double> ensemble_;

  reg::HingeOptions hinge_options() const;
  gating::GateSignals signals(data::UserId u, data::ItemId i, Rng& rng);
};

TrainResult train(const TrainConfig& cfg, const data::InteractionDataset& ds,
                  const llm::LlmScoreTable* table, const RunObserver* observer = nullptr);

std::string manifest_header_json(const RunManifest& m);
std::string epoch_json(const EpochMetrics& e);
std::string metrics_csv_header();
std::string metrics_csv_row(const EpochMetrics& e);
std::string code_version();

}  // namespace sllmr::train
