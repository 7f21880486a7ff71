#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sllmr/data.hpp"
#include "sllmr/eval.hpp"
#include "sllmr/llm.hpp"
#include "sllmr/trainer.hpp"

namespace sllmr::ablation {

/// One seed of the synthetic benchmark: generate, split, mock-score, then
/// train and evaluate each mode on the same data and table.
struct AblationConfig {
  data::SynthConfig synth;
  llm::JobConfig jobs;
  llm::ReliabilityProfile reliability;
  train::TrainConfig train;
  std::vector<train::Mode> modes{train::Mode::none, train::Mode::global, train::Mode::pointwise,
                                 train::Mode::sllmr};
  std::size_t seeds = 5;
  std::uint64_t base_seed = 1;
  std::size_t k_cold = 3;
  std::size_t workers = 1;
};

struct ModeRun {
  train::Mode mode = train::Mode::none;
  std::uint64_t seed = 0;
  eval::EvalReport report;
  train::GateDiagnostics gate;
  std::size_t best_epoch = 0;
};

struct StratumStats {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for one seed
  std::size_t seeds = 0;
};

struct AblationResult {
  std::vector<ModeRun> runs;

  /// Over seeds; stratum is "overall", "cold" or "tail". Seeds whose stratum
  /// is absent are skipped.
  StratumStats stats(train::Mode mode, const std::string& stratum) const;
  /// Mean alpha over cold-or-tail and dense pairs in sllmr runs.
  std::pair<double, double> mean_alpha() const;
};

/// Keys under [train] (or bare), [synth], [jobs], [mock] and [ablate].
/// Unknown keys raise ConfigError.
void apply(const train::KeyValues& kv, AblationConfig& cfg);
void apply_synth(const train::KeyValues& kv, data::SynthConfig& cfg);
void apply_jobs(const train::KeyValues& kv, llm::JobConfig& cfg);
std::string to_ini(const AblationConfig& cfg);

using Progress = std::function<void(const ModeRun&)>;

AblationResult run_ablation(const AblationConfig& cfg, const Progress& progress = {});

/// Rows `mode,stratum,auc_mean,auc_std,seeds`, modes in run order.
std::string comparison_csv(const AblationResult& r, const std::vector<train::Mode>& modes);
/// Stratum x mode matrix of mean AUCs.
std::string matrix_csv(const AblationResult& r, const std::vector<train::Mode>& modes);
/// Per-run rows with every stratum AUC and the gate alphas.
std::string runs_csv(const AblationResult& r);

}  // namespace sllmr::ablation
