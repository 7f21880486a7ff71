#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sllmr/data.hpp"
#include "sllmr/kernels.hpp"
#include "sllmr/model.hpp"

namespace sllmr::eval {

/// Probability a positive outranks a negative, ties counted half. Sort and
/// rank, O((P+N) log(P+N)). Empty side -> nullopt.
std::optional<double> auc(std::span<const double> pos, std::span<const double> neg);

struct Summary {
  double min = 0.0, median = 0.0, max = 0.0;
  friend bool operator==(const Summary&, const Summary&) = default;
};

struct StratumResult {
  std::string name;
  std::optional<double> auc;     // mean of per-interaction AUCs
  std::optional<double> pooled;  // pair-count-weighted, only when requested
  std::size_t n = 0;
  std::string reason;  // why auc is absent
  std::optional<Summary> per_interaction;

  friend bool operator==(const StratumResult&, const StratumResult&) = default;
};

struct EvalOptions {
  kernels::RankingOptions ranking;
  bool pooled = false;
  std::size_t k_cold = 3;
  double tail_fraction = 0.2;
};

struct EvalReport {
  StratumResult overall, cold, tail;
  std::size_t overlap = 0;  // interactions in both cold and tail
  std::optional<Summary> per_user;
  std::string policy;
  std::size_t k_cold = 3;
  double tail_fraction = 0.2;
  std::string dataset_hash;
  std::string model_hash;

  std::vector<const StratumResult*> strata() const { return {&overall, &cold, &tail}; }
  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

EvalReport evaluate(const model::BackboneModel& model, const data::InteractionDataset& ds,
                    const data::Strata& strata, const EvalOptions& opt);

enum class ReportFormat { json, csv };

std::string report_json(const EvalReport& r);
EvalReport report_from_json(const std::string& text);
/// Header `stratum,auc,n`; absent AUCs are left empty.
std::string report_csv(const EvalReport& r);
void emit_report(const EvalReport& r, const std::string& path, ReportFormat format);
/// Throws ContractError naming the first absent stratum.
void require_all_strata(const EvalReport& r);

}  // namespace sllmr::eval
