#include "sllmr/eval.hpp"

#include <algorithm>
#include <numeric>

#include "json.hpp"
#include "sllmr/common.hpp"

namespace sllmr::eval {

using ojson = nlohmann::ordered_json;

std::optional<double> auc(std::span<const double> pos, std::span<const double> neg) {
  if (pos.empty() || neg.empty()) return std::nullopt;
  struct Tagged {
    double score;
    bool positive;
  };
  std::vector<Tagged> all;
  all.reserve(pos.size() + neg.size());
  for (double s : pos) all.push_back({s, true});
  for (double s : neg) all.push_back({s, false});
  std::sort(all.begin(), all.end(), [](const Tagged& a, const Tagged& b) { return a.score < b.score; });
  // Sum of 1-based ranks of the positives, ties sharing their mean rank.
  double rank_sum = 0.0;
  for (std::size_t a = 0; a < all.size();) {
    std::size_t b = a;
    std::size_t n_pos = 0;
    while (b < all.size() && all[b].score == all[a].score) n_pos += all[b++].positive;
    const double mean_rank = 0.5 * static_cast<double>(a + 1 + b);
    rank_sum += mean_rank * static_cast<double>(n_pos);
    a = b;
  }
  const double P = static_cast<double>(pos.size()), N = static_cast<double>(neg.size());
  return (rank_sum - P * (P + 1.0) / 2.0) / (P * N);
}

namespace {

Summary summarize(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  Summary s;
  s.min = v.front();
  s.max = v.back();
  const std::size_t n = v.size();
  s.median = n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  return s;
}

StratumResult reduce(const std::string& name, std::span<const std::size_t> members,
                     const std::vector<std::size_t>& position,
                     const std::vector<kernels::InteractionAuc>& per, bool pooled) {
  StratumResult r;
  r.name = name;
  r.n = members.size();
  if (members.empty()) {
    r.reason = "stratum has no test interactions";
    return r;
  }
  std::vector<double> values;
  double correct = 0.0, total = 0.0;
  for (std::size_t k : members) {
    const auto& x = per[position[k]];
    if (x.negatives == 0) continue;
    values.push_back(x.auc);
    correct += x.auc * static_cast<double>(x.negatives);
    total += static_cast<double>(x.negatives);
  }
  if (values.empty()) {
    r.reason = "no interaction in the stratum has negatives";
    return r;
  }
  double sum = 0.0;
  for (double v : values) sum += v;  // in interaction order
  r.auc = sum / static_cast<double>(values.size());
  if (pooled) r.pooled = correct / total;
  r.per_interaction = summarize(values);
  return r;
}

}  // namespace

EvalReport evaluate(const model::BackboneModel& model, const data::InteractionDataset& ds,
                    const data::Strata& strata, const EvalOptions& opt) {
  EvalReport rep;
  rep.policy = opt.ranking.policy == kernels::NegativePolicy::all ? "all" : "sampled";
  rep.k_cold = opt.k_cold;
  rep.tail_fraction = opt.tail_fraction;
  if (strata.overall.empty()) throw ContractError("evaluate: test split is empty");
  if (model.num_users() != ds.num_users || model.num_items() != ds.num_items)
    throw ContractError("evaluate: model is " + std::to_string(model.num_users()) + "x" +
                        std::to_string(model.num_items()) + ", dataset is " + std::to_string(ds.num_users) + "x" +
                        std::to_string(ds.num_items));
  if (!ds.is_split()) throw ContractError("evaluate: dataset is not split");
  const auto per = kernels::interaction_auc(model, ds, strata.overall, opt.ranking);
  std::vector<std::size_t> position(ds.interactions.size(), 0);
  for (std::size_t k = 0; k < strata.overall.size(); ++k) position[strata.overall[k]] = k;
  rep.overall = reduce("overall", strata.overall, position, per, opt.pooled);
  rep.cold = reduce("cold", strata.cold, position, per, opt.pooled);
  rep.tail = reduce("tail", strata.tail, position, per, opt.pooled);
  std::vector<std::size_t> both;
  std::set_intersection(strata.cold.begin(), strata.cold.end(), strata.tail.begin(), strata.tail.end(),
                        std::back_inserter(both));
  rep.overlap = both.size();

  std::vector<double> sum(ds.num_users, 0.0);
  std::vector<std::size_t> cnt(ds.num_users, 0);
  for (std::size_t k = 0; k < strata.overall.size(); ++k) {
    if (per[k].negatives == 0) continue;
    const auto u = ds.interactions[strata.overall[k]].user;
    sum[u] += per[k].auc;
    ++cnt[u];
  }
  std::vector<double> users;
  for (std::size_t u = 0; u < ds.num_users; ++u)
    if (cnt[u]) users.push_back(sum[u] / static_cast<double>(cnt[u]));
  if (!users.empty()) rep.per_user = summarize(std::move(users));
  return rep;
}

namespace {

ojson summary_json(const std::optional<Summary>& s) {
  if (!s) return nullptr;
  return ojson{{"min", s->min}, {"median", s->median}, {"max", s->max}};
}

std::optional<Summary> summary_from(const ojson& j) {
  if (j.is_null()) return std::nullopt;
  return Summary{j.at("min").get<double>(), j.at("median").get<double>(), j.at("max").get<double>()};
}

ojson stratum_json(const StratumResult& s) {
  ojson j;
  j["stratum"] = s.name;
  j["auc"] = s.auc ? ojson(*s.auc) : ojson(nullptr);
  j["n"] = s.n;
  if (s.pooled) j["pooled_auc"] = *s.pooled;
  if (!s.reason.empty()) j["reason"] = s.reason;
  j["per_interaction"] = summary_json(s.per_interaction);
  return j;
}

StratumResult stratum_from(const ojson& j) {
  StratumResult s;
  s.name = j.at("stratum").get<std::string>();
  if (!j.at("auc").is_null()) s.auc = j.at("auc").get<double>();
  s.n = j.at("n").get<std::size_t>();
  if (j.contains("pooled_auc")) s.pooled = j["pooled_auc"].get<double>();
  s.reason = j.value("reason", "");
  s.per_interaction = summary_from(j.at("per_interaction"));
  return s;
}

}  // namespace

std::string report_json(const EvalReport& r) {
  ojson j;
  j["strata"] = ojson::array({stratum_json(r.overall), stratum_json(r.cold), stratum_json(r.tail)});
  j["overlap_cold_tail"] = r.overlap;
  j["per_user"] = summary_json(r.per_user);
  j["config"] = ojson{{"negatives", r.policy}, {"k_cold", r.k_cold}, {"tail_fraction", r.tail_fraction}};
  j["dataset_hash"] = r.dataset_hash;
  j["model_hash"] = r.model_hash;
  return j.dump(2) + "\n";
}

EvalReport report_from_json(const std::string& text) try {
  const auto j = ojson::parse(text);
  EvalReport r;
  const auto& s = j.at("strata");
  if (s.size() != 3) throw ParseError("report must list three strata", 0);
  r.overall = stratum_from(s[0]);
  r.cold = stratum_from(s[1]);
  r.tail = stratum_from(s[2]);
  r.overlap = j.at("overlap_cold_tail").get<std::size_t>();
  r.per_user = summary_from(j.at("per_user"));
  const auto& c = j.at("config");
  r.policy = c.at("negatives").get<std::string>();
  r.k_cold = c.at("k_cold").get<std::size_t>();
  r.tail_fraction = c.at("tail_fraction").get<double>();
  r.dataset_hash = j.value("dataset_hash", "");
  r.model_hash = j.value("model_hash", "");
  return r;
} catch (const ojson::exception& e) {
  throw ParseError(std::string("eval report: ") + e.what(), 0);
}

std::string report_csv(const EvalReport& r) {
  std::string out = "stratum,auc,n\n";
  for (const auto* s : r.strata())
    out += s->name + "," + (s->auc ? format_double(*s->auc) : std::string()) + "," + std::to_string(s->n) + "\n";
  return out;
}

void emit_report(const EvalReport& r, const std::string& path, ReportFormat format) {
  write_file_atomic(path, format == ReportFormat::json ? report_json(r) : report_csv(r));
}

void require_all_strata(const EvalReport& r) {
  for (const auto* s : r.strata())
    if (!s->auc) throw ContractError("required stratum '" + s->name + "' is absent: " + s->reason);
}

}  // namespace sllmr::eval
