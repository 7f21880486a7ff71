#include "sllmr/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json.hpp"
#include "sllmr/kernels.hpp"

#ifndef SLLMR_CODE_VERSION
#define SLLMR_CODE_VERSION "unknown"
#endif

namespace sllmr::train {

using ojson = nlohmann::ordered_json;

std::string code_version() { return SLLMR_CODE_VERSION; }

std::string_view to_string(PairGroup g) {
  switch (g) {
    case PairGroup::cold: return "cold";
    case PairGroup::tail: return "tail";
    case PairGroup::dense: return "dense";
  }
  return "dense";
}

std::optional<double> GateDiagnostics::alpha_cold_or_tail() const {
  const std::size_t n = n_cold + n_tail;
  if (n == 0) return std::nullopt;
  return (alpha_cold * static_cast<double>(n_cold) + alpha_tail * static_cast<double>(n_tail)) /
         static_cast<double>(n);
}

namespace {

bool uses_pairs(Mode m) { return m == Mode::sllmr || m == Mode::global; }

}  // namespace

Trainer::Trainer(TrainConfig cfg, const data::InteractionDataset& ds, const llm::LlmScoreTable* table)
    : cfg_(std::move(cfg)),
      ds_(ds),
      table_(table),
      sample_rng_(mix_seed(cfg_.seed, 1)),
      dropout_rng_(mix_seed(cfg_.seed, 3)),
      diag_rng_(mix_seed(cfg_.seed, 5)) {
  cfg_.validate();
  if (!ds_.is_split()) throw ContractError("trainer needs a chronologically split dataset");
  if (cfg_.mode != Mode::none && !table_)
    throw ContractError("mode '" + std::string(to_string(cfg_.mode)) + "' needs an LLM score table");
  stats_ = data::compute_popularity(ds_, cfg_.tail_fraction);
  model_ = model::BackboneModel::init(cfg_.variant, ds_.num_users, ds_.num_items, cfg_.dim, mix_seed(cfg_.seed, 2));
  grad_ = model::GradientBuffer(model_);
  adam_model_ = optim::AdamState(model_.params().size());
  adam_gate_ = optim::AdamState(4);
  mask_.assign(cfg_.dim, 1);
  ensemble_.resize(cfg_.ensemble_size);

  for (data::UserId u = 0; u < ds_.num_users; ++u)
    if (ds_.train_length[u] > 0) train_users_.push_back(u);
  if (train_users_.empty()) throw ContractError("no user has training interactions");

  if (table_) {
    for (const auto& e : table_->entries())
      if (e.user >= ds_.num_users || e.item >= ds_.num_items)
        throw ContractError("score table references ids outside the dataset");
    if (uses_pairs(cfg_.mode)) pairs_ = reg::PairIndex(*table_, ds_.num_users, cfg_.per_user_cap);
    if (cfg_.mode == Mode::pointwise) {
      point_targets_.resize(ds_.num_users);
      for (const auto& e : table_->entries()) point_targets_[e.user].push_back({e.user, e.item, e.score});
    }
  }
}

reg::HingeOptions Trainer::hinge_options() const {
  reg::HingeOptions h;
  h.margin = cfg_.margin;
  h.weight = cfg_.lambda;
  h.gated = cfg_.mode == Mode::sllmr;
  h.gate_anchor = cfg_.gate_anchor;
  h.detach_uncertainty = cfg_.detach_uncertainty;
  h.mode = cfg_.uncertainty_mode;
  return h;
}

gating::GateSignals Trainer::signals(data::UserId u, data::ItemId i) { return signals(u, i, dropout_rng_); }

gating::GateSignals Trainer::signals(data::UserId u, data::ItemId i, Rng& rng) {
  const double p = model_.predict_prob(u, i);
  std::span<const double> probs;
  if (cfg_.uncertainty_mode == gating::UncertaintyMode::ensemble) {
    const double keep = 1.0 - cfg_.dropout_rate;
    for (auto& e : ensemble_) {
      for (auto& m : mask_) m = rng.bernoulli(keep) ? 1 : 0;
      e = sigmoid(model_.score_masked(u, i, mask_, keep));
    }
    probs = ensemble_;
  }
  return gating::compute_signals(ds_.train_length[u], stats_.tail(i), p, cfg_.uncertainty_mode, cfg_.tau_u, probs);
}

PairGroup Trainer::group_of(const reg::RankedPair& p) const {
  if (ds_.train_length[p.user] < cfg_.tau_u) return PairGroup::cold;
  if (stats_.tail(p.winner) || stats_.tail(p.loser)) return PairGroup::tail;
  return PairGroup::dense;
}

StepBatch Trainer::sample_step() {
  std::vector<data::UserId> users;
  const std::size_t n = std::min(cfg_.batch_users, train_users_.size());
  // Partial Fisher-Yates over a copy keeps the draw without replacement.
  std::vector<data::UserId> pool = train_users_;
  for (std::size_t a = 0; a < n; ++a) std::swap(pool[a], pool[a + sample_rng_.index(pool.size() - a)]);
  users.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n));
  std::sort(users.begin(), users.end());

  const std::size_t per_user = (cfg_.batch_size + n - 1) / n;
  std::vector<data::Interaction> positives;
  positives.reserve(per_user * n);
  for (auto u : users) {
    const auto events = ds_.user_events(u);
    const std::size_t offset = ds_.user_offsets[u];
    const std::size_t n_train = ds_.train_length[u];
    // Train events come first within a user's time-ordered block.
    for (std::size_t k = 0; k < per_user; ++k) {
      const std::size_t j = sample_rng_.index(n_train);
      if (ds_.split[offset + j] != data::Split::train) throw ContractError("train events must precede val/test");
      positives.push_back(events[j]);
    }
  }
  auto examples = model::with_sampled_negatives(ds_, positives, cfg_.neg_ratio, sample_rng_);
  return prepare_step(std::move(users), std::move(examples));
}

StepBatch Trainer::prepare_step(std::vector<data::UserId> users, std::vector<model::LabeledExample> examples) {
  StepBatch b;
  b.users = std::move(users);
  b.examples = std::move(examples);
  if (uses_pairs(cfg_.mode)) {
    const auto batch = pairs_.select(b.users, cfg_.pairs_per_batch);
    b.pair_terms.reserve(batch.pairs.size());
    for (const auto& p : batch.pairs) {
      reg::PairTerm t{p, {}, {}};
      if (cfg_.mode == Mode::sllmr) {
        t.z_winner = signals(p.user, p.winner);
        t.z_loser = signals(p.user, p.loser);
      }
      b.pair_terms.push_back(t);
    }
  } else if (cfg_.mode == Mode::pointwise) {
    for (auto u : b.users)
      b.point_targets.insert(b.point_targets.end(), point_targets_[u].begin(), point_targets_[u].end());
  }
  return b;
}

StepLoss Trainer::evaluate_step(const StepBatch& batch, model::GradientBuffer* grad, gating::GateGrad* gate_grad,
                                std::vector<reg::PairDiag>* diag) const {
  StepLoss l;
  l.rec = model::bce_loss_and_grad(model_, batch.examples, 1.0, grad);
  // With lambda = 0 the LLM term is reported but contributes nothing.
  const bool live = cfg_.lambda != 0.0;
  if (uses_pairs(cfg_.mode)) {
    l.llm = reg::llm_loss_and_grad(batch.pair_terms, model_, gate_, hinge_options(), live ? grad : nullptr,
                                   live ? gate_grad : nullptr, diag);
  } else if (cfg_.mode == Mode::pointwise) {
    l.llm = reg::pointwise_llm_loss(batch.point_targets, model_, cfg_.lambda, live ? grad : nullptr);
  }
  l.total = live ? l.rec + cfg_.lambda * l.llm : l.rec;
  return l;
}

StepLoss Trainer::step(const StepBatch& batch) {
  grad_.zero();
  gating::GateGrad gg;
  const StepLoss l = evaluate_step(batch, &grad_, &gg);
  if (!std::isfinite(l.total))
    throw Error("non-finite loss (rec " + format_double(l.rec) + ", llm " + format_double(l.llm) +
                "); try a smaller lr or enable gradient clipping");
  std::array<double, 4> g4{gg.w[0], gg.w[1], gg.w[2], gg.b};
  if (cfg_.grad_clip > 0.0) optim::clip_grad_norm(grad_.values(), g4, cfg_.grad_clip);
  for (double g : grad_.values())
    if (!std::isfinite(g)) throw Error("non-finite gradient; try a smaller lr or enable gradient clipping");
  optim::adam_step(model_.params(), grad_.values(), adam_model_, {cfg_.lr});
  if (cfg_.mode == Mode::sllmr && cfg_.lambda != 0.0) {
    std::array<double, 4> p4{gate_.w[0], gate_.w[1], gate_.w[2], gate_.b};
    optim::adam_step(p4, g4, adam_gate_, {cfg_.gate_lr});
    gate_.w = {p4[0], p4[1], p4[2]};
    gate_.b = p4[3];
  }
  return l;
}

GateDiagnostics Trainer::gate_diagnostics(std::vector<reg::PairDiag>* pairs) {
  GateDiagnostics d;
  if (!uses_pairs(cfg_.mode)) return d;
  double sum[3] = {0, 0, 0}, hinge_sum = 0.0;
  std::size_t cnt[3] = {0, 0, 0}, active = 0;
  for (auto u : train_users_) {
    for (const auto& p : pairs_.pairs_of(u)) {
      const double gap = cfg_.margin - (model_.score(u, p.winner) - model_.score(u, p.loser));
      const double hinge = gap > 0.0 ? gap : 0.0;
      double alpha = 1.0;
      if (cfg_.mode == Mode::sllmr)
        alpha = gating::pair_alpha(gating::gate_alpha(gate_, signals(u, p.winner, diag_rng_)),
                                   gating::gate_alpha(gate_, signals(u, p.loser, diag_rng_)));
      const auto g = static_cast<std::size_t>(group_of(p));
      sum[g] += alpha;
      ++cnt[g];
      hinge_sum += hinge;
      active += gap > 0.0;
      if (pairs) pairs->push_back({p, alpha, hinge});
    }
  }
  auto mean = [&](int g) { return cnt[g] ? sum[g] / static_cast<double>(cnt[g]) : 0.0; };
  d.alpha_cold = mean(0);
  d.alpha_tail = mean(1);
  d.alpha_dense = mean(2);
  d.n_cold = cnt[0];
  d.n_tail = cnt[1];
  d.n_dense = cnt[2];
  d.pairs = cnt[0] + cnt[1] + cnt[2];
  if (d.pairs) {
    d.active_fraction = static_cast<double>(active) / static_cast<double>(d.pairs);
    d.mean_hinge = hinge_sum / static_cast<double>(d.pairs);
  }
  return d;
}

std::optional<double> Trainer::validation_auc() const {
  const auto idx = ds_.indices_with(data::Split::val);
  if (idx.empty()) return std::nullopt;
  const auto per = kernels::interaction_auc(model_, ds_, idx, {});
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : per)
    if (r.negatives) {
      sum += r.auc;
      ++n;
    }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

double Trainer::validation_loss() const {
  const auto idx = ds_.indices_with(data::Split::val);
  if (idx.empty()) return 0.0;
  std::vector<data::Interaction> pos;
  pos.reserve(idx.size());
  for (auto k : idx) pos.push_back(ds_.interactions[k]);
  // A fixed stream keeps the negatives identical across epochs.
  Rng rng(mix_seed(cfg_.seed, 4));
  const auto ex = model::with_sampled_negatives(ds_, pos, cfg_.neg_ratio, rng);
  return model::bce_loss_and_grad(model_, ex, 1.0, nullptr);
}

TrainResult Trainer::run(const RunObserver* observer) {
  TrainResult res;
  auto& man = res.manifest;
  man.config = cfg_;
  man.dataset_hash = data::dataset_hash(ds_);
  if (table_) man.table_hash = sha256_hex(llm::serialize_table(*table_));
  man.code_version = code_version();
  if (observer && observer->on_start) observer->on_start(man);

  std::vector<reg::PairDiag> pair_diag;
  auto record = [&](std::size_t epoch, double train_loss) {
    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = train_loss;
    m.val_loss = validation_loss();
    m.val_auc = validation_auc();
    pair_diag.clear();
    m.gate = gate_diagnostics(cfg_.dump_pairs ? &pair_diag : nullptr);
    m.gate_params = gate_;
    man.epochs.push_back(m);
    if (observer && observer->on_epoch) observer->on_epoch(m, pair_diag);
    return m;
  };

  // Epoch 0 describes the initial parameters.
  const auto initial = record(0, 0.0);
  auto best_model = model_;
  auto best_gate = gate_;
  man.best_epoch = 0;
  man.best_val_auc = initial.val_auc;

  const std::size_t n_train = ds_.count(data::Split::train);
  const std::size_t steps = std::max<std::size_t>(1, (n_train + cfg_.batch_size - 1) / cfg_.batch_size);
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= cfg_.epochs; ++epoch) {
    double sum = 0.0;
    for (std::size_t s = 0; s < steps; ++s) {
      const auto l = step(sample_step());
      res.step_losses.push_back(l.total);
      sum += l.total;
    }
    const auto m = record(epoch, sum / static_cast<double>(steps));
    const bool improved = m.val_auc && (!man.best_val_auc || *m.val_auc > *man.best_val_auc);
    if (improved || !m.val_auc) {
      best_model = model_;
      best_gate = gate_;
      man.best_epoch = epoch;
      man.best_val_auc = m.val_auc;
      since_best = 0;
    } else if (cfg_.patience > 0 && ++since_best >= cfg_.patience) {
      break;
    }
  }
  model_ = best_model;
  gate_ = best_gate;
  res.model = model_;
  res.gate = gate_;
  return res;
}

TrainResult train(const TrainConfig& cfg, const data::InteractionDataset& ds, const llm::LlmScoreTable* table,
                  const RunObserver* observer) {
  Trainer t(cfg, ds, table);
  return t.run(observer);
}

// ---------------------------------------------------------------------------

namespace {

ojson opt_json(const std::optional<double>& v) { return v ? ojson(*v) : ojson(nullptr); }

}  // namespace

std::string manifest_header_json(const RunManifest& m) {
  ojson j;
  j["type"] = "header";
  ojson c = ojson::object();
  for (const auto& [k, v] : to_key_values(m.config)) c[k] = v;
  j["config"] = c;
  j["dataset_hash"] = m.dataset_hash;
  j["table_hash"] = m.table_hash;
  j["code_version"] = m.code_version;
  return j.dump();
}

std::string epoch_json(const EpochMetrics& e) {
  ojson j;
  j["type"] = "epoch";
  j["epoch"] = e.epoch;
  j["train_loss"] = e.train_loss;
  j["val_loss"] = e.val_loss;
  j["val_auc"] = opt_json(e.val_auc);
  j["alpha"] = ojson{{"cold", e.gate.alpha_cold},
                     {"tail", e.gate.alpha_tail},
                     {"dense", e.gate.alpha_dense},
                     {"cold_or_tail", opt_json(e.gate.alpha_cold_or_tail())}};
  j["pairs"] = ojson{{"cold", e.gate.n_cold}, {"tail", e.gate.n_tail}, {"dense", e.gate.n_dense}};
  j["active_fraction"] = e.gate.active_fraction;
  j["mean_hinge"] = e.gate.mean_hinge;
  j["gate"] = ojson{{"w", e.gate_params.w}, {"b", e.gate_params.b}};
  return j.dump();
}

std::string metrics_csv_header() {
  return "epoch,train_loss,val_loss,val_auc,alpha_cold,alpha_tail,alpha_dense,active_fraction,mean_hinge,"
         "w_cold,w_tail,w_q,b";
}

std::string metrics_csv_row(const EpochMetrics& e) {
  std::string out = std::to_string(e.epoch);
  for (double v : {e.train_loss, e.val_loss}) out += "," + format_double(v);
  out += "," + (e.val_auc ? format_double(*e.val_auc) : std::string());
  for (double v : {e.gate.alpha_cold, e.gate.alpha_tail, e.gate.alpha_dense, e.gate.active_fraction,
                   e.gate.mean_hinge, e.gate_params.w[0], e.gate_params.w[1], e.gate_params.w[2], e.gate_params.b})
    out += "," + format_double(v);
  return out;
}

}  // namespace sllmr::train
