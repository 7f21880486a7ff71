#include "sllmr/ablation.hpp"

#include <cmath>
#include <functional>

#include "sllmr/common.hpp"

namespace sllmr::ablation {

namespace {

const eval::StratumResult& pick(const eval::EvalReport& r, const std::string& stratum) {
  if (stratum == "overall") return r.overall;
  if (stratum == "cold") return r.cold;
  if (stratum == "tail") return r.tail;
  throw ConfigError("unknown stratum '" + stratum + "'");
}

const char* const kStrata[] = {"overall", "cold", "tail"};

double real(const std::string& k, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used == v.size()) return x;
  } catch (const std::exception&) {
  }
  throw ConfigError("config key '" + k + "' expects a number, got '" + v + "'");
}

std::size_t count(const std::string& k, const std::string& v) {
  const double x = real(k, v);
  if (x < 0 || x != std::floor(x)) throw ConfigError("config key '" + k + "' expects a non-negative integer");
  return static_cast<std::size_t>(x);
}

bool flag(const std::string& k, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key '" + k + "' expects true/false, got '" + v + "'");
}

template <class T>
using Setters = std::vector<std::pair<const char*, std::function<void(T&, const std::string&, const std::string&)>>>;

#define SET(field, conv) \
  {#field, [](auto& c, const std::string& k, const std::string& v) { c.field = conv(k, v); }}

const Setters<data::SynthConfig>& synth_setters() {
  static const Setters<data::SynthConfig> s = {
      SET(num_users, count),          SET(num_items, count),        SET(latent_dim, count),
      SET(cold_user_fraction, real),  SET(min_dense_events, count), SET(max_events, count),
      SET(dense_count_alpha, real),   SET(affinity_scale, real),    SET(popularity_strength, real),
      SET(temperature, real),
  };
  return s;
}

const Setters<llm::JobConfig>& job_setters() {
  static const Setters<llm::JobConfig> s = {
      SET(history_len, count),       SET(num_candidates, count),    SET(pool_top_k, count),
      SET(cold_aug, flag),           SET(tail_aug, flag),           SET(cold_history_max, count),
      SET(aug_tail_fraction, real),  SET(tail_users_per_item, count), SET(max_users, count),
  };
  return s;
}

#undef SET

template <class T>
void apply_with(const Setters<T>& setters, const std::string& key, const std::string& value, T& cfg) {
  for (const auto& [name, set] : setters)
    if (key == name) return set(cfg, key, value);
  throw ConfigError("unknown config key '" + key + "'");
}

std::pair<std::string, std::string> split_key(const std::string& key) {
  const auto dot = key.find('.');
  if (dot == std::string::npos) return {"train", key};
  return {key.substr(0, dot), key.substr(dot + 1)};
}

}  // namespace

void apply_synth(const train::KeyValues& kv, data::SynthConfig& cfg) {
  for (const auto& [k, v] : kv) apply_with(synth_setters(), k, v, cfg);
}

void apply_jobs(const train::KeyValues& kv, llm::JobConfig& cfg) {
  for (const auto& [k, v] : kv) apply_with(job_setters(), k, v, cfg);
}

void apply(const train::KeyValues& kv, AblationConfig& cfg) {
  train::KeyValues tr;
  for (const auto& [key, value] : kv) {
    const auto [section, name] = split_key(key);
    if (section == "train") {
      tr[name] = value;
    } else if (section == "synth") {
      apply_with(synth_setters(), name, value, cfg.synth);
    } else if (section == "jobs") {
      apply_with(job_setters(), name, value, cfg.jobs);
    } else if (section == "mock") {
      if (name == "p_cold_or_tail") cfg.reliability.p_cold_or_tail = real(key, value);
      else if (name == "p_dense") cfg.reliability.p_dense = real(key, value);
      else throw ConfigError("unknown config key '" + key + "'");
    } else if (section == "ablate") {
      if (name == "seeds") cfg.seeds = count(key, value);
      else if (name == "base_seed") cfg.base_seed = count(key, value);
      else if (name == "k_cold") cfg.k_cold = count(key, value);
      else if (name == "workers") cfg.workers = count(key, value);
      else throw ConfigError("unknown config key '" + key + "'");
    } else {
      throw ConfigError("unknown config section '" + section + "'");
    }
  }
  train::apply(tr, cfg.train);
}

std::string to_ini(const AblationConfig& c) {
  std::string out = "[ablate]\nseeds = " + std::to_string(c.seeds) + "\nbase_seed = " + std::to_string(c.base_seed) +
                    "\nk_cold = " + std::to_string(c.k_cold) + "\n\n[train]\n" + train::to_ini(c.train);
  const auto& s = c.synth;
  out += "\n[synth]\nnum_users = " + std::to_string(s.num_users) + "\nnum_items = " + std::to_string(s.num_items) +
         "\nlatent_dim = " + std::to_string(s.latent_dim) + "\ncold_user_fraction = " +
         format_double(s.cold_user_fraction) + "\nmin_dense_events = " + std::to_string(s.min_dense_events) +
         "\nmax_events = " + std::to_string(s.max_events) + "\ndense_count_alpha = " +
         format_double(s.dense_count_alpha) + "\naffinity_scale = " + format_double(s.affinity_scale) +
         "\npopularity_strength = " + format_double(s.popularity_strength) +
         "\ntemperature = " + format_double(s.temperature) + "\n";
  const auto& j = c.jobs;
  out += "\n[jobs]\nhistory_len = " + std::to_string(j.history_len) + "\nnum_candidates = " +
         std::to_string(j.num_candidates) + "\npool_top_k = " + std::to_string(j.pool_top_k) +
         "\ncold_aug = " + (j.cold_aug ? "true" : "false") + "\ntail_aug = " + (j.tail_aug ? "true" : "false") +
         "\ncold_history_max = " + std::to_string(j.cold_history_max) + "\naug_tail_fraction = " +
         format_double(j.aug_tail_fraction) + "\ntail_users_per_item = " + std::to_string(j.tail_users_per_item) +
         "\nmax_users = " + std::to_string(j.max_users) + "\n";
  out += "\n[mock]\np_cold_or_tail = " + format_double(c.reliability.p_cold_or_tail) +
         "\np_dense = " + format_double(c.reliability.p_dense) + "\n";
  return out;
}

StratumStats AblationResult::stats(train::Mode mode, const std::string& stratum) const {
  std::vector<double> v;
  for (const auto& run : runs)
    if (run.mode == mode)
      if (const auto& s = pick(run.report, stratum); s.auc) v.push_back(*s.auc);
  StratumStats st;
  st.seeds = v.size();
  if (v.empty()) return st;
  double sum = 0.0;
  for (double x : v) sum += x;
  st.mean = sum / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - st.mean) * (x - st.mean);
    st.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return st;
}

std::pair<double, double> AblationResult::mean_alpha() const {
  double a = 0.0, b = 0.0;
  std::size_t n = 0;
  for (const auto& run : runs) {
    if (run.mode != train::Mode::sllmr) continue;
    const auto ct = run.gate.alpha_cold_or_tail();
    if (!ct || run.gate.n_dense == 0) continue;
    a += *ct;
    b += run.gate.alpha_dense;
    ++n;
  }
  if (n == 0) return {0.0, 0.0};
  return {a / static_cast<double>(n), b / static_cast<double>(n)};
}

AblationResult run_ablation(const AblationConfig& cfg, const Progress& progress) {
  if (cfg.seeds == 0) throw ConfigError("ablation needs at least one seed");
  if (cfg.modes.empty()) throw ConfigError("ablation needs at least one mode");
  AblationResult out;
  for (std::size_t k = 0; k < cfg.seeds; ++k) {
    const std::uint64_t seed = cfg.base_seed + k;
    auto syn = data::synth_generate(cfg.synth, seed);
    auto& ds = syn.dataset;
    data::chronological_split(ds);
    const auto stats = data::compute_popularity(ds, cfg.train.tail_fraction);
    const auto plan = llm::build_jobs(ds, stats, cfg.jobs, seed);
    const auto regions = llm::RegionMap::build(ds, stats, cfg.train.tau_u);
    llm::TableMetadata meta;
    meta.model = "mock";
    meta.dataset_hash = data::dataset_hash(ds);
    const auto table = llm::run_scoring(plan.jobs, llm::mock_backend(syn.truth, regions, cfg.reliability, seed),
                                        cfg.workers, meta);
    const auto strata = data::stratify(ds, stats, cfg.k_cold);

    for (auto mode : cfg.modes) {
      auto tc = cfg.train;
      tc.mode = mode;
      tc.seed = seed;
      train::Trainer trainer(tc, ds, mode == train::Mode::none ? nullptr : &table);
      const auto res = trainer.run();
      ModeRun run;
      run.mode = mode;
      run.seed = seed;
      run.best_epoch = res.manifest.best_epoch;
      run.gate = trainer.gate_diagnostics();
      eval::EvalOptions eo;
      eo.k_cold = cfg.k_cold;
      eo.tail_fraction = cfg.train.tail_fraction;
      run.report = eval::evaluate(trainer.model(), ds, strata, eo);
      if (progress) progress(run);
      out.runs.push_back(std::move(run));
    }
  }
  return out;
}

std::string comparison_csv(const AblationResult& r, const std::vector<train::Mode>& modes) {
  std::string out = "mode,stratum,auc_mean,auc_std,seeds\n";
  for (auto m : modes)
    for (const char* s : kStrata) {
      const auto st = r.stats(m, s);
      out += std::string(train::to_string(m)) + "," + s + "," + format_double(st.mean) + "," +
             format_double(st.std) + "," + std::to_string(st.seeds) + "\n";
    }
  return out;
}

std::string matrix_csv(const AblationResult& r, const std::vector<train::Mode>& modes) {
  std::string out = "stratum";
  for (auto m : modes) out += "," + std::string(train::to_string(m));
  out += "\n";
  for (const char* s : kStrata) {
    out += s;
    for (auto m : modes) out += "," + format_double(r.stats(m, s).mean);
    out += "\n";
  }
  return out;
}

std::string runs_csv(const AblationResult& r) {
  std::string out = "seed,mode,overall,cold,tail,best_epoch,alpha_cold_or_tail,alpha_dense\n";
  auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
  for (const auto& run : r.runs) {
    out += std::to_string(run.seed) + "," + std::string(train::to_string(run.mode)) + "," +
           opt(run.report.overall.auc) + "," + opt(run.report.cold.auc) + "," + opt(run.report.tail.auc) + "," +
           std::to_string(run.best_epoch) + "," + opt(run.gate.alpha_cold_or_tail()) + "," +
           (run.gate.n_dense ? format_double(run.gate.alpha_dense) : std::string()) + "\n";
  }
  return out;
}

}  // namespace sllmr::ablation
