#include "sllmr/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"
#include "sllmr/ablation.hpp"
#include "sllmr/common.hpp"
#include "sllmr/data.hpp"
#include "sllmr/eval.hpp"
#include "sllmr/llm.hpp"
#include "sllmr/model.hpp"
#include "sllmr/trainer.hpp"

namespace sllmr::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

// Bare and [train] keys; other sections belong to synth/score/ablate.
train::KeyValues train_section(const train::KeyValues& kv) {
  train::KeyValues out;
  for (const auto& [k, v] : kv)
    if (k.find('.') == std::string::npos || k.starts_with("train.")) out.emplace(k, v);
  return out;
}

std::string kebab(std::string s) {
  std::replace(s.begin(), s.end(), '_', '-');
  return s;
}

const std::map<std::string, std::string>& train_flag_help() {
  static const std::map<std::string, std::string> h = {
      {"lr", "backbone learning rate"},
      {"gate_lr", "gate learning rate"},
      {"batch_users", "users sampled per step"},
      {"batch_size", "training interactions per step"},
      {"dim", "embedding dimension"},
      {"lambda", "weight of the LLM term"},
      {"margin", "hinge margin on logits"},
      {"pairs_per_batch", "target pairs per step (K)"},
      {"per_user_cap", "most pairs one user may contribute"},
      {"tau_u", "users with fewer train events are cold"},
      {"tail_fraction", "share of least popular items marked tail"},
      {"neg_ratio", "sampled negatives per positive"},
      {"uncertainty_mode", "confidence, entropy or ensemble"},
      {"gate_anchor", "weight of the (alpha - 0.5)^2 penalty"},
      {"epochs", "maximum epochs"},
      {"patience", "epochs without val AUC gain before stopping (0 never stops)"},
      {"seed", "seed for init, sampling and dropout"},
      {"mode", "sllmr, global, pointwise or none"},
      {"variant", "backbone: mf_bias or fm_lite"},
      {"ensemble_size", "dropout passes for ensemble uncertainty"},
      {"dropout_rate", "dropout rate for ensemble uncertainty"},
      {"detach_uncertainty", "treat q as a constant in the gradient"},
      {"grad_clip", "clip the joint gradient norm (0 disables)"},
      {"dump_pairs", "write per-epoch pair diagnostics"},
  };
  return h;
}

/// Registers --kebab-case flags for every TrainConfig key.
struct TrainFlags {
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;

  void attach(CLI::App* app) {
    for (const auto& key : train::train_config_keys()) {
      const auto it = train_flag_help().find(key);
      const std::string help = it == train_flag_help().end() ? key : it->second;
      auto& slot = values[key];
      if (key == "dump_pairs" || key == "detach_uncertainty")
        options[key] = app->add_flag("--" + kebab(key) + "{true}", slot, help + " (true/false)");
      else
        options[key] = app->add_option("--" + kebab(key), slot, help);
    }
  }

  train::KeyValues given() const {
    train::KeyValues kv;
    for (const auto& [key, opt] : options)
      if (opt->count()) kv[key] = values.at(key);
    return kv;
  }
};

std::string now_stamp() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%d-%H%M%S", &tm);
  return buf;
}

fs::path fresh_run_dir(const fs::path& runs_dir, std::uint64_t seed) {
  const std::string base = now_stamp() + "-s" + std::to_string(seed);
  fs::path p = runs_dir / base;
  for (int n = 2; fs::exists(p); ++n) p = runs_dir / (base + "-" + std::to_string(n));
  fs::create_directories(p);
  return p;
}

void append_line(const fs::path& path, const std::string& line) {
  std::ofstream f(path, std::ios::app | std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f << line << '\n';
}

data::InteractionDataset load_split(const std::string& path) {
  auto ds = data::load_interactions(path, data::format_from_path(path));
  data::chronological_split(ds);
  return ds;
}

std::int64_t created_at(std::optional<std::int64_t> flag) {
  if (flag) return *flag;
  if (const char* e = std::getenv("SOURCE_DATE_EPOCH")) return std::strtoll(e, nullptr, 10);
  return 0;
}

// ---------------------------------------------------------------------------

struct IngestArgs {
  std::string input, output, format = "auto";
};

int do_ingest(const IngestArgs& a, std::ostream& out) {
  const auto fmt = a.format == "auto" ? data::format_from_path(a.input)
                   : a.format == "jsonl" ? data::InputFormat::jsonl
                                         : data::InputFormat::csv;
  const auto ds = data::load_interactions(a.input, fmt);
  const std::string csv = data::to_csv(ds);
  write_file_atomic(a.output, csv);
  json j{{"output", a.output},
         {"users", ds.num_users},
         {"items", ds.num_items},
         {"interactions", ds.interactions.size()},
         {"duplicates_dropped", ds.duplicates_dropped},
         {"dataset_hash", sha256_hex(csv)}};
  // cold-start share against the whole log and against the test split
  auto split = ds;
  data::chronological_split(split);
  std::size_t cold_all = 0, cold_test = 0, test = 0;
  for (std::size_t k = 0; k < split.interactions.size(); ++k) {
    const bool cold = split.train_length[split.interactions[k].user] < 3;
    cold_all += cold;
    if (split.split[k] == data::Split::test) {
      ++test;
      cold_test += cold;
    }
  }
  j["cold_share_all"] = split.interactions.empty() ? 0.0 : double(cold_all) / double(split.interactions.size());
  j["cold_share_test"] = test ? double(cold_test) / double(test) : 0.0;
  out << j.dump() << "\n";
  return kOk;
}

struct SynthArgs {
  std::string output, config;
  std::uint64_t seed = 42;
  std::optional<std::size_t> users, items, latent_dim;
  std::optional<double> cold_fraction;
};

int do_synth(const SynthArgs& a, std::ostream& out) {
  data::SynthConfig sc;
  if (!a.config.empty()) {
    ablation::AblationConfig ac;
    ablation::apply(train::parse_ini(read_file(a.config)), ac);
    sc = ac.synth;
  }
  if (a.users) sc.num_users = *a.users;
  if (a.items) sc.num_items = *a.items;
  if (a.latent_dim) sc.latent_dim = *a.latent_dim;
  if (a.cold_fraction) sc.cold_user_fraction = *a.cold_fraction;
  const auto syn = data::synth_generate(sc, a.seed);
  fs::create_directories(a.output);
  const auto data_path = (fs::path(a.output) / "interactions.csv").string();
  const auto truth_path = (fs::path(a.output) / "truth.json").string();
  data::save_interactions(syn.dataset, data_path);
  data::save_truth(syn.truth, truth_path);
  json j{{"interactions", data_path},
         {"truth", truth_path},
         {"users", syn.dataset.num_users},
         {"items", syn.dataset.num_items},
         {"events", syn.dataset.interactions.size()},
         {"dataset_hash", sha256_file(data_path)},
         {"truth_hash", sha256_file(truth_path)}};
  out << j.dump() << "\n";
  return kOk;
}

struct ScoreArgs {
  std::string data, output, truth, config, endpoint, model, cache_dir;
  bool mock = false, no_cold_aug = false, no_tail_aug = false;
  std::size_t workers = 4, tau_u = 3;
  std::uint64_t seed = 42;
  double tail_fraction = 0.2;
  std::optional<double> p_cold_tail, p_dense;
  std::optional<std::size_t> history_len, num_candidates, pool_top_k, max_users, tail_users_per_item;
  std::optional<std::int64_t> created;
  int max_retries = 5;
  double rate_limit = 0.0;
};

int do_score(const ScoreArgs& a, std::ostream& out, std::ostream& err) {
  const auto ds = load_split(a.data);
  llm::JobConfig jc;
  llm::ReliabilityProfile prof;
  if (!a.config.empty()) {
    ablation::AblationConfig ac;
    ablation::apply(train::parse_ini(read_file(a.config)), ac);
    jc = ac.jobs;
    prof = ac.reliability;
  }
  if (a.history_len) jc.history_len = *a.history_len;
  if (a.num_candidates) jc.num_candidates = *a.num_candidates;
  if (a.pool_top_k) jc.pool_top_k = *a.pool_top_k;
  if (a.max_users) jc.max_users = *a.max_users;
  if (a.tail_users_per_item) jc.tail_users_per_item = *a.tail_users_per_item;
  if (a.no_cold_aug) jc.cold_aug = false;
  if (a.no_tail_aug) jc.tail_aug = false;
  if (a.p_cold_tail) prof.p_cold_or_tail = *a.p_cold_tail;
  if (a.p_dense) prof.p_dense = *a.p_dense;

  const auto stats = data::compute_popularity(ds, a.tail_fraction);
  const auto plan = llm::build_jobs(ds, stats, jc, a.seed);
  for (const auto& w : plan.warnings) err << "warning: " << w << "\n";

  llm::TableMetadata meta;
  meta.dataset_hash = data::dataset_hash(ds);
  meta.created = created_at(a.created);
  llm::ScoringStats st;
  llm::LlmScoreTable table;
  std::size_t network = 0, hits = 0;
  if (a.mock) {
    if (a.truth.empty()) throw ConfigError("--mock needs --truth (the synthetic ground truth file)");
    const auto truth = data::load_truth(a.truth, ds);
    const auto regions = llm::RegionMap::build(ds, stats, a.tau_u);
    meta.model = "mock";
    table = llm::run_scoring(plan.jobs, llm::mock_backend(truth, regions, prof, a.seed), a.workers, meta, &st);
  } else {
    llm::ChatClientConfig cc;
    if (!a.endpoint.empty()) cc.endpoint = a.endpoint;
    if (!a.model.empty()) cc.model = a.model;
    if (const char* key = std::getenv("SLLMR_API_KEY")) cc.api_key = key;
    cc.cache_dir = a.cache_dir;
    cc.max_retries = a.max_retries;
    cc.rate_limit_per_sec = a.rate_limit;
    llm::ChatClient client(cc);
    const auto tmpl = llm::PromptTemplate::standard();
    meta.model = cc.model;
    meta.template_hash = tmpl.hash();
    table = llm::run_scoring(plan.jobs, llm::chat_backend(client, tmpl, ds.items, a.seed), a.workers, meta, &st);
    network = client.network_requests();
    hits = client.cache_hits();
  }
  llm::save_table(table, a.output);
  json j{{"output", a.output},         {"jobs", st.jobs},       {"failed", st.failed},
         {"entries", st.entries},      {"hallucinated", st.hallucinated},
         {"unparseable", st.unparseable}, {"network_requests", network}, {"cache_hits", hits}};
  out << j.dump() << "\n";
  if (st.failed) {
    err << "error: " << st.failed << " of " << st.jobs << " scoring jobs failed after retries\n";
    return kService;
  }
  return kOk;
}

struct TrainArgs {
  std::string data, table, config, runs_dir = "runs", run_dir, replay;
  bool clip = false, force = false;
  TrainFlags flags;
};

struct TrainOutcome {
  fs::path run_dir;
  std::string checkpoint_hash;
};

TrainOutcome train_into(const train::TrainConfig& cfg, const std::string& data_path, const std::string& table_path,
                        const fs::path& run_dir, bool force, std::ostream& out) {
  const auto ds = load_split(data_path);
  std::optional<llm::LlmScoreTable> table;
  if (cfg.mode != train::Mode::none) {
    if (table_path.empty())
      throw ConfigError("mode '" + std::string(train::to_string(cfg.mode)) + "' needs --table");
    table = llm::load_table(table_path);
    const auto h = data::dataset_hash(ds);
    if (!table->metadata.dataset_hash.empty() && table->metadata.dataset_hash != h && !force)
      throw ContractError("score table was built for a different dataset (use --force to override)");
  }
  write_file_atomic((run_dir / "config.ini").string(), train::to_ini(cfg));
  const auto manifest = run_dir / "manifest.jsonl";
  const auto metrics = run_dir / "metrics.csv";
  write_file_atomic(manifest.string(), "");
  write_file_atomic(metrics.string(), train::metrics_csv_header() + "\n");
  if (cfg.dump_pairs) fs::create_directories(run_dir / "pairs");

  train::RunObserver obs;
  obs.on_start = [&](const train::RunManifest& m) {
    auto j = json::parse(train::manifest_header_json(m));
    j["data"] = fs::absolute(data_path).string();
    j["table"] = table_path.empty() ? "" : fs::absolute(table_path).string();
    append_line(manifest, j.dump());
  };
  std::optional<train::EpochMetrics> last;
  obs.on_epoch = [&](const train::EpochMetrics& e, const std::vector<reg::PairDiag>& pairs) {
    last = e;
    append_line(manifest, train::epoch_json(e));
    append_line(metrics, train::metrics_csv_row(e));
    if (cfg.dump_pairs) {
      std::string csv = "u,i,j,delta,alpha,hinge\n";
      for (const auto& p : pairs)
        csv += ds.users.external(p.pair.user) + "," + ds.items.external(p.pair.winner) + "," +
               ds.items.external(p.pair.loser) + "," + format_double(p.pair.delta) + "," + format_double(p.alpha) +
               "," + format_double(p.hinge) + "\n";
      write_file_atomic((run_dir / "pairs" / ("epoch_" + std::to_string(e.epoch) + ".csv")).string(), csv);
    }
  };

  train::TrainResult res;
  try {
    res = train::train(cfg, ds, table ? &*table : nullptr, &obs);
  } catch (const Error& e) {
    json d{{"error", e.what()}};
    if (last) d["last_epoch"] = json::parse(train::epoch_json(*last));
    write_file_atomic((run_dir / "diagnostic.json").string(), d.dump(2) + "\n");
    throw;
  }
  const auto ckpt = run_dir / "checkpoint.jsonl";
  model::save_checkpoint(res.model, res.gate, ckpt.string());
  TrainOutcome o{run_dir, sha256_file(ckpt.string())};
  json r{{"type", "result"},
         {"best_epoch", res.manifest.best_epoch},
         {"best_val_auc", res.manifest.best_val_auc ? json(*res.manifest.best_val_auc) : json(nullptr)},
         {"checkpoint_hash", o.checkpoint_hash}};
  append_line(manifest, r.dump());
  out << json{{"run_dir", run_dir.string()}, {"checkpoint_hash", o.checkpoint_hash},
              {"best_epoch", res.manifest.best_epoch}}
             .dump()
      << "\n";
  return o;
}

json manifest_header(const fs::path& run_dir) {
  std::ifstream f(run_dir / "manifest.jsonl");
  std::string line;
  if (!f || !std::getline(f, line)) throw ContractError("no manifest in " + run_dir.string());
  return json::parse(line);
}

int do_train(TrainArgs& a, std::ostream& out) {
  if (!a.replay.empty()) {
    const fs::path src(a.replay);
    train::TrainConfig cfg;
    train::apply(train::parse_ini(read_file((src / "config.ini").string())), cfg);
    const auto head = manifest_header(src);
    const std::string data_path = head.at("data"), table_path = head.at("table");
    if (sha256_hex(data::to_csv(data::load_interactions(data_path, data::format_from_path(data_path)))) !=
        head.at("dataset_hash").get<std::string>())
      throw ContractError("replay: dataset at " + data_path + " no longer matches the recorded hash");
    if (!table_path.empty() &&
        sha256_hex(llm::serialize_table(llm::load_table(table_path))) != head.at("table_hash").get<std::string>())
      throw ContractError("replay: score table at " + table_path + " no longer matches the recorded hash");
    const fs::path dir = a.run_dir.empty() ? fresh_run_dir(a.runs_dir, cfg.seed) : fs::path(a.run_dir);
    fs::create_directories(dir);
    const auto o = train_into(cfg, data_path, table_path, dir, a.force, out);
    if (o.checkpoint_hash != sha256_file((src / "checkpoint.jsonl").string()))
      throw ContractError("replay: checkpoint differs from " + (src / "checkpoint.jsonl").string());
    out << "replay: checkpoint identical\n";
    return kOk;
  }
  if (a.data.empty()) throw ConfigError("train needs --data (or --replay)");
  train::TrainConfig cfg;
  if (!a.config.empty()) train::apply(train_section(train::parse_ini(read_file(a.config))), cfg);
  train::apply(a.flags.given(), cfg);
  if (a.clip && cfg.grad_clip == 0.0) cfg.grad_clip = 10.0;
  cfg.validate();
  const fs::path dir = a.run_dir.empty() ? fresh_run_dir(a.runs_dir, cfg.seed) : fs::path(a.run_dir);
  fs::create_directories(dir);
  train_into(cfg, a.data, a.table, dir, a.force, out);
  return kOk;
}

struct EvalArgs {
  std::string data, checkpoint, output, format = "auto", negatives = "all", manifest;
  std::size_t sample_size = 1000, k_cold = 3;
  std::uint64_t seed = 42;
  double tail_fraction = 0.2;
  bool pooled = false, strict = false, force = false;
};

int do_eval(const EvalArgs& a, std::ostream& out) {
  const auto ds = load_split(a.data);
  const auto ck = model::load_checkpoint(a.checkpoint);
  const std::string dhash = data::dataset_hash(ds);
  fs::path manifest = a.manifest.empty() ? fs::path(a.checkpoint).parent_path() / "manifest.jsonl" : fs::path(a.manifest);
  if (fs::exists(manifest)) {
    std::ifstream f(manifest);
    std::string line;
    std::getline(f, line);
    const auto head = json::parse(line);
    if (head.value("dataset_hash", "") != dhash && !a.force)
      throw ContractError("checkpoint was trained on a different dataset (use --force to override)");
  } else if (!a.manifest.empty()) {
    throw ConfigError("manifest not found: " + a.manifest);
  }
  if (ck.model.num_users() != ds.num_users || ck.model.num_items() != ds.num_items)
    throw ContractError("checkpoint shape does not match the dataset");

  const auto stats = data::compute_popularity(ds, a.tail_fraction);
  const auto strata = data::stratify(ds, stats, a.k_cold);
  eval::EvalOptions eo;
  if (a.negatives == "sampled") eo.ranking.policy = kernels::NegativePolicy::sampled;
  eo.ranking.sample_size = a.sample_size;
  eo.ranking.seed = a.seed;
  eo.pooled = a.pooled;
  eo.k_cold = a.k_cold;
  eo.tail_fraction = a.tail_fraction;
  auto rep = eval::evaluate(ck.model, ds, strata, eo);
  rep.dataset_hash = dhash;
  rep.model_hash = sha256_file(a.checkpoint);
  const bool csv = a.format == "csv" || (a.format == "auto" && a.output.ends_with(".csv"));
  eval::emit_report(rep, a.output, csv ? eval::ReportFormat::csv : eval::ReportFormat::json);
  for (const auto* s : rep.strata())
    out << s->name << "\t" << (s->auc ? format_double(*s->auc) : "absent (" + s->reason + ")") << "\tn=" << s->n
        << "\n";
  if (a.strict) eval::require_all_strata(rep);
  return kOk;
}

struct AblateArgs {
  std::string config, output, modes = "none,global,pointwise,sllmr";
  std::optional<std::size_t> seeds, base_seed;
  TrainFlags flags;
};

int do_ablate(AblateArgs& a, std::ostream& out) {
  ablation::AblationConfig cfg;
  if (!a.config.empty()) ablation::apply(train::parse_ini(read_file(a.config)), cfg);
  train::apply(a.flags.given(), cfg.train);
  if (a.seeds) cfg.seeds = *a.seeds;
  if (a.base_seed) cfg.base_seed = *a.base_seed;
  cfg.modes.clear();
  std::stringstream ms(a.modes);
  for (std::string m; std::getline(ms, m, ',');) cfg.modes.push_back(train::mode_from_string(m));
  cfg.train.validate();
  fs::create_directories(a.output);
  write_file_atomic((fs::path(a.output) / "config.ini").string(), ablation::to_ini(cfg));
  const auto res = ablation::run_ablation(cfg, [&](const ablation::ModeRun& r) {
    out << "seed " << r.seed << " " << train::to_string(r.mode) << " overall "
        << (r.report.overall.auc ? format_double(*r.report.overall.auc) : "-") << "\n"
        << std::flush;
  });
  const fs::path o(a.output);
  write_file_atomic((o / "comparison.csv").string(), ablation::comparison_csv(res, cfg.modes));
  write_file_atomic((o / "matrix.csv").string(), ablation::matrix_csv(res, cfg.modes));
  write_file_atomic((o / "runs.csv").string(), ablation::runs_csv(res));
  const auto [ct, dense] = res.mean_alpha();
  write_file_atomic((o / "gate.csv").string(), "group,mean_alpha\ncold_or_tail," + format_double(ct) +
                                                   "\ndense," + format_double(dense) + "\n");
  out << ablation::comparison_csv(res, cfg.modes);
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Recommender training with gated LLM pairwise guidance"};
  app.name("sllmr");
  app.require_subcommand(1, 1);
  app.allow_extras(false);

  IngestArgs ia;
  auto* ingest = app.add_subcommand("ingest", "Load a CSV/JSONL interaction log into the canonical dataset file");
  ingest->add_option("--input", ia.input, "interaction log (user_id,item_id,timestamp)")->required();
  ingest->add_option("--output", ia.output, "canonical CSV to write")->required();
  ingest->add_option("--format", ia.format, "csv, jsonl or auto (by extension)")
      ->check(CLI::IsMember({"auto", "csv", "jsonl"}));

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset with its latent ground truth");
  synth->add_option("--output", sa.output, "directory for interactions.csv and truth.json")->required();
  synth->add_option("--seed", sa.seed, "generator seed");
  synth->add_option("--config", sa.config, "INI file; its [synth] section is used");
  synth->add_option("--users", sa.users, "number of users");
  synth->add_option("--items", sa.items, "catalog size before unsampled items are dropped");
  synth->add_option("--latent-dim", sa.latent_dim, "dimension of the latent factors");
  synth->add_option("--cold-fraction", sa.cold_fraction, "share of users with 2-4 events");

  ScoreArgs sc;
  auto* score = app.add_subcommand("score", "Build the offline LLM score table");
  score->add_option("--data", sc.data, "canonical dataset CSV")->required();
  score->add_option("--output", sc.output, "score table JSONL to write")->required();
  score->add_flag("--mock", sc.mock, "score with the synthetic oracle instead of an endpoint");
  score->add_option("--truth", sc.truth, "truth.json from synth (with --mock)");
  score->add_option("--endpoint", sc.endpoint, "chat-completions URL");
  score->add_option("--model", sc.model, "model name sent to the endpoint");
  score->add_option("--cache-dir", sc.cache_dir, "response cache directory");
  score->add_option("--workers", sc.workers, "parallel scoring workers");
  score->add_option("--seed", sc.seed, "seed for job sampling, prompt order and the mock");
  score->add_option("--config", sc.config, "INI file; [jobs] and [mock] sections are used");
  score->add_option("--history-len", sc.history_len, "history items per prompt (L)");
  score->add_option("--num-candidates", sc.num_candidates, "candidates per job (M)");
  score->add_option("--pool-top-k", sc.pool_top_k, "popularity pool size");
  score->add_option("--max-users", sc.max_users, "score at most this many users (0 = all)");
  score->add_option("--tail-users-per-item", sc.tail_users_per_item, "users receiving each tail item");
  score->add_flag("--no-cold-aug", sc.no_cold_aug, "skip the extra cold-user jobs");
  score->add_flag("--no-tail-aug", sc.no_tail_aug, "skip forced tail-item candidates");
  score->add_option("--p-cold-tail", sc.p_cold_tail, "mock order accuracy on cold-or-tail comparisons");
  score->add_option("--p-dense", sc.p_dense, "mock order accuracy on dense comparisons");
  score->add_option("--tau-u", sc.tau_u, "cold threshold used by the mock");
  score->add_option("--tail-fraction", sc.tail_fraction, "tail share used by the mock");
  score->add_option("--created-at", sc.created, "creation time recorded in the table (default SOURCE_DATE_EPOCH or 0)");
  score->add_option("--max-retries", sc.max_retries, "retries per request");
  score->add_option("--rate-limit", sc.rate_limit, "requests per second (0 = unlimited)");

  TrainArgs ta;
  auto* trn = app.add_subcommand("train", "Train a backbone (and gate) into a run directory");
  trn->add_option("--data", ta.data, "canonical dataset CSV");
  trn->add_option("--table", ta.table, "score table (all modes but none)");
  trn->add_option("--config", ta.config, "INI file with TrainConfig keys; flags override it");
  trn->add_option("--runs-dir", ta.runs_dir, "parent of timestamp-seed run directories");
  trn->add_option("--run-dir", ta.run_dir, "explicit run directory");
  trn->add_option("--replay", ta.replay, "retrain a previous run and verify the checkpoint matches");
  trn->add_flag("--clip", ta.clip, "clip the gradient norm at 10");
  trn->add_flag("--force", ta.force, "accept a score table built for another dataset");
  ta.flags.attach(trn);

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Full-ranking AUC, overall and per stratum");
  ev->add_option("--data", ea.data, "canonical dataset CSV")->required();
  ev->add_option("--checkpoint", ea.checkpoint, "checkpoint.jsonl from a run")->required();
  ev->add_option("--output", ea.output, "report path")->required();
  ev->add_option("--format", ea.format, "json, csv or auto (by extension)")
      ->check(CLI::IsMember({"auto", "json", "csv"}));
  ev->add_option("--manifest", ea.manifest, "run manifest (default: next to the checkpoint)");
  ev->add_option("--negatives", ea.negatives, "all or sampled")->check(CLI::IsMember({"all", "sampled"}));
  ev->add_option("--sample-size", ea.sample_size, "negatives per interaction when sampled");
  ev->add_option("--seed", ea.seed, "seed for sampled negatives");
  ev->add_option("--k-cold", ea.k_cold, "users with fewer train events are cold");
  ev->add_option("--tail-fraction", ea.tail_fraction, "share of least popular items in the tail stratum");
  ev->add_flag("--pooled", ea.pooled, "also report pair-count-weighted AUC");
  ev->add_flag("--strict", ea.strict, "exit 2 when a stratum is absent");
  ev->add_flag("--force", ea.force, "skip the dataset hash check");

  AblateArgs aa;
  auto* abl = app.add_subcommand("ablate", "Run the four-mode comparison on the synthetic benchmark");
  abl->add_option("--output", aa.output, "directory for the comparison CSVs")->required();
  abl->add_option("--config", aa.config, "INI with [ablate], [train], [synth], [jobs], [mock] sections");
  abl->add_option("--seeds", aa.seeds, "number of seeds");
  abl->add_option("--base-seed", aa.base_seed, "first seed");
  abl->add_option("--modes", aa.modes, "comma-separated modes");
  aa.flags.attach(abl);

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (ingest->parsed()) return do_ingest(ia, out);
    if (synth->parsed()) return do_synth(sa, out);
    if (score->parsed()) return do_score(sc, out, err);
    if (trn->parsed()) return do_train(ta, out);
    if (ev->parsed()) return do_eval(ea, out);
    if (abl->parsed()) return do_ablate(aa, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const ContractError& e) {
    err << "error: " << e.what() << "\n";
    return kContract;
  } catch (const ServiceError& e) {
    err << "error: " << e.what() << "\n";
    return kService;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace sllmr::cli
