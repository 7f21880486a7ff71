#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <thread>
#include <unordered_set>

#include "json.hpp"
#include "sllmr/common.hpp"
#include "sllmr/llm.hpp"

namespace sllmr::llm {

using json = nlohmann::json;

std::string_view to_string(ScoreSource s) {
  switch (s) {
    case ScoreSource::history: return "history";
    case ScoreSource::cold_aug: return "cold_aug";
    case ScoreSource::tail_aug: return "tail_aug";
    case ScoreSource::mock: return "mock";
  }
  return "history";
}

ScoreSource source_from_string(std::string_view s) {
  if (s == "history") return ScoreSource::history;
  if (s == "cold_aug") return ScoreSource::cold_aug;
  if (s == "tail_aug") return ScoreSource::tail_aug;
  if (s == "mock") return ScoreSource::mock;
  throw ParseError("unknown score source '" + std::string(s) + "'", 0);
}

// ---------------------------------------------------------------------------
// Table

bool LlmScoreTable::insert(const ScoreEntry& e) {
  if (!(e.score >= 0.0 && e.score <= 1.0))
    throw ContractError("score table entries must lie in [0,1]");
  ScoreEntry stored = e;
  stored.imputed = false;
  return entries_.try_emplace({e.user, e.item}, stored).second;
}

double LlmScoreTable::lookup(UserId u, ItemId i) const {
  auto it = entries_.find({u, i});
  return it == entries_.end() ? kDefaultScore : it->second.score;
}

std::optional<double> LlmScoreTable::stored(UserId u, ItemId i) const {
  auto it = entries_.find({u, i});
  if (it == entries_.end()) return std::nullopt;
  return it->second.score;
}

const ScoreEntry* LlmScoreTable::find(UserId u, ItemId i) const {
  auto it = entries_.find({u, i});
  return it == entries_.end() ? nullptr : &it->second;
}

std::vector<ScoreEntry> LlmScoreTable::user_entries(UserId u) const {
  std::vector<ScoreEntry> out;
  for (auto it = entries_.lower_bound({u, 0}); it != entries_.end() && it->first.first == u; ++it)
    out.push_back(it->second);
  return out;
}

std::vector<ScoreEntry> LlmScoreTable::entries() const {
  std::vector<ScoreEntry> out;
  out.reserve(entries_.size());
  for (const auto& [k, e] : entries_) out.push_back(e);
  return out;
}

std::string serialize_table(const LlmScoreTable& table) {
  json meta = {{"version", LlmScoreTable::kFormatVersion},
               {"model", table.metadata.model},
               {"template_hash", table.metadata.template_hash},
               {"dataset_hash", table.metadata.dataset_hash},
               {"created", table.metadata.created},
               {"default_score", LlmScoreTable::kDefaultScore},
               {"candidate_order_randomized", table.metadata.candidate_order_randomized}};
  std::string out = json{{"_meta", meta}}.dump() + "\n";
  for (const auto& e : table.entries()) {
    out += "{\"u\":" + std::to_string(e.user) + ",\"i\":" + std::to_string(e.item) +
           ",\"s\":" + format_double(e.score) + ",\"src\":\"" + std::string(to_string(e.source)) +
           "\"}\n";
  }
  return out;
}

LlmScoreTable parse_table(const std::string& text) {
  LlmScoreTable table;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  bool have_meta = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("malformed score table line: ") + e.what(), line_no);
    }
    if (!j.is_object()) throw ParseError("score table line is not an object", line_no);
    if (!have_meta) {
      if (!j.contains("_meta")) throw ParseError("score table must start with a _meta line", line_no);
      const auto& m = j["_meta"];
      const int version = m.value("version", 0);
      if (version != LlmScoreTable::kFormatVersion)
        throw ParseError("score table version mismatch: file has " + std::to_string(version) +
                             ", expected " + std::to_string(LlmScoreTable::kFormatVersion),
                         line_no);
      table.metadata.model = m.value("model", "");
      table.metadata.template_hash = m.value("template_hash", "");
      table.metadata.dataset_hash = m.value("dataset_hash", "");
      table.metadata.created = m.value("created", std::int64_t{0});
      table.metadata.candidate_order_randomized = m.value("candidate_order_randomized", true);
      have_meta = true;
      continue;
    }
    try {
      ScoreEntry e;
      e.user = j.at("u").get<UserId>();
      e.item = j.at("i").get<ItemId>();
      e.score = j.at("s").get<double>();
      e.source = source_from_string(j.value("src", "history"));
      if (!(e.score >= 0.0 && e.score <= 1.0)) throw ParseError("score outside [0,1]", line_no);
      if (!table.insert(e)) throw ParseError("duplicate (u,i) entry", line_no);
    } catch (const json::exception& e) {
      throw ParseError(std::string("malformed score entry: ") + e.what(), line_no);
    } catch (const ParseError& e) {
      if (e.line()) throw;
      throw ParseError(e.what(), line_no);
    }
  }
  if (!have_meta) throw ParseError("empty score table", 0);
  return table;
}

void save_table(const LlmScoreTable& table, const std::string& path) {
  write_file_atomic(path, serialize_table(table));
}

LlmScoreTable load_table(const std::string& path) { return parse_table(read_file(path)); }

// ---------------------------------------------------------------------------
// Jobs

namespace {

std::vector<ItemId> bottom_items(const data::PopularityStats& stats, double fraction) {
  std::vector<ItemId> order(stats.counts.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](ItemId a, ItemId b) { return stats.counts[a] < stats.counts[b]; });
  const auto n = static_cast<std::size_t>(
      std::floor(fraction * static_cast<double>(order.size()) + 1e-9));
  order.resize(std::min(n, order.size()));
  std::sort(order.begin(), order.end());
  return order;
}

// Draws k elements uniformly without replacement (partial Fisher-Yates).
template <typename T>
std::vector<T> sample_without_replacement(std::vector<T> pool, std::size_t k, Rng& rng) {
  k = std::min(k, pool.size());
  for (std::size_t j = 0; j < k; ++j) std::swap(pool[j], pool[j + rng.index(pool.size() - j)]);
  pool.resize(k);
  return pool;
}

}  // namespace

JobPlan build_jobs(const data::InteractionDataset& ds, const data::PopularityStats& stats,
                   const JobConfig& cfg, std::uint64_t seed) {
  if (!ds.is_split()) throw ContractError("build_jobs requires a split dataset");
  if (cfg.num_candidates == 0) throw ConfigError("num_candidates must be positive");
  if (cfg.history_len == 0) throw ConfigError("history_len must be positive");
  JobPlan plan;
  Rng rng(mix_seed(seed, 0x10b5));

  std::vector<UserId> users;
  for (UserId u = 0; u < ds.num_users; ++u)
    if (ds.train_length[u] > 0) users.push_back(u);
  if (cfg.max_users > 0 && cfg.max_users < users.size()) {
    users = sample_without_replacement(users, cfg.max_users, rng);
    std::sort(users.begin(), users.end());
  }

  const auto popular = stats.by_popularity();
  std::vector<ItemId> pool(popular.begin(),
                           popular.begin() + static_cast<std::ptrdiff_t>(
                                                 std::min(cfg.pool_top_k, popular.size())));
  std::size_t shrunk = 0;

  // history jobs; index by user for later tail attachment
  std::vector<std::size_t> job_of_user(ds.num_users, SIZE_MAX);
  for (UserId u : users) {
    ScoringJob job;
    job.id = plan.jobs.size();
    job.user = u;
    job.kind = ScoreSource::history;
    auto hist = ds.train_history(u);
    const std::size_t take = std::min(cfg.history_len, hist.size());
    job.history.assign(hist.end() - static_cast<std::ptrdiff_t>(take), hist.end());
    std::vector<ItemId> avail;
    for (ItemId i : pool)
      if (!ds.has_trained(u, i)) avail.push_back(i);
    if (avail.size() < cfg.num_candidates) ++shrunk;
    job.candidates = sample_without_replacement(std::move(avail), cfg.num_candidates, rng);
    job.candidate_source.assign(job.candidates.size(), ScoreSource::history);
    job_of_user[u] = plan.jobs.size();
    plan.jobs.push_back(std::move(job));
  }
  if (shrunk)
    plan.warnings.push_back(std::to_string(shrunk) +
                            " history jobs received fewer than M candidates (pool exhausted)");

  if (cfg.cold_aug) {
    // Popularity deciles over the whole catalog.
    constexpr std::size_t kBands = 10;
    std::vector<std::size_t> band_of(ds.num_items);
    for (std::size_t r = 0; r < popular.size(); ++r)
      band_of[popular[r]] = std::min(kBands - 1, r * kBands / popular.size());
    std::size_t cold_shrunk = 0;
    const std::size_t n_history = plan.jobs.size();
    for (std::size_t jh = 0; jh < n_history; ++jh) {
      const UserId u = plan.jobs[jh].user;
      if (ds.train_length[u] > cfg.cold_history_max) continue;
      std::unordered_set<ItemId> taken(plan.jobs[jh].candidates.begin(),
                                       plan.jobs[jh].candidates.end());
      std::vector<std::vector<ItemId>> bands(kBands);
      for (ItemId i : popular)
        if (!ds.has_trained(u, i) && !taken.count(i)) bands[band_of[i]].push_back(i);
      // Shuffle each band, then deal round-robin across bands.
      for (auto& b : bands) b = sample_without_replacement(std::move(b), b.size(), rng);
      ScoringJob job;
      job.id = plan.jobs.size();
      job.user = u;
      job.kind = ScoreSource::cold_aug;
      job.history = plan.jobs[jh].history;
      std::vector<std::size_t> cursor(kBands, 0);
      for (std::size_t round = 0; job.candidates.size() < cfg.num_candidates; ++round) {
        bool any = false;
        for (std::size_t b = 0; b < kBands && job.candidates.size() < cfg.num_candidates; ++b) {
          if (cursor[b] < bands[b].size()) {
            job.candidates.push_back(bands[b][cursor[b]++]);
            any = true;
          }
        }
        if (!any) break;
      }
      if (job.candidates.size() < cfg.num_candidates) ++cold_shrunk;
      if (job.candidates.empty()) continue;
      job.candidate_source.assign(job.candidates.size(), ScoreSource::cold_aug);
      plan.jobs.push_back(std::move(job));
    }
    if (cold_shrunk)
      plan.warnings.push_back(std::to_string(cold_shrunk) +
                              " cold-start jobs received fewer than M candidates");
  }

  if (cfg.tail_aug && !users.empty()) {
    for (ItemId item : bottom_items(stats, cfg.aug_tail_fraction)) {
      std::vector<UserId> eligible;
      for (UserId u : users) {
        const auto& job = plan.jobs[job_of_user[u]];
        if (ds.has_trained(u, item)) continue;
        if (std::find(job.candidates.begin(), job.candidates.end(), item) != job.candidates.end())
          continue;
        eligible.push_back(u);
      }
      for (UserId u : sample_without_replacement(std::move(eligible), cfg.tail_users_per_item, rng)) {
        auto& job = plan.jobs[job_of_user[u]];
        job.candidates.push_back(item);
        job.candidate_source.push_back(ScoreSource::tail_aug);
      }
    }
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Prompts

PromptTemplate PromptTemplate::standard() {
  PromptTemplate t;
  t.with_history =
      "The user recently interacted with these items, oldest first: {history}.\n"
      "Rank the following candidate items by how likely each one matches the user's "
      "preferences: {candidates}.\n"
      "Answer with exactly one line per candidate in the form item_id<TAB>score, where score "
      "is a number between 0 and 1 (higher means a better match). Output nothing else.";
  t.no_history =
      "Nothing is known about this user's past interactions.\n"
      "Rank the following candidate items by how likely each one matches a typical new user's "
      "preferences: {candidates}.\n"
      "Answer with exactly one line per candidate in the form item_id<TAB>score, where score "
      "is a number between 0 and 1 (higher means a better match). Output nothing else.";
  return t;
}

std::string PromptTemplate::hash() const {
  return sha256_hex(with_history + std::string(1, '\0') + no_history);
}

namespace {

std::string join_ids(std::span<const ItemId> ids, const data::IdMap& items) {
  std::string out;
  for (std::size_t k = 0; k < ids.size(); ++k) {
    if (k) out += ", ";
    out += items.external(ids[k]);
  }
  return out;
}

void replace_all(std::string& s, std::string_view from, const std::string& to) {
  for (std::size_t pos = 0; (pos = s.find(from, pos)) != std::string::npos; pos += to.size())
    s.replace(pos, from.size(), to);
}

}  // namespace

std::string render_prompt(const ScoringJob& job, const PromptTemplate& tmpl,
                          const data::IdMap& items, std::uint64_t seed) {
  std::vector<ItemId> order = job.candidates;
  Rng rng(mix_seed(mix_seed(seed, 0x9a0), job.id));
  for (std::size_t k = order.size(); k > 1; --k) std::swap(order[k - 1], order[rng.index(k)]);
  std::string text = job.history.empty() ? tmpl.no_history : tmpl.with_history;
  replace_all(text, "{history}", join_ids(job.history, items));
  replace_all(text, "{candidates}", join_ids(order, items));
  return text;
}

ParsedCompletion parse_completion(std::string_view text, const ScoringJob& job,
                                  const data::IdMap& items) {
  ParsedCompletion out;
  std::unordered_set<ItemId> allowed(job.candidates.begin(), job.candidates.end());
  std::unordered_set<ItemId> seen;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.remove_suffix(1);
    while (!line.empty() && line.front() == ' ') line.remove_prefix(1);
    if (line.empty()) {
      if (end == text.size()) break;
      continue;
    }
    auto sep = line.find('\t');
    if (sep == std::string_view::npos) sep = line.find_last_of(" :,");
    if (sep == std::string_view::npos) {
      ++out.unparseable;
      continue;
    }
    std::string id(line.substr(0, sep));
    while (!id.empty() && (id.back() == ' ' || id.back() == ':' || id.back() == ',')) id.pop_back();
    std::string value(line.substr(sep + 1));
    double score = 0.0;
    try {
      std::size_t used = 0;
      score = std::stod(value, &used);
      while (used < value.size() && value[used] == ' ') ++used;
      if (used != value.size() || !std::isfinite(score)) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      ++out.unparseable;
      continue;
    }
    auto dense = items.find(id);
    if (!dense || !allowed.count(*dense)) {
      ++out.hallucinated;
      continue;
    }
    if (!seen.insert(*dense).second) continue;
    out.scores.push_back({*dense, score});
  }
  return out;
}

std::vector<ScoreEntry> normalize_scores(std::span<const RawScore> raw, const ScoringJob& job) {
  std::vector<std::optional<double>> got(job.candidates.size());
  for (const auto& r : raw) {
    auto it = std::find(job.candidates.begin(), job.candidates.end(), r.item);
    if (it == job.candidates.end()) continue;
    auto& slot = got[static_cast<std::size_t>(it - job.candidates.begin())];
    if (!slot) slot = std::clamp(r.score, 0.0, 1.0);
  }
  double lo = 1.0, hi = 0.0;
  for (const auto& g : got)
    if (g) {
      lo = std::min(lo, *g);
      hi = std::max(hi, *g);
    }
  std::vector<ScoreEntry> out;
  out.reserve(job.candidates.size());
  for (std::size_t k = 0; k < job.candidates.size(); ++k) {
    ScoreEntry e;
    e.user = job.user;
    e.item = job.candidates[k];
    e.source = k < job.candidate_source.size() ? job.candidate_source[k] : job.kind;
    if (!got[k]) {
      e.score = LlmScoreTable::kDefaultScore;
      e.imputed = true;
    } else if (hi > lo) {
      e.score = (*got[k] - lo) / (hi - lo);
    } else {
      e.score = 0.5;
    }
    out.push_back(e);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Mock oracle

RegionMap RegionMap::build(const data::InteractionDataset& ds, const data::PopularityStats& stats,
                           std::size_t tau_u) {
  RegionMap r;
  r.cold_user.resize(ds.num_users);
  for (std::size_t u = 0; u < ds.num_users; ++u) r.cold_user[u] = ds.train_length[u] < tau_u;
  r.tail_item = stats.is_tail;
  return r;
}

std::vector<RawScore> mock_oracle(const ScoringJob& job, const data::SyntheticTruth& truth,
                                  const RegionMap& regions, const ReliabilityProfile& profile,
                                  std::uint64_t seed) {
  const std::size_t n = job.candidates.size();
  std::vector<double> aff(n);
  for (std::size_t k = 0; k < n; ++k) aff[k] = truth.affinity(job.user, job.candidates[k]);
  auto truly_before = [&](std::size_t a, std::size_t b) {
    return aff[a] != aff[b] ? aff[a] > aff[b] : job.candidates[a] < job.candidates[b];
  };
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), truly_before);
  std::vector<double> probs(n);
  for (std::size_t r = 0; r < n; ++r) probs[r] = sigmoid(aff[order[r]]);

  Rng rng(mix_seed(mix_seed(mix_seed(seed, 0x3c0), job.id), job.user));
  // The comparator chain needs O(n^2) sweeps to forget its start at p = 0.5.
  const std::size_t sweeps = n * n;
  for (std::size_t s = 0; s < sweeps; ++s) {
    for (std::size_t k = s % 2; k + 1 < n; k += 2) {
      const std::size_t a = order[k], b = order[k + 1];
      const bool reliable = regions.cold_or_tail(job.user, job.candidates[a]) ||
                            regions.cold_or_tail(job.user, job.candidates[b]);
      const double p = reliable ? profile.p_cold_or_tail : profile.p_dense;
      const bool correct = rng.uniform() < p;
      const bool a_first = truly_before(a, b) == correct;
      if (!a_first) std::swap(order[k], order[k + 1]);
    }
  }
  std::vector<RawScore> out(n);
  for (std::size_t r = 0; r < n; ++r) out[r] = {job.candidates[order[r]], probs[r]};
  return out;
}

double kendall_tau(std::span<const double> a, std::span<const double> b) {
  const std::size_t n = a.size();
  if (n < 2 || b.size() != n) return 0.0;
  long long s = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double x = (a[i] - a[j]) * (b[i] - b[j]);
      s += (x > 0) - (x < 0);
    }
  return static_cast<double>(s) / (static_cast<double>(n) * static_cast<double>(n - 1) / 2.0);
}

// ---------------------------------------------------------------------------
// Driver

LlmScoreTable run_scoring(std::span<const ScoringJob> jobs, const JobBackend& backend,
                          std::size_t workers, TableMetadata metadata, ScoringStats* stats) {
  std::vector<JobOutcome> outcomes(jobs.size());
  std::atomic<std::size_t> next{0};
  std::atomic<bool> abort{false};
  std::exception_ptr fatal;
  std::mutex fatal_mutex;
  auto work = [&] {
    while (!abort.load()) {
      const std::size_t k = next.fetch_add(1);
      if (k >= jobs.size()) break;
      try {
        outcomes[k] = backend(jobs[k]);
      } catch (const AuthError&) {
        std::lock_guard lock(fatal_mutex);
        if (!fatal) fatal = std::current_exception();
        abort = true;
      } catch (const std::exception& e) {
        outcomes[k].ok = false;
        outcomes[k].error = e.what();
      }
    }
  };
  workers = std::max<std::size_t>(1, std::min(workers, jobs.size()));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (fatal) std::rethrow_exception(fatal);

  std::vector<std::size_t> order(jobs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return jobs[a].id < jobs[b].id; });
  LlmScoreTable table;
  table.metadata = std::move(metadata);
  ScoringStats st;
  st.jobs = jobs.size();
  for (std::size_t k : order) {
    const auto& o = outcomes[k];
    st.hallucinated += o.hallucinated;
    st.unparseable += o.unparseable;
    if (!o.ok) {
      ++st.failed;
      continue;
    }
    for (const auto& e : normalize_scores(o.raw, jobs[k]))
      if (!e.imputed) table.insert(e);
  }
  st.entries = table.size();
  if (stats) *stats = st;
  return table;
}

JobBackend mock_backend(const data::SyntheticTruth& truth, const RegionMap& regions,
                        const ReliabilityProfile& profile, std::uint64_t seed) {
  return [&truth, &regions, profile, seed](const ScoringJob& job) {
    JobOutcome o;
    o.ok = true;
    o.raw = mock_oracle(job, truth, regions, profile, seed);
    return o;
  };
}

JobBackend chat_backend(ChatClient& client, const PromptTemplate& tmpl, const data::IdMap& items,
                        std::uint64_t seed) {
  return [&client, tmpl, &items, seed](const ScoringJob& job) {
    JobOutcome o;
    const std::string prompt = render_prompt(job, tmpl, items, seed);
    try {
      const std::string completion = client.complete(prompt);
      auto parsed = parse_completion(completion, job, items);
      o.ok = true;
      o.raw = std::move(parsed.scores);
      o.hallucinated = parsed.hallucinated;
      o.unparseable = parsed.unparseable;
    } catch (const AuthError&) {
      throw;
    } catch (const ServiceError& e) {
      o.ok = false;
      o.error = e.what();
    }
    return o;
  };
}

}  // namespace sllmr::llm
