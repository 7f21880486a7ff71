#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sllmr/data.hpp"

namespace sllmr::llm {

using data::ItemId;
using data::UserId;

enum class ScoreSource : std::uint8_t { history, cold_aug, tail_aug, mock };

std::string_view to_string(ScoreSource s);
ScoreSource source_from_string(std::string_view s);

struct ScoreEntry {
  UserId user = 0;
  ItemId item = 0;
  double score = 0.5;
  ScoreSource source = ScoreSource::history;
  // Set by normalize_scores for candidates the response did not mention.
  // Imputed entries are never stored in a table.
  bool imputed = false;

  friend bool operator==(const ScoreEntry&, const ScoreEntry&) = default;
};

struct TableMetadata {
  std::string model;
  std::string template_hash;
  std::string dataset_hash;
  std::int64_t created = 0;  // epoch seconds; 0 when not pinned
  bool candidate_order_randomized = true;

  friend bool operator==(const TableMetadata&, const TableMetadata&) = default;
};

/// Offline (user, item) -> score lookup. Absent pairs read as kDefaultScore.
class LlmScoreTable {
 public:
  static constexpr double kDefaultScore = 0.5;
  static constexpr int kFormatVersion = 1;

  TableMetadata metadata;

  /// Returns false (and leaves the table unchanged) if the pair is present.
  bool insert(const ScoreEntry& e);
  double lookup(UserId u, ItemId i) const;
  std::optional<double> stored(UserId u, ItemId i) const;
  const ScoreEntry* find(UserId u, ItemId i) const;
  /// Stored entries of one user, ascending by item.
  std::vector<ScoreEntry> user_entries(UserId u) const;
  /// All entries in canonical (user, item) order.
  std::vector<ScoreEntry> entries() const;
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }

  friend bool operator==(const LlmScoreTable& a, const LlmScoreTable& b) {
    return a.metadata == b.metadata && a.entries_ == b.entries_;
  }

 private:
  std::map<std::pair<UserId, ItemId>, ScoreEntry> entries_;
};

std::string serialize_table(const LlmScoreTable& table);
LlmScoreTable parse_table(const std::string& text);
void save_table(const LlmScoreTable& table, const std::string& path);
LlmScoreTable load_table(const std::string& path);

// ---------------------------------------------------------------------------
// Job construction.

struct ScoringJob {
  std::size_t id = 0;
  UserId user = 0;
  ScoreSource kind = ScoreSource::history;
  std::vector<ItemId> history;     // most recent last, at most L items
  std::vector<ItemId> candidates;  // duplicate-free, disjoint from history
  std::vector<ScoreSource> candidate_source;  // parallel to candidates

  friend bool operator==(const ScoringJob&, const ScoringJob&) = default;
};

struct JobConfig {
  std::size_t history_len = 10;
  std::size_t num_candidates = 20;
  std::size_t pool_top_k = 500;
  bool cold_aug = true;
  bool tail_aug = true;
  std::size_t cold_history_max = 3;  // cold_aug targets users with <= this many train events
  double aug_tail_fraction = 0.1;
  std::size_t tail_users_per_item = 3;
  std::size_t max_users = 0;  // 0 scores every user with a train history
};

struct JobPlan {
  std::vector<ScoringJob> jobs;
  std::vector<std::string> warnings;
};

JobPlan build_jobs(const data::InteractionDataset& ds, const data::PopularityStats& stats,
                   const JobConfig& cfg, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Prompting and response handling.

struct PromptTemplate {
  // Placeholders: {history} and {candidates}.
  std::string with_history;
  std::string no_history;

  static PromptTemplate standard();
  std::string hash() const;
};

/// Candidate order is shuffled per job under `seed`; the text is otherwise
/// a pure function of its inputs.
std::string render_prompt(const ScoringJob& job, const PromptTemplate& tmpl,
                          const data::IdMap& items, std::uint64_t seed);

struct RawScore {
  ItemId item;
  double score;

  friend bool operator==(const RawScore&, const RawScore&) = default;
};

struct ParsedCompletion {
  std::vector<RawScore> scores;
  std::size_t hallucinated = 0;  // ids outside the candidate list
  std::size_t unparseable = 0;
};

/// Reads `item_id<TAB>score` lines. Ids are external item ids.
ParsedCompletion parse_completion(std::string_view text, const ScoringJob& job,
                                  const data::IdMap& items);

/// Clamp to [0,1], then min-max rescale within the job. A degenerate span
/// maps every returned score to 0.5; silent candidates get 0.5 (imputed).
std::vector<ScoreEntry> normalize_scores(std::span<const RawScore> raw, const ScoringJob& job);

// ---------------------------------------------------------------------------
// Deterministic stand-in for the LLM, driven by synthetic ground truth.

struct ReliabilityProfile {
  double p_cold_or_tail = 0.95;  // per-comparison order accuracy
  double p_dense = 0.35;
};

/// Which (user, item) regions count as cold-or-tail for the mock.
struct RegionMap {
  std::vector<bool> cold_user;
  std::vector<bool> tail_item;

  static RegionMap build(const data::InteractionDataset& ds, const data::PopularityStats& stats,
                         std::size_t tau_u);
  bool cold_or_tail(UserId u, ItemId i) const { return cold_user[u] || tail_item[i]; }
};

/// Starts from the true affinity order and runs noisy odd-even transposition
/// sweeps: each adjacent comparison places the pair in true order with
/// probability p_region (cold-or-tail if either side is). The returned
/// scores are the sorted true probabilities laid onto the noisy order.
std::vector<RawScore> mock_oracle(const ScoringJob& job, const data::SyntheticTruth& truth,
                                  const RegionMap& regions, const ReliabilityProfile& profile,
                                  std::uint64_t seed);

/// Kendall tau between two rankings of the same item set (scores compared
/// against true affinity order). Used by diagnostics and tests.
double kendall_tau(std::span<const double> a, std::span<const double> b);

// ---------------------------------------------------------------------------
// Live chat-completions client.

/// Content-addressed store of completions, one file per prompt hash.
class ResponseCache {
 public:
  explicit ResponseCache(std::string dir);
  std::optional<std::string> get(const std::string& key) const;
  void put(const std::string& key, const std::string& completion) const;
  const std::string& dir() const noexcept { return dir_; }

 private:
  std::string dir_;
};

struct ChatClientConfig {
  std::string endpoint = "https://api.openai.com/v1/chat/completions";
  std::string model = "gpt-4o-mini";
  std::string api_key;  // normally read from SLLMR_API_KEY
  std::string cache_dir;
  int max_retries = 5;
  int backoff_initial_ms = 500;
  int backoff_max_ms = 30000;
  int timeout_s = 60;
  double rate_limit_per_sec = 0.0;  // 0 disables the limiter
};

class ChatClient {
 public:
  explicit ChatClient(ChatClientConfig cfg);

  /// Returns the assistant message text, from cache if present. Throws
  /// AuthError on 401/403 and ServiceError once retries are exhausted.
  std::string complete(const std::string& prompt);

  std::size_t network_requests() const noexcept { return requests_.load(); }
  std::size_t cache_hits() const noexcept { return cache_hits_.load(); }
  const ChatClientConfig& config() const noexcept { return cfg_; }
  static std::string cache_key(std::string_view model, std::string_view prompt);

 private:
  void throttle();

  ChatClientConfig cfg_;
  std::optional<ResponseCache> cache_;
  std::atomic<std::size_t> requests_{0};
  std::atomic<std::size_t> cache_hits_{0};
  std::mutex rate_mutex_;
  double next_slot_ = 0.0;
};

// ---------------------------------------------------------------------------
// Pipeline driver.

struct JobOutcome {
  bool ok = false;
  std::string error;
  std::vector<RawScore> raw;
  std::size_t hallucinated = 0;
  std::size_t unparseable = 0;
};

using JobBackend = std::function<JobOutcome(const ScoringJob&)>;

struct ScoringStats {
  std::size_t jobs = 0;
  std::size_t failed = 0;
  std::size_t hallucinated = 0;
  std::size_t unparseable = 0;
  std::size_t entries = 0;
};

/// Runs every job through `backend` with up to `workers` threads, then
/// assembles the table single-threaded in job-id order. The first entry for
/// a (user, item) pair wins. AuthError aborts the whole run.
LlmScoreTable run_scoring(std::span<const ScoringJob> jobs, const JobBackend& backend,
                          std::size_t workers, TableMetadata metadata, ScoringStats* stats = nullptr);

JobBackend mock_backend(const data::SyntheticTruth& truth, const RegionMap& regions,
                        const ReliabilityProfile& profile, std::uint64_t seed);
JobBackend chat_backend(ChatClient& client, const PromptTemplate& tmpl, const data::IdMap& items,
                        std::uint64_t seed);

}  // namespace sllmr::llm
