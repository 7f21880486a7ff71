#include "sllmr/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "json.hpp"
#include "sllmr/common.hpp"

namespace sllmr::data {

using json = nlohmann::json;

std::uint32_t IdMap::add(const std::string& external) {
  auto [it, inserted] = index_.try_emplace(external, static_cast<std::uint32_t>(names_.size()));
  if (inserted) names_.push_back(external);
  return it->second;
}

std::optional<std::uint32_t> IdMap::find(const std::string& external) const {
  auto it = index_.find(external);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::span<const Interaction> InteractionDataset::user_events(UserId u) const {
  const auto b = user_offsets.at(u), e = user_offsets.at(u + 1);
  return std::span<const Interaction>(interactions).subspan(b, e - b);
}

std::vector<std::size_t> InteractionDataset::indices_with(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < split.size(); ++k)
    if (split[k] == s) out.push_back(k);
  return out;
}

std::size_t InteractionDataset::count(Split s) const {
  return static_cast<std::size_t>(std::count(split.begin(), split.end(), s));
}

std::vector<ItemId> InteractionDataset::train_history(UserId u) const {
  std::vector<ItemId> out;
  for (std::size_t k = user_offsets.at(u); k < user_offsets.at(u + 1); ++k)
    if (split[k] == Split::train) out.push_back(interactions[k].item);
  return out;
}

bool InteractionDataset::has_trained(UserId u, ItemId i) const {
  const auto& v = train_items.at(u);
  return std::binary_search(v.begin(), v.end(), i);
}

bool InteractionDataset::has_seen(UserId u, ItemId i) const {
  const auto& v = seen_items.at(u);
  return std::binary_search(v.begin(), v.end(), i);
}

void InteractionDataset::index_users() {
  user_offsets.assign(num_users + 1, 0);
  for (const auto& x : interactions) ++user_offsets[x.user + 1];
  std::partial_sum(user_offsets.begin(), user_offsets.end(), user_offsets.begin());
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

// RFC-4180-ish: double-quoted fields may contain commas and doubled quotes.
std::vector<std::string> split_csv(std::string_view line, std::size_t line_no) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t k = 0; k < line.size(); ++k) {
    const char c = line[k];
    if (quoted) {
      if (c == '"') {
        if (k + 1 < line.size() && line[k + 1] == '"') {
          cur.push_back('"');
          ++k;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (quoted) throw ParseError("unterminated quoted field", line_no);
  fields.emplace_back(trim(cur));
  return fields;
}

std::int64_t parse_timestamp(std::string_view s, std::size_t line_no) {
  s = trim(s);
  std::int64_t v = 0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || end != s.data() + s.size())
    throw ParseError("non-integer timestamp '" + std::string(s) + "'", line_no);
  return v;
}

struct RawRow {
  std::string user, item;
  std::int64_t timestamp;
};

std::string json_id(const json& v, const char* key, std::size_t line_no) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer() || v.is_number_unsigned()) return v.dump();
  throw ParseError(std::string("field '") + key + "' must be a string or integer", line_no);
}

std::vector<RawRow> read_rows(const std::string& text, InputFormat format) {
  std::vector<RawRow> rows;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  int col_user = -1, col_item = -1, col_ts = -1;
  bool have_header = format != InputFormat::csv;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view = line;
    if (line_no == 1 && view.starts_with("\xEF\xBB\xBF")) view.remove_prefix(3);
    if (trim(view).empty()) continue;
    if (format == InputFormat::csv) {
      auto fields = split_csv(view, line_no);
      if (!have_header) {
        for (int k = 0; k < static_cast<int>(fields.size()); ++k) {
          if (fields[k] == "user_id") col_user = k;
          else if (fields[k] == "item_id") col_item = k;
          else if (fields[k] == "timestamp") col_ts = k;
        }
        if (col_user < 0 || col_item < 0 || col_ts < 0)
          throw ParseError("header must contain user_id,item_id,timestamp", line_no);
        have_header = true;
        continue;
      }
      const int need = std::max({col_user, col_item, col_ts});
      if (static_cast<int>(fields.size()) <= need)
        throw ParseError("malformed row: expected at least " + std::to_string(need + 1) + " fields",
                         line_no);
      RawRow r{fields[col_user], fields[col_item], parse_timestamp(fields[col_ts], line_no)};
      if (r.user.empty() || r.item.empty()) throw ParseError("malformed row: empty id", line_no);
      rows.push_back(std::move(r));
    } else {
      json obj;
      try {
        obj = json::parse(view);
      } catch (const json::parse_error& e) {
        throw ParseError(std::string("malformed JSON: ") + e.what(), line_no);
      }
      if (!obj.is_object() || !obj.contains("user_id") || !obj.contains("item_id") ||
          !obj.contains("timestamp"))
        throw ParseError("malformed row: needs user_id, item_id, timestamp", line_no);
      RawRow r;
      r.user = json_id(obj["user_id"], "user_id", line_no);
      r.item = json_id(obj["item_id"], "item_id", line_no);
      const auto& ts = obj["timestamp"];
      if (ts.is_number_integer() || ts.is_number_unsigned())
        r.timestamp = ts.get<std::int64_t>();
      else if (ts.is_string())
        r.timestamp = parse_timestamp(ts.get<std::string>(), line_no);
      else
        throw ParseError("non-integer timestamp", line_no);
      rows.push_back(std::move(r));
    }
  }
  return rows;
}

struct TripleHash {
  std::size_t operator()(const std::tuple<std::uint32_t, std::uint32_t, std::int64_t>& t) const {
    auto [u, i, ts] = t;
    std::size_t h = mix_seed(u, i);
    return h ^ (static_cast<std::size_t>(ts) * 0x9e3779b97f4a7c15ULL);
  }
};

}  // namespace

InteractionDataset parse_interactions(const std::string& text, InputFormat format) {
  auto rows = read_rows(text, format);
  if (rows.empty()) throw ParseError("no interactions", 0);

  InteractionDataset ds;
  std::unordered_set<std::tuple<std::uint32_t, std::uint32_t, std::int64_t>, TripleHash> seen;
  ds.interactions.reserve(rows.size());
  for (const auto& r : rows) {
    const auto u = ds.users.add(r.user);
    const auto i = ds.items.add(r.item);
    if (!seen.emplace(u, i, r.timestamp).second) {
      ++ds.duplicates_dropped;
      continue;
    }
    ds.interactions.push_back({u, i, r.timestamp, 1});
  }
  ds.num_users = ds.users.size();
  ds.num_items = ds.items.size();
  std::stable_sort(ds.interactions.begin(), ds.interactions.end(),
                   [](const Interaction& a, const Interaction& b) {
                     return a.user != b.user ? a.user < b.user : a.timestamp < b.timestamp;
                   });
  ds.index_users();
  return ds;
}

InputFormat format_from_path(const std::string& path) {
  if (path.ends_with(".jsonl") || path.ends_with(".json")) return InputFormat::jsonl;
  return InputFormat::csv;
}

InteractionDataset load_interactions(const std::string& path, InputFormat format) {
  return parse_interactions(read_file(path), format);
}

std::string to_csv(const InteractionDataset& ds) {
  std::string out = "user_id,item_id,timestamp\n";
  for (const auto& x : ds.interactions) {
    out += ds.users.external(x.user);
    out += ',';
    out += ds.items.external(x.item);
    out += ',';
    out += std::to_string(x.timestamp);
    out += '\n';
  }
  return out;
}

void save_interactions(const InteractionDataset& ds, const std::string& path) {
  write_file_atomic(path, to_csv(ds));
}

std::string dataset_hash(const InteractionDataset& ds) { return sha256_hex(to_csv(ds)); }

void chronological_split(InteractionDataset& ds) {
  if (ds.user_offsets.size() != ds.num_users + 1) ds.index_users();
  ds.split.assign(ds.interactions.size(), Split::train);
  ds.train_items.assign(ds.num_users, {});
  ds.seen_items.assign(ds.num_users, {});
  ds.train_length.assign(ds.num_users, 0);
  for (UserId u = 0; u < ds.num_users; ++u) {
    const std::size_t b = ds.user_offsets[u], e = ds.user_offsets[u + 1];
    const std::size_t n = e - b;
    if (n >= 2) ds.split[e - 1] = Split::test;
    if (n >= 3) ds.split[e - 2] = Split::val;
    auto& tr = ds.train_items[u];
    auto& all = ds.seen_items[u];
    for (std::size_t k = b; k < e; ++k) {
      all.push_back(ds.interactions[k].item);
      if (ds.split[k] == Split::train) {
        tr.push_back(ds.interactions[k].item);
        ++ds.train_length[u];
      }
    }
    std::sort(tr.begin(), tr.end());
    tr.erase(std::unique(tr.begin(), tr.end()), tr.end());
    std::sort(all.begin(), all.end());
    all.erase(std::unique(all.begin(), all.end()), all.end());
  }
}

std::vector<ItemId> PopularityStats::by_popularity() const {
  std::vector<ItemId> order(counts.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](ItemId a, ItemId b) { return counts[a] > counts[b]; });
  return order;
}

PopularityStats compute_popularity(const InteractionDataset& ds, double tail_fraction) {
  if (!(tail_fraction > 0.0 && tail_fraction < 1.0))
    throw ConfigError("tail_fraction must lie in (0,1), got " + format_double(tail_fraction));
  if (!ds.is_split()) throw ContractError("compute_popularity requires a split dataset");
  PopularityStats st;
  st.tail_fraction = tail_fraction;
  st.counts.assign(ds.num_items, 0);
  for (std::size_t k = 0; k < ds.interactions.size(); ++k)
    if (ds.split[k] == Split::train) ++st.counts[ds.interactions[k].item];

  std::vector<ItemId> order(ds.num_items);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](ItemId a, ItemId b) { return st.counts[a] < st.counts[b]; });
  st.tail_size = static_cast<std::size_t>(
      std::floor(tail_fraction * static_cast<double>(ds.num_items) + 1e-9));
  st.is_tail.assign(ds.num_items, false);
  for (std::size_t k = 0; k < st.tail_size; ++k) st.is_tail[order[k]] = true;
  st.tail_threshold = st.tail_size ? st.counts[order[st.tail_size - 1]] : 0;
  return st;
}

Strata stratify(const InteractionDataset& ds, const PopularityStats& stats, std::size_t k_cold) {
  Strata s;
  for (std::size_t k = 0; k < ds.interactions.size(); ++k) {
    if (ds.split[k] != Split::test) continue;
    const auto& x = ds.interactions[k];
    s.overall.push_back(k);
    if (ds.train_length[x.user] < k_cold) s.cold.push_back(k);
    if (stats.tail(x.item)) s.tail.push_back(k);
  }
  return s;
}

// ---------------------------------------------------------------------------

double SyntheticTruth::affinity(UserId u, ItemId i) const {
  double dot = 0.0;
  const double* pu = &user_factors[static_cast<std::size_t>(u) * dim];
  const double* qi = &item_factors[static_cast<std::size_t>(i) * dim];
  for (std::size_t k = 0; k < dim; ++k) dot += pu[k] * qi[k];
  return affinity_scale * dot + item_bias[i];
}

SyntheticData synth_generate(const SynthConfig& cfg, std::uint64_t seed) {
  if (cfg.latent_dim == 0) throw ConfigError("synth: latent_dim must be positive");
  if (cfg.num_users == 0 || cfg.num_items == 0)
    throw ConfigError("synth: num_users and num_items must be positive");
  if (cfg.min_dense_events < 2 || cfg.min_dense_events > cfg.max_events)
    throw ConfigError("synth: need 2 <= min_dense_events <= max_events");
  if (cfg.max_events > cfg.num_items || cfg.num_items < 4)
    throw ConfigError("synth: more interactions per user than items in the catalog");
  if (!(cfg.cold_user_fraction >= 0.0 && cfg.cold_user_fraction <= 1.0))
    throw ConfigError("synth: cold_user_fraction must lie in [0,1]");
  if (!(cfg.temperature > 0.0) || !(cfg.dense_count_alpha > 0.0))
    throw ConfigError("synth: temperature and dense_count_alpha must be positive");

  const std::size_t U = cfg.num_users, I = cfg.num_items, d = cfg.latent_dim;
  Rng rng(mix_seed(seed, 0x5e7));
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));

  std::vector<double> uf(U * d), itf(I * d), bias(I);
  for (auto& x : itf) x = rng.normal() * scale;
  for (auto& x : bias) x = rng.normal() * cfg.popularity_strength;
  for (auto& x : uf) x = rng.normal();  // dot products then have unit variance

  struct Row {
    std::uint32_t user, gen_item;
    std::int64_t ts;
  };
  std::vector<Row> rows;
  std::vector<std::pair<double, std::uint32_t>> keys(I);
  for (std::uint32_t u = 0; u < U; ++u) {
    std::size_t n;
    if (rng.uniform() < cfg.cold_user_fraction) {
      n = 2 + rng.index(3);
    } else {
      const double x = 1.0 - rng.uniform();  // (0,1]
      const double pareto = static_cast<double>(cfg.min_dense_events) *
                            std::pow(x, -1.0 / cfg.dense_count_alpha);
      n = std::min(cfg.max_events, static_cast<std::size_t>(pareto));
    }
    // Gumbel top-n: a draw without replacement from softmax(affinity / T).
    for (std::uint32_t i = 0; i < I; ++i) {
      double dot = 0.0;
      for (std::size_t k = 0; k < d; ++k) dot += uf[u * d + k] * itf[i * d + k];
      const double a = cfg.affinity_scale * dot + bias[i];
      double v;
      do {
        v = rng.uniform();
      } while (v <= 0.0);
      keys[i] = {a / cfg.temperature - std::log(-std::log(v)), i};
    }
    std::partial_sort(keys.begin(), keys.begin() + static_cast<std::ptrdiff_t>(n), keys.end(),
                      [](const auto& a, const auto& b) {
                        return a.first != b.first ? a.first > b.first : a.second < b.second;
                      });
    std::vector<std::uint32_t> chosen(n);
    for (std::size_t k = 0; k < n; ++k) chosen[k] = keys[k].second;
    for (std::size_t k = n; k > 1; --k) std::swap(chosen[k - 1], chosen[rng.index(k)]);
    std::int64_t ts = 1'600'000'000 + static_cast<std::int64_t>(rng.index(86400 * 30));
    for (auto item : chosen) {
      rows.push_back({u, item, ts});
      ts += 1 + static_cast<std::int64_t>(rng.index(86400 * 7));
    }
  }

  SyntheticData out;
  auto& ds = out.dataset;
  std::vector<std::uint32_t> gen_to_dense(I, UINT32_MAX);
  for (std::uint32_t u = 0; u < U; ++u) ds.users.add("u" + std::to_string(u));
  for (const auto& r : rows) {
    if (gen_to_dense[r.gen_item] == UINT32_MAX)
      gen_to_dense[r.gen_item] = ds.items.add("i" + std::to_string(r.gen_item));
    ds.interactions.push_back({r.user, gen_to_dense[r.gen_item], r.ts, 1});
  }
  // The catalog is the set of sampled items, so a CSV round trip reproduces
  // the same dense indexing.
  ds.num_users = U;
  ds.num_items = ds.items.size();
  ds.index_users();

  auto& t = out.truth;
  t.dim = d;
  t.affinity_scale = cfg.affinity_scale;
  t.user_factors = std::move(uf);
  t.item_factors.assign(ds.num_items * d, 0.0);
  t.item_bias.assign(ds.num_items, 0.0);
  for (std::uint32_t g = 0; g < I; ++g) {
    const auto di = gen_to_dense[g];
    if (di == UINT32_MAX) continue;
    std::copy_n(&itf[g * d], d, &t.item_factors[di * d]);
    t.item_bias[di] = bias[g];
  }
  for (std::uint32_t i = 0; i < ds.num_items; ++i) t.item_ids.push_back(ds.items.external(i));
  for (std::uint32_t u = 0; u < U; ++u) t.user_ids.push_back(ds.users.external(u));
  return out;
}

void save_truth(const SyntheticTruth& t, const std::string& path) {
  json j;
  j["version"] = 1;
  j["dim"] = t.dim;
  j["affinity_scale"] = t.affinity_scale;
  j["user_ids"] = t.user_ids;
  j["user_factors"] = t.user_factors;
  j["item_ids"] = t.item_ids;
  j["item_factors"] = t.item_factors;
  j["item_bias"] = t.item_bias;
  write_file_atomic(path, j.dump() + "\n");
}

SyntheticTruth load_truth(const std::string& path, const InteractionDataset& ds) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed truth file: ") + e.what(), 0);
  }
  if (j.value("version", 0) != 1) throw ParseError("truth file version mismatch", 0);
  const auto d = j.at("dim").get<std::size_t>();
  const auto uids = j.at("user_ids").get<std::vector<std::string>>();
  const auto iids = j.at("item_ids").get<std::vector<std::string>>();
  const auto uf = j.at("user_factors").get<std::vector<double>>();
  const auto itf = j.at("item_factors").get<std::vector<double>>();
  const auto ib = j.at("item_bias").get<std::vector<double>>();
  if (uf.size() != uids.size() * d || itf.size() != iids.size() * d || ib.size() != iids.size())
    throw ParseError("truth file tensor shapes disagree", 0);

  SyntheticTruth t;
  t.dim = d;
  t.affinity_scale = j.at("affinity_scale").get<double>();
  t.user_factors.assign(ds.num_users * d, 0.0);
  t.item_factors.assign(ds.num_items * d, 0.0);
  t.item_bias.assign(ds.num_items, 0.0);
  std::vector<bool> got_u(ds.num_users, false), got_i(ds.num_items, false);
  for (std::size_t k = 0; k < uids.size(); ++k)
    if (auto u = ds.users.find(uids[k])) {
      std::copy_n(&uf[k * d], d, &t.user_factors[*u * d]);
      got_u[*u] = true;
    }
  for (std::size_t k = 0; k < iids.size(); ++k)
    if (auto i = ds.items.find(iids[k])) {
      std::copy_n(&itf[k * d], d, &t.item_factors[*i * d]);
      t.item_bias[*i] = ib[k];
      got_i[*i] = true;
    }
  for (std::size_t u = 0; u < ds.num_users; ++u)
    if (!got_u[u]) throw ContractError("truth file lacks user " + ds.users.external(u));
  for (std::size_t i = 0; i < ds.num_items; ++i)
    if (!got_i[i]) throw ContractError("truth file lacks item " + ds.items.external(i));
  for (std::size_t u = 0; u < ds.num_users; ++u) t.user_ids.push_back(ds.users.external(u));
  for (std::size_t i = 0; i < ds.num_items; ++i) t.item_ids.push_back(ds.items.external(i));
  return t;
}

}  // namespace sllmr::data
