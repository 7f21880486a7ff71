#include <charconv>
#include <functional>
#include <sstream>

#include "sllmr/common.hpp"
#include "sllmr/trainer.hpp"

namespace sllmr::train {

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' expects a number, got '" + v + "'");
  }
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::uint64_t x = 0;
  auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (v.empty() || ec != std::errc() || end != v.data() + v.size())
    throw ConfigError("config key '" + key + "' expects a non-negative integer, got '" + v + "'");
  return x;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key '" + key + "' expects true/false, got '" + v + "'");
}

struct Field {
  const char* key;
  std::function<void(TrainConfig&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

#define REAL(name)                                                                          \
  Field{#name, [](TrainConfig& c, const std::string& v) { c.name = to_double(#name, v); }, \
        [](const TrainConfig& c) { return format_double(c.name); }}
#define UINT(name)                                                                                \
  Field{#name, [](TrainConfig& c, const std::string& v) { c.name = static_cast<decltype(c.name)>(to_uint(#name, v)); }, \
        [](const TrainConfig& c) { return std::to_string(c.name); }}
#define BOOL(name)                                                                        \
  Field{#name, [](TrainConfig& c, const std::string& v) { c.name = to_bool(#name, v); }, \
        [](const TrainConfig& c) { return std::string(c.name ? "true" : "false"); }}

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      REAL(lr),
      REAL(gate_lr),
      UINT(batch_users),
      UINT(batch_size),
      UINT(dim),
      REAL(lambda),
      REAL(margin),
      UINT(pairs_per_batch),
      UINT(per_user_cap),
      UINT(tau_u),
      REAL(tail_fraction),
      UINT(neg_ratio),
      Field{"uncertainty_mode",
            [](TrainConfig& c, const std::string& v) { c.uncertainty_mode = gating::uncertainty_mode_from_string(v); },
            [](const TrainConfig& c) { return std::string(gating::to_string(c.uncertainty_mode)); }},
      REAL(gate_anchor),
      UINT(epochs),
      UINT(patience),
      UINT(seed),
      Field{"mode", [](TrainConfig& c, const std::string& v) { c.mode = mode_from_string(v); },
            [](const TrainConfig& c) { return std::string(to_string(c.mode)); }},
      Field{"variant", [](TrainConfig& c, const std::string& v) { c.variant = model::variant_from_string(v); },
            [](const TrainConfig& c) { return std::string(model::to_string(c.variant)); }},
      UINT(ensemble_size),
      REAL(dropout_rate),
      BOOL(detach_uncertainty),
      REAL(grad_clip),
      BOOL(dump_pairs),
  };
  return f;
}

#undef REAL
#undef UINT
#undef BOOL

}  // namespace

Mode mode_from_string(std::string_view s) {
  if (s == "sllmr") return Mode::sllmr;
  if (s == "global") return Mode::global;
  if (s == "pointwise") return Mode::pointwise;
  if (s == "none") return Mode::none;
  throw ConfigError("unknown mode '" + std::string(s) + "' (expected sllmr, global, pointwise or none)");
}

std::string_view to_string(Mode m) {
  switch (m) {
    case Mode::sllmr: return "sllmr";
    case Mode::global: return "global";
    case Mode::pointwise: return "pointwise";
    case Mode::none: return "none";
  }
  return "sllmr";
}

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !(gate_lr > 0.0)) throw ConfigError("lr and gate_lr must be positive");
  if (batch_users == 0 || batch_size == 0) throw ConfigError("batch_users and batch_size must be positive");
  if (dim == 0) throw ConfigError("dim must be positive");
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be non-negative");
  if (!(margin > 0.0)) throw ConfigError("margin must be positive");
  if (pairs_per_batch == 0) throw ConfigError("pairs_per_batch must be positive");
  if (!(tail_fraction > 0.0 && tail_fraction < 1.0)) throw ConfigError("tail_fraction must lie in (0,1)");
  if (!(gate_anchor >= 0.0)) throw ConfigError("gate_anchor must be non-negative");
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout_rate must lie in [0,1)");
  if (uncertainty_mode == gating::UncertaintyMode::ensemble && ensemble_size < 2)
    throw ConfigError("ensemble uncertainty needs ensemble_size >= 2");
  if (!detach_uncertainty && uncertainty_mode == gating::UncertaintyMode::ensemble)
    throw ConfigError("ensemble uncertainty requires detach_uncertainty = true");
  if (!(grad_clip >= 0.0)) throw ConfigError("grad_clip must be non-negative");
}

KeyValues parse_ini(const std::string& text) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line, section;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ParseError("malformed section header", line_no);
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected key = value", line_no);
    std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ParseError("empty key", line_no);
    if (!section.empty()) key = section + "." + key;
    kv[key] = value;
  }
  return kv;
}

std::vector<std::string> train_config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.emplace_back(f.key);
  return keys;
}

void apply(const KeyValues& kv, TrainConfig& cfg) {
  for (const auto& [key, value] : kv) {
    std::string bare = key;
    if (bare.starts_with("train.")) bare = bare.substr(6);
    bool found = false;
    for (const auto& f : fields())
      if (bare == f.key) {
        f.set(cfg, value);
        found = true;
        break;
      }
    if (!found) throw ConfigError("unknown config key '" + key + "'");
  }
}

KeyValues to_key_values(const TrainConfig& cfg) {
  KeyValues kv;
  for (const auto& f : fields()) kv[f.key] = f.get(cfg);
  return kv;
}

std::string to_ini(const TrainConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(cfg) + "\n";
  return out;
}

}  // namespace sllmr::train
