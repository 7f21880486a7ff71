#include <algorithm>
#include <cmath>
#include <sstream>

#include "json.hpp"
#include "sllmr/model.hpp"

namespace sllmr::model {

using json = nlohmann::json;

Variant variant_from_string(std::string_view s) {
  if (s == "mf_bias") return Variant::mf_bias;
  if (s == "fm_lite") return Variant::fm_lite;
  throw ConfigError("unknown backbone variant '" + std::string(s) + "' (expected mf_bias or fm_lite)");
}

std::string_view to_string(Variant v) { return v == Variant::fm_lite ? "fm_lite" : "mf_bias"; }

ParamLayout ParamLayout::make(Variant v, std::size_t users, std::size_t items, std::size_t dim) {
  ParamLayout l;
  l.num_users = users;
  l.num_items = items;
  l.dim = dim;
  std::size_t at = 0;
  l.user_emb = at;
  at += users * dim;
  l.item_emb = at;
  at += items * dim;
  l.user_bias = at;
  at += users;
  l.item_bias = at;
  at += items;
  l.global_bias = at;
  at += 1;
  l.projection = at;
  l.gain = at;
  if (v == Variant::fm_lite) {
    at += dim;
    l.gain = at;
    at += 1;
  }
  l.total = at;
  return l;
}

BackboneModel::BackboneModel(Variant variant, std::size_t num_users, std::size_t num_items,
                             std::size_t dim)
    : variant_(variant) {
  if (num_users == 0 || num_items == 0) throw ConfigError("backbone needs at least one user and item");
  if (dim == 0) throw ConfigError("embedding dimension must be >= 1");
  layout_ = ParamLayout::make(variant, num_users, num_items, dim);
  params_.assign(layout_.total, 0.0);
}

BackboneModel BackboneModel::init(Variant variant, std::size_t num_users, std::size_t num_items,
                                  std::size_t dim, std::uint64_t seed) {
  BackboneModel m(variant, num_users, num_items, dim);
  Rng rng(mix_seed(seed, 0xb0e));
  const double r = 0.1 / std::sqrt(static_cast<double>(dim));
  const auto& l = m.layout_;
  for (std::size_t k = l.user_emb; k < l.user_bias; ++k) m.params_[k] = rng.uniform(-r, r);
  if (variant == Variant::fm_lite)
    for (std::size_t k = 0; k < dim; ++k) m.params_[l.projection + k] = rng.uniform(-r, r);
  return m;
}

double BackboneModel::score_unchecked(UserId u, ItemId i) const noexcept {
  const std::size_t d = layout_.dim;
  const double* p = &params_[layout_.user_emb + u * d];
  const double* q = &params_[layout_.item_emb + i * d];
  double dot = 0.0;
  for (std::size_t k = 0; k < d; ++k) dot += p[k] * q[k];
  double s = dot + params_[layout_.user_bias + u] + params_[layout_.item_bias + i] +
             params_[layout_.global_bias];
  if (variant_ == Variant::fm_lite) {
    const double* r = &params_[layout_.projection];
    double inter = 0.0;
    for (std::size_t k = 0; k < d; ++k) inter += r[k] * p[k] * q[k];
    s += params_[layout_.gain] * inter;
  }
  return s;
}

double BackboneModel::score(UserId u, ItemId i) const {
  if (u >= layout_.num_users || i >= layout_.num_items)
    throw ContractError("score: index out of range (u=" + std::to_string(u) +
                        ", i=" + std::to_string(i) + ")");
  return score_unchecked(u, i);
}

double BackboneModel::score_masked(UserId u, ItemId i, std::span<const std::uint8_t> keep_mask,
                                   double keep) const {
  const std::size_t d = layout_.dim;
  const double* p = &params_[layout_.user_emb + u * d];
  const double* q = &params_[layout_.item_emb + i * d];
  const double* r = variant_ == Variant::fm_lite ? &params_[layout_.projection] : nullptr;
  double s = params_[layout_.user_bias + u] + params_[layout_.item_bias + i] + params_[layout_.global_bias];
  for (std::size_t k = 0; k < d; ++k) {
    if (!keep_mask[k]) continue;
    double term = p[k] * q[k];
    if (r) term += params_[layout_.gain] * r[k] * p[k] * q[k];
    s += term / keep;
  }
  return s;
}

void add_score_grad(const BackboneModel& model, UserId u, ItemId i, double coeff, GradientBuffer& grad) {
  if (coeff == 0.0) return;
  const auto& l = model.layout();
  const std::size_t d = l.dim;
  const auto params = model.params();
  auto g = grad.values();
  const double* p = &params[l.user_emb + u * d];
  const double* q = &params[l.item_emb + i * d];
  double* gp = &g[l.user_emb + u * d];
  double* gq = &g[l.item_emb + i * d];
  if (model.variant() == Variant::fm_lite) {
    const double* r = &params[l.projection];
    const double gain = params[l.gain];
    double* gr = &g[l.projection];
    double inter = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      const double pk = p[k], qk = q[k], w = 1.0 + gain * r[k];
      gp[k] += coeff * w * qk;
      gq[k] += coeff * w * pk;
      gr[k] += coeff * gain * pk * qk;
      inter += r[k] * pk * qk;
    }
    g[l.gain] += coeff * inter;
  } else {
    for (std::size_t k = 0; k < d; ++k) {
      const double pk = p[k], qk = q[k];
      gp[k] += coeff * qk;
      gq[k] += coeff * pk;
    }
  }
  g[l.user_bias + u] += coeff;
  g[l.item_bias + i] += coeff;
  g[l.global_bias] += coeff;
}

std::vector<LabeledExample> with_sampled_negatives(const data::InteractionDataset& ds,
                                                   std::span<const data::Interaction> positives,
                                                   std::size_t neg_ratio, Rng& rng) {
  std::vector<LabeledExample> out;
  out.reserve(positives.size() * (1 + neg_ratio));
  for (const auto& x : positives) {
    out.push_back({x.user, x.item, 1.0});
    const std::size_t n_trained = ds.train_items[x.user].size();
    if (n_trained >= ds.num_items) continue;
    for (std::size_t k = 0; k < neg_ratio; ++k) {
      ItemId j;
      do {
        j = static_cast<ItemId>(rng.index(ds.num_items));
      } while (ds.has_trained(x.user, j));
      out.push_back({x.user, j, 0.0});
    }
  }
  return out;
}

namespace {
// log(1 + e^x) without overflow.
double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
}  // namespace

double bce_loss_and_grad(const BackboneModel& model, std::span<const LabeledExample> examples,
                         double scale, GradientBuffer* grad) {
  if (examples.empty()) return 0.0;
  const double inv_n = 1.0 / static_cast<double>(examples.size());
  double loss = 0.0;
  for (const auto& e : examples) {
    const double s = model.score(e.user, e.item);
    loss += softplus(s) - e.label * s;
    if (grad) add_score_grad(model, e.user, e.item, scale * inv_n * (sigmoid(s) - e.label), *grad);
  }
  return loss * inv_n;
}

double rec_loss_and_grad(const BackboneModel& model, const data::InteractionDataset& ds,
                         std::span<const data::Interaction> positives, std::size_t neg_ratio,
                         Rng& rng, GradientBuffer* grad) {
  const auto examples = with_sampled_negatives(ds, positives, neg_ratio, rng);
  return bce_loss_and_grad(model, examples, 1.0, grad);
}

// ---------------------------------------------------------------------------

namespace {

constexpr int kCheckpointVersion = 1;

std::string tensor_line(std::string_view name, std::initializer_list<std::size_t> shape,
                        std::span<const double> data) {
  std::string out = "{\"name\":\"" + std::string(name) + "\",\"shape\":[";
  bool first = true;
  for (auto s : shape) {
    if (!first) out += ',';
    out += std::to_string(s);
    first = false;
  }
  out += "],\"data\":[";
  for (std::size_t k = 0; k < data.size(); ++k) {
    if (k) out += ',';
    out += format_double(data[k]);
  }
  out += "]}\n";
  return out;
}

}  // namespace

std::string serialize_checkpoint(const BackboneModel& model, const gating::GateParams& gate) {
  const auto& l = model.layout();
  const auto p = model.params();
  json meta = {{"format", "sllmr-checkpoint"},
               {"version", kCheckpointVersion},
               {"variant", std::string(to_string(model.variant()))},
               {"num_users", l.num_users},
               {"num_items", l.num_items},
               {"dim", l.dim}};
  std::string out = json{{"_meta", meta}}.dump() + "\n";
  out += tensor_line("backbone.user_emb", {l.num_users, l.dim}, p.subspan(l.user_emb, l.num_users * l.dim));
  out += tensor_line("backbone.item_emb", {l.num_items, l.dim}, p.subspan(l.item_emb, l.num_items * l.dim));
  out += tensor_line("backbone.user_bias", {l.num_users}, p.subspan(l.user_bias, l.num_users));
  out += tensor_line("backbone.item_bias", {l.num_items}, p.subspan(l.item_bias, l.num_items));
  out += tensor_line("backbone.global_bias", {1}, p.subspan(l.global_bias, 1));
  if (model.variant() == Variant::fm_lite) {
    out += tensor_line("backbone.projection", {l.dim}, p.subspan(l.projection, l.dim));
    out += tensor_line("backbone.gain", {1}, p.subspan(l.gain, 1));
  }
  out += tensor_line("gate.w", {3}, gate.w);
  out += tensor_line("gate.b", {1}, std::span<const double>(&gate.b, 1));
  return out;
}

Checkpoint parse_checkpoint(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  Checkpoint ck;
  bool have_meta = false;
  std::size_t filled = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("malformed checkpoint line: ") + e.what(), line_no);
    }
    if (!have_meta) {
      const auto& m = j.at("_meta");
      if (m.value("format", "") != "sllmr-checkpoint" || m.value("version", 0) != kCheckpointVersion)
        throw ParseError("checkpoint format/version mismatch", line_no);
      ck.model = BackboneModel(variant_from_string(m.at("variant").get<std::string>()),
                               m.at("num_users").get<std::size_t>(), m.at("num_items").get<std::size_t>(),
                               m.at("dim").get<std::size_t>());
      have_meta = true;
      continue;
    }
    const auto name = j.at("name").get<std::string>();
    const auto values = j.at("data").get<std::vector<double>>();
    const auto& l = ck.model.layout();
    auto put = [&](std::size_t offset, std::size_t count) {
      if (values.size() != count) throw ParseError("tensor " + name + " has wrong size", line_no);
      std::copy(values.begin(), values.end(), ck.model.params().begin() + static_cast<std::ptrdiff_t>(offset));
      filled += count;
    };
    if (name == "backbone.user_emb") put(l.user_emb, l.num_users * l.dim);
    else if (name == "backbone.item_emb") put(l.item_emb, l.num_items * l.dim);
    else if (name == "backbone.user_bias") put(l.user_bias, l.num_users);
    else if (name == "backbone.item_bias") put(l.item_bias, l.num_items);
    else if (name == "backbone.global_bias") put(l.global_bias, 1);
    else if (name == "backbone.projection" && ck.model.variant() == Variant::fm_lite) put(l.projection, l.dim);
    else if (name == "backbone.gain" && ck.model.variant() == Variant::fm_lite) put(l.gain, 1);
    else if (name == "gate.w") {
      if (values.size() != 3) throw ParseError("gate.w must have 3 entries", line_no);
      std::copy(values.begin(), values.end(), ck.gate.w.begin());
    } else if (name == "gate.b") {
      if (values.size() != 1) throw ParseError("gate.b must have 1 entry", line_no);
      ck.gate.b = values[0];
    } else {
      throw ParseError("unknown tensor '" + name + "'", line_no);
    }
  }
  if (!have_meta) throw ParseError("empty checkpoint", 0);
  if (filled != ck.model.params().size()) throw ParseError("checkpoint is missing backbone tensors", 0);
  return ck;
}

void save_checkpoint(const BackboneModel& model, const gating::GateParams& gate, const std::string& path) {
  write_file_atomic(path, serialize_checkpoint(model, gate));
}

Checkpoint load_checkpoint(const std::string& path) { return parse_checkpoint(read_file(path)); }

}  // namespace sllmr::model
