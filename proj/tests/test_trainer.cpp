#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "oracles.hpp"
#include "sllmr/llm.hpp"
#include "sllmr/trainer.hpp"
#include "support.hpp"

using namespace sllmr;
using namespace sllmr::train;

namespace {

struct Fixture {
  data::InteractionDataset ds;
  llm::LlmScoreTable table;
};

Fixture synthetic(std::size_t users = 80, std::size_t items = 40, std::uint64_t seed = 3) {
  data::SynthConfig sc;
  sc.num_users = users;
  sc.num_items = items;
  sc.max_events = 20;
  auto syn = data::synth_generate(sc, seed);
  Fixture f{std::move(syn.dataset), {}};
  data::chronological_split(f.ds);
  auto stats = data::compute_popularity(f.ds, 0.2);
  auto plan = llm::build_jobs(f.ds, stats, {}, seed);
  auto regions = llm::RegionMap::build(f.ds, stats, 3);
  f.table = llm::run_scoring(plan.jobs, llm::mock_backend(syn.truth, regions, {}, seed), 1, {});
  return f;
}

TrainConfig small_config(Mode mode) {
  TrainConfig c;
  c.mode = mode;
  c.dim = 8;
  c.epochs = 3;
  c.patience = 0;
  c.seed = 11;
  c.batch_size = 64;
  return c;
}

}  // namespace

TEST_CASE("defaults") {
  TrainConfig c;
  CHECK(c.lambda == 0.1);
  CHECK(c.lr == 1e-3);
  CHECK(c.batch_size == 128);
  CHECK(c.dim == 64);
  CHECK(c.tau_u == 3);
  CHECK(c.tail_fraction == 0.2);
  CHECK(c.margin == 0.2);
  CHECK(c.per_user_cap == 8);
  CHECK(c.mode == Mode::sllmr);
  CHECK(llm::JobConfig{}.history_len == 10);
  CHECK(llm::LlmScoreTable::kDefaultScore == 0.5);
}

TEST_CASE("ini configuration") {
  SUBCASE("sections, comments, overrides") {
    auto kv = parse_ini("# top\nlambda = 0.3 ; trailing\n[train]\ndim=16\n\n[other]\nx = 1\n");
    CHECK(kv.at("lambda") == "0.3");
    CHECK(kv.at("train.dim") == "16");
    CHECK(kv.at("other.x") == "1");
    TrainConfig c;
    kv.erase("other.x");
    train::apply(kv, c);
    CHECK(c.lambda == 0.3);
    CHECK(c.dim == 16);
  }
  SUBCASE("round trip") {
    TrainConfig c;
    c.lambda = 0.0125;
    c.mode = Mode::pointwise;
    c.uncertainty_mode = gating::UncertaintyMode::confidence;
    c.variant = model::Variant::fm_lite;
    c.detach_uncertainty = false;
    TrainConfig back;
    train::apply(parse_ini(to_ini(c)), back);
    CHECK(to_ini(back) == to_ini(c));
    CHECK(train_config_keys().size() == to_key_values(c).size());
  }
  SUBCASE("errors") {
    TrainConfig c;
    CHECK_THROWS_AS(train::apply({{"lamda", "1"}}, c), ConfigError);
    CHECK_THROWS_AS(train::apply({{"dim", "-4"}}, c), ConfigError);
    CHECK_THROWS_AS(train::apply({{"lr", "fast"}}, c), ConfigError);
    CHECK_THROWS_AS(train::apply({{"mode", "both"}}, c), ConfigError);
    CHECK_THROWS_AS(train::apply({{"uncertainty_mode", "vibes"}}, c), ConfigError);
    CHECK_THROWS_AS(parse_ini("[broken\n"), ParseError);
    CHECK_THROWS_AS(parse_ini("novalue\n"), ParseError);
  }
  SUBCASE("validation") {
    auto bad = [](auto mutate) {
      TrainConfig c;
      mutate(c);
      return c;
    };
    CHECK_THROWS_AS(bad([](TrainConfig& c) { c.margin = 0.0; }).validate(), ConfigError);
    CHECK_THROWS_AS(bad([](TrainConfig& c) { c.lambda = -1; }).validate(), ConfigError);
    CHECK_THROWS_AS(bad([](TrainConfig& c) { c.tail_fraction = 1.0; }).validate(), ConfigError);
    CHECK_THROWS_AS(bad([](TrainConfig& c) { c.pairs_per_batch = 0; }).validate(), ConfigError);
    CHECK_THROWS_AS(bad([](TrainConfig& c) {
                      c.uncertainty_mode = gating::UncertaintyMode::ensemble;
                      c.detach_uncertainty = false;
                    }).validate(),
                    ConfigError);
    CHECK_NOTHROW(TrainConfig{}.validate());
  }
}

TEST_CASE("shipped default config") {
  TrainConfig c;
  c.lambda = c.lr = 0;  // must come back from the file
  KeyValues train_keys;
  for (const auto& [k, v] : parse_ini(read_file(std::string(SLLMR_SOURCE_DIR) + "/configs/default.ini")))
    if (k.starts_with("train.")) train_keys.emplace(k, v);
  CHECK(train_keys.size() >= 19);
  train::apply(train_keys, c);
  CHECK(c.lambda == 0.1);
  CHECK(c.lr == 1e-3);
  CHECK(c.batch_size == 128);
  CHECK(c.dim == 64);
  CHECK(c.tau_u == 3);
  CHECK(c.tail_fraction == 0.2);
}

TEST_CASE("full objective gradient, every mode and variant") {
  Rng rng(2024);
  std::size_t instances = 0;
  for (auto mode : {Mode::sllmr, Mode::global, Mode::pointwise, Mode::none})
    for (auto variant : {model::Variant::mf_bias, model::Variant::fm_lite})
      for (int t = 0; t < 6;) {
        auto in = oracle::random_instance(rng, mode, variant);
        auto rep = oracle::fd_check(in, rng);
        if (rep.coords == 0) continue;
        INFO(to_string(mode), " ", model::to_string(variant), " ", rep.first_failure);
        CHECK(rep.failures == 0);
        ++instances;
        ++t;
      }
  CHECK(instances == 48);
}

TEST_CASE("hand-computed first step on a 2 user, 3 item instance") {
  // A: x y z (one train event, cold at tau 2); B: y x y z (two train events)
  auto ds = data::parse_interactions("user_id,item_id,timestamp\nA,x,1\nA,y,2\nA,z,3\nB,y,1\nB,x,2\nB,y,3\nB,z,4\n",
                                     data::InputFormat::csv);
  data::chronological_split(ds);
  REQUIRE(ds.num_users == 2);
  REQUIRE(ds.num_items == 3);
  llm::LlmScoreTable table;
  table.insert({0, 0, 0.9});
  table.insert({0, 1, 0.4});
  table.insert({0, 2, 0.1});
  table.insert({1, 0, 0.8});
  table.insert({1, 2, 0.3});

  TrainConfig cfg;
  cfg.dim = 2;
  cfg.lambda = 0.1;
  cfg.margin = 0.2;
  cfg.tau_u = 2;
  cfg.tail_fraction = 0.34;  // one tail item: z, never trained
  cfg.gate_anchor = 0.2;
  cfg.uncertainty_mode = gating::UncertaintyMode::entropy;
  Trainer tr(cfg, ds, &table);
  REQUIRE(tr.popularity().tail(2));

  // P_A, P_B, Q_x, Q_y, Q_z, b_A, b_B, b_x, b_y, b_z, b_g
  const double P[2][2] = {{0.3, -0.2}, {0.1, 0.4}};
  const double Q[3][2] = {{0.5, 0.1}, {-0.3, 0.2}, {0.05, -0.4}};
  const double bu[2] = {0.02, -0.01}, bi[3] = {0.1, -0.05, 0.0}, bg = 0.03;
  auto& m = tr.model();
  for (int u = 0; u < 2; ++u)
    for (int k = 0; k < 2; ++k) m.user_vec(u)[k] = P[u][k];
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 2; ++k) m.item_vec(i)[k] = Q[i][k];
  for (int u = 0; u < 2; ++u) m.user_bias(u) = bu[u];
  for (int i = 0; i < 3; ++i) m.item_bias(i) = bi[i];
  m.global_bias() = bg;
  tr.gate() = {{0.5, -0.25, 1.0}, 0.1};

  std::vector<model::LabeledExample> ex{{0, 0, 1}, {0, 2, 0}, {1, 1, 1}, {1, 0, 0}};
  auto batch = tr.prepare_step({0, 1}, ex);
  REQUIRE(batch.pair_terms.size() == 4);

  // Expected, written out term by term.
  auto s = [&](int u, int i) { return P[u][0] * Q[i][0] + P[u][1] * Q[i][1] + bu[u] + bi[i] + bg; };
  double dP[2][2] = {}, dQ[3][2] = {}, dbu[2] = {}, dbi[3] = {}, dbg = 0, dw[3] = {}, db = 0;
  auto push = [&](int u, int i, double c) {
    for (int k = 0; k < 2; ++k) {
      dP[u][k] += c * Q[i][k];
      dQ[i][k] += c * P[u][k];
    }
    dbu[u] += c;
    dbi[i] += c;
    dbg += c;
  };
  for (const auto& e : ex) push(int(e.user), int(e.item), (sigmoid(s(e.user, e.item)) - e.label) / 4.0);

  const double cold[2] = {1.0, 0.0}, tail[3] = {0.0, 0.0, 1.0};
  const double wv[3] = {0.5, -0.25, 1.0}, b0 = 0.1, lam = 0.1, gam = 0.2, mg = 0.2;
  struct P3 { int u, w, l; };
  for (P3 p : {P3{0, 0, 2}, P3{0, 0, 1}, P3{0, 1, 2}, P3{1, 0, 2}}) {
    double zw[3] = {cold[p.u], tail[p.w], gating::entropy_uncertainty(sigmoid(s(p.u, p.w)))};
    double zl[3] = {cold[p.u], tail[p.l], gating::entropy_uncertainty(sigmoid(s(p.u, p.l)))};
    const double aw = sigmoid(wv[0] * zw[0] + wv[1] * zw[1] + wv[2] * zw[2] + b0);
    const double al = sigmoid(wv[0] * zl[0] + wv[1] * zl[1] + wv[2] * zl[2] + b0);
    const double a = 0.5 * (aw + al);
    const double h = std::max(0.0, mg - (s(p.u, p.w) - s(p.u, p.l)));
    if (h > 0) {
      push(p.u, p.w, -lam * a);
      push(p.u, p.l, lam * a);
    }
    const double up = lam * (h + 2 * gam * (a - 0.5));
    for (int k = 0; k < 3; ++k) dw[k] += up * 0.5 * (aw * (1 - aw) * zw[k] + al * (1 - al) * zl[k]);
    db += up * 0.5 * (aw * (1 - aw) + al * (1 - al));
  }

  model::GradientBuffer g(m);
  gating::GateGrad gg;
  tr.evaluate_step(batch, &g, &gg);
  const auto& L = m.layout();
  auto gv = g.values();
  for (int u = 0; u < 2; ++u)
    for (int k = 0; k < 2; ++k) CHECK(std::fabs(gv[L.user_emb + u * 2 + k] - dP[u][k]) < 1e-10);
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 2; ++k) CHECK(std::fabs(gv[L.item_emb + i * 2 + k] - dQ[i][k]) < 1e-10);
  for (int u = 0; u < 2; ++u) CHECK(std::fabs(gv[L.user_bias + u] - dbu[u]) < 1e-10);
  for (int i = 0; i < 3; ++i) CHECK(std::fabs(gv[L.item_bias + i] - dbi[i]) < 1e-10);
  CHECK(std::fabs(gv[L.global_bias] - dbg) < 1e-10);
  for (int k = 0; k < 3; ++k) CHECK(std::fabs(gg.w[k] - dw[k]) < 1e-10);
  CHECK(std::fabs(gg.b - db) < 1e-10);
}

TEST_CASE("mode none is plain BCE training") {
  auto f = synthetic();
  auto cfg = small_config(Mode::none);
  Trainer tr(cfg, f.ds, nullptr);
  auto shadow = tr.model();
  optim::AdamState st(shadow.params().size());
  for (int s = 0; s < 20; ++s) {
    auto batch = tr.sample_step();
    model::GradientBuffer g(shadow);
    const double expect = model::bce_loss_and_grad(shadow, batch.examples, 1.0, &g);
    optim::adam_step(shadow.params(), g.values(), st, {cfg.lr});
    CHECK(tr.step(batch).total == expect);
  }
  CHECK(tr.model() == shadow);
}

TEST_CASE("lambda zero reproduces mode none") {
  auto f = synthetic();
  auto base = train::train(small_config(Mode::none), f.ds, nullptr);
  for (auto mode : {Mode::sllmr, Mode::global, Mode::pointwise}) {
    auto cfg = small_config(mode);
    cfg.lambda = 0.0;
    auto r = train::train(cfg, f.ds, &f.table);
    CHECK(r.model == base.model);
    CHECK(r.step_losses == base.step_losses);
    CHECK(r.gate == gating::GateParams{});
  }
}

TEST_CASE("training is deterministic per seed") {
  auto f = synthetic();
  for (auto mode : {Mode::sllmr, Mode::pointwise}) {
    auto cfg = small_config(mode);
    auto a = train::train(cfg, f.ds, &f.table), b = train::train(cfg, f.ds, &f.table);
    CHECK(a.step_losses == b.step_losses);
    CHECK(model::serialize_checkpoint(a.model, a.gate) == model::serialize_checkpoint(b.model, b.gate));
    cfg.seed = 12;
    CHECK(train::train(cfg, f.ds, &f.table).step_losses != a.step_losses);
  }
}

TEST_CASE("gate diagnostics") {
  auto f = synthetic();
  SUBCASE("zero gate reads 0.5 everywhere") {
    Trainer tr(small_config(Mode::sllmr), f.ds, &f.table);
    auto d = tr.gate_diagnostics();
    CHECK(d.pairs > 0);
    CHECK(d.n_cold + d.n_tail + d.n_dense == d.pairs);
    for (double a : {d.alpha_cold, d.alpha_tail, d.alpha_dense}) CHECK(a == 0.5);
  }
  SUBCASE("global reads 1") {
    Trainer tr(small_config(Mode::global), f.ds, &f.table);
    auto d = tr.gate_diagnostics();
    for (double a : {d.alpha_cold, d.alpha_tail, d.alpha_dense}) CHECK(a == 1.0);
  }
  SUBCASE("groups partition the dumped pairs") {
    Trainer tr(small_config(Mode::sllmr), f.ds, &f.table);
    std::vector<reg::PairDiag> dump;
    auto d = tr.gate_diagnostics(&dump);
    CHECK(dump.size() == d.pairs);
    std::size_t counts[3] = {};
    for (const auto& p : dump) ++counts[static_cast<int>(tr.group_of(p.pair))];
    CHECK(counts[0] == d.n_cold);
    CHECK(counts[1] == d.n_tail);
    CHECK(counts[2] == d.n_dense);
  }
  SUBCASE("the gate moves when trained") {
    auto cfg = small_config(Mode::sllmr);
    cfg.gate_lr = 1e-2;
    auto r = train::train(cfg, f.ds, &f.table);
    CHECK_FALSE(r.gate == gating::GateParams{});
  }
}

TEST_CASE("run bookkeeping") {
  auto f = synthetic();
  auto cfg = small_config(Mode::sllmr);
  cfg.epochs = 6;
  std::size_t starts = 0, epochs = 0;
  RunObserver obs;
  obs.on_start = [&](const RunManifest& m) {
    ++starts;
    CHECK(m.dataset_hash == data::dataset_hash(f.ds));
    CHECK(!m.table_hash.empty());
  };
  obs.on_epoch = [&](const EpochMetrics& e, const std::vector<reg::PairDiag>&) { CHECK(e.epoch == epochs++); };
  auto r = train::train(cfg, f.ds, &f.table, &obs);
  CHECK(starts == 1);
  CHECK(epochs == 7);
  CHECK(r.manifest.epochs.size() == 7);
  const auto best = r.manifest.best_epoch;
  for (const auto& e : r.manifest.epochs)
    if (e.val_auc && r.manifest.best_val_auc) CHECK(*e.val_auc <= *r.manifest.best_val_auc);
  CHECK(*r.manifest.epochs[best].val_auc == *r.manifest.best_val_auc);
  // restored model is the best epoch's
  Trainer probe(cfg, f.ds, &f.table);
  probe.model() = r.model;
  CHECK(*probe.validation_auc() == doctest::Approx(*r.manifest.best_val_auc).epsilon(1e-12));

  cfg.patience = 1;
  cfg.epochs = 40;
  auto early = train::train(cfg, f.ds, &f.table);
  CHECK(early.manifest.epochs.size() <= 41);
  const auto n = early.manifest.epochs.size() - 1;
  if (n < 40) CHECK(n == early.manifest.best_epoch + 1);

  auto line = epoch_json(r.manifest.epochs[1]);
  CHECK(line.find("\"alpha\"") != std::string::npos);
  CHECK(metrics_csv_header().substr(0, 6) == "epoch,");
}

TEST_CASE("trainer contracts") {
  auto f = synthetic();
  CHECK_THROWS_AS(Trainer(small_config(Mode::sllmr), f.ds, nullptr), ContractError);
  auto unsplit = f.ds;
  unsplit.split.clear();
  CHECK_THROWS_AS(Trainer(small_config(Mode::none), unsplit, nullptr), ContractError);
  auto bad_table = f.table;
  bad_table.insert({static_cast<data::UserId>(f.ds.num_users + 5), 0, 0.3});
  CHECK_THROWS_AS(Trainer(small_config(Mode::sllmr), f.ds, &bad_table), ContractError);

  Trainer tr(small_config(Mode::sllmr), f.ds, &f.table);
  tr.model().global_bias() = std::nan("");
  CHECK_THROWS_AS(tr.step(tr.sample_step()), Error);
}

TEST_CASE("gradient clipping bounds the joint update input") {
  auto f = synthetic();
  auto cfg = small_config(Mode::sllmr);
  cfg.grad_clip = 1e-6;
  cfg.epochs = 1;
  CHECK_NOTHROW(train::train(cfg, f.ds, &f.table));
}
