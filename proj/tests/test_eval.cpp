#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "sllmr/eval.hpp"
#include "support.hpp"

using namespace sllmr;
using namespace sllmr::eval;

namespace {

struct Bench {
  data::InteractionDataset ds;
  data::SyntheticTruth truth;
  data::Strata strata;
};

Bench bench(std::size_t users, std::size_t items, std::uint64_t seed) {
  data::SynthConfig sc;
  sc.num_users = users;
  sc.num_items = items;
  sc.max_events = std::min<std::size_t>(sc.max_events, items / 2);
  auto syn = data::synth_generate(sc, seed);
  Bench b{std::move(syn.dataset), std::move(syn.truth), {}};
  data::chronological_split(b.ds);
  b.strata = data::stratify(b.ds, data::compute_popularity(b.ds, 0.2), 3);
  return b;
}

// The generator's own scoring function as a backbone.
model::BackboneModel truth_model(const Bench& b) {
  model::BackboneModel m(model::Variant::mf_bias, b.ds.num_users, b.ds.num_items, b.truth.dim);
  for (data::UserId u = 0; u < b.ds.num_users; ++u)
    for (std::size_t k = 0; k < b.truth.dim; ++k)
      m.user_vec(u)[k] = b.truth.affinity_scale * b.truth.user_factors[u * b.truth.dim + k];
  for (data::ItemId i = 0; i < b.ds.num_items; ++i) {
    for (std::size_t k = 0; k < b.truth.dim; ++k) m.item_vec(i)[k] = b.truth.item_factors[i * b.truth.dim + k];
    m.item_bias(i) = b.truth.item_bias[i];
  }
  return m;
}

}  // namespace

TEST_CASE("auc examples") {
  std::vector<double> pos{0.9, 0.8}, neg{0.1, 0.85, 0.3};
  CHECK(*auc(pos, neg) == doctest::Approx(5.0 / 6.0));
  std::vector<double> a{1.0}, b{1.0};
  CHECK(*auc(a, b) == 0.5);
  std::vector<double> lo{0.0}, hi{1.0, 2.0};
  CHECK(*auc(lo, hi) == 0.0);
  CHECK(*auc(hi, lo) == 1.0);
  std::vector<double> none;
  CHECK_FALSE(auc(none, neg).has_value());
  CHECK_FALSE(auc(pos, none).has_value());
}

TEST_CASE("auc against brute force, antisymmetry, monotone invariance") {
  Rng rng(31);
  for (int t = 0; t < 200; ++t) {
    const std::size_t P = 1 + rng.index(100), N = 1 + rng.index(100);
    const bool grid = t % 2 == 0;  // ties
    std::vector<double> pos(P), neg(N);
    for (auto& x : pos) x = grid ? double(rng.index(6)) : rng.normal();
    for (auto& x : neg) x = grid ? double(rng.index(6)) : rng.normal();
    const double got = *auc(pos, neg);
    CHECK(got == testing::brute_auc(pos, neg));
    CHECK(*auc(neg, pos) == doctest::Approx(1.0 - got).epsilon(1e-12));
    auto f = [](double x) { return std::exp(0.5 * x) - 3.0; };
    std::vector<double> fp(P), fn(N);
    std::transform(pos.begin(), pos.end(), fp.begin(), f);
    std::transform(neg.begin(), neg.end(), fn.begin(), f);
    CHECK(*auc(fp, fn) == got);
  }
}

TEST_CASE("parallel kernels match the serial reference") {
  auto b = bench(150, 80, 5);
  auto m = model::BackboneModel::init(model::Variant::fm_lite, b.ds.num_users, b.ds.num_items, 6, 9);
  for (auto& x : m.params()) x *= 30.0;
  const auto test = b.ds.indices_with(data::Split::test);
  for (auto policy : {kernels::NegativePolicy::all, kernels::NegativePolicy::sampled}) {
    kernels::RankingOptions opt{policy, 15, 3};
    CHECK(kernels::interaction_auc(m, b.ds, test, opt) == kernels::reference::interaction_auc(m, b.ds, test, opt));
  }
  std::vector<double> a(b.ds.num_items), r(b.ds.num_items);
  for (data::UserId u : {0u, 17u, 149u}) {
    kernels::score_all_items(m, u, a);
    kernels::reference::score_all_items(m, u, r);
    CHECK(a == r);
  }
}

TEST_CASE("negative sets") {
  auto b = bench(60, 40, 2);
  const auto test = b.ds.indices_with(data::Split::test);
  const std::size_t k = test.front();
  const auto u = b.ds.interactions[k].user;
  auto all = kernels::negative_items(b.ds, k, {});
  for (auto i : all)
    for (const auto& e : b.ds.interactions) CHECK_FALSE((e.user == u && e.item == i));
  kernels::RankingOptions s{kernels::NegativePolicy::sampled, 5, 1};
  auto few = kernels::negative_items(b.ds, k, s);
  CHECK(few.size() == std::min<std::size_t>(5, all.size()));
  for (auto i : few) CHECK(std::find(all.begin(), all.end(), i) != all.end());
  CHECK(few == kernels::negative_items(b.ds, k, s));
}

TEST_CASE("an untrained model sits at chance") {
  auto b = bench(800, 200, 8);
  REQUIRE(b.strata.overall.size() >= 500);
  auto m = model::BackboneModel::init(model::Variant::mf_bias, b.ds.num_users, b.ds.num_items, 64, 1);
  auto r = evaluate(m, b.ds, b.strata, {});
  CHECK(std::fabs(*r.overall.auc - 0.5) <= 0.02);
  model::BackboneModel zero(model::Variant::mf_bias, b.ds.num_users, b.ds.num_items, 4);
  CHECK(*evaluate(zero, b.ds, b.strata, {}).overall.auc == 0.5);
}

TEST_CASE("the generating model ranks well") {
  auto b = bench(400, 150, 4);
  auto r = evaluate(truth_model(b), b.ds, b.strata, {});
  CHECK(*r.overall.auc > 0.8);
  CHECK(r.overall.n == b.strata.overall.size());
  CHECK(r.cold.n == b.strata.cold.size());
  CHECK(r.tail.n == b.strata.tail.size());
}

TEST_CASE("sampled negatives track the full ranking") {
  auto b = bench(300, 100, 6);
  auto m = truth_model(b);
  EvalOptions s;
  s.ranking = {kernels::NegativePolicy::sampled, 40, 2};
  const double full = *evaluate(m, b.ds, b.strata, {}).overall.auc;
  const double sub = *evaluate(m, b.ds, b.strata, s).overall.auc;
  CHECK(std::fabs(full - sub) < 0.02);
}

TEST_CASE("report formats") {
  auto b = bench(120, 60, 3);
  auto m = model::BackboneModel::init(model::Variant::mf_bias, b.ds.num_users, b.ds.num_items, 4, 2);
  EvalOptions opt;
  opt.pooled = true;
  auto r = evaluate(m, b.ds, b.strata, opt);
  r.dataset_hash = data::dataset_hash(b.ds);
  CHECK(r.overall.pooled.has_value());
  CHECK(report_from_json(report_json(r)) == r);
  const auto csv = report_csv(r);
  CHECK(csv.substr(0, csv.find('\n')) == "stratum,auc,n");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
  CHECK_NOTHROW(require_all_strata(r));

  data::Strata no_cold = b.strata;
  no_cold.cold.clear();
  auto partial = evaluate(m, b.ds, no_cold, {});
  CHECK_FALSE(partial.cold.auc.has_value());
  CHECK_FALSE(partial.cold.reason.empty());
  CHECK(report_from_json(report_json(partial)) == partial);
  CHECK_THROWS_AS(require_all_strata(partial), ContractError);
  CHECK_THROWS_AS(report_from_json("{\"overall\": 3"), ParseError);
}

TEST_CASE("evaluation contracts") {
  auto b = bench(60, 40, 1);
  model::BackboneModel small(model::Variant::mf_bias, 3, 3, 2);
  CHECK_THROWS_AS(evaluate(small, b.ds, b.strata, {}), ContractError);
}
