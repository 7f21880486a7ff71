#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "sllmr/model.hpp"
#include "sllmr/optim.hpp"
#include "sllmr/trainer.hpp"
#include "support.hpp"

using namespace sllmr;
using namespace sllmr::model;

namespace {

// Independent recomputation of the score from the flat layout.
double manual_score(const BackboneModel& m, UserId u, ItemId i) {
  const auto& L = m.layout();
  const auto p = m.params();
  double dot = 0.0, fm = 0.0;
  for (std::size_t k = 0; k < L.dim; ++k) {
    const double x = p[L.user_emb + u * L.dim + k] * p[L.item_emb + i * L.dim + k];
    dot += x;
    if (m.variant() == Variant::fm_lite) fm += p[L.projection + k] * x;
  }
  double s = dot + p[L.user_bias + u] + p[L.item_bias + i] + p[L.global_bias];
  if (m.variant() == Variant::fm_lite) s += p[L.gain] * fm;
  return s;
}

void randomize(BackboneModel& m, Rng& rng, double scale) {
  for (auto& x : m.params()) x = scale * rng.normal();
}

}  // namespace

TEST_CASE("sigmoid") {
  CHECK(sigmoid(0.0) == 0.5);
  CHECK(sigmoid(1.0) == doctest::Approx(0.7310585786).epsilon(1e-9));
  CHECK(sigmoid(800.0) == 1.0);
  CHECK(sigmoid(-800.0) == 0.0);
  CHECK(std::isfinite(sigmoid(-1e308)));
}

TEST_CASE("initialisation") {
  auto a = BackboneModel::init(Variant::mf_bias, 5, 7, 4, 3);
  auto b = BackboneModel::init(Variant::mf_bias, 5, 7, 4, 3);
  CHECK(a == b);
  CHECK_FALSE(a == BackboneModel::init(Variant::mf_bias, 5, 7, 4, 4));
  const double bound = 0.1 / std::sqrt(4.0);
  for (UserId u = 0; u < 5; ++u)
    for (double x : a.user_vec(u)) CHECK(std::fabs(x) <= bound);
  CHECK(a.global_bias() == 0.0);
  CHECK_THROWS_AS(BackboneModel::init(Variant::mf_bias, 0, 7, 4, 3), ConfigError);
  CHECK_THROWS_AS(BackboneModel::init(Variant::mf_bias, 5, 7, 0, 3), ConfigError);
  CHECK(train::TrainConfig{}.dim == 64);
}

TEST_CASE("scores") {
  SUBCASE("zero model") {
    BackboneModel m(Variant::mf_bias, 2, 3, 4);
    CHECK(m.score(1, 2) == 0.0);
    CHECK(m.predict_prob(1, 2) == 0.5);
  }
  SUBCASE("unit basis vectors") {
    BackboneModel m(Variant::mf_bias, 2, 3, 4);
    m.user_vec(0)[0] = 1.0;
    m.item_vec(1)[0] = 1.0;
    CHECK(m.score(0, 1) == 1.0);
  }
  SUBCASE("random models match a recomputation") {
    Rng rng(5);
    for (auto v : {Variant::mf_bias, Variant::fm_lite}) {
      BackboneModel m(v, 4, 6, 3);
      randomize(m, rng, 0.7);
      for (UserId u = 0; u < 4; ++u)
        for (ItemId i = 0; i < 6; ++i) CHECK(std::fabs(m.score(u, i) - manual_score(m, u, i)) < 1e-12);
    }
  }
  SUBCASE("out of range") {
    BackboneModel m(Variant::mf_bias, 2, 3, 4);
    CHECK_THROWS_AS(m.score(2, 0), ContractError);
    CHECK_THROWS_AS(m.score(0, 3), ContractError);
  }
  SUBCASE("full keep mask equals the plain score") {
    Rng rng(8);
    BackboneModel m(Variant::fm_lite, 2, 3, 4);
    randomize(m, rng, 0.5);
    std::vector<std::uint8_t> keep(4, 1);
    CHECK(m.score_masked(1, 2, keep, 1.0) == doctest::Approx(m.score(1, 2)).epsilon(1e-14));
  }
}

TEST_CASE("bce") {
  SUBCASE("zero model costs ln 2 per example") {
    BackboneModel m(Variant::mf_bias, 2, 3, 2);
    std::vector<LabeledExample> ex{{0, 0, 1.0}, {1, 2, 0.0}, {0, 1, 0.0}};
    CHECK(bce_loss_and_grad(m, ex, 1.0, nullptr) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  }
  SUBCASE("loss vanishes as p approaches the label") {
    BackboneModel m(Variant::mf_bias, 1, 2, 1);
    std::vector<LabeledExample> ex{{0, 0, 1.0}, {0, 1, 0.0}};
    double prev = 1e9;
    for (double b : {1.0, 5.0, 20.0, 40.0}) {
      m.item_bias(0) = b;
      m.item_bias(1) = -b;
      const double l = bce_loss_and_grad(m, ex, 1.0, nullptr);
      CHECK(l < prev);
      prev = l;
    }
    CHECK(prev < 1e-15);
  }
  SUBCASE("gradient matches central differences") {
    Rng rng(21);
    for (auto v : {Variant::mf_bias, Variant::fm_lite}) {
      BackboneModel m(v, 5, 7, 4);
      randomize(m, rng, 0.5);
      std::vector<LabeledExample> ex;
      for (int k = 0; k < 20; ++k)
        ex.push_back({static_cast<UserId>(rng.index(5)), static_cast<ItemId>(rng.index(7)), double(rng.index(2))});
      GradientBuffer g(m);
      bce_loss_and_grad(m, ex, 1.0, &g);
      auto f = [&] { return bce_loss_and_grad(m, ex, 1.0, nullptr); };
      for (std::size_t k = 0; k < m.params().size(); ++k) {
        const double num = testing::central_diff(f, m.params()[k], 1e-4);
        CHECK(testing::close(g.values()[k], num, 1e-4, 1e-8));
      }
    }
  }
}

TEST_CASE("negative sampling avoids train items") {
  Rng rng(3);
  auto ds = testing::random_dataset(rng, 6, 10, 2, 6);
  std::vector<data::Interaction> pos;
  for (auto k : ds.indices_with(data::Split::train)) pos.push_back(ds.interactions[k]);
  Rng r2(1);
  auto ex = with_sampled_negatives(ds, pos, 3, r2);
  std::size_t negs = 0;
  for (const auto& e : ex)
    if (e.label == 0.0) {
      ++negs;
      CHECK_FALSE(ds.has_trained(e.user, e.item));
    }
  CHECK(negs <= 3 * pos.size());
  CHECK(ex.size() - negs == pos.size());
}

TEST_CASE("adam") {
  const optim::AdamConfig cfg{1e-3};
  SUBCASE("zero gradient leaves parameters alone") {
    std::vector<double> p{1.0, -2.0}, g{0.0, 0.0};
    optim::AdamState st(2);
    optim::adam_step(p, g, st, cfg);
    CHECK(p == std::vector<double>{1.0, -2.0});
  }
  SUBCASE("first step moves by lr against the gradient sign") {
    std::vector<double> p{0.0, 0.0, 0.0}, g{3.0, -0.02, 1e-3};
    optim::AdamState st(3);
    optim::adam_step(p, g, st, cfg);
    CHECK(std::fabs(p[0] + 1e-3) < 1e-6);
    CHECK(std::fabs(p[1] - 1e-3) < 1e-6);
    CHECK(std::fabs(p[2] + 1e-3) < 1e-6);
  }
  SUBCASE("matches the textbook recursion") {
    std::vector<double> p{0.5}, m{0.0}, v{0.0};
    double ref = 0.5;
    optim::AdamState st(1);
    for (int t = 1; t <= 5; ++t) {
      const double g = std::sin(t);
      std::vector<double> gv{g};
      optim::adam_step(p, gv, st, cfg);
      m[0] = 0.9 * m[0] + 0.1 * g;
      v[0] = 0.999 * v[0] + 0.001 * g * g;
      const double mh = m[0] / (1 - std::pow(0.9, t)), vh = v[0] / (1 - std::pow(0.999, t));
      ref -= 1e-3 * mh / (std::sqrt(vh) + 1e-8);
      CHECK(p[0] == doctest::Approx(ref).epsilon(1e-12));
    }
  }
  SUBCASE("clip_grad_norm") {
    std::vector<double> a{3.0}, b{4.0};
    CHECK(optim::clip_grad_norm(a, b, 1.0) == doctest::Approx(5.0));
    CHECK(a[0] == doctest::Approx(0.6));
    CHECK(b[0] == doctest::Approx(0.8));
  }
}

TEST_CASE("checkpoint round-trip") {
  Rng rng(2);
  for (auto v : {Variant::mf_bias, Variant::fm_lite}) {
    BackboneModel m(v, 3, 4, 2);
    randomize(m, rng, 1.0);
    gating::GateParams g{{0.1, -0.2, 0.3}, 0.4};
    const auto text = serialize_checkpoint(m, g);
    auto back = parse_checkpoint(text);
    CHECK(back.model == m);
    CHECK(back.gate == g);
    CHECK(serialize_checkpoint(back.model, back.gate) == text);
  }
  CHECK_THROWS_AS(parse_checkpoint(""), ParseError);
}
