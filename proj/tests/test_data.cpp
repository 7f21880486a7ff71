#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <set>

#include "sllmr/common.hpp"
#include "sllmr/data.hpp"
#include "support.hpp"

using namespace sllmr;
using namespace sllmr::data;

namespace {

InteractionDataset csv(const std::string& body) {
  return parse_interactions("user_id,item_id,timestamp\n" + body, InputFormat::csv);
}

std::set<std::string> tail_names(const InteractionDataset& ds, const PopularityStats& st) {
  std::set<std::string> out;
  for (ItemId i = 0; i < ds.num_items; ++i)
    if (st.tail(i)) out.insert(ds.items.external(i));
  return out;
}

}  // namespace

TEST_CASE("ingest assigns dense ids in first-seen order") {
  auto ds = csv("alice,x,3\nbob,y,1\nalice,y,5\n");
  CHECK(ds.num_users == 2);
  CHECK(ds.users.find("alice") == 0u);
  CHECK(ds.users.find("bob") == 1u);
  CHECK(ds.num_items == 2);
  CHECK(ds.interactions.size() == 3);
  for (std::size_t k = 1; k < ds.interactions.size(); ++k) {
    const auto& a = ds.interactions[k - 1];
    const auto& b = ds.interactions[k];
    CHECK((a.user < b.user || (a.user == b.user && a.timestamp <= b.timestamp)));
  }
}

TEST_CASE("ingest errors") {
  SUBCASE("empty") {
    CHECK_THROWS_WITH_AS(parse_interactions("", InputFormat::csv), doctest::Contains("no interactions"), ParseError);
    CHECK_THROWS_AS(parse_interactions("user_id,item_id,timestamp\n", InputFormat::csv), ParseError);
  }
  SUBCASE("non-integer timestamp names its line") {
    try {
      csv("a,x,1\nb,y,noon\n");
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.line() == 3);
      CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
  }
  SUBCASE("short row") { CHECK_THROWS_AS(csv("a,x\n"), ParseError); }
  SUBCASE("bad jsonl") {
    CHECK_THROWS_AS(parse_interactions("{\"user_id\":\"a\",\"item_id\":\"b\"}\n", InputFormat::jsonl), ParseError);
  }
}

TEST_CASE("duplicates keep the first copy and are counted") {
  auto ds = csv("a,x,1\na,x,1\na,y,2\na,x,1\n");
  CHECK(ds.interactions.size() == 2);
  CHECK(ds.duplicates_dropped == 2);
}

TEST_CASE("jsonl ingest ignores extra keys and matches csv") {
  auto j = parse_interactions(
      "{\"user_id\":\"a\",\"item_id\":\"x\",\"timestamp\":1,\"rating\":5}\n"
      "{\"user_id\":\"b\",\"item_id\":7,\"timestamp\":2}\n",
      InputFormat::jsonl);
  auto c = csv("a,x,1,5.0\nb,7,2\n");
  CHECK(dataset_hash(j) == dataset_hash(c));
  CHECK(format_from_path("log.jsonl") == InputFormat::jsonl);
  CHECK(format_from_path("log.csv") == InputFormat::csv);
}

TEST_CASE("canonical csv round-trips") {
  Rng rng(4);
  auto ds = testing::random_dataset(rng, 12, 9, 1, 6);
  auto again = parse_interactions(to_csv(ds), InputFormat::csv);
  CHECK(to_csv(again) == to_csv(ds));
  CHECK(dataset_hash(again) == dataset_hash(ds));
}

TEST_CASE("leave-one-out split") {
  auto ds = csv("a,1,1\na,2,2\na,3,3\na,4,4\na,5,5\nb,1,1\nb,2,2\nc,9,1\n");
  chronological_split(ds);
  auto count_of = [&](UserId u, Split s) {
    std::size_t n = 0;
    for (std::size_t k = ds.user_offsets[u]; k < ds.user_offsets[u + 1]; ++k) n += ds.split[k] == s;
    return n;
  };
  const UserId a = *ds.users.find("a"), b = *ds.users.find("b"), c = *ds.users.find("c");
  CHECK(count_of(a, Split::train) == 3);
  CHECK(count_of(a, Split::val) == 1);
  CHECK(count_of(a, Split::test) == 1);
  // test and val are the latest events
  CHECK(ds.split[ds.user_offsets[a] + 4] == Split::test);
  CHECK(ds.split[ds.user_offsets[a] + 3] == Split::val);
  CHECK(count_of(b, Split::train) == 1);
  CHECK(count_of(b, Split::val) == 0);
  CHECK(count_of(b, Split::test) == 1);
  CHECK(count_of(c, Split::train) == 1);
  CHECK(count_of(c, Split::test) == 0);
  CHECK(ds.train_length[b] == 1);
  CHECK(ds.train_items[a] == std::vector<ItemId>{*ds.items.find("1"), *ds.items.find("2"), *ds.items.find("3")});
}

TEST_CASE("tail set by quantile") {
  SUBCASE("distinct counts 9..0") {
    // item k has 9-k single-event users; item 9 appears only as a test event
    std::string body;
    int user = 0;
    for (int k = 0; k < 10; ++k) {
      const int c = 9 - k - (k == 0 ? 1 : 0);
      for (int r = 0; r < c; ++r) body += "s" + std::to_string(user++) + ",i" + std::to_string(k) + ",1\n";
    }
    body += "two,i0,1\ntwo,i9,2\n";
    auto ds = csv(body);
    chronological_split(ds);
    auto st = compute_popularity(ds, 0.2);
    CHECK(st.counts[*ds.items.find("i0")] == 9);
    CHECK(st.counts[*ds.items.find("i9")] == 0);
    CHECK(tail_names(ds, st) == std::set<std::string>{"i8", "i9"});
    CHECK(st.tail_size == 2);
  }
  SUBCASE("ties break by ascending index") {
    std::string body;
    for (int k = 0; k < 10; ++k) body += "s" + std::to_string(k) + ",i" + std::to_string(k) + ",1\n";
    auto ds = csv(body);
    chronological_split(ds);
    CHECK(tail_names(ds, compute_popularity(ds, 0.2)) == std::set<std::string>{"i0", "i1"});
    CHECK(compute_popularity(ds, 0.999).tail_size == 9);
    CHECK_THROWS_AS(compute_popularity(ds, 0.0), ConfigError);
    CHECK_THROWS_AS(compute_popularity(ds, 1.0), ConfigError);
  }
}

TEST_CASE("strata") {
  // u1 has one train event; item "top" is trained by everyone
  auto ds = csv(
      "u1,a,1\nu1,top,2\n"
      "u2,top,1\nu2,b,2\nu2,c,3\nu2,d,4\nu2,top2,5\n"
      "u3,top,1\nu3,top2,2\nu3,e,3\nu3,f,4\nu3,top,9\n");
  chronological_split(ds);
  auto st = compute_popularity(ds, 0.2);
  auto s = stratify(ds, st, 3);
  const auto u1 = *ds.users.find("u1");
  const auto top = *ds.items.find("top");
  bool u1_cold = false;
  for (auto k : s.cold) u1_cold |= ds.interactions[k].user == u1;
  CHECK(u1_cold);
  for (auto k : s.tail) CHECK(ds.interactions[k].item != top);
  std::set<std::size_t> all(s.overall.begin(), s.overall.end());
  for (auto k : s.cold) CHECK(all.count(k));
  for (auto k : s.tail) CHECK(all.count(k));
  CHECK(s.overall.size() == ds.count(Split::test));
}

TEST_CASE("cold and tail are subsets of overall on random logs") {
  Rng rng(9);
  for (int t = 0; t < 20; ++t) {
    auto ds = testing::random_dataset(rng, 15, 12, 1, 8);
    auto s = stratify(ds, compute_popularity(ds, 0.2), 3);
    std::set<std::size_t> all(s.overall.begin(), s.overall.end());
    for (auto k : s.cold) REQUIRE(all.count(k));
    for (auto k : s.tail) REQUIRE(all.count(k));
  }
}

TEST_CASE("synthetic generator") {
  SynthConfig cfg;
  cfg.num_users = 200;
  cfg.num_items = 100;
  cfg.cold_user_fraction = 0.5;
  SUBCASE("deterministic per seed") {
    auto a = synth_generate(cfg, 7), b = synth_generate(cfg, 7), c = synth_generate(cfg, 8);
    CHECK(to_csv(a.dataset) == to_csv(b.dataset));
    CHECK(a.truth == b.truth);
    CHECK(to_csv(a.dataset) != to_csv(c.dataset));
  }
  SUBCASE("cold test fraction tracks the target") {
    auto syn = synth_generate(cfg, 7);
    chronological_split(syn.dataset);
    auto s = stratify(syn.dataset, compute_popularity(syn.dataset, 0.2), 3);
    const double frac = static_cast<double>(s.cold.size()) / static_cast<double>(s.overall.size());
    CHECK(std::fabs(frac - 0.5) < 0.1);
  }
  SUBCASE("invalid configs") {
    auto bad = cfg;
    bad.latent_dim = 0;
    CHECK_THROWS_AS(synth_generate(bad, 1), ConfigError);
    bad = cfg;
    bad.max_events = 500;  // more than the catalog
    CHECK_THROWS_AS(synth_generate(bad, 1), ConfigError);
  }
  SUBCASE("truth file round-trips onto the dataset ids") {
    testing::TempDir dir("truth");
    auto syn = synth_generate(cfg, 3);
    save_truth(syn.truth, dir / "truth.json");
    auto ds = parse_interactions(to_csv(syn.dataset), InputFormat::csv);
    auto back = load_truth(dir / "truth.json", ds);
    for (UserId u = 0; u < 5; ++u)
      for (ItemId i = 0; i < 5; ++i) CHECK(back.affinity(u, i) == doctest::Approx(syn.truth.affinity(u, i)));
  }
}
