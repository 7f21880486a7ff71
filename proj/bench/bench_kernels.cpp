// Parallel kernels against the serial reference on a synthetic catalog.
//   bench_kernels [users] [items] [dim] [repeats]

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>

#include "sllmr/data.hpp"
#include "sllmr/kernels.hpp"

using namespace sllmr;

namespace {

double best_of(std::size_t repeats, const std::function<void()>& f) {
  double best = 1e300;
  for (std::size_t r = 0; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  return best;
}

void row(const char* name, double par, double ref) {
  std::printf("%-18s parallel %9.3f ms  reference %9.3f ms  speedup %.2fx\n", name, 1e3 * par, 1e3 * ref, ref / par);
}

}  // namespace

int main(int argc, char** argv) {
  const std::size_t users = argc > 1 ? std::strtoul(argv[1], nullptr, 10) : 3000;
  const std::size_t items = argc > 2 ? std::strtoul(argv[2], nullptr, 10) : 2000;
  const std::size_t dim = argc > 3 ? std::strtoul(argv[3], nullptr, 10) : 64;
  const std::size_t repeats = argc > 4 ? std::strtoul(argv[4], nullptr, 10) : 5;

  data::SynthConfig sc;
  sc.num_users = users;
  sc.num_items = items;
  auto syn = data::synth_generate(sc, 1);
  auto& ds = syn.dataset;
  data::chronological_split(ds);
  const auto test = ds.indices_with(data::Split::test);
  auto model = model::BackboneModel::init(model::Variant::fm_lite, ds.num_users, ds.num_items, dim, 2);

  std::printf("threads %d, %zu users, %zu items, d %zu, %zu test interactions, best of %zu\n", omp_get_max_threads(),
              ds.num_users, ds.num_items, dim, test.size(), repeats);

  std::vector<kernels::InteractionAuc> a, b;
  const kernels::RankingOptions opt;
  const double pa = best_of(repeats, [&] { a = kernels::interaction_auc(model, ds, test, opt); });
  const double ra = best_of(repeats, [&] { b = kernels::reference::interaction_auc(model, ds, test, opt); });
  row("interaction_auc", pa, ra);

  std::vector<double> s(ds.num_items), t(ds.num_items);
  const double ps = best_of(repeats, [&] {
    for (data::UserId u = 0; u < ds.num_users; ++u) kernels::score_all_items(model, u, s);
  });
  const double rs = best_of(repeats, [&] {
    for (data::UserId u = 0; u < ds.num_users; ++u) kernels::reference::score_all_items(model, u, t);
  });
  row("score_all_items", ps, rs);

  if (a != b || s != t) {
    std::printf("MISMATCH between parallel and reference results\n");
    return 1;
  }
  std::printf("results identical\n");
  return 0;
}
