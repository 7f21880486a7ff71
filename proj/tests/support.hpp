#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <unistd.h>

#include "sllmr/common.hpp"
#include "sllmr/data.hpp"
#include "sllmr/llm.hpp"

namespace testing {

// O(P*N) pair count, ties half.
inline double brute_auc(const std::vector<double>& pos, const std::vector<double>& neg) {
  double hits = 0.0;
  for (double p : pos)
    for (double n : neg) hits += p > n ? 1.0 : (p == n ? 0.5 : 0.0);
  return hits / static_cast<double>(pos.size() * neg.size());
}

inline bool close(double analytic, double numeric, double rel, double abs) {
  const double d = std::fabs(analytic - numeric);
  return d <= abs || d <= rel * std::max(std::fabs(analytic), std::fabs(numeric));
}

// Central difference of f around x[k].
inline double central_diff(const std::function<double()>& f, double& x, double h) {
  const double keep = x;
  x = keep + h;
  const double up = f();
  x = keep - h;
  const double down = f();
  x = keep;
  return (up - down) / (2.0 * h);
}

// Random log: every user gets between lo and hi distinct items with increasing timestamps.
inline sllmr::data::InteractionDataset random_dataset(sllmr::Rng& rng, std::size_t users, std::size_t items,
                                                      std::size_t lo, std::size_t hi) {
  std::string csv = "user_id,item_id,timestamp\n";
  for (std::size_t u = 0; u < users; ++u) {
    const std::size_t n = std::min(items, lo + rng.index(hi - lo + 1));
    std::vector<std::size_t> all(items);
    for (std::size_t i = 0; i < items; ++i) all[i] = i;
    for (std::size_t k = 0; k < n; ++k) std::swap(all[k], all[k + rng.index(items - k)]);
    for (std::size_t k = 0; k < n; ++k)
      csv += "u" + std::to_string(u) + ",i" + std::to_string(all[k]) + "," + std::to_string(100 * u + k) + "\n";
  }
  // Items nobody touched never reach the id map; make sure every index exists.
  for (std::size_t i = 0; i < items; ++i) csv += "pad,i" + std::to_string(i) + "," + std::to_string(i) + "\n";
  auto ds = sllmr::data::parse_interactions(csv, sllmr::data::InputFormat::csv);
  sllmr::data::chronological_split(ds);
  return ds;
}

// Scores on a random subset of (user, item) pairs, values from a coarse grid
// so ties occur.
inline sllmr::llm::LlmScoreTable random_table(sllmr::Rng& rng, std::size_t users, std::size_t items,
                                              double density, bool ties = true) {
  sllmr::llm::LlmScoreTable t;
  for (std::size_t u = 0; u < users; ++u)
    for (std::size_t i = 0; i < items; ++i)
      if (rng.uniform() < density) {
        const double s = ties ? static_cast<double>(rng.index(6)) / 5.0 : rng.uniform();
        t.insert({static_cast<std::uint32_t>(u), static_cast<std::uint32_t>(i), s});
      }
  return t;
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path = std::filesystem::temp_directory_path() /
           ("sllmr-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

}  // namespace testing
