#include "hagps/synthetic.hpp"

#include <chrono>
#include <cmath>

namespace hagps {

namespace {

constexpr std::chrono::sys_days kStart{std::chrono::year{2024} / 1 / 1};

}  // namespace

SyntheticWorld archetype_city(std::uint64_t seed, int days) {
  if (days < 1) throw ConfigError("synthetic world needs at least one day");
  constexpr int n = 6;
  enum { Src = 0, Snk = 1, Bal = 2 };
  SyntheticWorld w{RegionGrid::lattice(n, n), {}, {}, {}, 0};
  w.archetypes = {
      {"source", 2.0, 6.0, {14, 6, 4}},
      {"sink", 6.0, 2.0, {6, 1, 16}},
      {"balanced", 4.0, 4.0, {10, 3, 8}},
  };
  // Row 0 is the southern edge; north is row + 1.
  const int layout[n][n] = {
      {Src, Snk, Src, Snk, Src, Snk},
      {Bal, Bal, Bal, Bal, Bal, Bal},
      {Snk, Src, Snk, Src, Snk, Src},
      {Bal, Bal, Bal, Bal, Bal, Bal},
      {Src, Src, Src, Src, Src, Src},
      {Snk, Snk, Snk, Snk, Snk, Snk},
  };
  const int K = n * n;
  w.archetype.resize(K);
  for (int k = 0; k < K; ++k) w.archetype[static_cast<std::size_t>(k)] = layout[k / n][k % n];

  Rng rng = SeedTree(seed).child("synthetic").rng();
  FeatureMatrix f(K, 3);
  for (int k = 0; k < K; ++k) {
    const auto& a = w.archetypes[static_cast<std::size_t>(w.archetype[static_cast<std::size_t>(k)])];
    for (int c = 0; c < 3; ++c) {
      std::poisson_distribution<Count> jitter(static_cast<double>(a.features[static_cast<std::size_t>(c)]));
      f(k, c) = jitter(rng);
    }
  }
  w.grid.set_static_features(std::move(f));

  DemandSeries& s = w.series;
  s.start_day = kStart;
  s.grid_rows = n;
  s.grid_cols = n;
  s.pickups = CountMat::Zero(days, K);
  s.dropoffs = CountMat::Zero(days, K);
  double total = 0.0;
  for (int t = 0; t < days; ++t) {
    const double cycle = 1.0 + 0.25 * std::cos(6.283185307179586 * s.weekday(t) / 7.0);
    for (int k = 0; k < K; ++k) {
      const auto& a = w.archetypes[static_cast<std::size_t>(w.archetype[static_cast<std::size_t>(k)])];
      std::poisson_distribution<Count> pick(a.pickups * cycle);
      std::poisson_distribution<Count> drop(a.dropoffs * cycle);
      s.pickups(t, k) = pick(rng);
      s.dropoffs(t, k) = drop(rng);
      total += a.pickups * cycle;
    }
  }
  w.fleet_size = static_cast<Count>(std::llround(total / days));
  return w;
}

SyntheticWorld imbalance_toy(Count daily, Count fleet, int days) {
  if (days < 1 || daily < 0 || fleet < 0) throw ConfigError("invalid toy parameters");
  SyntheticWorld w{RegionGrid::lattice(1, 2), {}, {0, 1}, {}, fleet};
  w.archetypes = {{"deficit", static_cast<double>(daily), 0.0, {}}, {"surplus", 0.0, static_cast<double>(daily), {}}};
  DemandSeries& s = w.series;
  s.start_day = kStart;
  s.grid_rows = 1;
  s.grid_cols = 2;
  s.pickups = CountMat::Zero(days, 2);
  s.dropoffs = CountMat::Zero(days, 2);
  s.pickups.col(0).setConstant(daily);
  s.dropoffs.col(1).setConstant(daily);
  return w;
}

}  // namespace hagps
