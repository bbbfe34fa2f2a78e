#pragma once

#include "hagps/ingest.hpp"
#include "hagps/random.hpp"

#include <string>
#include <vector>

namespace hagps {

// Demand profile of one region: mean daily pick-ups and drop-offs.
struct Archetype {
  std::string name;
  double pickups = 0.0;
  double dropoffs = 0.0;
  std::array<Count, 3> features{};  // roads, bike lanes, POIs
};

struct SyntheticWorld {
  RegionGrid grid;
  DemandSeries series;
  std::vector<int> archetype;  // per region, index into `archetypes`
  std::vector<Archetype> archetypes;
  Count fleet_size = 0;
};

/// 6 x 6 city with three archetypes. Sources collect more drop-offs than
/// pick-ups, sinks the reverse, balanced regions neither; every source borders
/// a sink so surplus bikes can be shipped one cell over. Counts are Poisson
/// around the archetype means with a mild weekday cycle.
SyntheticWorld archetype_city(std::uint64_t seed, int days = 31);

/// Two regions side by side: the west one only sees pick-ups, the east one only
/// drop-offs. Deterministic counts.
SyntheticWorld imbalance_toy(Count daily = 4, Count fleet = 12, int days = 31);

}  // namespace hagps
