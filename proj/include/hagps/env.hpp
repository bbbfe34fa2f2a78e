#pragma once

#include "hagps/common.hpp"
#include "hagps/ingest.hpp"
#include "hagps/random.hpp"

#include <filesystem>
#include <fstream>
#include <memory>
#include <span>
#include <vector>

namespace hagps {

struct EnvConfig {
  double lambda_coef = 3.0;  // service-ratio weight
  double alpha = 5.0;        // unmet-demand penalty
  double beta = 15.0;        // relocation cost
  Count max_load = 20;       // m: bikes one agent may move per step
  double epsilon = 1e-6;
  Count fleet_size = 0;
  int horizon = 31;
  std::uint64_t seed = 0;

  void validate() const;
};

// Outflows toward (North, South, East, West); nonnegative.
using AgentAction = Eigen::Matrix<Count, 4, 1>;

struct EnvState {
  int t = 0;
  CountVec inventory;
};

struct StepOutcome {
  CountVec pre_demand_inventory;  // b~
  CountVec served;                // S
  CountVec unmet;                 // U
  CountVec demand;                // d
  CountVec next_inventory;        // b_{t+1}
  Vec rewards;                    // one per agent
  std::vector<AgentAction> actions;
  Count relocated = 0;            // sum of action L1 norms
};

/// Largest-remainder split of the fleet proportional to mean pick-up demand
/// per region; uniform when there is no demand. Ties favor lower indices.
CountVec initial_inventory(const DemandSeries& series, Count fleet_size);

/// Projects a raw outflow request onto the feasible set: absent neighbors get
/// nothing, and the total is capped by both the load limit and the bikes on
/// hand. Reductions are proportional with largest-remainder rounding, ties in
/// N, S, E, W order.
AgentAction sanitize_action(const AgentAction& raw, int region, Count on_hand, const EnvConfig& cfg,
                            const RegionGrid& grid);

/// Bikes arriving at `region` from neighbors minus bikes it sends away.
Count net_inflow(std::span<const AgentAction> actions, int region, const RegionGrid& grid);

double reward(Count unmet, Count demand, const AgentAction& action, const EnvConfig& cfg);

/// One transition. Actions must already be sanitized, one per region.
StepOutcome step(const EnvState& state, std::span<const AgentAction> actions,
                 const Eigen::Ref<const CountVec>& demand, const Eigen::Ref<const CountVec>& dropoffs,
                 const EnvConfig& cfg, const RegionGrid& grid);

struct EpisodeMetrics {
  Count demand = 0;
  Count unmet = 0;
  Count relocated = 0;
  double reward_sum = 0.0;  // summed over agents and steps
  int steps = 0;

  void add(const StepOutcome& o);
  // 1 - unmet/demand; 1 when there was no demand.
  double service_ratio() const;
};

/// Fulfilled service ratio over an episode. Zero total demand yields 1.
double avail_metric(std::span<const StepOutcome> outcomes);
Count total_rebalanced(std::span<const StepOutcome> outcomes);

enum class HistoryFeatures { Stats, LastStep };

struct ObservationConfig {
  int history = 8;
  HistoryFeatures mode = HistoryFeatures::Stats;
};

/// Poisson resample of every pick-up and drop-off count around its recorded value.
DemandSeries resample_series(const DemandSeries& series, Rng& rng);

/// Demand-replay multi-agent environment with one agent per region.
class Environment {
 public:
  Environment(std::shared_ptr<const RegionGrid> grid, DemandSeries series, EnvConfig cfg,
              ObservationConfig obs = {});

  void reset();
  bool done() const { return state_.t >= horizon(); }
  int horizon() const;
  int agents() const { return grid_->size(); }

  const EnvState& state() const { return state_; }
  const RegionGrid& grid() const { return *grid_; }
  const DemandSeries& series() const { return series_; }
  const EnvConfig& config() const { return cfg_; }

  /// Global state: [temporal(4) | inventory(K) | history | static(3K)], scaled.
  Vec observation() const;
  int observation_size() const;

  /// Per-region slice [inventory, history mean, history spread, roads, lanes, pois].
  Vec local_features(int region) const;
  static constexpr int kLocalFeatureSize = 6;

  /// Sanitizes the raw requests, advances one interval.
  StepOutcome step(std::span<const AgentAction> raw);

  double count_scale() const { return scale_; }

 private:
  std::shared_ptr<const RegionGrid> grid_;
  DemandSeries series_;
  EnvConfig cfg_;
  ObservationConfig obs_;
  EnvState state_;
  double scale_ = 1.0;
  Eigen::Matrix<double, Eigen::Dynamic, 3> static_scaled_;
};

/// Line-delimited JSON episode trace: one record per step.
class TraceWriter {
 public:
  explicit TraceWriter(const std::filesystem::path& path);
  void write(int t, const CountVec& inventory, const StepOutcome& outcome);

 private:
  std::ofstream out_;
};

}  // namespace hagps
