#include "hagps/env.hpp"

#include "json.hpp"

#include <algorithm>
#include <numeric>

namespace hagps {

namespace {

// Distributes `total` units over weights by largest remainder. Weights are
// nonnegative integers with a positive sum.
CountVec largest_remainder(const CountVec& weights, Count total) {
  const Count wsum = weights.sum();
  const Index n = weights.size();
  CountVec out(n);
  std::vector<Count> rem(static_cast<std::size_t>(n));
  Count assigned = 0;
  for (Index k = 0; k < n; ++k) {
    const __int128 num = static_cast<__int128>(total) * weights(k);
    out(k) = static_cast<Count>(num / wsum);
    rem[static_cast<std::size_t>(k)] = static_cast<Count>(num % wsum);
    assigned += out(k);
  }
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    return rem[static_cast<std::size_t>(a)] > rem[static_cast<std::size_t>(b)];
  });
  for (Count left = total - assigned, i = 0; left > 0; --left, ++i) ++out(order[static_cast<std::size_t>(i)]);
  return out;
}

}  // namespace

void EnvConfig::validate() const {
  if (!(lambda_coef > 0 && alpha > 0 && beta > 0)) throw ConfigError("reward weights must be positive");
  if (max_load <= 0) throw ConfigError("max_load must be positive");
  if (!(epsilon > 0)) throw ConfigError("epsilon must be positive");
  if (fleet_size < 0) throw ConfigError("fleet_size must be nonnegative");
  if (horizon < 1) throw ConfigError("horizon must be at least 1");
}

CountVec initial_inventory(const DemandSeries& series, Count fleet_size) {
  if (fleet_size < 0) throw ValidationError("fleet_size must be nonnegative");
  const Index K = series.regions();
  if (K == 0) return CountVec(0);
  CountVec weights = series.pickups.colwise().sum().transpose();
  if (weights.sum() == 0) weights.setOnes();
  return largest_remainder(weights, fleet_size);
}

AgentAction sanitize_action(const AgentAction& raw, int region, Count on_hand, const EnvConfig& cfg,
                            const RegionGrid& grid) {
  if ((raw.array() < 0).any()) throw ValidationError("raw action entries must be nonnegative");
  AgentAction a = raw;
  for (Direction d : kDirections) {
    if (!grid.neighbor(region, d)) a(index_of(d)) = 0;
  }
  const Count cap = std::max<Count>(0, std::min(cfg.max_load, on_hand));
  const Count l1 = a.sum();
  if (l1 <= cap) return a;
  if (cap == 0) return AgentAction::Zero();
  return largest_remainder(a, cap);
}

Count net_inflow(std::span<const AgentAction> actions, int region, const RegionGrid& grid) {
  Count flow = -actions[static_cast<std::size_t>(region)].sum();
  for (Direction d : kDirections) {
    if (auto j = grid.neighbor(region, d)) flow += actions[static_cast<std::size_t>(*j)](index_of(opposite(d)));
  }
  return flow;
}

double reward(Count unmet, Count demand, const AgentAction& action, const EnvConfig& cfg) {
  if (unmet < 0 || unmet > demand) throw ValidationError("reward: unmet must lie in [0, demand]");
  const double miss = static_cast<double>(unmet) / (static_cast<double>(demand) + cfg.epsilon);
  const double load = static_cast<double>(action.cwiseAbs().sum()) / static_cast<double>(cfg.max_load);
  return cfg.lambda_coef * (1.0 - miss) - cfg.alpha * miss - cfg.beta * load;
}

StepOutcome step(const EnvState& state, std::span<const AgentAction> actions, const Eigen::Ref<const CountVec>& demand,
                 const Eigen::Ref<const CountVec>& dropoffs, const EnvConfig& cfg, const RegionGrid& grid) {
  const Index K = grid.size();
  if (static_cast<Index>(actions.size()) != K || state.inventory.size() != K || demand.size() != K ||
      dropoffs.size() != K)
    throw ShapeError("step: sizes must all equal the region count");

  StepOutcome out;
  out.pre_demand_inventory.resize(K);
  for (Index k = 0; k < K; ++k)
    out.pre_demand_inventory(k) = state.inventory(k) + net_inflow(actions, static_cast<int>(k), grid);
  if ((out.pre_demand_inventory.array() < 0).any())
    throw ValidationError("step: actions ship more bikes than available (not sanitized?)");
  out.demand = demand;
  out.served = demand.cwiseMin(out.pre_demand_inventory);
  out.unmet = demand - out.served;
  out.next_inventory = out.pre_demand_inventory - out.served + dropoffs;
  out.rewards.resize(K);
  for (Index k = 0; k < K; ++k)
    out.rewards(k) = reward(out.unmet(k), demand(k), actions[static_cast<std::size_t>(k)], cfg);
  out.actions.assign(actions.begin(), actions.end());
  out.relocated = 0;
  for (const auto& a : actions) out.relocated += a.sum();
  return out;
}

void EpisodeMetrics::add(const StepOutcome& o) {
  demand += o.demand.sum();
  unmet += o.unmet.sum();
  relocated += o.relocated;
  reward_sum += o.rewards.sum();
  ++steps;
}

double EpisodeMetrics::service_ratio() const {
  if (demand == 0) return 1.0;
  return 1.0 - static_cast<double>(unmet) / static_cast<double>(demand);
}

double avail_metric(std::span<const StepOutcome> outcomes) {
  EpisodeMetrics m;
  for (const auto& o : outcomes) m.add(o);
  return m.service_ratio();
}

Count total_rebalanced(std::span<const StepOutcome> outcomes) {
  Count total = 0;
  for (const auto& o : outcomes) total += o.relocated;
  return total;
}

DemandSeries resample_series(const DemandSeries& series, Rng& rng) {
  DemandSeries out = series;
  auto draw = [&](CountMat& m) {
    for (Index t = 0; t < m.rows(); ++t) {
      for (Index k = 0; k < m.cols(); ++k) {
        if (m(t, k) > 0) m(t, k) = std::poisson_distribution<Count>(static_cast<double>(m(t, k)))(rng);
      }
    }
  };
  draw(out.pickups);
  draw(out.dropoffs);
  return out;
}

Environment::Environment(std::shared_ptr<const RegionGrid> grid, DemandSeries series, EnvConfig cfg,
                         ObservationConfig obs)
    : grid_(std::move(grid)), series_(std::move(series)), cfg_(cfg), obs_(obs) {
  cfg_.validate();
  if (!grid_) throw ConfigError("environment needs a grid");
  if (series_.regions() != grid_->size()) throw ConfigError("demand series does not match the grid");
  if (series_.intervals() < 1) throw ConfigError("demand series has no intervals");
  if (obs_.history < 1) throw ConfigError("history window must be at least 1");
  scale_ = std::max(1.0, series_.pickups.cast<double>().mean());
  const auto& f = grid_->static_features();
  static_scaled_ = f.cast<double>();
  for (int c = 0; c < 3; ++c) {
    const double mx = static_scaled_.col(c).maxCoeff();
    if (mx > 0) static_scaled_.col(c) /= mx;
  }
  reset();
}

int Environment::horizon() const { return std::min(cfg_.horizon, series_.intervals()); }

void Environment::reset() {
  state_.t = 0;
  state_.inventory = initial_inventory(series_, cfg_.fleet_size);
}

int Environment::observation_size() const {
  const int K = agents();
  return 4 + K + (obs_.mode == HistoryFeatures::Stats ? 2 * K : K) + 3 * K;
}

Vec Environment::observation() const {
  const int K = agents();
  const int t = std::min(state_.t, series_.intervals() - 1);
  Vec s(observation_size());
  s.head<4>() = temporal_encode(0.0, series_.weekday(t));
  s.segment(4, K) = state_.inventory.cast<double>() / scale_;
  int off = 4 + K;
  if (obs_.mode == HistoryFeatures::Stats) {
    s.segment(off, 2 * K) = pickup_stats(series_, state_.t, obs_.history) / scale_;
    off += 2 * K;
  } else {
    if (state_.t > 0)
      s.segment(off, K) = series_.pickups.row(state_.t - 1).transpose().cast<double>() / scale_;
    else
      s.segment(off, K).setZero();
    off += K;
  }
  for (int k = 0; k < K; ++k) s.segment(off + 3 * k, 3) = static_scaled_.row(k).transpose();
  return s;
}

Vec Environment::local_features(int region) const {
  Vec f(kLocalFeatureSize);
  f(0) = static_cast<double>(state_.inventory(region)) / scale_;
  if (obs_.mode == HistoryFeatures::Stats) {
    const Vec stats = pickup_stats(series_, state_.t, obs_.history);
    f(1) = stats(2 * region) / scale_;
    f(2) = stats(2 * region + 1) / scale_;
  } else {
    f(1) = state_.t > 0 ? static_cast<double>(series_.pickups(state_.t - 1, region)) / scale_ : 0.0;
    f(2) = 0.0;
  }
  f.tail<3>() = static_scaled_.row(region).transpose();
  return f;
}

StepOutcome Environment::step(std::span<const AgentAction> raw) {
  if (done()) throw ValidationError("step called on a finished episode");
  const int K = agents();
  if (static_cast<int>(raw.size()) != K) throw ShapeError("one action per agent required");
  std::vector<AgentAction> actions(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k)
    actions[static_cast<std::size_t>(k)] = sanitize_action(raw[static_cast<std::size_t>(k)], k, state_.inventory(k), cfg_, *grid_);
  const CountVec d = series_.pickups.row(state_.t).transpose();
  const CountVec o = series_.dropoffs.row(state_.t).transpose();
  StepOutcome out = hagps::step(state_, actions, d, o, cfg_, *grid_);
  state_.inventory = out.next_inventory;
  ++state_.t;
  return out;
}

TraceWriter::TraceWriter(const std::filesystem::path& path) : out_(path) {
  if (!out_) throw ConfigError("cannot write trace: " + path.string());
}

void TraceWriter::write(int t, const CountVec& inventory, const StepOutcome& o) {
  auto vec = [](const CountVec& v) { return std::vector<Count>(v.data(), v.data() + v.size()); };
  nlohmann::json j;
  j["t"] = t;
  j["b"] = vec(inventory);
  nlohmann::json acts = nlohmann::json::array();
  for (const auto& a : o.actions) acts.push_back({a(0), a(1), a(2), a(3)});
  j["actions"] = std::move(acts);
  j["served"] = vec(o.served);
  j["unmet"] = vec(o.unmet);
  j["rewards"] = std::vector<double>(o.rewards.data(), o.rewards.data() + o.rewards.size());
  out_ << j.dump() << '\n';
}

}  // namespace hagps
