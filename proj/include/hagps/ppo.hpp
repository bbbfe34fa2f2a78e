#pragma once

#include "hagps/env.hpp"
#include "hagps/groups.hpp"
#include "hagps/policy.hpp"

#include <functional>
#include <optional>
#include <vector>

namespace hagps {

// How per-agent rewards are turned into the learning signal.
enum class RewardSharing {
  Local,         // each agent's own reward
  Neighborhood,  // mean over the agent and its grid neighbors
  Team,          // mean over all agents
};

struct TrainConfig {
  double gamma = 0.995;
  double gae_lambda = 0.95;
  double lr_policy = 3e-4;
  double lr_value = 1e-3;
  double clip_ratio = 0.2;
  int epochs_per_update = 4;
  int minibatches = 4;
  int episodes_per_epoch = 64;
  int max_steps = 31;
  int epochs = 1;
  int val_episodes = 16;
  double entropy_coef = 0.01;
  double value_coef = 0.5;
  double value_clip = 1.0;
  double max_grad_norm = 0.5;
  double reward_scale = 0.1;
  RewardSharing sharing = RewardSharing::Neighborhood;
  bool resample_demand = true;
  int trajectory_window = 8;   // H
  bool train_encoder = true;
  bool use_controller = true;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Transitions of one episode for every agent; sample index = t * agents + i.
struct RolloutBuffer {
  int steps = 0;
  int agents = 0;
  std::vector<Vec> states;  // one global observation per step
  std::vector<AgentAction> actions;
  Vec log_probs;
  Vec rewards;  // environment rewards
  Vec values;
  std::vector<std::uint8_t> dones;

  Index index(int t, int agent) const { return static_cast<Index>(t) * agents + agent; }
  Index size() const { return static_cast<Index>(steps) * agents; }
};

struct Rollout {
  RolloutBuffer buffer;
  EpisodeMetrics metrics;
  TrajectoryWindows windows;
  std::vector<StepOutcome> outcomes;
};

/// Runs one episode. Sampled actions are recorded as emitted by the policy;
/// the environment applies their feasible projection. `greedy` takes the mode
/// of every categorical instead of sampling.
Rollout collect_rollout(Environment& env, const PolicyModel& model, const TrainConfig& cfg, Rng& rng,
                        bool greedy = false);

struct Advantages {
  Vec advantages;
  Vec returns;
};

/// Backward GAE recursion over one agent's episode; `bootstrap` is the value
/// after the last step (0 at a terminal).
Advantages compute_gae(const Eigen::Ref<const Vec>& rewards, const Eigen::Ref<const Vec>& values, double bootstrap,
                       double gamma, double lambda);

/// Learning-signal rewards (T x N, row-major by step) after reward sharing and scaling.
Mat shaped_rewards(const RolloutBuffer& buffer, const RegionGrid& grid, RewardSharing sharing, double scale);

/// min(r A, clip(r, 1-eps, 1+eps) A) and its derivative with respect to log r.
struct SurrogateTerm {
  double objective;
  double dlogratio;
};
SurrogateTerm clipped_surrogate(double ratio, double advantage, double clip);

/// Standardizes in place; leaves size-1 inputs centered only.
void normalize_advantages(Eigen::Ref<Vec> adv);

struct UpdateStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
  int minibatch_steps = 0;
};

/// Clipped PPO over the buffer: epochs_per_update passes of shuffled
/// minibatches. Trunks, actor heads and ID embeddings step at lr_policy;
/// critic heads at lr_value on detached trunk features.
UpdateStats ppo_update(const RolloutBuffer& buffer, const Mat& rewards, PolicyModel& model, const TrainConfig& cfg,
                       Rng& rng);

struct MetricRecord {
  int epoch = 0;
  double train_service_ratio = 0.0;
  double train_rebalanced = 0.0;  // mean per episode
  double val_service_ratio = 0.0;
  double val_rebalanced = 0.0;
  double mean_reward = 0.0;  // per agent per step, training episodes
  int local_groups = 0;
  int global_groups = 0;
  int period = 0;
  double running_divergence = 0.0;
};

struct EvalResult {
  double service_ratio = 0.0;
  Count rebalanced = 0;
  double mean_reward = 0.0;
  EpisodeMetrics metrics;
};

// Builds the environment for a training (validation = false) or validation episode.
using EnvFactory = std::function<Environment(int episode, bool validation)>;

struct TrainHooks {
  std::function<void(const MetricRecord&)> on_epoch;
  std::function<void(int episode, const EpisodeMetrics&)> on_episode;
  GroupEventLog* events = nullptr;
};

struct TrainResult {
  std::vector<MetricRecord> history;
  ControllerState controller;
};

/// collect -> PPO update -> encoder step -> regroup tick, per episode; a
/// greedy validation pass closes every epoch.
TrainResult train(const EnvFactory& make_env, PolicyModel& model, ControllerState controller,
                  const ControllerConfig& controller_cfg, const TrainConfig& cfg, const TrainHooks& hooks = {});

/// Greedy (mode) rollout over the environment's full horizon.
EvalResult evaluate(Environment env, const PolicyModel& model, const TrainConfig& cfg);

}  // namespace hagps
