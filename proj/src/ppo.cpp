#include "hagps/ppo.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

namespace hagps {

void TrainConfig::validate() const {
  if (!(gamma > 0 && gamma <= 1)) throw ConfigError("gamma must lie in (0, 1]");
  if (!(gae_lambda >= 0 && gae_lambda <= 1)) throw ConfigError("gae_lambda must lie in [0, 1]");
  if (!(lr_policy > 0 && lr_value > 0)) throw ConfigError("learning rates must be positive");
  if (!(clip_ratio > 0)) throw ConfigError("clip_ratio must be positive");
  if (epochs_per_update < 1 || minibatches < 1 || episodes_per_epoch < 1 || max_steps < 1 || epochs < 0 ||
      val_episodes < 0 || trajectory_window < 1)
    throw ConfigError("episode and batch counts must be positive");
  if (entropy_coef < 0 || value_coef < 0 || !(value_clip > 0) || !(max_grad_norm > 0) || !(reward_scale > 0))
    throw ConfigError("loss coefficients out of range");
}

Rollout collect_rollout(Environment& env, const PolicyModel& model, const TrainConfig& cfg, Rng& rng, bool greedy) {
  env.reset();
  const int N = env.agents();
  if (N != model.agents()) throw ShapeError("policy and environment disagree on agent count");
  const int bins = model.sizes.bins;
  const int steps = std::min(env.horizon(), cfg.max_steps);
  const Count max_load = env.config().max_load;

  Rollout ro;
  auto& buf = ro.buffer;
  buf.steps = steps;
  buf.agents = N;
  buf.actions.resize(static_cast<std::size_t>(steps) * N);
  buf.log_probs.resize(buf.size());
  buf.rewards.resize(buf.size());
  buf.values.resize(buf.size());
  buf.dones.assign(static_cast<std::size_t>(buf.size()), 0);
  ro.windows = TrajectoryWindows(N, cfg.trajectory_window);

  std::vector<AgentAction> actions(static_cast<std::size_t>(N));
  std::vector<Vec> local(static_cast<std::size_t>(N));
  for (int t = 0; t < steps; ++t) {
    const Vec s = env.observation();
    const auto out = model.act(s);
    for (int i = 0; i < N; ++i) {
      const auto logits = out.logits.col(i);
      auto& a = actions[static_cast<std::size_t>(i)];
      a = greedy ? nn::mode_action(logits, bins) : nn::sample_action(logits, bins, rng);
      const Index idx = buf.index(t, i);
      buf.actions[static_cast<std::size_t>(idx)] = a;
      buf.log_probs(idx) = nn::joint_log_prob(logits, a, bins);
      buf.values(idx) = out.values(i);
      local[static_cast<std::size_t>(i)] = env.local_features(i);
    }
    buf.states.push_back(s);
    StepOutcome o = env.step(actions);
    for (int i = 0; i < N; ++i) {
      const Index idx = buf.index(t, i);
      buf.rewards(idx) = o.rewards(i);
      buf.dones[static_cast<std::size_t>(idx)] = t + 1 == steps;
      ro.windows.push(i, trajectory_tuple(local[static_cast<std::size_t>(i)], o.actions[static_cast<std::size_t>(i)],
                                          o.rewards(i), max_load, cfg.reward_scale));
    }
    ro.metrics.add(o);
    ro.outcomes.push_back(std::move(o));
  }
  require_finite(buf.log_probs, "rollout log-probabilities");
  return ro;
}

Advantages compute_gae(const Eigen::Ref<const Vec>& rewards, const Eigen::Ref<const Vec>& values, double bootstrap,
                       double gamma, double lambda) {
  if (rewards.size() != values.size()) throw ShapeError("compute_gae: rewards and values differ in length");
  const Index n = rewards.size();
  Advantages out{Vec(n), Vec(n)};
  double next_value = bootstrap;
  double next_adv = 0.0;
  for (Index t = n - 1; t >= 0; --t) {
    const double delta = rewards(t) + gamma * next_value - values(t);
    next_adv = delta + gamma * lambda * next_adv;
    out.advantages(t) = next_adv;
    next_value = values(t);
  }
  out.returns = out.advantages + values;
  return out;
}

Mat shaped_rewards(const RolloutBuffer& buffer, const RegionGrid& grid, RewardSharing sharing, double scale) {
  const int N = buffer.agents;
  Mat r(buffer.steps, N);
  for (int t = 0; t < buffer.steps; ++t)
    for (int i = 0; i < N; ++i) r(t, i) = buffer.rewards(buffer.index(t, i));
  Mat out = r;
  switch (sharing) {
    case RewardSharing::Local: break;
    case RewardSharing::Team: out.colwise() = r.rowwise().mean(); break;
    case RewardSharing::Neighborhood:
      for (int i = 0; i < N; ++i) {
        Vec acc = r.col(i);
        int n = 1;
        for (Direction d : kDirections) {
          if (auto j = grid.neighbor(i, d)) {
            acc += r.col(*j);
            ++n;
          }
        }
        out.col(i) = acc / n;
      }
      break;
  }
  return out * scale;
}

SurrogateTerm clipped_surrogate(double ratio, double advantage, double clip) {
  const double unclipped = ratio * advantage;
  const double clipped = std::clamp(ratio, 1.0 - clip, 1.0 + clip) * advantage;
  if (unclipped <= clipped) return {unclipped, unclipped};
  return {clipped, 0.0};
}

void normalize_advantages(Eigen::Ref<Vec> adv) {
  if (adv.size() == 0) return;
  const double mean = adv.mean();
  adv.array() -= mean;
  if (adv.size() < 2) return;
  const double sd = std::sqrt(adv.squaredNorm() / static_cast<double>(adv.size()));
  adv /= (sd + 1e-12);
}

namespace {

struct Sample {
  Index index;
  int t;
  int agent;
};

}  // namespace

UpdateStats ppo_update(const RolloutBuffer& buffer, const Mat& rewards, PolicyModel& model, const TrainConfig& cfg,
                       Rng& rng) {
  const int N = buffer.agents;
  const int T = buffer.steps;
  const int bins = model.sizes.bins;
  const Index S = buffer.size();
  if (rewards.rows() != T || rewards.cols() != N) throw ShapeError("ppo_update: reward matrix shape");
  UpdateStats stats;
  if (S == 0) return stats;

  Vec adv(S), ret(S);
  for (int i = 0; i < N; ++i) {
    Vec v(T);
    for (int t = 0; t < T; ++t) v(t) = buffer.values(buffer.index(t, i));
    const auto g = compute_gae(rewards.col(i), v, 0.0, cfg.gamma, cfg.gae_lambda);
    for (int t = 0; t < T; ++t) {
      adv(buffer.index(t, i)) = g.advantages(t);
      ret(buffer.index(t, i)) = g.returns(t);
    }
  }

  const nn::AdamConfig<double> policy_adam{cfg.lr_policy, 0.9, 0.999, 1e-5};
  const nn::AdamConfig<double> value_adam{cfg.lr_value, 0.9, 0.999, 1e-5};
  const int trunk_out = model.sizes.trunk_out;
  const int id_dim = model.sizes.id_dim;

  std::vector<Index> order(static_cast<std::size_t>(S));
  std::iota(order.begin(), order.end(), Index{0});
  const int mbs = std::min<int>(cfg.minibatches, static_cast<int>(S));

  for (int epoch = 0; epoch < cfg.epochs_per_update; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (int mb = 0; mb < mbs; ++mb) {
      const std::size_t lo = static_cast<std::size_t>(S) * mb / mbs;
      const std::size_t hi = static_cast<std::size_t>(S) * (mb + 1) / mbs;
      const auto n = static_cast<Index>(hi - lo);
      if (n == 0) continue;

      std::vector<Sample> samples;
      samples.reserve(hi - lo);
      Vec a_mb(n);
      for (std::size_t k = lo; k < hi; ++k) {
        const Index idx = order[k];
        samples.push_back({idx, static_cast<int>(idx / N), static_cast<int>(idx % N)});
        a_mb(static_cast<Index>(k - lo)) = adv(idx);
      }
      normalize_advantages(a_mb);
      const double inv_n = 1.0 / static_cast<double>(n);

      // Trunk forward once per (global group, step) present in the minibatch.
      struct TrunkPass {
        std::vector<int> column_of_step;
        std::vector<int> steps;
        nn::Mlp<double>::Cache cache;
        Mat h;
        Mat dh;
      };
      std::map<int, TrunkPass> trunks;
      std::map<int, std::vector<Index>> by_local;  // local id -> positions in `samples`
      for (Index p = 0; p < n; ++p) {
        const auto& s = samples[static_cast<std::size_t>(p)];
        const auto& slot = model.tree.slot(s.agent);
        auto& tp = trunks[slot.global];
        if (tp.column_of_step.empty()) tp.column_of_step.assign(static_cast<std::size_t>(T), -1);
        if (tp.column_of_step[static_cast<std::size_t>(s.t)] < 0) {
          tp.column_of_step[static_cast<std::size_t>(s.t)] = static_cast<int>(tp.steps.size());
          tp.steps.push_back(s.t);
        }
        by_local[slot.local].push_back(p);
      }

      for (auto& [gid, g] : model.tree.globals()) g.trunk.params().zero_grad();
      for (auto& [lid, l] : model.tree.locals()) {
        l.head.actor.params().zero_grad();
        l.head.critic.params().zero_grad();
      }
      model.ids.params().zero_grad();

      for (auto& [gid, tp] : trunks) {
        Mat x(model.sizes.state, static_cast<Index>(tp.steps.size()));
        for (std::size_t c = 0; c < tp.steps.size(); ++c)
          x.col(static_cast<Index>(c)) = buffer.states[static_cast<std::size_t>(tp.steps[c])];
        tp.h = model.tree.global(gid).trunk.forward(x, &tp.cache);
        tp.dh = Mat::Zero(tp.h.rows(), tp.h.cols());
      }

      double pg_loss = 0.0, v_loss = 0.0, entropy = 0.0, kl = 0.0, clipped = 0.0;
      for (auto& [lid, positions] : by_local) {
        auto& local = model.tree.local(lid);
        auto& tp = trunks.at(local.global);
        const auto m = static_cast<Index>(positions.size());
        Mat x(model.sizes.head_input(), m);
        for (Index j = 0; j < m; ++j) {
          const auto& s = samples[static_cast<std::size_t>(positions[static_cast<std::size_t>(j)])];
          x.col(j).head(trunk_out) = tp.h.col(tp.column_of_step[static_cast<std::size_t>(s.t)]);
          x.col(j).tail(id_dim) = model.ids.vector(s.agent);
        }
        nn::Mlp<double>::Cache actor_cache, critic_cache;
        const Mat logits = local.head.actor.forward(x, &actor_cache);
        const Mat values = local.head.critic.forward(x, &critic_cache);
        Mat dlogits(logits.rows(), m);
        Mat dvalue(1, m);
        for (Index j = 0; j < m; ++j) {
          const Index p = positions[static_cast<std::size_t>(j)];
          const auto& s = samples[static_cast<std::size_t>(p)];
          const auto& action = buffer.actions[static_cast<std::size_t>(s.index)];
          const double logp = nn::joint_log_prob(logits.col(j), action, bins);
          const double log_ratio = logp - buffer.log_probs(s.index);
          const double ratio = std::exp(log_ratio);
          const auto term = clipped_surrogate(ratio, a_mb(p), cfg.clip_ratio);
          pg_loss -= term.objective * inv_n;
          entropy += nn::joint_entropy(logits.col(j), bins) * inv_n;
          kl += ((ratio - 1.0) - log_ratio) * inv_n;
          clipped += (std::abs(ratio - 1.0) > cfg.clip_ratio) * inv_n;
          dlogits.col(j) = -term.dlogratio * inv_n * nn::joint_log_prob_grad(logits.col(j), action, bins) -
                           cfg.entropy_coef * inv_n * nn::joint_entropy_grad(logits.col(j), bins);

          const double v = values(0, j);
          const double v_old = buffer.values(s.index);
          const double target = ret(s.index);
          const double dv = v - v_old;
          const double v_clip = v_old + std::clamp(dv, -cfg.value_clip, cfg.value_clip);
          const double l1 = (v - target) * (v - target);
          const double l2 = (v_clip - target) * (v_clip - target);
          v_loss += 0.5 * std::max(l1, l2) * inv_n;
          double g = 0.0;
          if (l1 >= l2)
            g = v - target;
          else if (std::abs(dv) < cfg.value_clip)
            g = v_clip - target;
          dvalue(0, j) = cfg.value_coef * g * inv_n;
        }
        const Mat dx = local.head.actor.backward(actor_cache, dlogits);
        local.head.critic.backward(critic_cache, dvalue);
        for (Index j = 0; j < m; ++j) {
          const auto& s = samples[static_cast<std::size_t>(positions[static_cast<std::size_t>(j)])];
          tp.dh.col(tp.column_of_step[static_cast<std::size_t>(s.t)]) += dx.col(j).head(trunk_out);
          if (model.ids.enabled()) model.ids.grad(s.agent) += dx.col(j).tail(id_dim);
        }
      }

      const double total = pg_loss + cfg.value_coef * v_loss - cfg.entropy_coef * entropy;
      if (!std::isfinite(total)) {
        std::ostringstream msg;
        msg << "ppo_update: non-finite loss (policy " << pg_loss << ", value " << v_loss << ", entropy " << entropy
            << ")";
        throw NumericError(msg.str());
      }

      std::vector<nn::ParamSet<double>*> policy_sets, value_sets, all;
      for (auto& [gid, tp] : trunks) {
        auto& trunk = model.tree.global(gid).trunk;
        trunk.backward(tp.cache, tp.dh);
        policy_sets.push_back(&trunk.params());
      }
      for (auto& [lid, positions] : by_local) {
        auto& head = model.tree.local(lid).head;
        policy_sets.push_back(&head.actor.params());
        value_sets.push_back(&head.critic.params());
      }
      if (model.ids.enabled()) policy_sets.push_back(&model.ids.params());
      all = policy_sets;
      all.insert(all.end(), value_sets.begin(), value_sets.end());
      nn::clip_grad_norm<double>(all, cfg.max_grad_norm);
      for (auto* p : policy_sets) nn::adam_update(*p, policy_adam);
      for (auto* p : value_sets) nn::adam_update(*p, value_adam);

      stats.policy_loss += pg_loss;
      stats.value_loss += v_loss;
      stats.entropy += entropy;
      stats.approx_kl += kl;
      stats.clip_fraction += clipped;
      ++stats.minibatch_steps;
    }
  }
  if (stats.minibatch_steps > 0) {
    const double k = 1.0 / stats.minibatch_steps;
    stats.policy_loss *= k;
    stats.value_loss *= k;
    stats.entropy *= k;
    stats.approx_kl *= k;
    stats.clip_fraction *= k;
  }
  return stats;
}

EvalResult evaluate(Environment env, const PolicyModel& model, const TrainConfig& cfg) {
  TrainConfig full = cfg;
  full.max_steps = env.horizon();
  Rng unused(0);
  const auto ro = collect_rollout(env, model, full, unused, true);
  EvalResult r;
  r.metrics = ro.metrics;
  r.service_ratio = ro.metrics.service_ratio();
  r.rebalanced = ro.metrics.relocated;
  const double denom = static_cast<double>(std::max(1, ro.metrics.steps)) * env.agents();
  r.mean_reward = ro.metrics.reward_sum / denom;
  return r;
}

TrainResult train(const EnvFactory& make_env, PolicyModel& model, ControllerState controller,
                  const ControllerConfig& controller_cfg, const TrainConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  const SeedTree root(cfg.seed);
  TrainResult result;
  result.controller = controller;
  const nn::AdamConfig<double> encoder_adam{cfg.lr_policy, 0.9, 0.999, 1e-5};

  int episode = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpisodeMetrics train_total;
    double reward_sum = 0.0;
    double agent_steps = 0.0;
    for (int e = 0; e < cfg.episodes_per_epoch; ++e, ++episode) {
      Environment env = make_env(episode, false);
      Rng rollout_rng = root.child("rollout").child(static_cast<std::uint64_t>(episode)).rng();
      Rollout ro = collect_rollout(env, model, cfg, rollout_rng);
      const Mat r = shaped_rewards(ro.buffer, env.grid(), cfg.sharing, cfg.reward_scale);
      Rng mb_rng = root.child("minibatch").child(static_cast<std::uint64_t>(episode)).rng();
      ppo_update(ro.buffer, r, model, cfg, mb_rng);

      if (cfg.train_encoder) {
        Rng enc_rng = root.child("encoder").child(static_cast<std::uint64_t>(episode)).rng();
        const auto windows = ro.windows.all();
        model.autoencoder.train_step(windows, enc_rng, encoder_adam, cfg.max_grad_norm);
      }
      if (cfg.use_controller) {
        regroup_tick(
            model.tree, result.controller, controller_cfg,
            [&] { return embed_trajectories(model.autoencoder.encoder, ro.windows); }, episode, hooks.events);
        model.tree.check_invariants();
      }

      train_total.demand += ro.metrics.demand;
      train_total.unmet += ro.metrics.unmet;
      train_total.relocated += ro.metrics.relocated;
      reward_sum += ro.metrics.reward_sum;
      agent_steps += static_cast<double>(ro.metrics.steps) * env.agents();
      if (hooks.on_episode) hooks.on_episode(episode, ro.metrics);
    }

    MetricRecord rec;
    rec.epoch = epoch;
    rec.train_service_ratio = train_total.service_ratio();
    rec.train_rebalanced = static_cast<double>(train_total.relocated) / cfg.episodes_per_epoch;
    rec.mean_reward = agent_steps > 0 ? reward_sum / agent_steps : 0.0;
    EpisodeMetrics val_total;
    for (int v = 0; v < cfg.val_episodes; ++v) {
      const auto res = evaluate(make_env(epoch * cfg.val_episodes + v, true), model, cfg);
      val_total.demand += res.metrics.demand;
      val_total.unmet += res.metrics.unmet;
      val_total.relocated += res.metrics.relocated;
    }
    rec.val_service_ratio = val_total.service_ratio();
    rec.val_rebalanced = cfg.val_episodes > 0 ? static_cast<double>(val_total.relocated) / cfg.val_episodes : 0.0;
    rec.local_groups = model.tree.local_count();
    rec.global_groups = model.tree.global_count();
    rec.period = result.controller.period;
    rec.running_divergence = result.controller.running_divergence;
    result.history.push_back(rec);
    if (hooks.on_epoch) hooks.on_epoch(rec);
  }
  return result;
}

}  // namespace hagps
