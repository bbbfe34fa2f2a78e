#include "hagps/groups.hpp"

#include "json.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace hagps {

std::vector<int> kmeans(const Mat& points, int k, std::uint64_t seed, int max_iter) {
  const Index n = points.cols();
  if (k < 1) throw ValidationError("kmeans: k must be positive");
  if (n < k) throw ValidationError("kmeans: fewer points than clusters");
  std::vector<int> assign(static_cast<std::size_t>(n), 0);
  if (k == n) {
    std::iota(assign.begin(), assign.end(), 0);
    return assign;
  }

  Rng rng(mix64(seed));
  Mat centers(points.rows(), k);
  std::vector<bool> taken(static_cast<std::size_t>(n), false);
  {
    std::uniform_int_distribution<Index> first(0, n - 1);
    const Index f = first(rng);
    centers.col(0) = points.col(f);
    taken[static_cast<std::size_t>(f)] = true;
  }
  Vec d2(n);
  for (int c = 1; c < k; ++c) {
    for (Index i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (int j = 0; j < c; ++j) best = std::min(best, (points.col(i) - centers.col(j)).squaredNorm());
      d2(i) = best;
    }
    Index pick = -1;
    const double total = d2.sum();
    if (total > 0) {
      double u = std::uniform_real_distribution<double>(0.0, total)(rng);
      for (Index i = 0; i < n; ++i) {
        u -= d2(i);
        if (u < 0 && d2(i) > 0) {
          pick = i;
          break;
        }
      }
      if (pick < 0) d2.maxCoeff(&pick);
    } else {
      std::vector<Index> free;
      for (Index i = 0; i < n; ++i)
        if (!taken[static_cast<std::size_t>(i)]) free.push_back(i);
      pick = free[std::uniform_int_distribution<std::size_t>(0, free.size() - 1)(rng)];
    }
    centers.col(c) = points.col(pick);
    taken[static_cast<std::size_t>(pick)] = true;
  }

  std::vector<int> prev;
  for (int iter = 0; iter < max_iter; ++iter) {
    for (Index i = 0; i < n; ++i) {
      Index best = 0;
      (centers.colwise() - points.col(i)).colwise().squaredNorm().minCoeff(&best);
      assign[static_cast<std::size_t>(i)] = static_cast<int>(best);
    }
    // Repair empty clusters.
    for (int c = 0; c < k; ++c) {
      std::vector<int> sizes(static_cast<std::size_t>(k), 0);
      for (int a : assign) ++sizes[static_cast<std::size_t>(a)];
      if (sizes[static_cast<std::size_t>(c)] > 0) continue;
      const int largest = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
      Vec mean = Vec::Zero(points.rows());
      for (Index i = 0; i < n; ++i)
        if (assign[static_cast<std::size_t>(i)] == largest) mean += points.col(i);
      mean /= sizes[static_cast<std::size_t>(largest)];
      Index far = -1;
      double far_d = -1.0;
      for (Index i = 0; i < n; ++i) {
        if (assign[static_cast<std::size_t>(i)] != largest) continue;
        const double d = (points.col(i) - mean).squaredNorm();
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      assign[static_cast<std::size_t>(far)] = c;
    }
    if (assign == prev) break;
    prev = assign;
    centers.setZero();
    std::vector<int> sizes(static_cast<std::size_t>(k), 0);
    for (Index i = 0; i < n; ++i) {
      centers.col(assign[static_cast<std::size_t>(i)]) += points.col(i);
      ++sizes[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])];
    }
    for (int c = 0; c < k; ++c) centers.col(c) /= sizes[static_cast<std::size_t>(c)];
  }
  return assign;
}

double kmeans_sse(const Mat& points, const std::vector<int>& assignment, int k) {
  Mat centers = Mat::Zero(points.rows(), k);
  std::vector<int> sizes(static_cast<std::size_t>(k), 0);
  for (Index i = 0; i < points.cols(); ++i) {
    centers.col(assignment[static_cast<std::size_t>(i)]) += points.col(i);
    ++sizes[static_cast<std::size_t>(assignment[static_cast<std::size_t>(i)])];
  }
  for (int c = 0; c < k; ++c)
    if (sizes[static_cast<std::size_t>(c)] > 0) centers.col(c) /= sizes[static_cast<std::size_t>(c)];
  double sse = 0.0;
  for (Index i = 0; i < points.cols(); ++i)
    sse += (points.col(i) - centers.col(assignment[static_cast<std::size_t>(i)])).squaredNorm();
  return sse;
}

// ---- GroupTree ----------------------------------------------------------------

GroupTree::GroupTree(int agents, GroupCaps caps) : caps_(caps), slots_(static_cast<std::size_t>(agents)) {
  if (agents < 1) throw ConfigError("group tree needs at least one agent");
  if (caps.max_global < 1 || caps.max_local < 1) throw ConfigError("group caps must be positive");
}

int GroupTree::add_global(TrunkNet trunk) { return add_global_with_id(next_id_, std::move(trunk)); }

int GroupTree::add_global_with_id(int id, TrunkNet trunk) {
  if (globals_.count(id) || locals_.count(id)) throw std::logic_error("duplicate group id");
  globals_.emplace(id, GlobalGroup{id, std::move(trunk), {}});
  next_id_ = std::max(next_id_, id + 1);
  return id;
}

int GroupTree::add_local(int global, HeadNet head, std::vector<int> members) {
  return add_local_with_id(next_id_, global, std::move(head), std::move(members));
}

int GroupTree::add_local_with_id(int id, int global, HeadNet head, std::vector<int> members) {
  if (globals_.count(id) || locals_.count(id)) throw std::logic_error("duplicate group id");
  auto& g = globals_.at(global);
  std::sort(members.begin(), members.end());
  for (int a : members) {
    auto& s = slots_.at(static_cast<std::size_t>(a));
    if (s.local >= 0 && locals_.count(s.local)) {
      auto& old = locals_.at(s.local).members;
      old.erase(std::remove(old.begin(), old.end(), a), old.end());
    }
    s = {global, id};
  }
  g.locals.push_back(id);
  locals_.emplace(id, LocalGroup{id, global, std::move(head), std::move(members)});
  next_id_ = std::max(next_id_, id + 1);
  return id;
}

void GroupTree::remove_local(int id) {
  auto it = locals_.find(id);
  if (it == locals_.end()) return;
  for (int a : it->second.members) slots_[static_cast<std::size_t>(a)] = {};
  auto& gl = globals_.at(it->second.global).locals;
  gl.erase(std::remove(gl.begin(), gl.end(), id), gl.end());
  locals_.erase(it);
}

void GroupTree::move_agent(int agent, int to_local) {
  auto& s = slots_.at(static_cast<std::size_t>(agent));
  if (s.local == to_local) return;
  if (s.local >= 0) {
    auto& old = locals_.at(s.local).members;
    old.erase(std::remove(old.begin(), old.end(), agent), old.end());
  }
  auto& target = locals_.at(to_local);
  target.members.insert(std::upper_bound(target.members.begin(), target.members.end(), agent), agent);
  s = {target.global, to_local};
}

Index GroupTree::head_parameter_count() const {
  Index n = 0;
  for (const auto& [id, l] : locals_) n += l.head.parameter_count();
  return n;
}

Index GroupTree::trunk_parameter_count() const {
  Index n = 0;
  for (const auto& [id, g] : globals_) n += g.trunk.params().scalar_count();
  return n;
}

void GroupTree::check_invariants() const {
  if (globals_.empty() || locals_.empty()) throw std::logic_error("tree has no groups");
  if (global_count() > caps_.max_global) throw std::logic_error("global group cap exceeded");
  if (local_count() > caps_.max_local) throw std::logic_error("local group cap exceeded");
  std::vector<int> seen(slots_.size(), 0);
  for (const auto& [id, l] : locals_) {
    if (l.members.empty()) throw std::logic_error("empty local group " + std::to_string(id));
    const auto g = globals_.find(l.global);
    if (g == globals_.end()) throw std::logic_error("local group references a missing global group");
    if (std::count(g->second.locals.begin(), g->second.locals.end(), id) != 1)
      throw std::logic_error("global group does not list its local group");
    for (int a : l.members) {
      if (a < 0 || a >= agents()) throw std::logic_error("member index out of range");
      ++seen[static_cast<std::size_t>(a)];
      const auto& s = slots_[static_cast<std::size_t>(a)];
      if (s.local != id || s.global != l.global) throw std::logic_error("agent slot disagrees with membership");
    }
  }
  for (std::size_t a = 0; a < seen.size(); ++a)
    if (seen[a] != 1) throw std::logic_error("agent " + std::to_string(a) + " not in exactly one local group");
  for (const auto& [id, g] : globals_) {
    if (g.locals.empty()) throw std::logic_error("empty global group " + std::to_string(id));
    for (int l : g.locals)
      if (!locals_.count(l) || locals_.at(l).global != id) throw std::logic_error("dangling local id in global group");
  }
}

// ---- controller --------------------------------------------------------------

void ControllerConfig::validate() const {
  if (!(split_threshold > 0 && merge_threshold > 0 && target_divergence > 0))
    throw ConfigError("controller thresholds must be positive");
  if (!(smoothing > 0 && smoothing < 1)) throw ConfigError("smoothing must lie in (0, 1)");
  if (min_period < 1 || max_period < min_period || initial_period < min_period || initial_period > max_period)
    throw ConfigError("invalid regroup period bounds");
}

GroupEventLog::GroupEventLog(const std::filesystem::path& path) : out_(std::in_place, path) {
  if (!*out_) throw ConfigError("cannot write group event log: " + path.string());
}

void GroupEventLog::record(GroupEvent e) {
  if (out_) {
    nlohmann::json j{{"episode", e.episode},         {"op", e.operation},
                     {"groups_in", e.groups_in},     {"groups_out", e.groups_out},
                     {"divergences", e.divergences}, {"period_before", e.period_before},
                     {"period_after", e.period_after}};
    *out_ << j.dump() << '\n';
    out_->flush();
  }
  events_.push_back(std::move(e));
}

std::vector<Embedding> gather(const std::vector<int>& members, std::span<const Embedding> embeddings) {
  std::vector<Embedding> out;
  out.reserve(members.size());
  for (int a : members) out.push_back(embeddings[static_cast<std::size_t>(a)]);
  return out;
}

double update_running_divergence(ControllerState& state, std::span<const double> group_divergences, double smoothing) {
  if (group_divergences.empty()) throw ValidationError("running divergence needs at least one group");
  const double mean = std::accumulate(group_divergences.begin(), group_divergences.end(), 0.0) /
                      static_cast<double>(group_divergences.size());
  state.running_divergence = smoothing * state.running_divergence + (1.0 - smoothing) * mean;
  return state.running_divergence;
}

int regroup_period(double running_divergence, const ControllerConfig& cfg) {
  const double raw = cfg.initial_period * std::exp(-cfg.sensitivity * (running_divergence - cfg.target_divergence));
  // ceil of a huge value saturates at the cap; avoid int overflow.
  const double c = std::ceil(std::min(raw, static_cast<double>(cfg.max_period)));
  const int period = std::max(1, static_cast<int>(c));
  return std::clamp(period, cfg.min_period, cfg.max_period);
}

int update_period(ControllerState& state, const ControllerConfig& cfg) {
  state.period = regroup_period(state.running_divergence, cfg);
  return state.period;
}

namespace {

Mat means_of(const std::vector<int>& members, std::span<const Embedding> embeddings) {
  Mat pts(embeddings[static_cast<std::size_t>(members.front())].dim(), static_cast<Index>(members.size()));
  for (std::size_t j = 0; j < members.size(); ++j)
    pts.col(static_cast<Index>(j)) = embeddings[static_cast<std::size_t>(members[j])].mean;
  return pts;
}

Embedding group_centroid(const LocalGroup& g, std::span<const Embedding> embeddings) {
  const auto m = gather(g.members, embeddings);
  return centroid<double>(m);
}

}  // namespace

std::optional<std::vector<int>> try_split(GroupTree& tree, int local_id, std::span<const Embedding> embeddings,
                                          const ControllerConfig& cfg, int episode, GroupEventLog* log) {
  const LocalGroup& parent = tree.local(local_id);
  const auto size = static_cast<int>(parent.members.size());
  if (size <= tree.caps().min_split_size || size < 2) return std::nullopt;
  if (tree.local_count() >= tree.caps().max_local) return std::nullopt;
  const auto members_z = gather(parent.members, embeddings);
  const double div = intra_divergence<double>(members_z);
  if (!(div > cfg.split_threshold)) return std::nullopt;

  const std::vector<int> members = parent.members;
  const int global = parent.global;
  const HeadNet head = parent.head.clone();
  const std::uint64_t seed = mix64(cfg.seed ^ mix64(static_cast<std::uint64_t>(episode) * 1315423911ULL + local_id));

  int k = 2;
  if (cfg.refine_after_split) {
    const int room = tree.caps().max_local - tree.local_count() + 1;
    k = std::max(2, std::min({tree.caps().max_subgroups, size, room}));
  }
  const auto assign = kmeans(means_of(members, embeddings), k, seed, cfg.kmeans_max_iter);

  std::vector<std::vector<int>> parts(static_cast<std::size_t>(k));
  for (std::size_t j = 0; j < members.size(); ++j) parts[static_cast<std::size_t>(assign[j])].push_back(members[j]);

  tree.remove_local(local_id);
  std::vector<int> ids;
  for (auto& p : parts) {
    if (p.empty()) continue;
    ids.push_back(tree.add_local(global, head.clone(), std::move(p)));
  }
  if (log) log->record({episode, "split", {local_id}, ids, {div}, 0, 0});
  return ids;
}

std::optional<int> try_merge(GroupTree& tree, int a, int b, std::span<const Embedding> embeddings,
                             const ControllerConfig& cfg, int episode, GroupEventLog* log) {
  if (a == b) return std::nullopt;
  const LocalGroup& ga = tree.local(a);
  const LocalGroup& gb = tree.local(b);
  if (ga.global != gb.global) return std::nullopt;
  const double s = symmetric_kl_sum(group_centroid(ga, embeddings), group_centroid(gb, embeddings));
  if (!(s < cfg.merge_threshold)) return std::nullopt;

  const bool keep_a = ga.members.size() > gb.members.size() || (ga.members.size() == gb.members.size() && a < b);
  const int keep = keep_a ? a : b;
  const int drop = keep_a ? b : a;
  const int global = ga.global;
  const std::vector<int> moved = tree.local(drop).members;
  tree.remove_local(drop);
  for (int agent : moved) tree.move_agent(agent, keep);
  if (log) log->record({episode, "merge", {a, b}, {keep}, {s}, 0, 0});

  // Reassign the merged members to the nearest surviving centroid.
  const auto& siblings = tree.global(global).locals;
  if (siblings.size() > 1) {
    std::vector<std::pair<int, Embedding>> cents;
    for (int l : siblings) cents.emplace_back(l, group_centroid(tree.local(l), embeddings));
    std::vector<int> reassigned;
    const std::vector<int> members = tree.local(keep).members;
    for (int agent : members) {
      const auto& z = embeddings[static_cast<std::size_t>(agent)];
      int best = keep;
      double best_d = std::numeric_limits<double>::infinity();
      for (const auto& [l, c] : cents) {
        const double d = symmetric_kl_sum(z, c);
        if (d < best_d) {
          best_d = d;
          best = l;
        }
      }
      if (best != keep && tree.local(keep).members.size() > 1) {
        tree.move_agent(agent, best);
        reassigned.push_back(agent);
      }
    }
    if (log && !reassigned.empty()) log->record({episode, "reassign", {keep}, reassigned, {}, 0, 0});
  }
  return keep;
}

bool regroup_tick(GroupTree& tree, ControllerState& state, const ControllerConfig& cfg,
                  const std::function<std::vector<Embedding>()>& embed, int episode, GroupEventLog* log) {
  ++state.episodes_since_regroup;
  if (state.episodes_since_regroup < state.period) return false;

  const std::vector<Embedding> z = embed();
  if (static_cast<int>(z.size()) != tree.agents()) throw ShapeError("one embedding per agent required");

  std::vector<std::pair<double, int>> divs;
  for (const auto& [id, l] : tree.locals()) divs.emplace_back(intra_divergence<double>(gather(l.members, z)), id);
  std::vector<double> values;
  for (const auto& [d, id] : divs) values.push_back(d);
  update_running_divergence(state, values, cfg.smoothing);

  if (cfg.split_merge) {
    std::stable_sort(divs.begin(), divs.end(), [](const auto& x, const auto& y) { return x.first > y.first; });
    for (const auto& [d, id] : divs) {
      if (tree.locals().count(id)) try_split(tree, id, z, cfg, episode, log);
    }

    std::vector<std::tuple<double, int, int>> pairs;
    for (const auto& [gid, g] : tree.globals()) {
      for (std::size_t i = 0; i < g.locals.size(); ++i) {
        for (std::size_t j = i + 1; j < g.locals.size(); ++j) {
          const int a = g.locals[i];
          const int b = g.locals[j];
          const double s = symmetric_kl_sum(group_centroid(tree.local(a), z), group_centroid(tree.local(b), z));
          if (s < cfg.merge_threshold) pairs.emplace_back(s, std::min(a, b), std::max(a, b));
        }
      }
    }
    std::sort(pairs.begin(), pairs.end());
    for (const auto& [s, a, b] : pairs) {
      if (tree.locals().count(a) && tree.locals().count(b)) try_merge(tree, a, b, z, cfg, episode, log);
    }
  }

  const int before = state.period;
  if (cfg.adaptive_period)
    update_period(state, cfg);
  else
    state.period = cfg.initial_period;
  state.episodes_since_regroup = 0;
  if (log) log->record({episode, "regroup", {}, {}, {state.running_divergence}, before, state.period});
  return true;
}

}  // namespace hagps
