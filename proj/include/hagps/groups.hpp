#pragma once

#include "hagps/gaussian.hpp"
#include "hagps/networks.hpp"

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace hagps {

using Embedding = GaussianEmbedding<double>;

/// Lloyd's k-means over the columns of `points` (dim x n) with k-means++
/// seeding drawn from `seed`. Runs until the assignment stops changing or
/// max_iter. An emptied cluster takes the point farthest from its centroid in
/// the largest cluster.
std::vector<int> kmeans(const Mat& points, int k, std::uint64_t seed, int max_iter = 100);

// Sum of squared distances of points to their cluster means.
double kmeans_sse(const Mat& points, const std::vector<int>& assignment, int k);

struct GroupCaps {
  int max_global = 4;      // G_max
  int max_local = 16;      // L_max
  int min_split_size = 2;  // S_min: groups of this size or smaller never split
  int max_subgroups = 4;   // S_max
};

struct GlobalGroup {
  int id = 0;
  TrunkNet trunk;
  std::vector<int> locals;
};

struct LocalGroup {
  int id = 0;
  int global = 0;
  HeadNet head;
  std::vector<int> members;
};

struct AgentSlot {
  int global = -1;
  int local = -1;
};

/// Two-level partition of agents: global groups own trunks, local groups own
/// actor-critic heads. Group ids are never reused.
class GroupTree {
 public:
  GroupTree() = default;
  GroupTree(int agents, GroupCaps caps);

  int add_global(TrunkNet trunk);
  int add_local(int global, HeadNet head, std::vector<int> members);
  void remove_local(int id);
  void move_agent(int agent, int to_local);

  int agents() const { return static_cast<int>(slots_.size()); }
  const GroupCaps& caps() const { return caps_; }
  void set_caps(GroupCaps caps) { caps_ = caps; }

  const std::map<int, GlobalGroup>& globals() const { return globals_; }
  const std::map<int, LocalGroup>& locals() const { return locals_; }
  // Mutable access for training; membership must go through the methods above.
  std::map<int, GlobalGroup>& globals() { return globals_; }
  std::map<int, LocalGroup>& locals() { return locals_; }
  GlobalGroup& global(int id) { return globals_.at(id); }
  LocalGroup& local(int id) { return locals_.at(id); }
  const GlobalGroup& global(int id) const { return globals_.at(id); }
  const LocalGroup& local(int id) const { return locals_.at(id); }
  const AgentSlot& slot(int agent) const { return slots_.at(static_cast<std::size_t>(agent)); }

  int global_count() const { return static_cast<int>(globals_.size()); }
  int local_count() const { return static_cast<int>(locals_.size()); }
  Index head_parameter_count() const;
  Index trunk_parameter_count() const;

  /// Throws std::logic_error when the tree is not a disjoint cover of all
  /// agents, a group is empty, or a cap is exceeded.
  void check_invariants() const;

  int next_id() const { return next_id_; }
  // Restores the id counter when rebuilding a tree from a checkpoint.
  void set_next_id(int id) { next_id_ = std::max(next_id_, id); }
  int add_global_with_id(int id, TrunkNet trunk);
  int add_local_with_id(int id, int global, HeadNet head, std::vector<int> members);

 private:
  GroupCaps caps_;
  std::map<int, GlobalGroup> globals_;
  std::map<int, LocalGroup> locals_;
  std::vector<AgentSlot> slots_;
  int next_id_ = 0;
};

struct ControllerConfig {
  double split_threshold = 0.5;    // D_split
  double merge_threshold = 0.05;   // tau_merge
  int initial_period = 8;          // Delta_0
  int min_period = 1;
  int max_period = 64;
  double smoothing = 0.90;         // eta
  double sensitivity = 3.0;        // zeta
  double target_divergence = 0.02; // delta
  bool split_merge = true;
  bool adaptive_period = true;
  bool refine_after_split = false;
  int kmeans_max_iter = 100;
  std::uint64_t seed = 0;

  void validate() const;
};

struct ControllerState {
  double running_divergence = 0.0;  // D-bar
  int period = 8;                   // Delta
  int episodes_since_regroup = 0;
};

struct GroupEvent {
  int episode = 0;
  std::string operation;  // split | merge | reassign | regroup
  std::vector<int> groups_in;
  std::vector<int> groups_out;
  std::vector<double> divergences;
  int period_before = 0;
  int period_after = 0;
};

/// Appends one JSON record per event.
class GroupEventLog {
 public:
  GroupEventLog() = default;
  explicit GroupEventLog(const std::filesystem::path& path);
  void record(GroupEvent e);
  const std::vector<GroupEvent>& events() const { return events_; }

 private:
  std::optional<std::ofstream> out_;
  std::vector<GroupEvent> events_;
};

std::vector<Embedding> gather(const std::vector<int>& members, std::span<const Embedding> embeddings);

double update_running_divergence(ControllerState& state, std::span<const double> group_divergences, double smoothing);

/// Delta = clamp(max(1, ceil(Delta0 * exp(-zeta * (Dbar - delta)))), min, max).
int regroup_period(double running_divergence, const ControllerConfig& cfg);
int update_period(ControllerState& state, const ControllerConfig& cfg);

/// Bisects a local group whose divergence exceeds the split threshold. Both
/// children start from clones of the parent head. Returns the new ids.
std::optional<std::vector<int>> try_split(GroupTree& tree, int local_id, std::span<const Embedding> embeddings,
                                          const ControllerConfig& cfg, int episode, GroupEventLog* log = nullptr);

/// Fuses two local groups of one global group whose centroid KL sum is below
/// the merge threshold; the larger group's head survives (lower id on ties).
/// Members of the merged group then move to the nearest surviving centroid in
/// their global group. Returns the surviving id.
std::optional<int> try_merge(GroupTree& tree, int a, int b, std::span<const Embedding> embeddings,
                             const ControllerConfig& cfg, int episode, GroupEventLog* log = nullptr);

/// Per-episode controller hook. Returns true when a regroup sweep ran.
bool regroup_tick(GroupTree& tree, ControllerState& state, const ControllerConfig& cfg,
                  const std::function<std::vector<Embedding>()>& embed, int episode, GroupEventLog* log = nullptr);

}  // namespace hagps
