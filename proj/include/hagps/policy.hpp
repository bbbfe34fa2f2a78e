#pragma once

#include "hagps/env.hpp"
#include "hagps/groups.hpp"
#include "hagps/vlstm.hpp"

#include <deque>
#include <vector>

namespace hagps {

/// Everything the agents act with: the group tree (trunks and heads), the
/// per-agent ID embeddings and the trajectory autoencoder used by the
/// grouping controller.
struct PolicyModel {
  NetworkSizes sizes;
  GroupTree tree;
  IdEmbedding ids;
  nn::TrajectoryAutoencoder autoencoder;

  int agents() const { return tree.agents(); }

  // Per-direction magnitude support {0..bins-1}, bins = floor(m / 4) + 1.
  static int bins_for(Count max_load) { return static_cast<int>(max_load / 4) + 1; }

  struct Output {
    Mat logits;  // (4 * bins) x N
    Vec values;  // N
  };

  /// Policy and value for every agent in global state `state`.
  Output act(const Vec& state) const;

  /// Input column of agent `agent`'s head: [trunk embedding; ID embedding].
  Vec head_input(const Vec& trunk_out, int agent) const;
};

// Size of one trajectory tuple: local state slice, scaled action, reward.
inline constexpr int kTupleSize = Environment::kLocalFeatureSize + 4 + 1;

/// Sliding window of each agent's most recent (state, action, reward) tuples.
class TrajectoryWindows {
 public:
  TrajectoryWindows() = default;
  TrajectoryWindows(int agents, int length) : length_(length), windows_(static_cast<std::size_t>(agents)) {}

  void push(int agent, const Vec& tuple);
  /// kTupleSize x L, oldest step first.
  Mat window(int agent) const;
  std::vector<Mat> all() const;
  int agents() const { return static_cast<int>(windows_.size()); }

 private:
  int length_ = 8;
  std::vector<std::deque<Vec>> windows_;
};

Vec trajectory_tuple(const Vec& local_features, const AgentAction& action, double reward, Count max_load,
                     double reward_scale);

/// Gaussian trajectory embedding of every agent's current window.
std::vector<Embedding> embed_trajectories(const nn::VlstmEncoder<double>& encoder, const TrajectoryWindows& windows);

}  // namespace hagps
