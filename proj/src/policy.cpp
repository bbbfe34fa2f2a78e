#include "hagps/policy.hpp"

namespace hagps {

PolicyModel::Output PolicyModel::act(const Vec& state) const {
  const int N = agents();
  Output out{Mat(nn::kDims * sizes.bins, N), Vec(N)};
  for (const auto& [gid, g] : tree.globals()) {
    const Vec h = g.trunk.forward(state);
    for (int lid : g.locals) {
      const auto& l = tree.local(lid);
      Mat x(sizes.head_input(), static_cast<Index>(l.members.size()));
      for (std::size_t j = 0; j < l.members.size(); ++j) x.col(static_cast<Index>(j)) = head_input(h, l.members[j]);
      const Mat logits = l.head.actor.forward(x);
      const Mat values = l.head.critic.forward(x);
      for (std::size_t j = 0; j < l.members.size(); ++j) {
        out.logits.col(l.members[j]) = logits.col(static_cast<Index>(j));
        out.values(l.members[j]) = values(0, static_cast<Index>(j));
      }
    }
  }
  return out;
}

Vec PolicyModel::head_input(const Vec& trunk_out, int agent) const {
  Vec x(sizes.head_input());
  x.head(sizes.trunk_out) = trunk_out;
  x.tail(sizes.id_dim) = ids.vector(agent);
  return x;
}

void TrajectoryWindows::push(int agent, const Vec& tuple) {
  auto& w = windows_.at(static_cast<std::size_t>(agent));
  w.push_back(tuple);
  while (static_cast<int>(w.size()) > length_) w.pop_front();
}

Mat TrajectoryWindows::window(int agent) const {
  const auto& w = windows_.at(static_cast<std::size_t>(agent));
  Mat m(kTupleSize, static_cast<Index>(w.size()));
  for (std::size_t t = 0; t < w.size(); ++t) m.col(static_cast<Index>(t)) = w[t];
  return m;
}

std::vector<Mat> TrajectoryWindows::all() const {
  std::vector<Mat> out;
  for (int a = 0; a < agents(); ++a) out.push_back(window(a));
  return out;
}

Vec trajectory_tuple(const Vec& local_features, const AgentAction& action, double reward, Count max_load,
                     double reward_scale) {
  Vec t(kTupleSize);
  t.head(Environment::kLocalFeatureSize) = local_features;
  t.segment(Environment::kLocalFeatureSize, 4) = action.cast<double>() / static_cast<double>(max_load);
  t(kTupleSize - 1) = reward * reward_scale;
  return t;
}

std::vector<Embedding> embed_trajectories(const nn::VlstmEncoder<double>& encoder, const TrajectoryWindows& windows) {
  std::vector<Embedding> out;
  out.reserve(static_cast<std::size_t>(windows.agents()));
  for (int a = 0; a < windows.agents(); ++a) out.push_back(encoder.encode(windows.window(a)));
  return out;
}

}  // namespace hagps
