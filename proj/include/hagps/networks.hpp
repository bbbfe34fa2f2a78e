#pragma once

#include "hagps/nn.hpp"

namespace hagps {

struct NetworkSizes {
  int state = 0;
  int trunk_hidden = 128;
  int trunk_out = 64;
  int head_hidden = 128;
  int id_dim = 8;
  int bins = 6;  // outflow magnitudes 0..bins-1 per direction
  int latent = 16;
  int encoder_hidden = 128;

  int head_input() const { return trunk_out + id_dim; }
};

using TrunkNet = nn::Mlp<double>;

inline TrunkNet make_trunk(const NetworkSizes& s, Rng& rng) {
  return TrunkNet({s.state, s.trunk_hidden, s.trunk_out}, rng);
}

/// Compact actor-critic head over concat(trunk embedding, ID embedding).
/// Actor and critic are separate MLPs so they can step at different rates.
struct HeadNet {
  nn::Mlp<double> actor;
  nn::Mlp<double> critic;

  static HeadNet make(const NetworkSizes& s, Rng& rng) {
    HeadNet h;
    h.actor = nn::Mlp<double>({s.head_input(), s.head_hidden, nn::kDims * s.bins}, rng, 0.01);
    h.critic = nn::Mlp<double>({s.head_input(), s.head_hidden, 1}, rng, 1.0);
    return h;
  }

  HeadNet clone() const { return {actor.clone(), critic.clone()}; }

  Index parameter_count() const { return actor.params().scalar_count() + critic.params().scalar_count(); }

  bool values_equal(const HeadNet& o) const {
    return actor.params().values_equal(o.actor.params()) && critic.params().values_equal(o.critic.params());
  }
};

/// One learnable vector per agent, stored as columns of a dim x N matrix.
class IdEmbedding {
 public:
  IdEmbedding() = default;
  IdEmbedding(int dim, int agents, Rng& rng, bool enabled = true) : enabled_(enabled) {
    Mat e = Mat::Zero(dim, agents);
    if (enabled) {
      std::normal_distribution<double> normal(0.0, 1.0);
      for (Index i = 0; i < e.size(); ++i) e.data()[i] = normal(rng);
    }
    params_.add("ids", std::move(e));
  }

  // Disabled embeddings stay at zero and are never updated.
  bool enabled() const { return enabled_; }
  int dim() const { return static_cast<int>(params_[0].value.rows()); }
  int agents() const { return static_cast<int>(params_[0].value.cols()); }

  auto vector(int agent) const { return params_[0].value.col(agent); }
  auto grad(int agent) { return params_[0].grad.col(agent); }

  nn::ParamSet<double>& params() { return params_; }
  const nn::ParamSet<double>& params() const { return params_; }

 private:
  bool enabled_ = true;
  nn::ParamSet<double> params_;
};

}  // namespace hagps
