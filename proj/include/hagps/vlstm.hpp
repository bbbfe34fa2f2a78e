#pragma once

#include "hagps/gaussian.hpp"
#include "hagps/nn.hpp"

#include <vector>

namespace hagps::nn {

/// Variational LSTM trajectory encoder: an LSTM over per-step tuples whose
/// final hidden state is mapped to the mean and log-variance of a diagonal
/// Gaussian latent.
template <typename Scalar>
class VlstmEncoder {
 public:
  static constexpr double kLogvarMin = -10.0;
  static constexpr double kLogvarMax = 10.0;

  struct Cache {
    std::vector<VectorX<Scalar>> inputs;  // [x_t; h_{t-1}]
    std::vector<VectorX<Scalar>> gates;   // activated [i; f; g; o]
    std::vector<VectorX<Scalar>> cells;   // c_t, with cells[0] = c_{-1} = 0
    std::vector<VectorX<Scalar>> hidden;  // h_t
    VectorX<Scalar> raw_logvar;
  };

  VlstmEncoder() = default;

  VlstmEncoder(int input_size, int hidden_size, int latent_size, Rng& rng)
      : input_(input_size), hidden_(hidden_size), latent_(latent_size) {
    if (input_size < 1 || hidden_size < 1 || latent_size < 1) throw ShapeError("encoder sizes must be positive");
    std::normal_distribution<double> normal(0.0, 1.0);
    const double scale = 1.0 / std::sqrt(static_cast<double>(input_size + hidden_size));
    MatrixX<Scalar> w(4 * hidden_size, input_size + hidden_size);
    for (Index i = 0; i < w.size(); ++i) w.data()[i] = Scalar(scale * normal(rng));
    MatrixX<Scalar> b = MatrixX<Scalar>::Zero(4 * hidden_size, 1);
    b.block(hidden_size, 0, hidden_size, 1).setOnes();  // forget-gate bias
    w_ = params_.add("lstm.weight", std::move(w));
    b_ = params_.add("lstm.bias", std::move(b));
    w_mean_ = params_.add("mean.weight", orthogonal_init<Scalar>(latent_size, hidden_size, Scalar(1), rng));
    b_mean_ = params_.add("mean.bias", MatrixX<Scalar>::Zero(latent_size, 1));
    w_logvar_ = params_.add("logvar.weight", orthogonal_init<Scalar>(latent_size, hidden_size, Scalar(0.1), rng));
    b_logvar_ = params_.add("logvar.bias", MatrixX<Scalar>::Zero(latent_size, 1));
  }

  int input_size() const { return input_; }
  int hidden_size() const { return hidden_; }
  int latent_size() const { return latent_; }

  ParamSet<Scalar>& params() { return params_; }
  const ParamSet<Scalar>& params() const { return params_; }

  /// Encodes a window given as input_size x L (one step per column). An empty
  /// window yields the standard-normal embedding.
  GaussianEmbedding<Scalar> encode(const Eigen::Ref<const MatrixX<Scalar>>& window, Cache* cache = nullptr) const {
    if (window.cols() > 0 && window.rows() != input_) throw ShapeError("encoder window has wrong row count");
    GaussianEmbedding<Scalar> out{VectorX<Scalar>::Zero(latent_), VectorX<Scalar>::Zero(latent_)};
    if (cache) *cache = Cache{};
    if (window.cols() == 0) return out;

    const int H = hidden_;
    const auto& W = params_[w_].value;
    const auto& b = params_[b_].value;
    VectorX<Scalar> h = VectorX<Scalar>::Zero(H);
    VectorX<Scalar> c = VectorX<Scalar>::Zero(H);
    if (cache) cache->cells.push_back(c);
    VectorX<Scalar> xh(input_ + H);
    for (Index t = 0; t < window.cols(); ++t) {
      xh << window.col(t), h;
      VectorX<Scalar> z = W * xh + b.col(0);
      VectorX<Scalar> a(4 * H);
      a.segment(0, H) = sigmoid(z.segment(0, H));
      a.segment(H, H) = sigmoid(z.segment(H, H));
      a.segment(2 * H, H) = z.segment(2 * H, H).array().tanh().matrix();
      a.segment(3 * H, H) = sigmoid(z.segment(3 * H, H));
      c = (a.segment(H, H).array() * c.array() + a.segment(0, H).array() * a.segment(2 * H, H).array()).matrix();
      h = (a.segment(3 * H, H).array() * c.array().tanh()).matrix();
      if (cache) {
        cache->inputs.push_back(xh);
        cache->gates.push_back(a);
        cache->cells.push_back(c);
        cache->hidden.push_back(h);
      }
    }
    out.mean = params_[w_mean_].value * h + params_[b_mean_].value.col(0);
    VectorX<Scalar> raw = params_[w_logvar_].value * h + params_[b_logvar_].value.col(0);
    out.logvar = raw.cwiseMax(Scalar(kLogvarMin)).cwiseMin(Scalar(kLogvarMax));
    if (cache) cache->raw_logvar = raw;
    require_finite(out.mean, "encoder mean");
    require_finite(out.logvar, "encoder logvar");
    return out;
  }

  /// Backpropagates gradients of the embedding (mean, logvar) through time.
  void backward(const Cache& cache, const Eigen::Ref<const VectorX<Scalar>>& dmean,
                const Eigen::Ref<const VectorX<Scalar>>& dlogvar) {
    const Index L = static_cast<Index>(cache.hidden.size());
    if (L == 0) return;
    const int H = hidden_;
    const VectorX<Scalar>& h_last = cache.hidden.back();

    VectorX<Scalar> dlv = dlogvar;
    for (Index j = 0; j < dlv.size(); ++j) {
      const Scalar r = cache.raw_logvar(j);
      if (!(r > Scalar(kLogvarMin) && r < Scalar(kLogvarMax))) dlv(j) = Scalar(0);
    }
    params_[w_mean_].grad.noalias() += dmean * h_last.transpose();
    params_[b_mean_].grad += dmean;
    params_[w_logvar_].grad.noalias() += dlv * h_last.transpose();
    params_[b_logvar_].grad += dlv;

    VectorX<Scalar> dh = params_[w_mean_].value.transpose() * dmean + params_[w_logvar_].value.transpose() * dlv;
    VectorX<Scalar> dc = VectorX<Scalar>::Zero(H);
    auto& dW = params_[w_].grad;
    auto& db = params_[b_].grad;
    const auto& W = params_[w_].value;
    VectorX<Scalar> dz(4 * H);
    for (Index t = L - 1; t >= 0; --t) {
      const auto& a = cache.gates[static_cast<std::size_t>(t)];
      const auto& c = cache.cells[static_cast<std::size_t>(t + 1)];
      const auto& c_prev = cache.cells[static_cast<std::size_t>(t)];
      const auto i = a.segment(0, H).array();
      const auto f = a.segment(H, H).array();
      const auto g = a.segment(2 * H, H).array();
      const auto o = a.segment(3 * H, H).array();
      const auto tc = c.array().tanh();
      dc.array() += dh.array() * o * (Scalar(1) - tc.square());
      dz.segment(0, H) = (dc.array() * g * i * (Scalar(1) - i)).matrix();
      dz.segment(H, H) = (dc.array() * c_prev.array() * f * (Scalar(1) - f)).matrix();
      dz.segment(2 * H, H) = (dc.array() * i * (Scalar(1) - g.square())).matrix();
      dz.segment(3 * H, H) = (dh.array() * tc * o * (Scalar(1) - o)).matrix();
      dW.noalias() += dz * cache.inputs[static_cast<std::size_t>(t)].transpose();
      db += dz;
      const VectorX<Scalar> dxh = W.transpose() * dz;
      dh = dxh.tail(H);
      dc = (dc.array() * f).matrix();
    }
  }

  VlstmEncoder clone() const {
    VlstmEncoder out = *this;
    out.params_ = params_.clone();
    return out;
  }

 private:
  template <typename Derived>
  static VectorX<Scalar> sigmoid(const Eigen::MatrixBase<Derived>& z) {
    return (Scalar(1) / (Scalar(1) + (-z.array()).exp())).matrix();
  }

  int input_ = 0;
  int hidden_ = 0;
  int latent_ = 0;
  int w_ = 0, b_ = 0, w_mean_ = 0, b_mean_ = 0, w_logvar_ = 0, b_logvar_ = 0;
  ParamSet<Scalar> params_;
};

extern template class VlstmEncoder<double>;

/// mean + exp(logvar / 2) * noise.
template <typename Scalar>
VectorX<Scalar> reparameterize(const GaussianEmbedding<Scalar>& z, const VectorX<Scalar>& noise) {
  return z.mean + ((z.logvar.array() * Scalar(0.5)).exp() * noise.array()).matrix();
}

/// Encoder plus a linear decoder trained to predict the tuple that follows a
/// window prefix from the reparameterized latent, with a KL pull toward N(0, I).
struct TrajectoryAutoencoder {
  VlstmEncoder<double> encoder;
  Mlp<double> decoder;
  double kl_weight = 0.01;

  TrajectoryAutoencoder() = default;
  TrajectoryAutoencoder(int tuple_size, int hidden, int latent, Rng& rng, double kl_weight = 0.01);

  /// Loss for one window (tuple_size x L, L >= 2); accumulates gradients.
  double accumulate(const Mat& window, const Vec& noise);

  /// Mean loss over the windows followed by one Adam step. Windows shorter
  /// than two steps are skipped.
  double train_step(std::span<const Mat> windows, Rng& rng, const AdamConfig<double>& adam, double max_grad_norm);
};

}  // namespace hagps::nn
