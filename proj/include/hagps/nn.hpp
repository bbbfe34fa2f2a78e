#pragma once

#include "hagps/common.hpp"
#include "hagps/random.hpp"

#include <Eigen/QR>

#include <span>
#include <string>
#include <vector>

namespace hagps::nn {

template <typename Scalar>
struct Parameter {
  std::string name;
  MatrixX<Scalar> value;
  MatrixX<Scalar> grad;
  MatrixX<Scalar> moment1;
  MatrixX<Scalar> moment2;
};

/// Named parameter tensors with matching gradients and Adam moments.
template <typename Scalar>
class ParamSet {
 public:
  int add(std::string name, MatrixX<Scalar> init) {
    Parameter<Scalar> p;
    p.name = std::move(name);
    p.grad = MatrixX<Scalar>::Zero(init.rows(), init.cols());
    p.moment1 = p.grad;
    p.moment2 = p.grad;
    p.value = std::move(init);
    params_.push_back(std::move(p));
    return static_cast<int>(params_.size()) - 1;
  }

  Parameter<Scalar>& operator[](int i) { return params_[static_cast<std::size_t>(i)]; }
  const Parameter<Scalar>& operator[](int i) const { return params_[static_cast<std::size_t>(i)]; }
  int size() const { return static_cast<int>(params_.size()); }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad() {
    for (auto& p : params_) p.grad.setZero();
  }

  // Same values, zero gradients, fresh optimizer state.
  ParamSet clone() const {
    ParamSet out;
    for (const auto& p : params_) out.add(p.name, p.value);
    return out;
  }

  Index scalar_count() const {
    Index n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  Scalar grad_squared_norm() const {
    Scalar s(0);
    for (const auto& p : params_) s += p.grad.squaredNorm();
    return s;
  }

  void scale_grad(Scalar factor) {
    for (auto& p : params_) p.grad *= factor;
  }

  bool values_equal(const ParamSet& other) const {
    if (other.size() != size()) return false;
    for (int i = 0; i < size(); ++i) {
      if (params_[i].value.rows() != other.params_[i].value.rows() ||
          params_[i].value.cols() != other.params_[i].value.cols() || params_[i].value != other.params_[i].value)
        return false;
    }
    return true;
  }

  std::int64_t adam_steps = 0;

 private:
  std::vector<Parameter<Scalar>> params_;
};

template <typename Scalar>
struct AdamConfig {
  Scalar lr = Scalar(3e-4);
  Scalar beta1 = Scalar(0.9);
  Scalar beta2 = Scalar(0.999);
  Scalar eps = Scalar(1e-8);
};

/// Bias-corrected Adam step over every parameter in the set.
template <typename Scalar>
void adam_update(ParamSet<Scalar>& params, const AdamConfig<Scalar>& cfg) {
  ++params.adam_steps;
  const auto t = static_cast<Scalar>(params.adam_steps);
  const Scalar c1 = Scalar(1) - std::pow(cfg.beta1, t);
  const Scalar c2 = Scalar(1) - std::pow(cfg.beta2, t);
  for (auto& p : params) {
    p.moment1 = cfg.beta1 * p.moment1 + (Scalar(1) - cfg.beta1) * p.grad;
    p.moment2 = cfg.beta2 * p.moment2 + (Scalar(1) - cfg.beta2) * p.grad.cwiseAbs2();
    p.value.array() -= cfg.lr * (p.moment1.array() / c1) / ((p.moment2.array() / c2).sqrt() + cfg.eps);
  }
}

/// Rescales all gradients jointly so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
template <typename Scalar>
Scalar clip_grad_norm(std::span<ParamSet<Scalar>* const> sets, Scalar max_norm) {
  Scalar sq(0);
  for (auto* s : sets) sq += s->grad_squared_norm();
  const Scalar norm = std::sqrt(sq);
  if (norm > max_norm && norm > Scalar(0)) {
    for (auto* s : sets) s->scale_grad(max_norm / norm);
  }
  return norm;
}

template <typename Scalar>
MatrixX<Scalar> orthogonal_init(Index rows, Index cols, Scalar gain, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const Index n = std::max(rows, cols);
  const Index m = std::min(rows, cols);
  MatrixX<double> a(n, m);
  for (Index i = 0; i < a.size(); ++i) a.data()[i] = normal(rng);
  Eigen::HouseholderQR<MatrixX<double>> qr(a);
  MatrixX<double> q = qr.householderQ() * MatrixX<double>::Identity(n, m);
  // Sign fix keeps the draw uniformly distributed over orthogonal matrices.
  const auto r = qr.matrixQR().diagonal();
  for (Index j = 0; j < m; ++j)
    if (r(j) < 0) q.col(j) *= -1.0;
  MatrixX<double> w = rows >= cols ? q : MatrixX<double>(q.transpose());
  return (gain * w.cast<Scalar>()).eval();
}

/// Fully connected network: affine + tanh hidden layers, linear output.
/// Inputs are column-major batches (one sample per column).
template <typename Scalar>
class Mlp {
 public:
  struct Cache {
    std::vector<MatrixX<Scalar>> inputs;  // input to each layer
    std::vector<MatrixX<Scalar>> hidden;  // tanh outputs of hidden layers
  };

  Mlp() = default;

  Mlp(std::vector<int> sizes, Rng& rng, Scalar output_gain = Scalar(1), Scalar hidden_gain = Scalar(std::sqrt(2.0)))
      : sizes_(std::move(sizes)) {
    if (sizes_.size() < 2) throw ShapeError("mlp needs at least input and output sizes");
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      const bool last = l + 2 == sizes_.size();
      const std::string tag = "layer" + std::to_string(l);
      weight_.push_back(params_.add(tag + ".weight",
                                    orthogonal_init<Scalar>(sizes_[l + 1], sizes_[l], last ? output_gain : hidden_gain, rng)));
      bias_.push_back(params_.add(tag + ".bias", MatrixX<Scalar>::Zero(sizes_[l + 1], 1)));
    }
  }

  int input_size() const { return sizes_.front(); }
  int output_size() const { return sizes_.back(); }
  const std::vector<int>& sizes() const { return sizes_; }
  int layers() const { return static_cast<int>(weight_.size()); }

  ParamSet<Scalar>& params() { return params_; }
  const ParamSet<Scalar>& params() const { return params_; }

  MatrixX<Scalar> forward(const Eigen::Ref<const MatrixX<Scalar>>& x, Cache* cache = nullptr) const {
    if (x.rows() != input_size()) throw ShapeError("mlp input has wrong row count");
    if (cache) {
      cache->inputs.clear();
      cache->hidden.clear();
    }
    MatrixX<Scalar> a = x;
    for (int l = 0; l < layers(); ++l) {
      if (cache) cache->inputs.push_back(a);
      MatrixX<Scalar> z = (params_[weight_[l]].value * a).colwise() + params_[bias_[l]].value.col(0);
      if (l + 1 < layers()) {
        a = z.array().tanh().matrix();
        if (cache) cache->hidden.push_back(a);
      } else {
        a = std::move(z);
      }
    }
    require_finite(a, "mlp forward");
    return a;
  }

  /// Accumulates parameter gradients for upstream gradient `dout` and returns
  /// the gradient with respect to the input.
  MatrixX<Scalar> backward(const Cache& cache, const Eigen::Ref<const MatrixX<Scalar>>& dout) {
    MatrixX<Scalar> g = dout;
    for (int l = layers() - 1; l >= 0; --l) {
      if (l + 1 < layers()) {
        const auto& h = cache.hidden[static_cast<std::size_t>(l)];
        g = (g.array() * (Scalar(1) - h.array().square())).matrix();
      }
      params_[weight_[l]].grad.noalias() += g * cache.inputs[static_cast<std::size_t>(l)].transpose();
      params_[bias_[l]].grad += g.rowwise().sum();
      g = params_[weight_[l]].value.transpose() * g;
    }
    require_finite(g, "mlp backward");
    return g;
  }

  // Deep copy with fresh optimizer moments.
  Mlp clone() const {
    Mlp out = *this;
    out.params_ = params_.clone();
    return out;
  }

 private:
  std::vector<int> sizes_;
  std::vector<int> weight_;
  std::vector<int> bias_;
  ParamSet<Scalar> params_;
};

extern template class Mlp<double>;

// ---- multi-discrete action distribution --------------------------------------
//
// The policy emits kDims independent categoricals over outflow magnitudes
// {0, .., bins-1}; logits are stacked per direction in one column.

inline constexpr int kDims = 4;

template <typename Derived>
VectorX<typename Derived::Scalar> log_softmax(const Eigen::MatrixBase<Derived>& z) {
  using Scalar = typename Derived::Scalar;
  const Scalar mx = z.maxCoeff();
  const Scalar lse = mx + std::log((z.array() - mx).exp().sum());
  return (z.array() - lse).matrix();
}

/// Per-direction log-probabilities, bins x 4.
template <typename Derived>
MatrixX<typename Derived::Scalar> direction_log_probs(const Eigen::MatrixBase<Derived>& logits, int bins) {
  if (logits.size() != kDims * bins) throw ShapeError("logit vector has wrong size");
  MatrixX<typename Derived::Scalar> lp(bins, kDims);
  for (int d = 0; d < kDims; ++d) lp.col(d) = log_softmax(logits.segment(d * bins, bins));
  return lp;
}

/// Sum of the four categorical log-probabilities of `action`.
template <typename Derived>
typename Derived::Scalar joint_log_prob(const Eigen::MatrixBase<Derived>& logits, const Eigen::Matrix<Count, 4, 1>& action,
                                        int bins) {
  const auto lp = direction_log_probs(logits, bins);
  typename Derived::Scalar s(0);
  for (int d = 0; d < kDims; ++d) {
    if (action(d) < 0 || action(d) >= bins) throw ValidationError("action magnitude outside categorical support");
    s += lp(static_cast<Index>(action(d)), d);
  }
  return s;
}

template <typename Derived>
typename Derived::Scalar joint_entropy(const Eigen::MatrixBase<Derived>& logits, int bins) {
  const auto lp = direction_log_probs(logits, bins);
  return -(lp.array().exp() * lp.array()).sum();
}

/// d/dlogits of joint_log_prob.
template <typename Derived>
VectorX<typename Derived::Scalar> joint_log_prob_grad(const Eigen::MatrixBase<Derived>& logits,
                                                       const Eigen::Matrix<Count, 4, 1>& action, int bins) {
  const auto lp = direction_log_probs(logits, bins);
  VectorX<typename Derived::Scalar> g(kDims * bins);
  for (int d = 0; d < kDims; ++d) {
    g.segment(d * bins, bins) = -lp.col(d).array().exp().matrix();
    g(d * bins + static_cast<Index>(action(d))) += 1;
  }
  return g;
}

/// d/dlogits of joint_entropy.
template <typename Derived>
VectorX<typename Derived::Scalar> joint_entropy_grad(const Eigen::MatrixBase<Derived>& logits, int bins) {
  using Scalar = typename Derived::Scalar;
  const auto lp = direction_log_probs(logits, bins);
  VectorX<Scalar> g(kDims * bins);
  for (int d = 0; d < kDims; ++d) {
    const auto p = lp.col(d).array().exp();
    const Scalar h = -(p * lp.col(d).array()).sum();
    g.segment(d * bins, bins) = (-p * (lp.col(d).array() + h)).matrix();
  }
  return g;
}

template <typename Derived>
Eigen::Matrix<Count, 4, 1> sample_action(const Eigen::MatrixBase<Derived>& logits, int bins, Rng& rng) {
  const auto lp = direction_log_probs(logits, bins);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Eigen::Matrix<Count, 4, 1> a;
  for (int d = 0; d < kDims; ++d) {
    const double u = unif(rng);
    double acc = 0.0;
    Count pick = bins - 1;
    for (int b = 0; b < bins; ++b) {
      acc += std::exp(static_cast<double>(lp(b, d)));
      if (u < acc) {
        pick = b;
        break;
      }
    }
    a(d) = pick;
  }
  return a;
}

/// Most likely magnitude per direction (lowest magnitude on ties).
template <typename Derived>
Eigen::Matrix<Count, 4, 1> mode_action(const Eigen::MatrixBase<Derived>& logits, int bins) {
  Eigen::Matrix<Count, 4, 1> a;
  for (int d = 0; d < kDims; ++d) {
    Index best = 0;
    logits.segment(d * bins, bins).maxCoeff(&best);
    a(d) = static_cast<Count>(best);
  }
  return a;
}

}  // namespace hagps::nn
