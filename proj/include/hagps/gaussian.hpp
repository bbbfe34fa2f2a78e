#pragma once

#include "hagps/common.hpp"

#include <span>

namespace hagps {

/// Diagonal Gaussian given by mean and log-variance.
template <typename Scalar>
struct GaussianEmbedding {
  VectorX<Scalar> mean;
  VectorX<Scalar> logvar;

  Index dim() const { return mean.size(); }
  bool operator==(const GaussianEmbedding&) const = default;
};

/// Closed-form KL(p || q) between diagonal Gaussians.
template <typename Scalar>
Scalar gaussian_kl(const GaussianEmbedding<Scalar>& p, const GaussianEmbedding<Scalar>& q) {
  if (p.dim() != q.dim() || p.logvar.size() != p.dim() || q.logvar.size() != q.dim())
    throw ShapeError("gaussian_kl: dimension mismatch");
  const auto var_ratio = (p.logvar - q.logvar).array().exp();
  const auto maha = (p.mean - q.mean).array().square() * (-q.logvar.array()).exp();
  const Scalar kl = Scalar(0.5) * (var_ratio + maha - Scalar(1) - (p.logvar - q.logvar).array()).sum();
  return std::max(kl, Scalar(0));
}

// KL(p||q) + KL(q||p), the unhalved form used by the merge rule.
template <typename Scalar>
Scalar symmetric_kl_sum(const GaussianEmbedding<Scalar>& p, const GaussianEmbedding<Scalar>& q) {
  return gaussian_kl(p, q) + gaussian_kl(q, p);
}

/// Moment average: mean of member means, log of the mean member variance.
template <typename Scalar>
GaussianEmbedding<Scalar> centroid(std::span<const GaussianEmbedding<Scalar>> members) {
  if (members.empty()) throw ValidationError("centroid of an empty group");
  const Index dim = members.front().dim();
  VectorX<Scalar> mean = VectorX<Scalar>::Zero(dim);
  VectorX<Scalar> var = VectorX<Scalar>::Zero(dim);
  for (const auto& m : members) {
    if (m.dim() != dim) throw ShapeError("centroid: dimension mismatch");
    mean += m.mean;
    var += m.logvar.array().exp().matrix();
  }
  const auto n = static_cast<Scalar>(members.size());
  if (members.size() == 1) return members.front();
  return {mean / n, (var / n).array().log().matrix()};
}

/// Mean over members of the halved symmetric KL to the group centroid.
template <typename Scalar>
Scalar intra_divergence(std::span<const GaussianEmbedding<Scalar>> members) {
  if (members.empty()) throw ValidationError("divergence of an empty group");
  if (members.size() == 1) return Scalar(0);
  const auto mu = centroid(members);
  Scalar total(0);
  for (const auto& z : members) total += Scalar(0.5) * symmetric_kl_sum(z, mu);
  return total / static_cast<Scalar>(members.size());
}

}  // namespace hagps
