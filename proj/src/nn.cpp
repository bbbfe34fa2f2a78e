#include "hagps/nn.hpp"
#include "hagps/vlstm.hpp"

namespace hagps::nn {

template class Mlp<double>;
template class VlstmEncoder<double>;

TrajectoryAutoencoder::TrajectoryAutoencoder(int tuple_size, int hidden, int latent, Rng& rng, double kl_weight_)
    : encoder(tuple_size, hidden, latent, rng), decoder({latent, tuple_size}, rng), kl_weight(kl_weight_) {}

double TrajectoryAutoencoder::accumulate(const Mat& window, const Vec& noise) {
  const Index L = window.cols();
  if (L < 2) throw ValidationError("autoencoder window needs at least two steps");
  VlstmEncoder<double>::Cache cache;
  const auto q = encoder.encode(window.leftCols(L - 1), &cache);
  const Vec z = reparameterize(q, noise);
  Mlp<double>::Cache dcache;
  const Vec pred = decoder.forward(z, &dcache);
  const Vec err = pred - window.col(L - 1);
  const double dim = static_cast<double>(err.size());
  const auto var = q.logvar.array().exp();
  const double kl = 0.5 * (var + q.mean.array().square() - 1.0 - q.logvar.array()).sum();
  const double loss = err.squaredNorm() / dim + kl_weight * kl;
  require_finite(loss, "autoencoder loss");

  const Vec dz = decoder.backward(dcache, 2.0 * err / dim);
  const Vec dmean = dz + kl_weight * q.mean;
  const Vec dlogvar =
      (dz.array() * noise.array() * (0.5 * q.logvar.array()).exp() * 0.5 + kl_weight * 0.5 * (var - 1.0)).matrix();
  encoder.backward(cache, dmean, dlogvar);
  return loss;
}

double TrajectoryAutoencoder::train_step(std::span<const Mat> windows, Rng& rng, const AdamConfig<double>& adam,
                                         double max_grad_norm) {
  encoder.params().zero_grad();
  decoder.params().zero_grad();
  std::normal_distribution<double> normal(0.0, 1.0);
  double total = 0.0;
  int used = 0;
  for (const auto& w : windows) {
    if (w.cols() < 2) continue;
    Vec noise(encoder.latent_size());
    for (Index i = 0; i < noise.size(); ++i) noise(i) = normal(rng);
    total += accumulate(w, noise);
    ++used;
  }
  if (used == 0) return 0.0;
  encoder.params().scale_grad(1.0 / used);
  decoder.params().scale_grad(1.0 / used);
  std::array<ParamSet<double>*, 2> sets{&encoder.params(), &decoder.params()};
  clip_grad_norm<double>(sets, max_grad_norm);
  adam_update(encoder.params(), adam);
  adam_update(decoder.params(), adam);
  return total / used;
}

}  // namespace hagps::nn
