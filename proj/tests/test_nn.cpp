#include "hagps/networks.hpp"
#include "hagps/vlstm.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <map>

using namespace hagps;
using namespace hagps::nn;

namespace {

Mat randn(Index r, Index c, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Mat m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

}  // namespace

TEST_CASE("mlp forward") {
  Rng rng(1);
  Mlp<double> zero({3, 4, 2}, rng);
  for (auto& p : zero.params()) p.value.setZero();
  CHECK(zero.forward(randn(3, 5, rng)).isZero());

  Mlp<double> one({1, 1}, rng);
  one.params()[0].value(0, 0) = 2.5;
  one.params()[1].value(0, 0) = 0.0;
  CHECK(one.forward(Mat::Constant(1, 1, 3.0))(0, 0) == 7.5);

  Mlp<double> net({4, 5, 3, 2}, rng);
  for (auto& p : net.params()) p.value = randn(p.value.rows(), p.value.cols(), rng, 0.7);
  std::vector<oracle::Layer> layers;
  for (int l = 0; l < net.layers(); ++l) {
    const Mat& w = net.params()[2 * l].value;
    const Mat& b = net.params()[2 * l + 1].value;
    oracle::Layer L{static_cast<int>(w.rows()), static_cast<int>(w.cols()), {}, {}};
    for (Index i = 0; i < w.rows(); ++i)
      for (Index j = 0; j < w.cols(); ++j) L.w.push_back(w(i, j));
    for (Index i = 0; i < b.rows(); ++i) L.b.push_back(b(i, 0));
    layers.push_back(L);
  }
  const Mat x = randn(4, 6, rng);
  const Mat y = net.forward(x);
  for (Index c = 0; c < x.cols(); ++c) {
    const auto ref = oracle::mlp(layers, {x(0, c), x(1, c), x(2, c), x(3, c)});
    for (Index i = 0; i < 2; ++i) CHECK(std::abs(y(i, c) - static_cast<double>(ref[static_cast<std::size_t>(i)])) < 1e-12);
  }
  CHECK_THROWS_AS(net.forward(randn(3, 1, rng)), ShapeError);
}

TEST_CASE("mlp gradients match finite differences") {
  Rng rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    const int in = 2 + trial, hid = 3 + trial, out = 1 + trial % 3;
    Mlp<double> net({in, hid, hid, out}, rng);
    for (auto& p : net.params()) p.value = randn(p.value.rows(), p.value.cols(), rng, 0.5);
    Mat x = randn(in, 4, rng);
    const Mat c = randn(out, 4, rng);
    auto loss = [&] { return (net.forward(x).array() * c.array()).sum(); };
    Mlp<double>::Cache cache;
    net.forward(x, &cache);
    net.params().zero_grad();
    const Mat dx = net.backward(cache, c);
    for (auto& p : net.params()) {
      const Mat g = p.grad;
      CHECK(gradcheck::max_rel_error(p.value, g, loss) < 1e-4);
    }
    CHECK(gradcheck::max_rel_error(x, dx, loss) < 1e-4);
  }
}

TEST_CASE("backward of a zero upstream gradient leaves gradients at zero") {
  Rng rng(3);
  Mlp<double> net({3, 4, 2}, rng);
  Mlp<double>::Cache cache;
  net.forward(randn(3, 2, rng), &cache);
  net.backward(cache, Mat::Zero(2, 2));
  CHECK(net.params().grad_squared_norm() == 0.0);
}

TEST_CASE("orthogonal initialization") {
  Rng rng(4);
  const Mat w = orthogonal_init<double>(6, 3, 2.0, rng);
  CHECK((w.transpose() * w - 4.0 * Mat::Identity(3, 3)).norm() < 1e-12);
  const Mat v = orthogonal_init<double>(3, 6, 1.0, rng);
  CHECK((v * v.transpose() - Mat::Identity(3, 3)).norm() < 1e-12);
}

TEST_CASE("categorical log-probabilities by enumeration") {
  Rng rng(5);
  const int bins = 3;
  const Vec logits = randn(4 * bins, 1, rng, 1.5);
  double total = 0.0, entropy = 0.0;
  for (int a = 0; a < 81; ++a) {
    const Eigen::Matrix<Count, 4, 1> act(a % 3, (a / 3) % 3, (a / 9) % 3, a / 27);
    // Product of independently normalized softmax terms.
    oracle::ld p = 1;
    for (int d = 0; d < 4; ++d) {
      oracle::ld z = 0;
      for (int b = 0; b < bins; ++b) z += std::exp(static_cast<oracle::ld>(logits(d * bins + b)));
      p *= std::exp(static_cast<oracle::ld>(logits(d * bins + act(d)))) / z;
    }
    const double lp = joint_log_prob(logits, act, bins);
    CHECK(std::abs(lp - static_cast<double>(std::log(p))) < 1e-12);
    total += std::exp(lp);
    entropy -= std::exp(lp) * lp;
  }
  CHECK(std::abs(total - 1.0) < 1e-12);
  CHECK(std::abs(joint_entropy(logits, bins) - entropy) < 1e-12);

  const Vec uniform = Vec::Zero(4 * bins);
  const Eigen::Matrix<Count, 4, 1> any(2, 0, 1, 1);
  CHECK(joint_log_prob(uniform, any, bins) == doctest::Approx(4 * std::log(1.0 / 3)));
  CHECK(mode_action(uniform, bins).isZero());
}

TEST_CASE("log-probability and entropy gradients") {
  Rng rng(6);
  const int bins = 4;
  Mat logits = randn(4 * bins, 1, rng);
  const Eigen::Matrix<Count, 4, 1> act(3, 0, 2, 1);
  const Mat g = joint_log_prob_grad(Vec(logits), act, bins);
  CHECK(gradcheck::max_rel_error(logits, g, [&] { return joint_log_prob(Vec(logits), act, bins); }) < 1e-4);
  const Mat h = joint_entropy_grad(Vec(logits), bins);
  CHECK(gradcheck::max_rel_error(logits, h, [&] { return joint_entropy(Vec(logits), bins); }) < 1e-4);
}

TEST_CASE("sampling follows the categorical") {
  Rng rng(7);
  const int bins = 3;
  Vec logits(4 * bins);
  logits << 0, 1, 2, 0, 0, 0, 2, 1, 0, -1, 0, 1;
  std::map<Count, int> counts;
  const int n = 20000;
  for (int i = 0; i < n; ++i) ++counts[sample_action(logits, bins, rng)(0)];
  const auto lp = direction_log_probs(logits, bins);
  for (int b = 0; b < bins; ++b) CHECK(std::abs(counts[b] / double(n) - std::exp(lp(b, 0))) < 0.02);
  CHECK(mode_action(logits, bins) == Eigen::Matrix<Count, 4, 1>(2, 0, 0, 2));
}

TEST_CASE("adam") {
  ParamSet<double> ps;
  ps.add("x", Mat::Constant(1, 1, 1.0));
  AdamConfig<double> cfg{0.1, 0.9, 0.999, 1e-8};
  adam_update(ps, cfg);
  CHECK(ps[0].value(0, 0) == 1.0);  // zero gradient

  ParamSet<double> q;
  q.add("x", Mat::Constant(1, 1, 1.0));
  q[0].grad(0, 0) = 0.37;
  adam_update(q, cfg);
  CHECK(q[0].value(0, 0) == doctest::Approx(0.9).epsilon(1e-6));

  ParamSet<double> f;
  f.add("x", Mat::Constant(1, 1, 1.0));
  double prev = 1.0;
  for (int i = 0; i < 10; ++i) {
    f[0].grad(0, 0) = 2.0 * f[0].value(0, 0);
    adam_update(f, cfg);
    CHECK(std::abs(f[0].value(0, 0)) < prev);
    prev = std::abs(f[0].value(0, 0));
  }
  // Moments persist between calls.
  CHECK(f[0].moment1(0, 0) != 0.0);
  CHECK(f.adam_steps == 10);
}

TEST_CASE("clip_grad_norm rescales jointly") {
  ParamSet<double> a, b;
  a.add("a", Mat::Zero(1, 1));
  b.add("b", Mat::Zero(1, 1));
  a[0].grad(0, 0) = 3.0;
  b[0].grad(0, 0) = 4.0;
  std::array<ParamSet<double>*, 2> sets{&a, &b};
  CHECK(clip_grad_norm<double>(sets, 1.0) == doctest::Approx(5.0));
  CHECK(a[0].grad(0, 0) == doctest::Approx(0.6));
  CHECK(b[0].grad(0, 0) == doctest::Approx(0.8));
}

TEST_CASE("clone") {
  Rng rng(8);
  Mlp<double> net({3, 4, 2}, rng);
  net.params()[0].moment1.setConstant(1.0);
  Mlp<double> c = net.clone();
  CHECK(c.params().values_equal(net.params()));
  CHECK(c.params()[0].moment1.isZero());
  const Mat x = randn(3, 2, rng);
  CHECK(c.forward(x) == net.forward(x));
  c.params()[0].value(0, 0) += 1.0;
  CHECK_FALSE(c.params().values_equal(net.params()));
  CHECK(net.clone().clone().params().values_equal(net.params()));
}

TEST_CASE("id embeddings") {
  Rng rng(9);
  IdEmbedding on(8, 5, rng, true);
  IdEmbedding off(8, 5, rng, false);
  CHECK(on.vector(3).norm() > 0);
  CHECK(off.vector(3).isZero());
  CHECK_FALSE(off.enabled());
}

TEST_CASE("vlstm encoder basics") {
  Rng rng(10);
  VlstmEncoder<double> enc(5, 6, 3, rng);
  const auto empty = enc.encode(Mat(5, 0));
  CHECK(empty.mean.isZero());
  CHECK(empty.logvar.isZero());

  const Mat w = randn(5, 4, rng);
  CHECK(enc.encode(w) == enc.encode(w));

  VlstmEncoder<double> zero = enc.clone();
  for (auto& p : zero.params()) p.value.setZero();
  zero.params()[5].value.setConstant(-0.25);  // logvar.bias
  const auto z = zero.encode(w);
  CHECK(z.mean.isZero());
  CHECK((z.logvar.array() == -0.25).all());

  zero.params()[5].value.setConstant(40.0);
  CHECK((zero.encode(w).logvar.array() == 10.0).all());
  zero.params()[5].value.setConstant(-40.0);
  CHECK((zero.encode(w).logvar.array() == -10.0).all());
}

TEST_CASE("vlstm gradients match finite differences") {
  Rng rng(11);
  for (int trial = 0; trial < 3; ++trial) {
    VlstmEncoder<double> enc(3 + trial, 4, 2 + trial, rng);
    for (auto& p : enc.params()) p.value = randn(p.value.rows(), p.value.cols(), rng, 0.6);
    const Mat w = randn(enc.input_size(), 3 + trial, rng);
    const Vec cm = randn(enc.latent_size(), 1, rng);
    const Vec cl = randn(enc.latent_size(), 1, rng);
    auto loss = [&] {
      const auto e = enc.encode(w);
      return cm.dot(e.mean) + cl.dot(e.logvar);
    };
    VlstmEncoder<double>::Cache cache;
    enc.encode(w, &cache);
    enc.params().zero_grad();
    enc.backward(cache, cm, cl);
    for (auto& p : enc.params()) {
      const Mat g = p.grad;
      CHECK_MESSAGE(gradcheck::max_rel_error(p.value, g, loss) < 1e-4, p.name);
    }
  }
}

TEST_CASE("reparameterization derivatives") {
  Rng rng(12);
  GaussianEmbedding<double> z{randn(4, 1, rng), randn(4, 1, rng)};
  const Vec noise = randn(4, 1, rng);
  const Vec s = reparameterize(z, noise);
  const double h = 1e-5;
  for (Index i = 0; i < 4; ++i) {
    auto zp = z, zm = z;
    zp.mean(i) += h;
    zm.mean(i) -= h;
    CHECK(gradcheck::rel_error(1.0, (reparameterize(zp, noise)(i) - reparameterize(zm, noise)(i)) / (2 * h)) < 1e-4);
    zp = z;
    zm = z;
    zp.logvar(i) += h;
    zm.logvar(i) -= h;
    const double want = noise(i) * std::exp(z.logvar(i) / 2) / 2;
    CHECK(gradcheck::rel_error(want, (reparameterize(zp, noise)(i) - reparameterize(zm, noise)(i)) / (2 * h)) < 1e-4);
  }
  CHECK(s.size() == 4);
}

TEST_CASE("trajectory autoencoder gradients") {
  Rng rng(13);
  TrajectoryAutoencoder ae(4, 5, 3, rng, 0.1);
  const Mat w = randn(4, 5, rng);
  const Vec noise = randn(3, 1, rng);
  auto loss = [&] {
    TrajectoryAutoencoder copy = ae;
    return copy.accumulate(w, noise);
  };
  ae.encoder.params().zero_grad();
  ae.decoder.params().zero_grad();
  ae.accumulate(w, noise);
  for (auto& p : ae.encoder.params()) {
    const Mat g = p.grad;
    CHECK_MESSAGE(gradcheck::max_rel_error(p.value, g, loss) < 1e-4, p.name);
  }
  for (auto& p : ae.decoder.params()) {
    const Mat g = p.grad;
    CHECK_MESSAGE(gradcheck::max_rel_error(p.value, g, loss) < 1e-4, p.name);
  }

  // A few training steps reduce the loss on a fixed batch.
  std::vector<Mat> batch;
  for (int i = 0; i < 6; ++i) batch.push_back(randn(4, 6, rng, 0.5));
  Rng r1(99), r2(99);
  const double first = ae.train_step(batch, r1, {1e-2, 0.9, 0.999, 1e-8}, 10.0);
  double last = first;
  for (int i = 0; i < 60; ++i) last = ae.train_step(batch, r2, {1e-2, 0.9, 0.999, 1e-8}, 10.0);
  CHECK(last < first);
}
