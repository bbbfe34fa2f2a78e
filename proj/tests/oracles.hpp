#pragma once

// Slow, independent reference computations for the test suites. Nothing here
// calls into the library beyond plain data types.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

namespace oracle {

using ld = long double;

inline ld reward(long long unmet, long long demand, long long moved, long long max_load, ld lambda, ld alpha, ld beta,
                 ld eps) {
  const ld miss = static_cast<ld>(unmet) / (static_cast<ld>(demand) + eps);
  return lambda * (1 - miss) - alpha * miss - beta * static_cast<ld>(moved) / static_cast<ld>(max_load);
}

// Grid step on a rows x cols lattice; actions[k] = outflows (N, S, E, W).
struct StepResult {
  std::vector<long long> pre, served, unmet, next;
};

inline StepResult step(int rows, int cols, const std::vector<long long>& b,
                       const std::vector<std::array<long long, 4>>& actions, const std::vector<long long>& d,
                       const std::vector<long long>& o) {
  const int K = rows * cols;
  StepResult r;
  r.pre = b;
  for (int k = 0; k < K; ++k) {
    const int row = k / cols, col = k % cols;
    // (dr, dc) per direction: north is row + 1.
    const int dr[4] = {1, -1, 0, 0};
    const int dc[4] = {0, 0, 1, -1};
    for (int dir = 0; dir < 4; ++dir) {
      const int nr = row + dr[dir], nc = col + dc[dir];
      if (nr < 0 || nr >= rows || nc < 0 || nc >= cols) continue;
      const long long q = actions[static_cast<std::size_t>(k)][static_cast<std::size_t>(dir)];
      r.pre[static_cast<std::size_t>(k)] -= q;
      r.pre[static_cast<std::size_t>(nr * cols + nc)] += q;
    }
  }
  for (int k = 0; k < K; ++k) {
    const auto i = static_cast<std::size_t>(k);
    r.served.push_back(std::min(d[i], r.pre[i]));
    r.unmet.push_back(d[i] - r.served.back());
    r.next.push_back(r.pre[i] - r.served.back() + o[i]);
  }
  return r;
}

// Advantages as explicit discounted sums of TD errors (no recursion).
inline std::vector<ld> gae(const std::vector<ld>& r, const std::vector<ld>& v, ld bootstrap, ld gamma, ld lambda) {
  const std::size_t n = r.size();
  std::vector<ld> delta(n), adv(n, 0);
  for (std::size_t t = 0; t < n; ++t) delta[t] = r[t] + gamma * (t + 1 < n ? v[t + 1] : bootstrap) - v[t];
  for (std::size_t t = 0; t < n; ++t) {
    ld w = 1;
    for (std::size_t l = t; l < n; ++l) {
      adv[t] += w * delta[l];
      w *= gamma * lambda;
    }
  }
  return adv;
}

// KL between diagonal Gaussians from variances, one dimension at a time.
inline ld kl(const std::vector<ld>& mp, const std::vector<ld>& lvp, const std::vector<ld>& mq,
             const std::vector<ld>& lvq) {
  ld s = 0;
  for (std::size_t i = 0; i < mp.size(); ++i) {
    const ld vp = std::exp(lvp[i]), vq = std::exp(lvq[i]);
    s += std::log(std::sqrt(vq) / std::sqrt(vp)) + (vp + (mp[i] - mq[i]) * (mp[i] - mq[i])) / (2 * vq) - ld(0.5);
  }
  return s;
}

inline int period(ld dbar, ld delta0, ld zeta, ld target, int lo, int hi) {
  const ld raw = std::ceil(delta0 * std::exp(-zeta * (dbar - target)));
  ld v = std::max<ld>(1, raw);
  v = std::min<ld>(std::max<ld>(v, lo), hi);
  return static_cast<int>(v);
}

// Points as (x per dim) columns; returns the minimum SSE over all 2-partitions
// with both sides nonempty, and one optimal labeling.
inline std::pair<ld, std::vector<int>> best_two_partition(const std::vector<std::vector<ld>>& pts) {
  const std::size_t n = pts.size();
  const std::size_t dim = pts.front().size();
  ld best = std::numeric_limits<ld>::infinity();
  std::vector<int> label(n);
  for (std::uint64_t mask = 1; mask + 1 < (std::uint64_t{1} << n); ++mask) {
    if (mask & 1) continue;  // fix point 0 in cluster 0 to skip mirror images
    ld sse = 0;
    for (int c = 0; c < 2; ++c) {
      std::vector<ld> mean(dim, 0);
      int cnt = 0;
      for (std::size_t i = 0; i < n; ++i)
        if (static_cast<int>((mask >> i) & 1) == c) {
          for (std::size_t j = 0; j < dim; ++j) mean[j] += pts[i][j];
          ++cnt;
        }
      for (auto& m : mean) m /= cnt;
      for (std::size_t i = 0; i < n; ++i)
        if (static_cast<int>((mask >> i) & 1) == c)
          for (std::size_t j = 0; j < dim; ++j) sse += (pts[i][j] - mean[j]) * (pts[i][j] - mean[j]);
    }
    if (sse < best) {
      best = sse;
      for (std::size_t i = 0; i < n; ++i) label[i] = static_cast<int>((mask >> i) & 1);
    }
  }
  return {best, label};
}

// Largest total outflow achievable by lowering entries of `raw` under `cap`.
inline long long max_feasible_l1(const std::array<long long, 4>& raw, long long cap) {
  long long s = 0;
  for (auto x : raw) s += x;
  return std::min(s, cap);
}

// Dense tanh network evaluated with scalar loops: layers[l] = (W row-major rows x cols, b).
struct Layer {
  int rows, cols;
  std::vector<ld> w, b;
};

inline std::vector<ld> mlp(const std::vector<Layer>& layers, std::vector<ld> x) {
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& L = layers[l];
    std::vector<ld> y(static_cast<std::size_t>(L.rows));
    for (int i = 0; i < L.rows; ++i) {
      ld s = L.b[static_cast<std::size_t>(i)];
      for (int j = 0; j < L.cols; ++j) s += L.w[static_cast<std::size_t>(i * L.cols + j)] * x[static_cast<std::size_t>(j)];
      y[static_cast<std::size_t>(i)] = l + 1 < layers.size() ? std::tanh(s) : s;
    }
    x = std::move(y);
  }
  return x;
}

}  // namespace oracle
