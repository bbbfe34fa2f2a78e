#include "hagps/groups.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <set>

using namespace hagps;

namespace {

NetworkSizes tiny() {
  NetworkSizes s;
  s.state = 3;
  s.trunk_hidden = 4;
  s.trunk_out = 3;
  s.head_hidden = 4;
  s.id_dim = 2;
  s.bins = 2;
  return s;
}

Embedding emb(std::vector<double> mean, std::vector<double> logvar) {
  Embedding e{Vec(static_cast<Index>(mean.size())), Vec(static_cast<Index>(logvar.size()))};
  for (std::size_t i = 0; i < mean.size(); ++i) e.mean(static_cast<Index>(i)) = mean[i];
  for (std::size_t i = 0; i < logvar.size(); ++i) e.logvar(static_cast<Index>(i)) = logvar[i];
  return e;
}

Embedding random_emb(Rng& rng, int dim, double spread) {
  std::normal_distribution<double> n(0.0, spread);
  std::uniform_real_distribution<double> lv(-1.0, 1.0);
  Embedding e{Vec(dim), Vec(dim)};
  for (int i = 0; i < dim; ++i) {
    e.mean(i) = n(rng);
    e.logvar(i) = lv(rng);
  }
  return e;
}

// One global group holding one local group with every agent.
GroupTree single_group_tree(int agents, GroupCaps caps, Rng& rng) {
  GroupTree t(agents, caps);
  const auto s = tiny();
  const int g = t.add_global(make_trunk(s, rng));
  std::vector<int> all(static_cast<std::size_t>(agents));
  for (int i = 0; i < agents; ++i) all[static_cast<std::size_t>(i)] = i;
  t.add_local(g, HeadNet::make(s, rng), all);
  return t;
}

}  // namespace

TEST_CASE("gaussian kl") {
  const auto p = emb({0.0}, {0.0});
  const auto q = emb({1.0}, {0.0});
  CHECK(gaussian_kl(p, p) == 0.0);
  CHECK(gaussian_kl(p, q) == doctest::Approx(0.5));
  CHECK(symmetric_kl_sum(p, q) == doctest::Approx(1.0));
  CHECK_THROWS_AS(gaussian_kl(p, emb({0, 0}, {0, 0})), ShapeError);

  Rng rng(1);
  for (int i = 0; i < 10000; ++i) {
    const auto a = random_emb(rng, 3, 1.0), b = random_emb(rng, 3, 1.0);
    const double k = gaussian_kl(a, b);
    CHECK(k >= 0.0);
    CHECK(symmetric_kl_sum(a, b) == symmetric_kl_sum(b, a));
    if (i < 200) {
      std::vector<oracle::ld> ma, la, mb, lb;
      for (int j = 0; j < 3; ++j) {
        ma.push_back(a.mean(j));
        la.push_back(a.logvar(j));
        mb.push_back(b.mean(j));
        lb.push_back(b.logvar(j));
      }
      CHECK(std::abs(k - static_cast<double>(oracle::kl(ma, la, mb, lb))) < 1e-9);
    }
  }
}

TEST_CASE("centroid and intra divergence") {
  const auto a = emb({0.0}, {0.0});
  const auto b = emb({2.0}, {0.0});
  const std::vector<Embedding> one{a}, same{a, a}, two{a, b};
  CHECK(centroid<double>(one) == a);
  CHECK(centroid<double>(same).mean == a.mean);
  CHECK(centroid<double>(same).logvar == a.logvar);
  CHECK(centroid<double>(two).mean(0) == 1.0);
  CHECK(intra_divergence<double>(one) == 0.0);
  CHECK(intra_divergence<double>(same) == 0.0);
  // Centroid N(1, 1): each member sits one unit away, so both KLs are 1/2.
  CHECK(intra_divergence<double>(two) == doctest::Approx(0.5));
  // Unequal variances: N(0, 1) and N(0, e^2) average to variance (1 + e^2) / 2.
  const auto c = emb({0.0}, {2.0});
  const std::vector<Embedding> mix{a, c};
  const oracle::ld v = (1 + std::exp(2.0L)) / 2;
  const oracle::ld lv = std::log(v);
  oracle::ld want = 0;
  for (oracle::ld l : {0.0L, 2.0L}) want += (oracle::kl({0}, {l}, {0}, {lv}) + oracle::kl({0}, {lv}, {0}, {l})) / 4;
  CHECK(std::abs(intra_divergence<double>(mix) - static_cast<double>(want)) < 1e-12);
  CHECK_THROWS(centroid<double>(std::vector<Embedding>{}));
}

TEST_CASE("kmeans") {
  Mat pts(2, 4);
  pts << 0, 1, 2, 3, 0, 1, 2, 3;
  auto as = kmeans(pts, 4, 1);
  CHECK(std::set<int>(as.begin(), as.end()).size() == 4);

  Mat dup(1, 6);
  dup << 5, 5, 5, -5, -5, -5;
  as = kmeans(dup, 2, 2);
  CHECK(as[0] == as[1]);
  CHECK(as[1] == as[2]);
  CHECK(as[3] == as[4]);
  CHECK(as[0] != as[3]);
  CHECK_THROWS(kmeans(dup, 7, 1));

  Rng rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  int matched = 0;
  for (int trial = 0; trial < 50; ++trial) {
    Mat p(2, 8);
    std::vector<std::vector<oracle::ld>> ref;
    for (int i = 0; i < 8; ++i) {
      const double shift = i < 4 ? -6.0 : 6.0;
      p(0, i) = n(rng) + shift;
      p(1, i) = n(rng);
      ref.push_back({p(0, i), p(1, i)});
    }
    const auto a = kmeans(p, 2, static_cast<std::uint64_t>(trial));
    const auto [best, label] = oracle::best_two_partition(ref);
    const double sse = kmeans_sse(p, a, 2);
    CHECK(sse >= static_cast<double>(best) - 1e-9);
    matched += std::abs(sse - static_cast<double>(best)) < 1e-9;
    // Same seed, same answer.
    CHECK(kmeans(p, 2, static_cast<std::uint64_t>(trial)) == a);
  }
  // Well-separated data: Lloyd from k-means++ finds the optimum every time.
  CHECK(matched == 50);
}

TEST_CASE("running divergence and period") {
  ControllerState s;
  s.running_divergence = 0.1;
  const std::vector<double> d{0.2};
  CHECK(update_running_divergence(s, d, 0.9) == doctest::Approx(0.11));
  const std::vector<double> same{0.11};
  CHECK(update_running_divergence(s, same, 0.9) == doctest::Approx(0.11));
  ControllerState r;
  const std::vector<double> c{1.0};
  double gap = 1.0;
  for (int i = 0; i < 50; ++i) {
    update_running_divergence(r, c, 0.9);
    CHECK(std::abs(1.0 - r.running_divergence) < gap);
    gap = std::abs(1.0 - r.running_divergence);
  }
  CHECK(gap == doctest::Approx(std::pow(0.9, 50)));

  ControllerConfig cfg;
  CHECK(regroup_period(0.02, cfg) == 8);
  CHECK(regroup_period(1e9, cfg) == 1);
  CHECK(regroup_period(0.25, cfg) == 5);
  CHECK(regroup_period(-1e9, cfg) == 64);
  int prev = 64;
  for (double x = -2.0; x < 3.0; x += 0.01) {
    const int p = regroup_period(x, cfg);
    CHECK(p <= prev);
    CHECK(p >= 1);
    CHECK(p <= 64);
    CHECK(p == oracle::period(x, 8, 3, 0.02L, 1, 64));
    prev = p;
  }
}

TEST_CASE("split") {
  Rng rng(4);
  ControllerConfig cfg;
  GroupCaps caps;
  std::vector<Embedding> z;
  for (int i = 0; i < 6; ++i) z.push_back(emb({i < 3 ? -4.0 : 4.0, 0.1 * i}, {0.0, 0.0}));

  SUBCASE("well separated clusters split exactly") {
    auto t = single_group_tree(6, caps, rng);
    const int parent = t.locals().begin()->first;
    const HeadNet before = t.local(parent).head.clone();
    const auto ids = try_split(t, parent, z, cfg, 0);
    REQUIRE(ids);
    REQUIRE(ids->size() == 2);
    std::vector<std::vector<oracle::ld>> pts;
    for (const auto& e : z) pts.push_back({e.mean(0), e.mean(1)});
    const auto label = oracle::best_two_partition(pts).second;
    for (int id : *ids) {
      const auto& m = t.local(id).members;
      CHECK(m.size() == 3);
      for (int a : m) CHECK(label[static_cast<std::size_t>(a)] == label[static_cast<std::size_t>(m.front())]);
      CHECK(t.local(id).head.values_equal(before));
    }
    CHECK_FALSE(t.locals().count(parent));
    t.check_invariants();
  }
  SUBCASE("low divergence is a no-op") {
    auto t = single_group_tree(6, caps, rng);
    std::vector<Embedding> flat(6, emb({0.0, 0.0}, {0.0, 0.0}));
    CHECK_FALSE(try_split(t, t.locals().begin()->first, flat, cfg, 0));
    CHECK(t.local_count() == 1);
  }
  SUBCASE("groups of size S_min never split") {
    auto t = single_group_tree(2, caps, rng);
    std::vector<Embedding> far{emb({-50.0}, {0.0}), emb({50.0}, {0.0})};
    CHECK_FALSE(try_split(t, t.locals().begin()->first, far, cfg, 0));
  }
  SUBCASE("the local cap blocks splitting") {
    GroupCaps one = caps;
    one.max_local = 1;
    auto t = single_group_tree(6, one, rng);
    CHECK_FALSE(try_split(t, t.locals().begin()->first, z, cfg, 0));
  }
}

TEST_CASE("merge") {
  Rng rng(5);
  ControllerConfig cfg;
  GroupTree t(8, GroupCaps{});
  const auto s = tiny();
  const int g = t.add_global(make_trunk(s, rng));
  const int big = t.add_local(g, HeadNet::make(s, rng), {0, 1, 2, 3, 4});
  const int small = t.add_local(g, HeadNet::make(s, rng), {5, 6, 7});
  const HeadNet big_head = t.local(big).head.clone();
  std::vector<Embedding> z(8, emb({0.0}, {0.0}));

  SUBCASE("far centroids do not merge") {
    for (int a : {5, 6, 7}) z[static_cast<std::size_t>(a)] = emb({9.0}, {0.0});
    CHECK_FALSE(try_merge(t, big, small, z, cfg, 0));
    CHECK(t.local_count() == 2);
  }
  SUBCASE("identical centroids merge into the larger group") {
    const auto kept = try_merge(t, small, big, z, cfg, 0);
    REQUIRE(kept);
    CHECK(*kept == big);
    CHECK(t.local_count() == 1);
    CHECK(t.local(big).members.size() == 8);
    CHECK(t.local(big).head.values_equal(big_head));
    t.check_invariants();
  }
  SUBCASE("groups in different global groups never merge") {
    GroupTree u(2, GroupCaps{});
    const int g1 = u.add_global(make_trunk(s, rng));
    const int g2 = u.add_global(make_trunk(s, rng));
    const int a = u.add_local(g1, HeadNet::make(s, rng), {0});
    const int b = u.add_local(g2, HeadNet::make(s, rng), {1});
    std::vector<Embedding> w(2, emb({0.0}, {0.0}));
    CHECK_FALSE(try_merge(u, a, b, w, cfg, 0));
  }
}

TEST_CASE("split then merge restores the parent head") {
  Rng rng(6);
  ControllerConfig cfg;
  cfg.merge_threshold = std::numeric_limits<double>::infinity();
  for (int trial = 0; trial < 20; ++trial) {
    auto t = single_group_tree(8, GroupCaps{}, rng);
    std::vector<Embedding> z;
    for (int i = 0; i < 8; ++i) z.push_back(random_emb(rng, 2, 5.0));
    const int parent = t.locals().begin()->first;
    const HeadNet before = t.local(parent).head.clone();
    const auto ids = try_split(t, parent, z, cfg, trial);
    REQUIRE(ids);
    const auto kept = try_merge(t, (*ids)[0], (*ids)[1], z, cfg, trial);
    REQUIRE(kept);
    CHECK(t.local_count() == 1);
    CHECK(t.local(*kept).head.values_equal(before));
    CHECK(t.local(*kept).members.size() == 8);
  }
}

TEST_CASE("regroup tick") {
  Rng rng(7);
  ControllerConfig cfg;
  ControllerState st;
  auto t = single_group_tree(6, GroupCaps{}, rng);
  int calls = 0;
  std::vector<Embedding> flat(6, emb({0.0, 0.0}, {0.0, 0.0}));
  auto embed = [&] {
    ++calls;
    return flat;
  };
  for (int e = 0; e < 7; ++e) CHECK_FALSE(regroup_tick(t, st, cfg, embed, e));
  CHECK(calls == 0);
  CHECK(regroup_tick(t, st, cfg, embed, 7));
  CHECK(calls == 1);
  CHECK(t.local_count() == 1);
  CHECK(st.episodes_since_regroup == 0);
  // D-bar stays 0 < delta, so the period grows: ceil(8 e^0.06) = 9.
  CHECK(st.period == 9);

  ControllerConfig fixed = cfg;
  fixed.adaptive_period = false;
  ControllerState f;
  f.period = 8;
  for (int e = 0; e < 8; ++e) regroup_tick(t, f, fixed, embed, e);
  CHECK(f.period == 8);
}

TEST_CASE("randomized ticks keep the tree valid") {
  Rng rng(8);
  GroupCaps caps{2, 5, 2, 4};
  GroupTree t(12, caps);
  const auto s = tiny();
  const int g1 = t.add_global(make_trunk(s, rng));
  const int g2 = t.add_global(make_trunk(s, rng));
  t.add_local(g1, HeadNet::make(s, rng), {0, 1, 2, 3, 4, 5});
  t.add_local(g2, HeadNet::make(s, rng), {6, 7, 8, 9, 10, 11});
  ControllerConfig cfg;
  cfg.merge_threshold = 0.5;
  ControllerState st;
  std::uniform_real_distribution<double> spread(0.0, 4.0);
  for (int e = 0; e < 1000; ++e) {
    const double sp = spread(rng);
    regroup_tick(t, st, cfg, [&] {
      std::vector<Embedding> z;
      for (int i = 0; i < 12; ++i) z.push_back(random_emb(rng, 3, sp));
      return z;
    }, e);
    t.check_invariants();
    CHECK(t.local_count() <= caps.max_local);
    CHECK(t.global_count() == 2);
    CHECK(st.period >= 1);
    CHECK(st.period <= 64);
    CHECK(t.head_parameter_count() <= caps.max_local * HeadNet::make(s, rng).parameter_count());
  }
}
