#include <doctest.h>

#include <algorithm>

#include "spar/diagnostics.hpp"
#include "spar/simgen.hpp"
#include "support.hpp"

using namespace spar;

TEST_CASE("morans_i: checkerboard on a 2x2 rook grid is exactly -1") {
  const ArealMap map = make_lattice_map(2);
  Eigen::VectorXd x(4);
  x << 1, -1, -1, 1;
  CHECK(morans_i(x, map.neighbors) == doctest::Approx(-1.0).epsilon(1e-14));
}

TEST_CASE("morans_i: constant input rejected") {
  const ArealMap map = make_lattice_map(2);
  CHECK_THROWS_AS(morans_i(Eigen::VectorXd::Ones(4), map.neighbors), std::invalid_argument);
}

TEST_CASE("morans_i: affine invariance") {
  auto eng = rng::make_engine(61, 0);
  const ArealMap map = make_lattice_map(4);
  Eigen::VectorXd x(16);
  for (int k = 0; k < 16; ++k) x(k) = rng::normal(eng);
  const double base = morans_i(x, map.neighbors);
  CHECK(morans_i((3.7 * x).eval(), map.neighbors) == doctest::Approx(base).epsilon(1e-12));
  CHECK(morans_i((x.array() + 11.0).matrix().eval(), map.neighbors) ==
        doctest::Approx(base).epsilon(1e-12));
  CHECK(morans_i((-2.0 * x).eval(), map.neighbors) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("morans_i: sparse traversal equals the dense double-sum oracle") {
  auto eng = rng::make_engine(67, 0);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 2 + rng::uniform_int(eng, 19);
    const auto nb = testsup::random_connected_graph(n, eng);
    Eigen::VectorXd x(n);
    for (int k = 0; k < n; ++k) x(k) = rng::normal(eng);
    const double sparse_i = morans_i(x, nb);
    const double dense_i = testsup::moran_dense_oracle(x, dense_adjacency(nb));
    CHECK(sparse_i == doctest::Approx(dense_i).epsilon(1e-12));
  }
}

TEST_CASE("moran_permutation_test: add-one rule with a single permutation") {
  auto eng = rng::make_engine(71, 0);
  const ArealMap map = make_lattice_map(3);
  Eigen::VectorXd x(9);
  for (int k = 0; k < 9; ++k) x(k) = rng::normal(eng);
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const MoranResult r = moran_permutation_test(x, map.neighbors, 1, seed);
    CHECK((r.p_value == doctest::Approx(0.5) || r.p_value == doctest::Approx(1.0)));
  }
}

TEST_CASE("moran_permutation_test: strongly clustered field is detected") {
  const ArealMap map = make_lattice_map(10);
  const Eigen::VectorXd field = gen_residual_field(map, 0.99, 5);
  // smooth surrogate, strong positive autocorrelation
  Eigen::VectorXd x(100);
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 10; ++j) x(i * 10 + j) = i + field(i * 10 + j);
  const MoranResult r = moran_permutation_test(x, map.neighbors, 10000, 9);
  CHECK(r.p_value <= 0.001);
  CHECK(r.i_stat > 0.2);
}

TEST_CASE("moran_permutation_test: deterministic and thread-count independent") {
  auto eng = rng::make_engine(73, 0);
  const ArealMap map = make_lattice_map(5);
  Eigen::VectorXd x(25);
  for (int k = 0; k < 25; ++k) x(k) = rng::normal(eng);
  const MoranResult a = moran_permutation_test(x, map.neighbors, 2000, 42, false, 2);
  const MoranResult b = moran_permutation_test(x, map.neighbors, 2000, 42, false, 1);
  const MoranResult c = moran_permutation_test_reference(x, map.neighbors, 2000, 42, false);
  CHECK(a.p_value == b.p_value);
  CHECK(a.p_value == c.p_value);
  CHECK(a.i_stat == c.i_stat);
}

TEST_CASE("moran_permutation_test: p-values invariant to consistent relabeling") {
  auto eng = rng::make_engine(79, 0);
  const int n = 12;
  const auto nb = testsup::random_connected_graph(n, eng);
  Eigen::VectorXd x(n);
  for (int k = 0; k < n; ++k) x(k) = rng::normal(eng);

  // relabel units by a fixed permutation
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  rng::shuffle(eng, perm);
  std::vector<std::pair<int, int>> edges;
  for (int k = 0; k < n; ++k)
    for (int j : nb[k])
      if (k < j) edges.emplace_back(perm[k], perm[j]);
  const auto nb2 = build_adjacency(edges, n);
  Eigen::VectorXd x2(n);
  for (int k = 0; k < n; ++k) x2(perm[k]) = x(k);

  CHECK(morans_i(x, nb) == doctest::Approx(morans_i(x2, nb2)).epsilon(1e-12));
}

TEST_CASE("moran_permutation_test: calibrated on iid data" * doctest::timeout(120)) {
  // empirical p-values approximately uniform: KS check at the 1% level
  const ArealMap map = make_lattice_map(5);
  const int reps = 200;
  std::vector<double> pvals;
  for (int r = 0; r < reps; ++r) {
    auto eng = rng::make_engine(1000 + r, 0);
    Eigen::VectorXd x(25);
    for (int k = 0; k < 25; ++k) x(k) = rng::normal(eng);
    pvals.push_back(moran_permutation_test(x, map.neighbors, 400, 77 + r).p_value);
  }
  std::sort(pvals.begin(), pvals.end());
  double ks = 0.0;
  for (int i = 0; i < reps; ++i) {
    const double u = pvals[i];
    ks = std::max(ks, std::abs((i + 1.0) / reps - u));
    ks = std::max(ks, std::abs(u - static_cast<double>(i) / reps));
  }
  // 1% critical value 1.63 / sqrt(n)
  CHECK(ks < 1.63 / std::sqrt(static_cast<double>(reps)));
}

TEST_CASE("erf_accuracy closed forms") {
  Eigen::VectorXd g(4);
  g << 0.0, 0.1, 0.2, 0.3;
  const ErfAccuracy perfect = erf_accuracy(g, g, g, g);
  CHECK(perfect.bias == 0.0);
  CHECK(perfect.rmse == 0.0);
  CHECK(perfect.coverage == 100.0);
  CHECK(perfect.miw == 0.0);

  const Eigen::VectorXd shifted = g.array() + 0.1;
  const ErfAccuracy sh = erf_accuracy(g, shifted, shifted, shifted);
  CHECK(sh.bias == doctest::Approx(0.1));
  CHECK(sh.rmse == doctest::Approx(0.1));

  const Eigen::VectorXd lo = g.array() - 1.0;
  const Eigen::VectorXd hi = g.array() + 1.0;
  const ErfAccuracy wide = erf_accuracy(g, shifted, lo, hi);
  CHECK(wide.coverage == 100.0);
  CHECK(wide.miw == doctest::Approx(2.0));

  CHECK_THROWS_AS(erf_accuracy(g, shifted, hi, lo), std::invalid_argument);
  CHECK_THROWS_AS(erf_accuracy(g, Eigen::VectorXd::Zero(3), lo, hi), std::invalid_argument);
}

TEST_CASE("erf_accuracy: rmse^2 = bias^2 + population variance of the errors") {
  auto eng = rng::make_engine(83, 0);
  Eigen::VectorXd g(30), ghat(30);
  for (int k = 0; k < 30; ++k) {
    g(k) = rng::normal(eng);
    ghat(k) = g(k) + 0.2 * rng::normal(eng) + 0.05;
  }
  const ErfAccuracy acc = erf_accuracy(g, ghat, ghat, ghat);
  const Eigen::VectorXd err = ghat - g;
  const double popvar = (err.array() - err.mean()).square().sum() / 30.0;
  CHECK(acc.rmse * acc.rmse ==
        doctest::Approx(acc.bias * acc.bias + popvar).epsilon(1e-12));
  CHECK(acc.rmse >= std::abs(acc.bias));
}

TEST_CASE("pearson_residuals") {
  Eigen::VectorXd log_risk(2);
  log_risk << 0.0, std::log(2.0);
  const Eigen::VectorXd r = pearson_residuals({4, 8}, {4.0, 2.0}, log_risk);
  CHECK(r(0) == doctest::Approx(0.0));
  CHECK(r(1) == doctest::Approx((8.0 - 4.0) / 2.0));
}
