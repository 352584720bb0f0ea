#include "spar/diagnostics.hpp"

#include <omp.h>

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "spar/rng.hpp"

namespace spar {

namespace {

double moran_from_centered(const Eigen::VectorXd& xc, const NeighborLists& neighbors,
                           double w_total, double ss) {
  double cross = 0.0;
  const int n = static_cast<int>(neighbors.size());
  for (int k = 0; k < n; ++k)
    for (int j : neighbors[k]) cross += xc(k) * xc(j);
  return (static_cast<double>(n) / w_total) * (cross / ss);
}

}  // namespace

double morans_i(const Eigen::VectorXd& x, const NeighborLists& neighbors) {
  const int n = static_cast<int>(neighbors.size());
  if (x.size() != n) throw std::invalid_argument("morans_i: length mismatch");
  if (n < 2) throw std::invalid_argument("morans_i: need at least 2 units");
  double w_total = 0.0;
  for (const auto& nb : neighbors) w_total += static_cast<double>(nb.size());
  if (w_total == 0.0) throw std::invalid_argument("morans_i: adjacency has no edges");
  const Eigen::VectorXd xc = x.array() - x.mean();
  const double ss = xc.squaredNorm();
  if (ss == 0.0) throw std::invalid_argument("morans_i: constant input");
  return moran_from_centered(xc, neighbors, w_total, ss);
}

namespace {

MoranResult moran_perm_impl(const Eigen::VectorXd& x, const NeighborLists& neighbors,
                            int n_permutations, std::uint64_t seed, bool two_sided,
                            int n_threads, bool parallel) {
  if (n_permutations < 1)
    throw std::invalid_argument("moran_permutation_test: n_permutations must be >= 1");
  const int n = static_cast<int>(neighbors.size());
  const double observed = morans_i(x, neighbors);
  double w_total = 0.0;
  for (const auto& nb : neighbors) w_total += static_cast<double>(nb.size());
  const Eigen::VectorXd xc = x.array() - x.mean();
  const double ss = xc.squaredNorm();

  std::vector<char> extreme(n_permutations, 0);
  const double ref = two_sided ? std::abs(observed) : observed;
  const int nt = parallel ? (n_threads > 0 ? n_threads : omp_get_max_threads()) : 1;

#pragma omp parallel num_threads(nt)
  {
    std::vector<int> perm(n);
    Eigen::VectorXd xp(n);
#pragma omp for schedule(static)
    for (int p = 0; p < n_permutations; ++p) {
      auto eng = rng::make_engine(seed, static_cast<std::uint64_t>(p));
      std::iota(perm.begin(), perm.end(), 0);
      rng::shuffle(eng, perm);
      for (int k = 0; k < n; ++k) xp(k) = xc(perm[k]);
      const double ip = moran_from_centered(xp, neighbors, w_total, ss);
      extreme[p] = (two_sided ? std::abs(ip) : ip) >= ref ? 1 : 0;
    }
  }

  long long count = 0;  // fixed-order reduction
  for (char c : extreme) count += c;

  MoranResult res;
  res.i_stat = observed;
  res.n_permutations = n_permutations;
  res.p_value = (1.0 + static_cast<double>(count)) / (1.0 + static_cast<double>(n_permutations));
  return res;
}

}  // namespace

MoranResult moran_permutation_test(const Eigen::VectorXd& x, const NeighborLists& neighbors,
                                   int n_permutations, std::uint64_t seed, bool two_sided,
                                   int n_threads) {
  return moran_perm_impl(x, neighbors, n_permutations, seed, two_sided, n_threads, true);
}

MoranResult moran_permutation_test_reference(const Eigen::VectorXd& x,
                                             const NeighborLists& neighbors, int n_permutations,
                                             std::uint64_t seed, bool two_sided) {
  return moran_perm_impl(x, neighbors, n_permutations, seed, two_sided, 1, false);
}

ErfAccuracy erf_accuracy(const Eigen::VectorXd& g_true, const Eigen::VectorXd& g_hat,
                         const Eigen::VectorXd& lower, const Eigen::VectorXd& upper) {
  const Eigen::Index n = g_true.size();
  if (g_hat.size() != n || lower.size() != n || upper.size() != n)
    throw std::invalid_argument("erf_accuracy: length mismatch");
  if (n == 0) throw std::invalid_argument("erf_accuracy: empty input");
  ErfAccuracy acc;
  double covered = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) {
    if (lower(k) > upper(k)) throw std::invalid_argument("erf_accuracy: lower > upper");
    const double d = g_hat(k) - g_true(k);
    acc.bias += d;
    acc.rmse += d * d;
    acc.miw += upper(k) - lower(k);
    if (lower(k) <= g_true(k) && g_true(k) <= upper(k)) covered += 1.0;
  }
  const double kn = static_cast<double>(n);
  acc.bias /= kn;
  acc.rmse = std::sqrt(acc.rmse / kn);
  acc.miw /= kn;
  acc.coverage = 100.0 * covered / kn;
  return acc;
}

Eigen::VectorXd pearson_residuals(const std::vector<long long>& y, const std::vector<double>& e,
                                  const Eigen::VectorXd& log_risk) {
  const Eigen::Index n = log_risk.size();
  if (static_cast<Eigen::Index>(y.size()) != n || static_cast<Eigen::Index>(e.size()) != n)
    throw std::invalid_argument("pearson_residuals: length mismatch");
  Eigen::VectorXd r(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const double mu = e[k] * std::exp(log_risk(k));
    r(k) = (static_cast<double>(y[k]) - mu) / std::sqrt(mu);
  }
  return r;
}

}  // namespace spar
