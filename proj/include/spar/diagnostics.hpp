#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "spar/areal.hpp"

namespace spar {

// Global Moran's I via sparse edge traversal.
double morans_i(const Eigen::VectorXd& x, const NeighborLists& neighbors);

struct MoranResult {
  double i_stat = 0.0;
  double p_value = 1.0;
  int n_permutations = 0;
};

// Permutation test with the add-one rule. One-sided against positive
// autocorrelation by default; two_sided compares |I|. Deterministic given
// the seed regardless of thread count (per-permutation RNG streams,
// fixed-order count reduction).
MoranResult moran_permutation_test(const Eigen::VectorXd& x, const NeighborLists& neighbors,
                                   int n_permutations = 10000, std::uint64_t seed = 0,
                                   bool two_sided = false, int n_threads = 0);

// serial reference for the parallel kernel
MoranResult moran_permutation_test_reference(const Eigen::VectorXd& x,
                                             const NeighborLists& neighbors,
                                             int n_permutations = 10000, std::uint64_t seed = 0,
                                             bool two_sided = false);

struct ErfAccuracy {
  double bias = 0.0;
  double rmse = 0.0;
  double coverage = 0.0;  // percentage in [0,100]
  double miw = 0.0;
};

ErfAccuracy erf_accuracy(const Eigen::VectorXd& g_true, const Eigen::VectorXd& g_hat,
                         const Eigen::VectorXd& lower, const Eigen::VectorXd& upper);

// (y - mu) / sqrt(mu) with mu = e * exp(log_risk)
Eigen::VectorXd pearson_residuals(const std::vector<long long>& y, const std::vector<double>& e,
                                  const Eigen::VectorXd& log_risk);

}  // namespace spar
