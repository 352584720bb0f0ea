#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <vector>

#include "spar/areal.hpp"

namespace spar {

// Q = D - W for the intrinsic CAR model; symmetric, zero row sums.
Eigen::SparseMatrix<double> icar_precision(const NeighborLists& neighbors);

// per-unit component label plus member lists, in discovery order
struct Components {
  std::vector<int> label;                   // size K
  std::vector<std::vector<int>> members;    // size n_components
  int count() const { return static_cast<int>(members.size()); }
};

Components connected_components(const NeighborLists& neighbors);

struct ScaledIcarPrecision {
  Eigen::SparseMatrix<double> q_matrix;  // scaled; singleton diagonals carry the
                                         // unit-variance independence fallback
  double scale_factor = 1.0;
  Components components;

  int n_units() const { return static_cast<int>(q_matrix.rows()); }
};

// Marginal variances of the generalized inverse, computed per connected
// component under a sum-to-zero constraint. Dense eigendecomposition up to
// `eigen_cap` units per component, a dense solve on the sum-to-zero subspace
// above that. Singleton components get variance 1.
Eigen::VectorXd icar_marginal_variances(const Eigen::SparseMatrix<double>& q,
                                        const Components& components, int eigen_cap = 2000);

// Scale Q so the geometric mean of the generalized-inverse marginal
// variances equals one.
ScaledIcarPrecision scale_icar(const Eigen::SparseMatrix<double>& q,
                               const Components& components, int eigen_cap = 2000);
ScaledIcarPrecision scale_icar(const NeighborLists& neighbors, int eigen_cap = 2000);

struct Bym2Hyperparams {
  double tau_phi = 1.0;  // initial value for sampling
  double rho = 0.5;      // initial value for sampling
  double tau0 = 0.001;   // half-normal precision on the sd scale
  double pc_rho_mean = 0.0;  // prior on logit(rho)
  double pc_rho_sd = 1.0;

  void validate() const;
};

// phi = (1/sqrt(tau_phi)) * (sqrt(1-rho) v + sqrt(rho) u)
Eigen::VectorXd bym2_compose(const Eigen::VectorXd& v, const Eigen::VectorXd& u, double rho,
                             double tau_phi);

}  // namespace spar
