#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <cstdint>
#include <string>
#include <vector>

#include "spar/areal.hpp"
#include "spar/rng.hpp"

namespace spar {

enum class Prevalence { rare, common };
enum class ErfShape { linear, sigmoidal };
enum class Confounding { good, poor };
enum class ConfounderForm { nonlinear, linear };

struct SimScenario {
  Prevalence prevalence = Prevalence::common;
  ErfShape erf_shape = ErfShape::linear;
  Confounding confounding = Confounding::good;
  ConfounderForm confounder_form = ConfounderForm::nonlinear;
  double alpha = 0.2;
  double leroux_rho = 0.95;
  std::uint64_t seed = 0;
};

// Eight factorial scenarios plus the linear-confounder ninth one.
std::vector<std::string> scenario_names();
SimScenario parse_scenario(const std::string& name);  // throws listing valid names
std::string scenario_name(const SimScenario& scenario);

struct SimulatedDataset {
  Dataset dataset;
  Eigen::MatrixXd g_true;   // K x 2, per exposure
  Eigen::VectorXd m_true;
  Eigen::VectorXd phi_true;
  Eigen::VectorXd theta_true;
  double intercept = 0.0;
};

// L x L rook-adjacency lattice with unit-spaced centroids
ArealMap make_lattice_map(int side);

// --- building blocks -------------------------------------------------------

Eigen::MatrixXd exponential_covariance(const std::vector<std::array<double, 2>>& centroids,
                                       double range);
// spherical correlation, zero beyond `radius`
double spherical_kernel(double distance, double radius);
Eigen::MatrixXd spherical_covariance(const std::vector<std::array<double, 2>>& centroids,
                                     double radius);
double pairwise_distance_quantile(const std::vector<std::array<double, 2>>& centroids, double p);

Eigen::VectorXd mvn_sample_cov(const Eigen::MatrixXd& cov, rng::Engine& eng);
Eigen::VectorXd mvn_sample_sparse_precision(const Eigen::SparseMatrix<double>& precision,
                                            rng::Engine& eng);

Eigen::VectorXd minmax_rescale(const Eigen::VectorXd& x);

// x1 iid standard normal; x2 from an exponential-covariance Gaussian field
// whose range gives correlation 0.75 at the 5th percentile of pairwise
// centroid distances; both min-max rescaled to [0,1]
struct ExposurePair {
  Eigen::VectorXd x1, x2;
  Eigen::VectorXd x2_raw;  // before rescaling, for calibration checks
  double range = 0.0;
};
ExposurePair gen_exposures(const ArealMap& map, std::uint64_t seed);

// z1..z4 iid standard normal, z5..z8 spherical-correlation fields with
// radius 5; all columns min-max rescaled to [0,1]
Eigen::MatrixXd gen_confounders(const ArealMap& map, std::uint64_t seed);

Eigen::VectorXd m_true_fn(const Eigen::MatrixXd& z, ConfounderForm form);
Eigen::VectorXd g_true_fn(const Eigen::VectorXd& x, ErfShape shape, double alpha = 0.2);

// unscaled draw from the Leroux field: precision rho (D - W) + (1 - rho) I
Eigen::VectorXd gen_residual_field(const ArealMap& map, double leroux_rho, std::uint64_t seed);

SimulatedDataset generate(const SimScenario& scenario, const ArealMap& map);

}  // namespace spar
