#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace spar {

enum class ErfKind { linear, pspline_rw2, berkson_linear };

std::string erf_kind_name(ErfKind kind);
ErfKind parse_erf_kind(const std::string& name);  // linear | pspline | berkson

struct ErfSpec {
  ErfKind kind = ErfKind::linear;
  int exposure_index = 0;
  int n_bins = 50;                       // pspline only
  double sigma2_x = 0.0;                 // berkson only
  double prior_precision_alpha = 1e-5;   // N(0, 1e5) slope prior

  void validate() const;
};

inline Eigen::VectorXd eval_linear_erf(double alpha, const Eigen::VectorXd& x) {
  return alpha * x;
}

// Equal-width binning over the observed range with a second-order
// random-walk penalty D'D (rank n_bins - 2). Half-open bins; the maximum is
// closed into the last bin.
struct Rw2Basis {
  int n_bins = 0;
  double lo = 0.0, hi = 0.0, width = 0.0;
  std::vector<int> bin_of;        // per training row
  Eigen::MatrixXd second_diff;    // (n_bins-2) x n_bins
  Eigen::MatrixXd penalty;        // n_bins x n_bins

  int assign(double x) const;
  Eigen::VectorXd eval(const Eigen::VectorXd& coef, const Eigen::VectorXd& x) const;
};

Rw2Basis build_rw2_basis(const Eigen::VectorXd& x, int n_bins);

// Latent-model description for the Berkson measurement-error ERF:
// x_k ~ N(x_tilde_k, sigma2_x) with g = alpha * x_k. sigma2_x == 0 collapses
// exactly to the linear ERF.
struct BerksonContract {
  Eigen::VectorXd x_tilde;
  double sigma2_x = 0.0;
  bool collapses_to_linear = false;
};

BerksonContract berkson_linear_contract(const Eigen::VectorXd& x_tilde, double sigma2_x);

struct ErfPosterior {
  Eigen::VectorXd grid;
  Eigen::VectorXd mean, lower95, upper95;
  Eigen::MatrixXd samples;  // S x G draws of g on the grid
};

// pointwise mean and central 95% interval from draws of g on a grid
ErfPosterior summarize_erf_draws(const Eigen::VectorXd& grid, const Eigen::MatrixXd& draws);

struct RrSummary {
  double mean = 0.0, lower95 = 0.0, upper95 = 0.0;
};

// RR for a fixed exposure increment: per-sample exp(alpha * delta)
RrSummary rr_report(const std::vector<double>& alpha_samples, double delta);

// RR curve relative to the minimum observed exposure (the first grid point):
// per-sample exp(g(x) - g(grid[0])), summarized pointwise
ErfPosterior rr_relative_to_min(const ErfPosterior& erf);

}  // namespace spar
