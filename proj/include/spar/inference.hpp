#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "spar/areal.hpp"
#include "spar/erf.hpp"
#include "spar/spatial_priors.hpp"

namespace spar {

enum class ConfounderMode { oob_offset, linear };

struct ModelSpec {
  ErfSpec erf;
  Eigen::VectorXd mhat;    // OOB confounder estimates (oob_offset mode)
  double sigma2_m = 0.0;   // Berkson error variance for m; 0 fixes m at mhat
  ScaledIcarPrecision precision;
  Bym2Hyperparams hyper;
  ConfounderMode confounder_mode = ConfounderMode::oob_offset;
  double beta0_prior_variance = 1e5;
  double delta_prior_variance = 1e5;

  // engine options: fixed hyperparameters and the independent-effects-only
  // model used for self-consistency checks
  std::optional<double> fix_tau_phi;
  std::optional<double> fix_rho;
  bool include_icar = true;

  void validate(const Dataset& data) const;
};

// Sampling state. Hyperparameters live on unconstrained scales; u is absent
// when the ICAR block is disabled, m when sigma2_m == 0, x_latent unless the
// Berkson ERF has sigma2_x > 0.
struct ParameterState {
  double beta0 = 0.0;
  Eigen::VectorXd erf_params;  // [alpha] or RW2 coefficients
  Eigen::VectorXd delta;       // linear confounder coefficients
  Eigen::VectorXd m;           // latent confounder component
  Eigen::VectorXd x_latent;    // latent exposure (Berkson)
  Eigen::VectorXd u, v;
  double log_tau_phi = 0.0;
  double logit_rho = 0.0;
  double log_tau_gamma = 0.0;  // RW2 smoothing precision
};

ParameterState make_initial_state(const Dataset& data, const ModelSpec& spec);

// Joint log density over the sampling coordinates: Poisson log likelihood,
// all log priors, and the Jacobians of the log/logit hyperparameter
// transforms. Returns -inf on non-finite input.
double log_posterior(const ParameterState& state, const Dataset& data, const ModelSpec& spec);

// analytic gradient with respect to every continuous sampling coordinate
ParameterState log_posterior_grad(const ParameterState& state, const Dataset& data,
                                  const ModelSpec& spec);

// flattened view of the active sampling coordinates (for finite-difference
// checks); order matches active_coordinate_names
Eigen::VectorXd flatten_state(const ParameterState& state, const ModelSpec& spec);
ParameterState unflatten_state(const Eigen::VectorXd& w, const ParameterState& like,
                               const ModelSpec& spec);
std::vector<std::string> active_coordinate_names(const ParameterState& state,
                                                 const ModelSpec& spec);

struct SamplerConfig {
  int n_samples = 5000;  // post-burn-in sweeps per chain
  int burn_in = 5000;
  int thin = 200;        // keep every thin-th sweep
  int n_chains = 4;
  std::uint64_t seed = 0;
  int n_threads = 0;     // chain-level parallelism

  int retained_per_chain() const { return n_samples / thin; }
  int retained_total() const { return n_chains * retained_per_chain(); }
};

struct PosteriorSamples {
  int n_samples = 0;  // retained draws over all chains
  std::vector<double> beta0;
  Eigen::MatrixXd erf_params;  // S x (1 or n_bins)
  Eigen::MatrixXd delta;       // S x p (linear mode)
  Eigen::MatrixXd latent_m;    // S x K when sigma2_m > 0
  Eigen::MatrixXd latent_x;    // S x K for the Berkson ERF
  Eigen::MatrixXd u, v;        // u empty when the ICAR block is off
  Eigen::MatrixXd phi;         // S x K
  std::vector<double> tau_phi, rho, tau_gamma;
  Eigen::MatrixXd g_plus_phi;  // S x K

  double max_rhat = 1.0;
  std::vector<std::string> warnings;
  double accept_w = 0.0, accept_x = 0.0, accept_tau = 0.0, accept_rho = 0.0;
};

// Metropolis-within-Gibbs sampler: the latent Gaussian block is proposed
// jointly from a sparse-precision Gaussian approximation built from the
// likelihood gradient and curvature at the current state; hyperparameters
// move by adaptive random walks on transformed scales, with companion
// rescaling moves that keep phi fixed (a centered/non-centered interweave);
// adaptation is frozen after burn-in. Sum-to-zero constraints (u per
// component, RW2 coefficients) are enforced by conditioning each block
// proposal on the constraint. Deterministic given the seed; chains run
// concurrently and merge by chain index.
PosteriorSamples sample_posterior(const Dataset& data, const ModelSpec& spec,
                                  const SamplerConfig& config);

// serial reference for the parallel chain loop
PosteriorSamples sample_posterior_reference(const Dataset& data, const ModelSpec& spec,
                                            const SamplerConfig& config);

// S x K matrix of linear predictors eta = beta0 + g + m + phi per draw
Eigen::MatrixXd linear_predictors(const PosteriorSamples& samples, const Dataset& data,
                                  const ModelSpec& spec);

struct WaicResult {
  double waic = 0.0;
  double p_w = 0.0;
};

// waic = -2 sum_k [ ln mean_s lik_ks - var_s ln lik_ks ],  p_w = sum_k var_s
WaicResult waic(const PosteriorSamples& samples, const Dataset& data, const ModelSpec& spec);

struct DevianceSummary {
  double d_bar = 0.0;      // posterior mean deviance
  double d_at_mean = 0.0;  // deviance at posterior-mean parameters
};

DevianceSummary deviance_summaries(const PosteriorSamples& samples, const Dataset& data,
                                   const ModelSpec& spec);

// split potential-scale-reduction over per-chain scalar series
double split_rhat(const std::vector<std::vector<double>>& chains);

// Monte Carlo standard errors by batch means (for oracle comparisons)
double mcse_mean(const std::vector<double>& draws, int n_batches = 30);
double mcse_sd(const std::vector<double>& draws, int n_batches = 30);

}  // namespace spar
