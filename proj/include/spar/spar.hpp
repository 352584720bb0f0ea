#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "spar/areal.hpp"
#include "spar/diagnostics.hpp"
#include "spar/erf.hpp"
#include "spar/forest.hpp"
#include "spar/inference.hpp"

namespace spar {

struct SparConfig {
  double epsilon = 0.0005;       // stopping threshold on the mean absolute ERF change
  int q_samples = 100;           // posterior samples propagated into Step 1
  int trees_per_sample = 10;
  int max_iterations = 30;
  double zero_count_offset = 0.5;  // half-count correction for ln(0)
  enum class Mode { full, one_shot };
  Mode mode = Mode::full;
  std::uint64_t seed = 0;

  SamplerConfig sampler;  // per-Step-2 run; seed is derived per iteration
  Bym2Hyperparams hyper;
  int tuning_trees = 500;
  std::vector<std::pair<int, int>> tuning_grid;  // empty -> default grid
  int erf_grid_size = 100;
  int n_threads = 0;

  void validate() const;
};

struct IterationRecord {
  int iteration = 0;
  double erf_diff = 0.0;
  std::uint64_t step1_input_hash = 0;   // g+phi draws consumed by Step 1
  std::uint64_t step2_output_hash = 0;  // g+phi draws exported by Step 2
  int mtry = 0, minnode = 0;
  double sigma2_m = 0.0;
};

struct FitMetrics {
  double d_bar = 0.0;
  double d_at_mean = 0.0;
  double waic = 0.0;
  double p_w = 0.0;
  double moran_i = 0.0;
  double moran_p = 1.0;
};

struct FitResult {
  std::string variant;  // spar | spar1 | glmm
  ErfPosterior erf_posterior;
  Eigen::VectorXd phi_mean, phi_lower95, phi_upper95;
  OobEstimate mhat_final;
  int iterations = 0;
  std::vector<double> erf_trace;
  std::vector<IterationRecord> records;
  FitMetrics metrics;
  bool converged = false;
  Eigen::VectorXd fitted_log_risk;   // posterior-mean beta0 + g + phi plus final m-hat
  Eigen::VectorXd g_mean_at_obs;
  Eigen::MatrixXd g_draws_at_obs;    // retained draws of g at observed exposures
  PosteriorSamples samples;          // final Step-2 posterior
  std::vector<std::string> warnings;
};

// R_qk = ln((y_k + delta_k) / e_k) - (g + phi)_qk with delta_k =
// zero_count_offset when y_k = 0 and 0 otherwise
Eigen::MatrixXd adjusted_responses(const Dataset& data, const Eigen::MatrixXd& g_plus_phi,
                                   double zero_count_offset);

FitResult run_spar(const Dataset& data, const ArealMap& map, const ErfSpec& erf,
                   const SparConfig& config);

// one-pass variant: a single tuned forest (no per-sample ensemble) and one
// Bayesian fit
FitResult run_one_shot(const Dataset& data, const ArealMap& map, const ErfSpec& erf,
                       const SparConfig& config);

// linear confounder-effects baseline: m = z' delta, no forest
FitResult run_glmm_baseline(const Dataset& data, const ArealMap& map, const ErfSpec& erf,
                            const SparConfig& config);

// dispatches on config.mode
FitResult fit_spar_forest_erf(const Dataset& data, const ArealMap& map, const ErfSpec& erf,
                              const SparConfig& config);

}  // namespace spar
