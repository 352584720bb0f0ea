#include "spar/spar.hpp"

#include <cmath>
#include <stdexcept>

#include "spar/rng.hpp"
#include "spar/spatial_priors.hpp"
#include "spar/stats.hpp"

namespace spar {

namespace {

// Seed stream tags for the fitting stages. Streams are shared across
// iterations on purpose: with common random numbers the Step1/Step2
// alternation is a deterministic map whose iterates contract to a fixed
// point, so the ERF stopping rule measures systematic change rather than
// sampler noise (the reference implementation's deterministic approximation
// has the same property).
constexpr std::uint64_t kTuneStream = 1000;
constexpr std::uint64_t kForestStream = 2000;
constexpr std::uint64_t kSamplerStream = 3000;
constexpr std::uint64_t kMoranStream = 4000;

// ERF draws evaluated at arbitrary exposure values; the Berkson ERF is
// evaluated at the observed values (the curve itself, not the latent
// decomposition used for the adjusted responses)
Eigen::MatrixXd erf_draws_at(const PosteriorSamples& post, const ErfSpec& erf,
                             const Rw2Basis* rw2, const Eigen::VectorXd& x) {
  Eigen::MatrixXd g(post.n_samples, x.size());
  if (erf.kind == ErfKind::pspline_rw2) {
    for (int s = 0; s < post.n_samples; ++s)
      for (Eigen::Index k = 0; k < x.size(); ++k)
        g(s, k) = post.erf_params(s, rw2->assign(x(k)));
  } else {
    for (int s = 0; s < post.n_samples; ++s) g.row(s) = post.erf_params(s, 0) * x.transpose();
  }
  return g;
}

struct FinalizeInputs {
  const Dataset* data;
  const NeighborLists* neighbors;
  const ErfSpec* erf;
  const SparConfig* config;
  const ModelSpec* spec;
  const Rw2Basis* rw2;
};

void finalize_result(FitResult& result, PosteriorSamples&& post, const FinalizeInputs& in) {
  const Dataset& data = *in.data;
  const int K = data.n_units();
  const Eigen::VectorXd x = data.exposures.col(in.erf->exposure_index);

  result.g_draws_at_obs = erf_draws_at(post, *in.erf, in.rw2, x);
  result.g_mean_at_obs = result.g_draws_at_obs.colwise().mean();

  // reporting grid over the observed exposure range
  const int gs = in.config->erf_grid_size;
  Eigen::VectorXd grid(gs);
  const double lo = x.minCoeff(), hi = x.maxCoeff();
  for (int j = 0; j < gs; ++j)
    grid(j) = lo + (hi - lo) * static_cast<double>(j) / static_cast<double>(gs - 1);
  result.erf_posterior = summarize_erf_draws(grid, erf_draws_at(post, *in.erf, in.rw2, grid));

  result.phi_mean.resize(K);
  result.phi_lower95.resize(K);
  result.phi_upper95.resize(K);
  for (int k = 0; k < K; ++k) {
    std::vector<double> col(post.phi.col(k).data(), post.phi.col(k).data() + post.n_samples);
    result.phi_mean(k) = stats::mean(col);
    result.phi_lower95(k) = stats::quantile(col, 0.025);
    result.phi_upper95(k) = stats::quantile(col, 0.975);
  }

  const double beta0_bar = stats::mean(post.beta0);
  result.fitted_log_risk =
      beta0_bar + result.g_mean_at_obs.array() + result.mhat_final.m_hat.array() +
      result.phi_mean.array();

  const DevianceSummary dev = deviance_summaries(post, data, *in.spec);
  result.metrics.d_bar = dev.d_bar;
  // deviance at the fitted log risk, whose confounder part is the final
  // out-of-bag estimate rather than the latent posterior mean
  double ll = 0.0;
  for (int k = 0; k < K; ++k) {
    const double log_mu = std::log(data.e[k]) + result.fitted_log_risk(k);
    ll += static_cast<double>(data.y[k]) * log_mu - std::exp(log_mu) -
          std::lgamma(static_cast<double>(data.y[k]) + 1.0);
  }
  result.metrics.d_at_mean = -2.0 * ll;

  const WaicResult w = waic(post, data, *in.spec);
  result.metrics.waic = w.waic;
  result.metrics.p_w = w.p_w;

  const Eigen::VectorXd resid = pearson_residuals(data.y, data.e, result.fitted_log_risk);
  const MoranResult moran = moran_permutation_test(
      resid, *in.neighbors, 10000, rng::stream_seed(in.config->seed, kMoranStream), false,
      in.config->n_threads);
  result.metrics.moran_i = moran.i_stat;
  result.metrics.moran_p = moran.p_value;

  result.warnings.insert(result.warnings.end(), post.warnings.begin(), post.warnings.end());
  result.samples = std::move(post);
}

NeighborLists prepare_neighbors(const ArealMap& map) {
  map.validate();
  bool islands = false;
  for (const auto& nb : map.neighbors)
    if (nb.empty()) islands = true;
  if (!islands) return map.neighbors;
  if (!map.has_centroids())
    throw std::invalid_argument("map has isolated units and no centroids to repair them with");
  return repair_islands(map.neighbors, map.centroids);
}

}  // namespace

void SparConfig::validate() const {
  if (!(epsilon > 0.0)) throw std::invalid_argument("SparConfig: epsilon must be positive");
  if (q_samples < 1) throw std::invalid_argument("SparConfig: q_samples must be >= 1");
  if (trees_per_sample < 1)
    throw std::invalid_argument("SparConfig: trees_per_sample must be >= 1");
  if (max_iterations < 1) throw std::invalid_argument("SparConfig: max_iterations must be >= 1");
  if (zero_count_offset < 0.0)
    throw std::invalid_argument("SparConfig: zero_count_offset must be nonnegative");
  hyper.validate();
}

Eigen::MatrixXd adjusted_responses(const Dataset& data, const Eigen::MatrixXd& g_plus_phi,
                                   double zero_count_offset) {
  const int K = data.n_units();
  if (g_plus_phi.cols() != K)
    throw std::invalid_argument("adjusted_responses: samples must have K columns");
  Eigen::MatrixXd r(g_plus_phi.rows(), K);
  for (int k = 0; k < K; ++k) {
    const double yk = static_cast<double>(data.y[k]) + (data.y[k] == 0 ? zero_count_offset : 0.0);
    const double log_smr = std::log(yk / data.e[k]);
    for (int q = 0; q < g_plus_phi.rows(); ++q) r(q, k) = log_smr - g_plus_phi(q, k);
  }
  return r;
}

FitResult run_spar(const Dataset& data, const ArealMap& map, const ErfSpec& erf,
                   const SparConfig& config) {
  config.validate();
  data.validate();
  erf.validate();
  if (data.n_units() < 10) throw std::invalid_argument("run_spar: need at least 10 units");
  if (data.n_units() != map.n_units)
    throw std::invalid_argument("run_spar: dataset and map disagree on the unit count");
  if (config.sampler.retained_total() < config.q_samples)
    throw std::invalid_argument("run_spar: sampler retains fewer draws than q_samples");

  const NeighborLists neighbors = prepare_neighbors(map);
  const ScaledIcarPrecision precision = scale_icar(neighbors);
  const int K = data.n_units();
  const Eigen::MatrixXd& z = data.confounders;
  const Eigen::VectorXd x = data.exposures.col(erf.exposure_index);

  Rw2Basis rw2;
  if (erf.kind == ErfKind::pspline_rw2) rw2 = build_rw2_basis(x, erf.n_bins);

  const auto grid =
      config.tuning_grid.empty() ? default_tuning_grid(static_cast<int>(z.cols()))
                                 : config.tuning_grid;

  FitResult result;
  result.variant = "spar";

  Eigen::MatrixXd g_plus_phi = Eigen::MatrixXd::Zero(config.q_samples, K);
  Eigen::VectorXd g_prev = Eigen::VectorXd::Zero(K);
  PosteriorSamples post;
  ModelSpec spec;

  for (int iter = 1; iter <= config.max_iterations; ++iter) {
    // Step 1: forests on the adjusted responses
    const Eigen::MatrixXd r = adjusted_responses(data, g_plus_phi, config.zero_count_offset);
    IterationRecord rec;
    rec.iteration = iter;
    rec.step1_input_hash = stats::hash_matrix(g_plus_phi);

    const Eigen::VectorXd rbar = r.colwise().mean();
    const ForestParams tuned =
        tune_forest(z, rbar, grid, config.tuning_trees,
                    rng::stream_seed(config.seed, kTuneStream), config.n_threads);
    rec.mtry = tuned.mtry;
    rec.minnode = tuned.minnode;

    MultisampleForest ms = fit_multisample_forest(
        z, r, config.trees_per_sample, tuned.mtry, tuned.minnode,
        rng::stream_seed(config.seed, kForestStream), config.n_threads);
    rec.sigma2_m = ms.estimate.sigma2_m;

    // Step 2: Bayesian spatial model with the Berkson m-component
    spec = ModelSpec{};
    spec.erf = erf;
    spec.mhat = ms.estimate.m_hat;
    spec.sigma2_m = ms.estimate.sigma2_m;
    spec.precision = precision;
    spec.hyper = config.hyper;
    spec.confounder_mode = ConfounderMode::oob_offset;

    SamplerConfig scfg = config.sampler;
    scfg.seed = rng::stream_seed(config.seed, kSamplerStream);
    scfg.n_threads = config.n_threads;
    post = sample_posterior(data, spec, scfg);

    // export exactly q_samples evenly spaced draws for the next Step 1
    const int S = post.n_samples;
    g_plus_phi.resize(config.q_samples, K);
    for (int j = 0; j < config.q_samples; ++j) {
      const int idx = static_cast<int>((static_cast<long long>(j + 1) * S) / config.q_samples) - 1;
      g_plus_phi.row(j) = post.g_plus_phi.row(idx);
    }
    rec.step2_output_hash = stats::hash_matrix(g_plus_phi);

    const Eigen::VectorXd g_now =
        erf_draws_at(post, erf, &rw2, x).colwise().mean().transpose();
    rec.erf_diff = (g_now - g_prev).cwiseAbs().sum() / static_cast<double>(K);
    result.erf_trace.push_back(rec.erf_diff);
    result.records.push_back(rec);
    result.iterations = iter;
    result.mhat_final = ms.estimate;
    g_prev = g_now;

    if (rec.erf_diff < config.epsilon) {
      result.converged = true;
      break;
    }
  }

  finalize_result(result, std::move(post),
                  {&data, &neighbors, &erf, &config, &spec, &rw2});
  return result;
}

FitResult run_one_shot(const Dataset& data, const ArealMap& map, const ErfSpec& erf,
                       const SparConfig& config) {
  config.validate();
  data.validate();
  erf.validate();
  if (data.n_units() < 10) throw std::invalid_argument("run_one_shot: need at least 10 units");
  if (data.n_units() != map.n_units)
    throw std::invalid_argument("run_one_shot: dataset and map disagree on the unit count");

  const NeighborLists neighbors = prepare_neighbors(map);
  const ScaledIcarPrecision precision = scale_icar(neighbors);
  const int K = data.n_units();
  const Eigen::MatrixXd& z = data.confounders;
  const Eigen::VectorXd x = data.exposures.col(erf.exposure_index);

  Rw2Basis rw2;
  if (erf.kind == ErfKind::pspline_rw2) rw2 = build_rw2_basis(x, erf.n_bins);

  FitResult result;
  result.variant = "spar1";

  const Eigen::MatrixXd zero_samples = Eigen::MatrixXd::Zero(1, K);
  const Eigen::MatrixXd r = adjusted_responses(data, zero_samples, config.zero_count_offset);

  IterationRecord rec;
  rec.iteration = 1;
  rec.step1_input_hash = stats::hash_matrix(zero_samples);

  const auto grid =
      config.tuning_grid.empty() ? default_tuning_grid(static_cast<int>(z.cols()))
                                 : config.tuning_grid;
  const ForestParams tuned =
      tune_forest(z, r.row(0).transpose(), grid, config.tuning_trees,
                  rng::stream_seed(config.seed, kTuneStream), config.n_threads);
  rec.mtry = tuned.mtry;
  rec.minnode = tuned.minnode;

  // one forest sized like the full algorithm's combined ensemble
  MultisampleForest ms = fit_multisample_forest(
      z, r, config.trees_per_sample * config.q_samples, tuned.mtry, tuned.minnode,
      rng::stream_seed(config.seed, kForestStream), config.n_threads);
  rec.sigma2_m = ms.estimate.sigma2_m;

  ModelSpec spec;
  spec.erf = erf;
  spec.mhat = ms.estimate.m_hat;
  spec.sigma2_m = ms.estimate.sigma2_m;
  spec.precision = precision;
  spec.hyper = config.hyper;
  spec.confounder_mode = ConfounderMode::oob_offset;

  SamplerConfig scfg = config.sampler;
  scfg.seed = rng::stream_seed(config.seed, kSamplerStream);
  scfg.n_threads = config.n_threads;
  PosteriorSamples post = sample_posterior(data, spec, scfg);
  rec.step2_output_hash = stats::hash_matrix(post.g_plus_phi);

  const Eigen::VectorXd g_now = erf_draws_at(post, erf, &rw2, x).colwise().mean().transpose();
  rec.erf_diff = g_now.cwiseAbs().sum() / static_cast<double>(K);
  result.erf_trace.push_back(rec.erf_diff);
  result.records.push_back(rec);
  result.iterations = 1;
  result.converged = rec.erf_diff < config.epsilon;
  result.mhat_final = ms.estimate;

  finalize_result(result, std::move(post), {&data, &neighbors, &erf, &config, &spec, &rw2});
  return result;
}

FitResult fit_spar_forest_erf(const Dataset& data, const ArealMap& map, const ErfSpec& erf,
                              const SparConfig& config) {
  return config.mode == SparConfig::Mode::one_shot ? run_one_shot(data, map, erf, config)
                                                   : run_spar(data, map, erf, config);
}

FitResult run_glmm_baseline(const Dataset& data, const ArealMap& map, const ErfSpec& erf,
                            const SparConfig& config) {
  config.validate();
  data.validate();
  erf.validate();
  if (data.n_units() < 2) throw std::invalid_argument("run_glmm_baseline: need at least 2 units");
  if (data.n_units() != map.n_units)
    throw std::invalid_argument("run_glmm_baseline: dataset and map disagree on the unit count");

  const NeighborLists neighbors = prepare_neighbors(map);
  const ScaledIcarPrecision precision = scale_icar(neighbors);
  const int K = data.n_units();
  const Eigen::VectorXd x = data.exposures.col(erf.exposure_index);

  Rw2Basis rw2;
  if (erf.kind == ErfKind::pspline_rw2) rw2 = build_rw2_basis(x, erf.n_bins);

  FitResult result;
  result.variant = "glmm";

  ModelSpec spec;
  spec.erf = erf;
  spec.mhat = Eigen::VectorXd::Zero(K);
  spec.sigma2_m = 0.0;
  spec.precision = precision;
  spec.hyper = config.hyper;
  spec.confounder_mode = ConfounderMode::linear;

  SamplerConfig scfg = config.sampler;
  scfg.seed = rng::stream_seed(config.seed, kSamplerStream);
  scfg.n_threads = config.n_threads;
  PosteriorSamples post = sample_posterior(data, spec, scfg);

  IterationRecord rec;
  rec.iteration = 1;
  rec.step2_output_hash = stats::hash_matrix(post.g_plus_phi);
  result.records.push_back(rec);
  result.erf_trace.push_back(0.0);
  result.iterations = 1;
  result.converged = true;

  // the linear confounder fit plays the role of m-hat in the outputs
  Eigen::VectorXd m_hat = Eigen::VectorXd::Zero(K);
  if (post.delta.cols() > 0) {
    const Eigen::VectorXd delta_bar = post.delta.colwise().mean().transpose();
    m_hat = data.confounders * delta_bar;
  }
  result.mhat_final.m_hat = m_hat;
  result.mhat_final.sigma2_m = 0.0;
  result.mhat_final.n_oob_trees = Eigen::VectorXi::Zero(K);

  finalize_result(result, std::move(post), {&data, &neighbors, &erf, &config, &spec, &rw2});
  return result;
}

}  // namespace spar
