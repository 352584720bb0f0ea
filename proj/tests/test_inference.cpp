#include <doctest.h>

#include <cmath>

#include "spar/inference.hpp"
#include "spar/simgen.hpp"
#include "spar/stats.hpp"
#include "support.hpp"

using namespace spar;

namespace {

constexpr double kLogTwoPi = 1.8378770664093454836;

Dataset tiny_dataset(const std::vector<long long>& y, const std::vector<double>& e,
                     const Eigen::VectorXd& x, const Eigen::MatrixXd& z) {
  Dataset d;
  const int n = static_cast<int>(y.size());
  d.y = y;
  d.e = e;
  for (int k = 0; k < n; ++k) d.unit_ids.push_back("u" + std::to_string(k));
  d.exposures = x;
  d.exposure_names = {"x"};
  d.confounders = z;
  for (int j = 0; j < z.cols(); ++j) d.confounder_names.push_back("z" + std::to_string(j));
  d.validate();
  return d;
}

struct Problem {
  Dataset data;
  NeighborLists neighbors;
  ScaledIcarPrecision precision;
};

Problem make_problem(int n, std::uint64_t seed, int n_conf = 2) {
  auto eng = rng::make_engine(seed, 0);
  Problem p;
  p.neighbors = testsup::random_connected_graph(n, eng);
  p.precision = scale_icar(p.neighbors);
  Eigen::VectorXd x(n);
  Eigen::MatrixXd z(n, n_conf);
  std::vector<long long> y(n);
  std::vector<double> e(n);
  for (int k = 0; k < n; ++k) {
    x(k) = rng::uniform01(eng);
    for (int j = 0; j < n_conf; ++j) z(k, j) = rng::uniform01(eng);
    e[k] = rng::uniform(eng, 20.0, 60.0);
    const double theta = std::exp(0.3 * x(k) - 0.2 + 0.3 * rng::normal(eng));
    y[k] = rng::poisson(eng, e[k] * theta);
  }
  p.data = tiny_dataset(y, e, x, z);
  return p;
}

ModelSpec base_spec(const Problem& p, ErfKind kind, ConfounderMode mode, double sigma2_m,
                    double sigma2_x = 0.0) {
  ModelSpec spec;
  spec.erf.kind = kind;
  spec.erf.exposure_index = 0;
  spec.erf.n_bins = 8;
  spec.erf.sigma2_x = sigma2_x;
  spec.precision = p.precision;
  spec.confounder_mode = mode;
  spec.sigma2_m = sigma2_m;
  if (mode == ConfounderMode::oob_offset) {
    Eigen::VectorXd mhat(p.data.n_units());
    auto eng = rng::make_engine(991, 0);
    for (int k = 0; k < p.data.n_units(); ++k) mhat(k) = 0.1 * rng::normal(eng);
    spec.mhat = mhat;
  } else {
    spec.mhat = Eigen::VectorXd::Zero(p.data.n_units());
  }
  return spec;
}

ParameterState random_state(const Dataset& data, const ModelSpec& spec, std::uint64_t seed) {
  auto eng = rng::make_engine(seed, 0);
  ParameterState s = make_initial_state(data, spec);
  s.beta0 += 0.4 * rng::normal(eng);
  for (Eigen::Index i = 0; i < s.erf_params.size(); ++i) s.erf_params(i) = 0.3 * rng::normal(eng);
  for (Eigen::Index i = 0; i < s.delta.size(); ++i) s.delta(i) = 0.3 * rng::normal(eng);
  for (Eigen::Index i = 0; i < s.m.size(); ++i) s.m(i) += 0.2 * rng::normal(eng);
  for (Eigen::Index i = 0; i < s.x_latent.size(); ++i) s.x_latent(i) += 0.1 * rng::normal(eng);
  for (Eigen::Index i = 0; i < s.u.size(); ++i) s.u(i) = 0.4 * rng::normal(eng);
  for (Eigen::Index i = 0; i < s.v.size(); ++i) s.v(i) = 0.4 * rng::normal(eng);
  if (!spec.fix_tau_phi) s.log_tau_phi = 0.5 + 0.3 * rng::normal(eng);
  if (!spec.fix_rho) s.logit_rho = std::clamp(0.7 * rng::normal(eng), -1.5, 1.5);
  s.log_tau_gamma = 0.5 + 0.3 * rng::normal(eng);
  return s;
}

}  // namespace

TEST_CASE("log_posterior: K=1 closed form") {
  Dataset d = tiny_dataset({2}, {1.0}, Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Zero(1, 0));
  ModelSpec spec;
  spec.erf.kind = ErfKind::linear;
  spec.precision = scale_icar(NeighborLists(1));
  spec.confounder_mode = ConfounderMode::oob_offset;
  spec.mhat = Eigen::VectorXd::Zero(1);
  spec.sigma2_m = 0.0;
  spec.include_icar = false;
  spec.fix_tau_phi = 1.0;
  spec.fix_rho = 0.0;

  ParameterState s = make_initial_state(d, spec);
  s.beta0 = 0.0;
  s.v.setZero();

  const double poisson_term = -1.0 - std::log(2.0);
  const double prior_beta0 = -0.5 * (std::log(1e5) + kLogTwoPi);
  const double prior_alpha = 0.5 * std::log(1e-5) - 0.5 * kLogTwoPi;
  const double prior_v = -0.5 * kLogTwoPi;
  const double expected = poisson_term + prior_beta0 + prior_alpha + prior_v;
  CHECK(log_posterior(s, d, spec) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(poisson_term == doctest::Approx(-1.69315).epsilon(1e-5));
}

TEST_CASE("log_posterior: y=0 likelihood reduces to -mu") {
  Dataset d = tiny_dataset({0, 0}, {3.0, 5.0}, Eigen::VectorXd::Zero(2),
                           Eigen::MatrixXd::Zero(2, 0));
  ModelSpec spec;
  spec.erf.kind = ErfKind::linear;
  spec.precision = scale_icar(build_adjacency({{0, 1}}, 2));
  spec.confounder_mode = ConfounderMode::oob_offset;
  spec.mhat = Eigen::VectorXd::Zero(2);
  spec.include_icar = false;
  spec.fix_tau_phi = 1.0;
  spec.fix_rho = 0.0;

  ParameterState s = make_initial_state(d, spec);
  s.beta0 = 0.0;
  s.v.setZero();
  const double lp0 = log_posterior(s, d, spec);
  s.beta0 = 0.3;
  const double lp1 = log_posterior(s, d, spec);
  // y = 0 leaves only the -mu term in the likelihood
  const double dmu = (3.0 + 5.0) * (std::exp(0.3) - 1.0);
  const double dprior = -0.5 * 0.3 * 0.3 / 1e5;
  CHECK(lp1 - lp0 == doctest::Approx(-dmu + dprior).epsilon(1e-10));
}

TEST_CASE("log_posterior: likelihood invariant to beta0/phi trade-off") {
  const Problem p = make_problem(8, 21);
  ModelSpec spec = base_spec(p, ErfKind::linear, ConfounderMode::oob_offset, 0.0);
  spec.fix_tau_phi = 1.0;
  spec.fix_rho = 0.0;  // phi = v
  spec.include_icar = false;
  ParameterState s = random_state(p.data, spec, 5);
  s.u.resize(0);

  const double c = 0.37;
  ParameterState s2 = s;
  s2.beta0 += c;
  s2.v.array() -= c;  // phi shifts by -c

  const double dprior = (-0.5 * s2.beta0 * s2.beta0 / 1e5 + 0.5 * s.beta0 * s.beta0 / 1e5) +
                        (-0.5 * s2.v.squaredNorm() + 0.5 * s.v.squaredNorm());
  CHECK(log_posterior(s2, p.data, spec) - log_posterior(s, p.data, spec) ==
        doctest::Approx(dprior).epsilon(1e-10));
}

TEST_CASE("log_posterior: non-finite states yield -inf, never a crash") {
  const Problem p = make_problem(6, 23);
  ModelSpec spec = base_spec(p, ErfKind::linear, ConfounderMode::oob_offset, 0.1);
  ParameterState s = random_state(p.data, spec, 7);
  s.beta0 = std::numeric_limits<double>::quiet_NaN();
  CHECK(log_posterior(s, p.data, spec) == -std::numeric_limits<double>::infinity());
  ParameterState s2 = random_state(p.data, spec, 8);
  s2.v(0) = std::numeric_limits<double>::infinity();
  CHECK(log_posterior(s2, p.data, spec) == -std::numeric_limits<double>::infinity());
  ParameterState s3 = random_state(p.data, spec, 9);
  s3.beta0 = 5000.0;  // exp overflow
  CHECK(log_posterior(s3, p.data, spec) == -std::numeric_limits<double>::infinity());
}

TEST_CASE("gradient matches central finite differences for every variant") {
  struct Combo {
    ErfKind kind;
    ConfounderMode mode;
    double sigma2_m;
    double sigma2_x;
  };
  const std::vector<Combo> combos = {
      {ErfKind::linear, ConfounderMode::oob_offset, 0.2, 0.0},
      {ErfKind::linear, ConfounderMode::linear, 0.0, 0.0},
      {ErfKind::pspline_rw2, ConfounderMode::oob_offset, 0.15, 0.0},
      {ErfKind::pspline_rw2, ConfounderMode::linear, 0.0, 0.0},
      {ErfKind::berkson_linear, ConfounderMode::oob_offset, 0.1, 0.05},
      {ErfKind::berkson_linear, ConfounderMode::linear, 0.0, 0.05},
  };
  const Problem p = make_problem(20, 31);
  int combo_id = 0;
  for (const auto& combo : combos) {
    CAPTURE(combo_id);
    ModelSpec spec = base_spec(p, combo.kind, combo.mode, combo.sigma2_m, combo.sigma2_x);
    for (int trial = 0; trial < 20; ++trial) {
      const ParameterState s = random_state(p.data, spec, 100 * combo_id + trial);
      const Eigen::VectorXd w0 = flatten_state(s, spec);
      const ParameterState g = log_posterior_grad(s, p.data, spec);
      const Eigen::VectorXd ga = flatten_state(g, spec);
      const auto names = active_coordinate_names(s, spec);
      for (Eigen::Index i = 0; i < w0.size(); ++i) {
        const double h = 1e-5 * std::max(1.0, std::abs(w0(i)));
        Eigen::VectorXd wp = w0, wm = w0;
        wp(i) += h;
        wm(i) -= h;
        const double fp = log_posterior(unflatten_state(wp, s, spec), p.data, spec);
        const double fm = log_posterior(unflatten_state(wm, s, spec), p.data, spec);
        const double fd = (fp - fm) / (2.0 * h);
        const double rel =
            std::abs(fd - ga(i)) / std::max({1.0, std::abs(fd), std::abs(ga(i))});
        CAPTURE(names[i]);
        CHECK(rel < 1e-5);
      }
    }
    ++combo_id;
  }
}

TEST_CASE("waic: identical samples give p_w = 0") {
  const Problem p = make_problem(3, 41);
  ModelSpec spec = base_spec(p, ErfKind::linear, ConfounderMode::oob_offset, 0.0);
  spec.mhat = Eigen::VectorXd::Zero(3);

  PosteriorSamples samples;
  samples.n_samples = 3;
  samples.beta0 = {0.2, 0.2, 0.2};
  samples.erf_params = Eigen::MatrixXd::Constant(3, 1, 0.1);
  samples.delta = Eigen::MatrixXd(3, 0);
  samples.latent_m = Eigen::MatrixXd(3, 0);
  samples.latent_x = Eigen::MatrixXd(3, 0);
  samples.phi = Eigen::MatrixXd::Zero(3, 3);
  const WaicResult w = waic(samples, p.data, spec);
  CHECK(w.p_w == doctest::Approx(0.0).epsilon(1e-14));

  double ll = 0.0;
  for (int k = 0; k < 3; ++k) {
    const double eta = 0.2 + 0.1 * p.data.exposures(k, 0);
    const double mu = p.data.e[k] * std::exp(eta);
    ll += static_cast<double>(p.data.y[k]) * std::log(mu) - mu -
          std::lgamma(static_cast<double>(p.data.y[k]) + 1.0);
  }
  CHECK(w.waic == doctest::Approx(-2.0 * ll).epsilon(1e-12));
}

TEST_CASE("waic and deviance: two-sample hand oracle to 1e-10") {
  // mu values ln2 and ln4 at y=0 give likelihoods 1/2 and 1/4
  Dataset d = tiny_dataset({0}, {1.0}, Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Zero(1, 0));
  ModelSpec spec;
  spec.erf.kind = ErfKind::linear;
  spec.precision = scale_icar(NeighborLists(1));
  spec.confounder_mode = ConfounderMode::oob_offset;
  spec.mhat = Eigen::VectorXd::Zero(1);
  spec.include_icar = false;

  PosteriorSamples samples;
  samples.n_samples = 2;
  samples.beta0 = {std::log(std::log(2.0)), std::log(std::log(4.0))};
  samples.erf_params = Eigen::MatrixXd::Zero(2, 1);
  samples.delta = Eigen::MatrixXd(2, 0);
  samples.latent_m = Eigen::MatrixXd(2, 0);
  samples.latent_x = Eigen::MatrixXd(2, 0);
  samples.phi = Eigen::MatrixXd::Zero(2, 1);

  const WaicResult w = waic(samples, d, spec);
  const double lppd = std::log(0.375);
  const double l1 = std::log(0.5), l2 = std::log(0.25);
  const double mean_l = 0.5 * (l1 + l2);
  const double pw = (l1 - mean_l) * (l1 - mean_l) + (l2 - mean_l) * (l2 - mean_l);  // n-1 = 1
  CHECK(w.p_w == doctest::Approx(pw).epsilon(1e-10));
  CHECK(w.waic == doctest::Approx(-2.0 * (lppd - pw)).epsilon(1e-10));

  const DevianceSummary dev = deviance_summaries(samples, d, spec);
  CHECK(dev.d_bar == doctest::Approx(-2.0 * mean_l).epsilon(1e-10));
  const double mu_mean = std::exp(0.5 * (samples.beta0[0] + samples.beta0[1]));
  CHECK(dev.d_at_mean == doctest::Approx(2.0 * mu_mean).epsilon(1e-10));

  // duplicating a sample keeps waic finite
  PosteriorSamples dup;
  dup.n_samples = 3;
  dup.beta0 = {samples.beta0[0], samples.beta0[1], samples.beta0[1]};
  dup.erf_params = Eigen::MatrixXd::Zero(3, 1);
  dup.delta = Eigen::MatrixXd(3, 0);
  dup.latent_m = Eigen::MatrixXd(3, 0);
  dup.latent_x = Eigen::MatrixXd(3, 0);
  dup.phi = Eigen::MatrixXd::Zero(3, 1);
  CHECK(std::isfinite(waic(dup, d, spec).waic));

  CHECK_THROWS_AS(waic(PosteriorSamples{}, d, spec), std::invalid_argument);
}

TEST_CASE("deviance: single draw makes d_bar equal d_at_mean; sampled fits obey Jensen") {
  const Problem p = make_problem(12, 43);
  ModelSpec spec = base_spec(p, ErfKind::linear, ConfounderMode::oob_offset, 0.0);
  SamplerConfig cfg;
  cfg.n_chains = 1;
  cfg.burn_in = 300;
  cfg.n_samples = 600;
  cfg.thin = 2;
  cfg.seed = 3;
  const PosteriorSamples post = sample_posterior(p.data, spec, cfg);

  PosteriorSamples one;
  one.n_samples = 1;
  one.beta0 = {post.beta0[0]};
  one.erf_params = post.erf_params.row(0);
  one.delta = Eigen::MatrixXd(1, 0);
  one.latent_m = Eigen::MatrixXd(1, 0);
  one.latent_x = Eigen::MatrixXd(1, 0);
  one.phi = post.phi.row(0);
  const DevianceSummary d1 = deviance_summaries(one, p.data, spec);
  CHECK(d1.d_bar == doctest::Approx(d1.d_at_mean).epsilon(1e-12));

  const DevianceSummary dm = deviance_summaries(post, p.data, spec);
  CHECK(dm.d_bar >= dm.d_at_mean - 1e-9);
}

TEST_CASE("sample_posterior: determinism and parallel/serial equivalence") {
  const Problem p = make_problem(10, 47);
  const ModelSpec spec = base_spec(p, ErfKind::linear, ConfounderMode::oob_offset, 0.1);
  SamplerConfig cfg;
  cfg.n_chains = 2;
  cfg.burn_in = 150;
  cfg.n_samples = 300;
  cfg.thin = 3;
  cfg.seed = 12;
  const PosteriorSamples a = sample_posterior(p.data, spec, cfg);
  const PosteriorSamples b = sample_posterior(p.data, spec, cfg);
  const PosteriorSamples c = sample_posterior_reference(p.data, spec, cfg);
  REQUIRE(a.n_samples == b.n_samples);
  REQUIRE(a.n_samples == c.n_samples);
  CHECK((a.phi - b.phi).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.phi - c.phi).cwiseAbs().maxCoeff() == 0.0);
  CHECK(a.beta0 == c.beta0);
  CHECK(a.tau_phi == c.tau_phi);
}

TEST_CASE("sample_posterior: draws satisfy domain invariants and recompose g+phi") {
  const Problem p = make_problem(12, 53);
  const ModelSpec spec = base_spec(p, ErfKind::linear, ConfounderMode::oob_offset, 0.2);
  SamplerConfig cfg;
  cfg.n_chains = 2;
  cfg.burn_in = 200;
  cfg.n_samples = 400;
  cfg.thin = 4;
  cfg.seed = 5;
  const PosteriorSamples post = sample_posterior(p.data, spec, cfg);
  REQUIRE(post.n_samples == 2 * 100);
  const Eigen::VectorXd x = p.data.exposures.col(0);
  for (int s = 0; s < post.n_samples; ++s) {
    CHECK(post.tau_phi[s] > 0.0);
    CHECK(post.rho[s] >= 0.0);
    CHECK(post.rho[s] <= 1.0);
    const Eigen::VectorXd g = post.erf_params(s, 0) * x;
    const Eigen::VectorXd recomposed = g + post.phi.row(s).transpose();
    CHECK((recomposed - post.g_plus_phi.row(s).transpose()).cwiseAbs().maxCoeff() < 1e-12);
    const Eigen::VectorXd phi2 = bym2_compose(post.v.row(s).transpose(),
                                              post.u.row(s).transpose(), post.rho[s],
                                              post.tau_phi[s]);
    CHECK((phi2 - post.phi.row(s).transpose()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(std::abs(post.u.row(s).sum()) < 1e-8);
  }
}

TEST_CASE("sample_posterior: flat data leaves the slope at its prior") {
  const int n = 12;
  auto eng = rng::make_engine(59, 0);
  std::vector<long long> y(n);
  std::vector<double> e(n);
  for (int k = 0; k < n; ++k) {
    e[k] = 50.0;
    y[k] = 50;
  }
  Problem p;
  p.neighbors = testsup::random_connected_graph(n, eng);
  p.precision = scale_icar(p.neighbors);
  p.data = tiny_dataset(y, e, Eigen::VectorXd::Zero(n), Eigen::MatrixXd::Zero(n, 0));

  ModelSpec spec;
  spec.erf.kind = ErfKind::linear;
  spec.precision = p.precision;
  spec.confounder_mode = ConfounderMode::oob_offset;
  spec.mhat = Eigen::VectorXd::Zero(n);
  spec.sigma2_m = 0.0;
  SamplerConfig cfg;
  cfg.n_chains = 2;
  cfg.burn_in = 400;
  cfg.n_samples = 2000;
  cfg.thin = 2;
  cfg.seed = 7;
  const PosteriorSamples post = sample_posterior(p.data, spec, cfg);
  std::vector<double> alphas;
  for (int s = 0; s < post.n_samples; ++s) alphas.push_back(post.erf_params(s, 0));
  // prior sd is sqrt(1e5) ~ 316
  CHECK(std::abs(stats::mean(alphas)) < 60.0);
  CHECK(stats::sd(alphas) > 230.0);
  CHECK(stats::sd(alphas) < 420.0);
}

TEST_CASE("berkson with sigma2_x = 0 reproduces the linear ERF run bit for bit") {
  const Problem p = make_problem(14, 61);
  ModelSpec lin = base_spec(p, ErfKind::linear, ConfounderMode::oob_offset, 0.1);
  ModelSpec ber = lin;
  ber.erf.kind = ErfKind::berkson_linear;
  ber.erf.sigma2_x = 0.0;
  SamplerConfig cfg;
  cfg.n_chains = 1;
  cfg.burn_in = 200;
  cfg.n_samples = 400;
  cfg.thin = 4;
  cfg.seed = 17;
  const PosteriorSamples a = sample_posterior(p.data, lin, cfg);
  const PosteriorSamples b = sample_posterior(p.data, ber, cfg);
  CHECK(a.beta0 == b.beta0);
  CHECK((a.erf_params - b.erf_params).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.phi - b.phi).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("berkson error widens the slope posterior" * doctest::timeout(600)) {
  const ArealMap map = make_lattice_map(5);
  SimScenario scen = parse_scenario("common-linear-good");
  scen.seed = 2024;
  const SimulatedDataset sim = generate(scen, map);

  Problem p;
  p.neighbors = map.neighbors;
  p.precision = scale_icar(map.neighbors);
  p.data = sim.dataset;

  ModelSpec lin;
  lin.erf.kind = ErfKind::berkson_linear;
  lin.erf.exposure_index = 1;
  lin.erf.sigma2_x = 0.0;
  lin.precision = p.precision;
  lin.confounder_mode = ConfounderMode::oob_offset;
  lin.mhat = sim.m_true;  // oracle confounder adjustment keeps the test focused
  lin.sigma2_m = 0.0;
  ModelSpec noisy = lin;
  noisy.erf.sigma2_x = 0.02;

  SamplerConfig cfg;
  cfg.n_chains = 2;
  cfg.burn_in = 600;
  cfg.n_samples = 1500;
  cfg.thin = 3;
  cfg.seed = 29;
  const PosteriorSamples a = sample_posterior(p.data, lin, cfg);
  const PosteriorSamples b = sample_posterior(p.data, noisy, cfg);
  auto alpha_sd = [](const PosteriorSamples& s) {
    std::vector<double> v;
    for (int i = 0; i < s.n_samples; ++i) v.push_back(s.erf_params(i, 0));
    return stats::sd(v);
  };
  CHECK(alpha_sd(b) >= alpha_sd(a) * 0.95);  // MC slack on the >= contract
}

TEST_CASE("berkson with constant observed exposure stays finite") {
  const int n = 10;
  auto eng = rng::make_engine(67, 0);
  std::vector<long long> y(n);
  std::vector<double> e(n);
  for (int k = 0; k < n; ++k) {
    e[k] = 30.0;
    y[k] = rng::poisson(eng, 30.0);
  }
  Problem p;
  p.neighbors = testsup::random_connected_graph(n, eng);
  p.precision = scale_icar(p.neighbors);
  p.data = tiny_dataset(y, e, Eigen::VectorXd::Constant(n, 0.5), Eigen::MatrixXd::Zero(n, 0));

  ModelSpec spec;
  spec.erf.kind = ErfKind::berkson_linear;
  spec.erf.sigma2_x = 0.04;
  spec.precision = p.precision;
  spec.confounder_mode = ConfounderMode::oob_offset;
  spec.mhat = Eigen::VectorXd::Zero(n);
  SamplerConfig cfg;
  cfg.n_chains = 1;
  cfg.burn_in = 300;
  cfg.n_samples = 600;
  cfg.thin = 3;
  cfg.seed = 31;
  const PosteriorSamples post = sample_posterior(p.data, spec, cfg);
  for (int s = 0; s < post.n_samples; ++s) {
    CHECK(std::isfinite(post.erf_params(s, 0)));
    CHECK(std::isfinite(post.beta0[s]));
    CHECK(post.tau_phi[s] > 0.0);
    CHECK(post.rho[s] >= 0.0);
    CHECK(post.rho[s] <= 1.0);
  }
}

TEST_CASE("self-consistency: fixed rho=0 with and without the ICAR block agree" *
          doctest::timeout(600)) {
  const Problem p = make_problem(16, 71, 0);
  ModelSpec with_icar = base_spec(p, ErfKind::linear, ConfounderMode::oob_offset, 0.0);
  with_icar.mhat = Eigen::VectorXd::Zero(16);
  with_icar.fix_rho = 0.0;
  with_icar.include_icar = true;
  ModelSpec without = with_icar;
  without.include_icar = false;

  SamplerConfig cfg;
  cfg.n_chains = 2;
  cfg.burn_in = 800;
  cfg.n_samples = 4000;
  cfg.thin = 2;
  cfg.seed = 37;
  const PosteriorSamples a = sample_posterior(p.data, with_icar, cfg);
  SamplerConfig cfg2 = cfg;
  cfg2.seed = 38;
  const PosteriorSamples b = sample_posterior(p.data, without, cfg2);

  auto collect = [](const PosteriorSamples& s, bool alpha) {
    std::vector<double> v;
    for (int i = 0; i < s.n_samples; ++i)
      v.push_back(alpha ? s.erf_params(i, 0) : s.beta0[i]);
    return v;
  };
  const auto alpha_a = collect(a, true);
  const auto alpha_b = collect(b, true);
  const auto beta_a = collect(a, false);
  const auto beta_b = collect(b, false);

  const double tol_alpha =
      4.0 * std::sqrt(std::pow(mcse_mean(alpha_a), 2) + std::pow(mcse_mean(alpha_b), 2));
  const double tol_beta =
      4.0 * std::sqrt(std::pow(mcse_mean(beta_a), 2) + std::pow(mcse_mean(beta_b), 2));
  CHECK(std::abs(stats::mean(alpha_a) - stats::mean(alpha_b)) < tol_alpha + 1e-3);
  CHECK(std::abs(stats::mean(beta_a) - stats::mean(beta_b)) < tol_beta + 1e-3);
  CHECK(stats::sd(alpha_a) == doctest::Approx(stats::sd(alpha_b)).epsilon(0.15));
}

TEST_CASE("posterior oracle: K=2 detailed-balance check against quadrature" *
          doctest::timeout(600)) {
  const auto nb = build_adjacency({{0, 1}}, 2);
  const ScaledIcarPrecision precision = scale_icar(nb);
  Eigen::VectorXd x(2);
  x << 0.0, 1.0;
  Dataset d = tiny_dataset({12, 31}, {20.0, 20.0}, x, Eigen::MatrixXd::Zero(2, 0));

  const double tau = 4.0, rho = 0.5;
  ModelSpec spec;
  spec.erf.kind = ErfKind::linear;
  spec.precision = precision;
  spec.confounder_mode = ConfounderMode::oob_offset;
  spec.mhat = Eigen::VectorXd::Zero(2);
  spec.sigma2_m = 0.0;
  spec.fix_tau_phi = tau;
  spec.fix_rho = rho;

  const Eigen::MatrixXd pinv = testsup::dense_pinv(Eigen::MatrixXd(precision.q_matrix));
  const Eigen::MatrixXd sigma_phi =
      ((1.0 - rho) / tau) * Eigen::MatrixXd::Identity(2, 2) + (rho / tau) * pinv;
  const testsup::OracleResult oracle =
      testsup::quadrature_oracle(d.y, d.e, x, sigma_phi, 1e5, 1e5, 24, 140);

  SamplerConfig cfg;
  cfg.n_chains = 1;
  cfg.burn_in = 2000;
  cfg.n_samples = 50000;
  cfg.thin = 1;
  cfg.seed = 9;
  const PosteriorSamples post = sample_posterior(d, spec, cfg);
  REQUIRE(post.n_samples == 50000);

  std::vector<double> alphas, betas, phi0, phi1;
  for (int s = 0; s < post.n_samples; ++s) {
    alphas.push_back(post.erf_params(s, 0));
    betas.push_back(post.beta0[s]);
    phi0.push_back(post.phi(s, 0));
    phi1.push_back(post.phi(s, 1));
  }
  CHECK(std::abs(stats::mean(alphas) - oracle.mean_alpha) < 3.0 * mcse_mean(alphas));
  CHECK(std::abs(stats::mean(betas) - oracle.mean_beta0) < 3.0 * mcse_mean(betas));
  CHECK(std::abs(stats::sd(alphas) - oracle.sd_alpha) < 3.0 * mcse_sd(alphas));
  CHECK(std::abs(stats::mean(phi0) - oracle.mean_phi(0)) < 3.0 * mcse_mean(phi0));
  CHECK(std::abs(stats::mean(phi1) - oracle.mean_phi(1)) < 3.0 * mcse_mean(phi1));
}

TEST_CASE("posterior oracle: K=3 path graph matches quadrature within 3 MCSE" *
          doctest::timeout(600)) {
  const auto nb = build_adjacency({{0, 1}, {1, 2}}, 3);
  const ScaledIcarPrecision precision = scale_icar(nb);
  Eigen::VectorXd x(3);
  x << 0.0, 0.5, 1.0;
  Dataset d = tiny_dataset({52, 61, 70}, {50.0, 50.0, 50.0}, x, Eigen::MatrixXd::Zero(3, 0));

  const double tau = 4.0, rho = 0.5;
  ModelSpec spec;
  spec.erf.kind = ErfKind::linear;
  spec.precision = precision;
  spec.confounder_mode = ConfounderMode::oob_offset;
  spec.mhat = Eigen::VectorXd::Zero(3);
  spec.sigma2_m = 0.0;
  spec.fix_tau_phi = tau;
  spec.fix_rho = rho;

  const Eigen::MatrixXd pinv = testsup::dense_pinv(Eigen::MatrixXd(precision.q_matrix));
  const Eigen::MatrixXd sigma_phi =
      ((1.0 - rho) / tau) * Eigen::MatrixXd::Identity(3, 3) + (rho / tau) * pinv;
  const testsup::OracleResult oracle =
      testsup::quadrature_oracle(d.y, d.e, x, sigma_phi, 1e5, 1e5, 20, 140);

  SamplerConfig cfg;
  cfg.n_chains = 2;
  cfg.burn_in = 2000;
  cfg.n_samples = 20000;
  cfg.thin = 1;
  cfg.seed = 11;
  const PosteriorSamples post = sample_posterior(d, spec, cfg);

  std::vector<double> alphas;
  for (int s = 0; s < post.n_samples; ++s) alphas.push_back(post.erf_params(s, 0));
  CHECK(std::abs(stats::mean(alphas) - oracle.mean_alpha) < 3.0 * mcse_mean(alphas));
  CHECK(std::abs(stats::sd(alphas) - oracle.sd_alpha) < 3.0 * mcse_sd(alphas));
}

TEST_CASE("split_rhat and mcse helpers behave") {
  std::vector<double> c1(100), c2(100);
  auto eng = rng::make_engine(73, 0);
  for (int i = 0; i < 100; ++i) {
    c1[i] = rng::normal(eng);
    c2[i] = 10.0 + rng::normal(eng);
  }
  CHECK(split_rhat({c1, c2}) > 2.0);
  std::vector<double> c3(200), c4(200);
  for (int i = 0; i < 200; ++i) {
    c3[i] = rng::normal(eng);
    c4[i] = rng::normal(eng);
  }
  CHECK(split_rhat({c3, c4}) < 1.1);
  CHECK(mcse_mean(c3) > 0.0);
  CHECK(mcse_mean(c3) < 0.3);
}
