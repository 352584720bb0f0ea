#include "spar/simgen.hpp"

#include <Eigen/SparseCholesky>
#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "spar/spatial_priors.hpp"
#include "spar/stats.hpp"

namespace spar {

namespace {

constexpr double kSphericalRadius = 5.0;
constexpr double kTargetCorrelation = 0.75;

std::string join_names(const std::vector<std::string>& names) {
  std::string out;
  for (const auto& n : names) {
    if (!out.empty()) out += ", ";
    out += n;
  }
  return out;
}

}  // namespace

std::vector<std::string> scenario_names() {
  std::vector<std::string> names;
  for (const char* prev : {"rare", "common"})
    for (const char* erf : {"linear", "sigmoidal"})
      for (const char* conf : {"good", "poor"})
        names.push_back(std::string(prev) + "-" + erf + "-" + conf);
  names.push_back("linear-confounders");
  return names;
}

SimScenario parse_scenario(const std::string& name) {
  SimScenario s;
  if (name == "linear-confounders") {
    s.prevalence = Prevalence::common;
    s.erf_shape = ErfShape::linear;
    s.confounding = Confounding::good;
    s.confounder_form = ConfounderForm::linear;
    return s;
  }
  const auto first = name.find('-');
  const auto second = name.find('-', first + 1);
  if (first == std::string::npos || second == std::string::npos)
    throw std::invalid_argument("unknown scenario '" + name + "'; valid names: " +
                                join_names(scenario_names()));
  const std::string prev = name.substr(0, first);
  const std::string erf = name.substr(first + 1, second - first - 1);
  const std::string conf = name.substr(second + 1);
  if (prev == "rare")
    s.prevalence = Prevalence::rare;
  else if (prev == "common")
    s.prevalence = Prevalence::common;
  else
    throw std::invalid_argument("unknown scenario '" + name + "'; valid names: " +
                                join_names(scenario_names()));
  if (erf == "linear")
    s.erf_shape = ErfShape::linear;
  else if (erf == "sigmoidal")
    s.erf_shape = ErfShape::sigmoidal;
  else
    throw std::invalid_argument("unknown scenario '" + name + "'; valid names: " +
                                join_names(scenario_names()));
  if (conf == "good")
    s.confounding = Confounding::good;
  else if (conf == "poor")
    s.confounding = Confounding::poor;
  else
    throw std::invalid_argument("unknown scenario '" + name + "'; valid names: " +
                                join_names(scenario_names()));
  s.confounder_form = ConfounderForm::nonlinear;
  return s;
}

std::string scenario_name(const SimScenario& s) {
  if (s.confounder_form == ConfounderForm::linear) return "linear-confounders";
  std::string name = s.prevalence == Prevalence::rare ? "rare" : "common";
  name += s.erf_shape == ErfShape::linear ? "-linear" : "-sigmoidal";
  name += s.confounding == Confounding::good ? "-good" : "-poor";
  return name;
}

ArealMap make_lattice_map(int side) {
  if (side < 2) throw std::invalid_argument("make_lattice_map: side must be >= 2");
  ArealMap map;
  map.n_units = side * side;
  std::vector<std::pair<int, int>> edges;
  map.centroids.resize(map.n_units);
  for (int i = 0; i < side; ++i) {
    for (int j = 0; j < side; ++j) {
      const int k = i * side + j;
      map.centroids[k] = {static_cast<double>(j), static_cast<double>(i)};
      if (j + 1 < side) edges.emplace_back(k, k + 1);
      if (i + 1 < side) edges.emplace_back(k, k + side);
    }
  }
  map.neighbors = build_adjacency(edges, map.n_units);
  return map;
}

Eigen::MatrixXd exponential_covariance(const std::vector<std::array<double, 2>>& centroids,
                                       double range) {
  const int n = static_cast<int>(centroids.size());
  Eigen::MatrixXd cov(n, n);
  for (int i = 0; i < n; ++i) {
    cov(i, i) = 1.0;
    for (int j = i + 1; j < n; ++j) {
      const double dx = centroids[i][0] - centroids[j][0];
      const double dy = centroids[i][1] - centroids[j][1];
      const double d = std::sqrt(dx * dx + dy * dy);
      cov(i, j) = cov(j, i) = std::exp(-d / range);
    }
  }
  return cov;
}

double spherical_kernel(double distance, double radius) {
  if (distance >= radius) return 0.0;
  const double h = distance / radius;
  return 1.0 - 1.5 * h + 0.5 * h * h * h;
}

Eigen::MatrixXd spherical_covariance(const std::vector<std::array<double, 2>>& centroids,
                                     double radius) {
  const int n = static_cast<int>(centroids.size());
  Eigen::MatrixXd cov(n, n);
  for (int i = 0; i < n; ++i) {
    cov(i, i) = 1.0;
    for (int j = i + 1; j < n; ++j) {
      const double dx = centroids[i][0] - centroids[j][0];
      const double dy = centroids[i][1] - centroids[j][1];
      cov(i, j) = cov(j, i) = spherical_kernel(std::sqrt(dx * dx + dy * dy), radius);
    }
  }
  return cov;
}

double pairwise_distance_quantile(const std::vector<std::array<double, 2>>& centroids, double p) {
  const int n = static_cast<int>(centroids.size());
  if (n < 2) throw std::invalid_argument("pairwise_distance_quantile: need >= 2 centroids");
  std::vector<double> dists;
  dists.reserve(static_cast<std::size_t>(n) * (n - 1) / 2);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const double dx = centroids[i][0] - centroids[j][0];
      const double dy = centroids[i][1] - centroids[j][1];
      dists.push_back(std::sqrt(dx * dx + dy * dy));
    }
  return stats::quantile(std::move(dists), p);
}

Eigen::VectorXd mvn_sample_cov(const Eigen::MatrixXd& cov, rng::Engine& eng) {
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) {
    // tiny jitter for numerically semi-definite kernels
    Eigen::MatrixXd jittered = cov;
    jittered.diagonal().array() += 1e-10 * cov.diagonal().maxCoeff();
    llt.compute(jittered);
    if (llt.info() != Eigen::Success)
      throw std::runtime_error("mvn_sample_cov: covariance not positive definite");
  }
  Eigen::VectorXd zvec(cov.rows());
  for (Eigen::Index i = 0; i < zvec.size(); ++i) zvec(i) = rng::normal(eng);
  return llt.matrixL() * zvec;
}

Eigen::VectorXd mvn_sample_sparse_precision(const Eigen::SparseMatrix<double>& precision,
                                            rng::Engine& eng) {
  Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> llt(precision);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("mvn_sample_sparse_precision: factorization failed");
  Eigen::VectorXd zvec(precision.rows());
  for (Eigen::Index i = 0; i < zvec.size(); ++i) zvec(i) = rng::normal(eng);
  // P A P' = L L'  =>  cov(P' L^{-T} z) = A^{-1}
  Eigen::VectorXd w = llt.matrixU().solve(zvec);
  return llt.permutationPinv() * w;
}

Eigen::VectorXd minmax_rescale(const Eigen::VectorXd& x) {
  const double lo = x.minCoeff();
  const double hi = x.maxCoeff();
  if (!(hi > lo)) throw std::invalid_argument("minmax_rescale: constant input");
  return (x.array() - lo) / (hi - lo);
}

ExposurePair gen_exposures(const ArealMap& map, std::uint64_t seed) {
  if (!map.has_centroids()) throw std::invalid_argument("gen_exposures: centroids required");
  if (map.n_units < 2) throw std::invalid_argument("gen_exposures: need >= 2 units");
  ExposurePair out;

  auto eng1 = rng::make_engine(seed, 0);
  Eigen::VectorXd x1(map.n_units);
  for (int k = 0; k < map.n_units; ++k) x1(k) = rng::normal(eng1);
  out.x1 = minmax_rescale(x1);

  const double dstar = pairwise_distance_quantile(map.centroids, 0.05);
  out.range = -dstar / std::log(kTargetCorrelation);
  auto eng2 = rng::make_engine(seed, 1);
  out.x2_raw = mvn_sample_cov(exponential_covariance(map.centroids, out.range), eng2);
  out.x2 = minmax_rescale(out.x2_raw);
  return out;
}

Eigen::MatrixXd gen_confounders(const ArealMap& map, std::uint64_t seed) {
  if (!map.has_centroids()) throw std::invalid_argument("gen_confounders: centroids required");
  const int n = map.n_units;
  Eigen::MatrixXd z(n, 8);
  for (int c = 0; c < 4; ++c) {
    auto eng = rng::make_engine(seed, static_cast<std::uint64_t>(c));
    Eigen::VectorXd col(n);
    for (int k = 0; k < n; ++k) col(k) = rng::normal(eng);
    z.col(c) = minmax_rescale(col);
  }
  const Eigen::MatrixXd cov = spherical_covariance(map.centroids, kSphericalRadius);
  for (int c = 4; c < 8; ++c) {
    auto eng = rng::make_engine(seed, static_cast<std::uint64_t>(c));
    z.col(c) = minmax_rescale(mvn_sample_cov(cov, eng));
  }
  return z;
}

Eigen::VectorXd m_true_fn(const Eigen::MatrixXd& z, ConfounderForm form) {
  if (z.cols() < 8) throw std::invalid_argument("m_true_fn: need 8 confounders");
  const int n = static_cast<int>(z.rows());
  Eigen::VectorXd m(n);
  constexpr double two_pi = 6.283185307179586476925286766559;
  for (int k = 0; k < n; ++k) {
    if (form == ConfounderForm::nonlinear) {
      const double sig = 3.0 / (1.0 + std::exp(6.0 - 12.0 * z(k, 0)));
      const double inter = z(k, 2) * z(k, 5) - 0.4;
      m(k) = sig + 2.0 * inter * inter + std::cos(two_pi * z(k, 6)) + z(k, 7);
    } else {
      m(k) = 0.5 * z(k, 0) - z(k, 2) + 2.0 * z(k, 6) - 0.1 * z(k, 7);
    }
  }
  return m;
}

Eigen::VectorXd g_true_fn(const Eigen::VectorXd& x, ErfShape shape, double alpha) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    g(k) = shape == ErfShape::linear ? alpha * x(k)
                                     : alpha / (1.0 + std::exp(6.0 - 12.0 * x(k)));
  }
  return g;
}

Eigen::VectorXd gen_residual_field(const ArealMap& map, double leroux_rho, std::uint64_t seed) {
  if (leroux_rho < 0.0 || leroux_rho >= 1.0)
    throw std::invalid_argument("gen_residual_field: leroux_rho must lie in [0,1)");
  Eigen::SparseMatrix<double> prec = icar_precision(map.neighbors) * leroux_rho;
  for (int k = 0; k < map.n_units; ++k) prec.coeffRef(k, k) += 1.0 - leroux_rho;
  prec.makeCompressed();
  auto eng = rng::make_engine(seed, 0);
  return mvn_sample_sparse_precision(prec, eng);
}

SimulatedDataset generate(const SimScenario& scenario, const ArealMap& map) {
  map.validate();
  const int n = map.n_units;
  SimulatedDataset sim;

  auto eng_e = rng::make_engine(scenario.seed, 100);
  const double e_lo = scenario.prevalence == Prevalence::rare ? 10.0 : 100.0;
  const double e_hi = scenario.prevalence == Prevalence::rare ? 25.0 : 200.0;
  sim.dataset.e.resize(n);
  for (int k = 0; k < n; ++k) sim.dataset.e[k] = rng::uniform(eng_e, e_lo, e_hi);

  const ExposurePair x = gen_exposures(map, rng::stream_seed(scenario.seed, 101));
  const Eigen::MatrixXd z = gen_confounders(map, rng::stream_seed(scenario.seed, 102));

  sim.g_true.resize(n, 2);
  sim.g_true.col(0) = g_true_fn(x.x1, scenario.erf_shape, scenario.alpha);
  sim.g_true.col(1) = g_true_fn(x.x2, scenario.erf_shape, scenario.alpha);
  sim.m_true = m_true_fn(z, scenario.confounder_form);

  // phi rescaled so its sample-variance share of the non-exposure variation
  // hits the scenario target
  const double share = scenario.confounding == Confounding::good ? 0.05 : 0.40;
  Eigen::VectorXd phi =
      gen_residual_field(map, scenario.leroux_rho, rng::stream_seed(scenario.seed, 103));
  const auto pop_var = [](const Eigen::VectorXd& v) {
    return (v.array() - v.mean()).square().sum() / static_cast<double>(v.size());
  };
  const double target_var = share / (1.0 - share) * pop_var(sim.m_true);
  phi *= std::sqrt(target_var / pop_var(phi));
  sim.phi_true = phi;

  const Eigen::VectorXd risk_sum = sim.g_true.col(0) + sim.g_true.col(1) + sim.m_true + phi;
  // center so mean(theta) = 1, keeping counts near e
  sim.intercept = -std::log(risk_sum.array().exp().mean());
  sim.theta_true.resize(n);
  for (int k = 0; k < n; ++k) sim.theta_true(k) = std::exp(risk_sum(k) + sim.intercept);

  auto eng_y = rng::make_engine(scenario.seed, 104);
  sim.dataset.y.resize(n);
  for (int k = 0; k < n; ++k)
    sim.dataset.y[k] = rng::poisson(eng_y, sim.dataset.e[k] * sim.theta_true(k));

  sim.dataset.unit_ids.resize(n);
  for (int k = 0; k < n; ++k) sim.dataset.unit_ids[k] = "u" + std::to_string(k);
  sim.dataset.exposures.resize(n, 2);
  sim.dataset.exposures.col(0) = x.x1;
  sim.dataset.exposures.col(1) = x.x2;
  sim.dataset.exposure_names = {"x1", "x2"};
  sim.dataset.confounders = z;
  sim.dataset.confounder_names = {"z1", "z2", "z3", "z4", "z5", "z6", "z7", "z8"};
  sim.dataset.validate();
  return sim;
}

}  // namespace spar
