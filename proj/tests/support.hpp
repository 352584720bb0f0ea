#pragma once

#include <Eigen/Dense>
#include <utility>
#include <vector>

#include "spar/areal.hpp"
#include "spar/rng.hpp"

namespace spar::testsup {

// Moore-Penrose pseudoinverse via dense eigendecomposition (test oracle)
inline Eigen::MatrixXd dense_pinv(const Eigen::MatrixXd& a, double rel_tol = 1e-10) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
  const Eigen::VectorXd& ev = es.eigenvalues();
  const double tol = ev.cwiseAbs().maxCoeff() * rel_tol * a.rows();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (std::abs(ev(i)) <= tol) continue;
    out += es.eigenvectors().col(i) * es.eigenvectors().col(i).transpose() / ev(i);
  }
  return out;
}

// random connected graph: spanning tree plus extra random edges
inline NeighborLists random_connected_graph(int n, rng::Engine& eng, double extra_edge_rate = 0.3) {
  std::vector<std::pair<int, int>> edges;
  for (int k = 1; k < n; ++k) edges.emplace_back(k, rng::uniform_int(eng, k));
  const int extras = static_cast<int>(extra_edge_rate * n) + 1;
  for (int i = 0; i < extras && n >= 2; ++i) {
    const int a = rng::uniform_int(eng, n);
    int b = rng::uniform_int(eng, n);
    if (a == b) continue;
    edges.emplace_back(a, b);
  }
  return build_adjacency(edges, n);
}

// brute-force O(K^2) Moran's I from the dense weight matrix
inline double moran_dense_oracle(const Eigen::VectorXd& x, const Eigen::MatrixXd& w) {
  const int n = static_cast<int>(x.size());
  const double xbar = x.mean();
  double w_total = 0.0, cross = 0.0, ss = 0.0;
  for (int k = 0; k < n; ++k) {
    ss += (x(k) - xbar) * (x(k) - xbar);
    for (int j = 0; j < n; ++j) {
      w_total += w(k, j);
      cross += w(k, j) * (x(k) - xbar) * (x(j) - xbar);
    }
  }
  return (static_cast<double>(n) / w_total) * (cross / ss);
}

// Gauss-Hermite nodes/weights by Golub-Welsch, normalized for expectations
// against a standard normal: E[f(Z)] = sum_i weight_i f(node_i)
struct GaussHermite {
  Eigen::VectorXd nodes;    // already scaled by sqrt(2)
  Eigen::VectorXd weights;  // already divided by sqrt(pi)
};

inline GaussHermite gauss_hermite(int n) {
  Eigen::MatrixXd j = Eigen::MatrixXd::Zero(n, n);
  for (int i = 1; i < n; ++i) {
    const double b = std::sqrt(static_cast<double>(i) / 2.0);
    j(i, i - 1) = b;
    j(i - 1, i) = b;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(j);
  GaussHermite gh;
  gh.nodes = es.eigenvalues() * std::sqrt(2.0);
  gh.weights.resize(n);
  for (int i = 0; i < n; ++i) {
    const double v = es.eigenvectors()(0, i);
    gh.weights(i) = v * v;  // sqrt(pi) cancels in the normalized weights
  }
  return gh;
}

// Quadrature oracle for the K<=3 Poisson-BYM2 toy model with fixed
// hyperparameters: phi is integrated by tensor Gauss-Hermite quadrature and
// (beta0, alpha) by a two-pass grid. Everything here is independent of the
// sampler implementation.
struct OracleResult {
  double mean_beta0 = 0, sd_beta0 = 0;
  double mean_alpha = 0, sd_alpha = 0;
  Eigen::VectorXd mean_phi;
};

inline OracleResult quadrature_oracle(const std::vector<long long>& y,
                                      const std::vector<double>& e, const Eigen::VectorXd& x,
                                      const Eigen::MatrixXd& sigma_phi, double var_beta0,
                                      double var_alpha, int n_gh = 20, int grid_n = 120) {
  const int K = static_cast<int>(y.size());
  const GaussHermite gh = gauss_hermite(n_gh);
  const Eigen::MatrixXd l_phi = Eigen::LLT<Eigen::MatrixXd>(sigma_phi).matrixL();

  // enumerate all phi quadrature nodes
  long long n_nodes = 1;
  for (int k = 0; k < K; ++k) n_nodes *= n_gh;
  std::vector<Eigen::VectorXd> phis;
  std::vector<double> logws;
  phis.reserve(n_nodes);
  logws.reserve(n_nodes);
  std::vector<int> idx(K, 0);
  for (long long t = 0; t < n_nodes; ++t) {
    Eigen::VectorXd zvec(K);
    double lw = 0.0;
    long long rem = t;
    for (int k = 0; k < K; ++k) {
      idx[k] = static_cast<int>(rem % n_gh);
      rem /= n_gh;
      zvec(k) = gh.nodes(idx[k]);
      lw += std::log(gh.weights(idx[k]));
    }
    phis.push_back(l_phi * zvec);
    logws.push_back(lw);
  }

  std::vector<double> lgam(K);
  for (int k = 0; k < K; ++k) lgam[k] = std::lgamma(static_cast<double>(y[k]) + 1.0);

  // returns ln p(y|b0,a) and E[phi | b0, a, y] * p(y|b0,a) pieces
  auto marginal = [&](double b0, double a, Eigen::VectorXd* phi_num) -> double {
    double best = -std::numeric_limits<double>::infinity();
    std::vector<double> vals(phis.size());
    for (std::size_t t = 0; t < phis.size(); ++t) {
      double ll = logws[t];
      for (int k = 0; k < K; ++k) {
        const double eta = b0 + a * x(k) + phis[t](k);
        ll += static_cast<double>(y[k]) * (std::log(e[k]) + eta) - e[k] * std::exp(eta) -
              lgam[k];
      }
      vals[t] = ll;
      best = std::max(best, ll);
    }
    double den = 0.0;
    if (phi_num) phi_num->setZero(K);
    for (std::size_t t = 0; t < phis.size(); ++t) {
      const double w = std::exp(vals[t] - best);
      den += w;
      if (phi_num) *phi_num += w * phis[t];
    }
    if (phi_num) *phi_num /= den;
    return best + std::log(den);
  };

  auto sweep = [&](double b0_lo, double b0_hi, double a_lo, double a_hi, bool with_phi,
                   OracleResult& out) {
    double norm = 0.0, sb = 0.0, sb2 = 0.0, sa = 0.0, sa2 = 0.0;
    Eigen::VectorXd sphi = Eigen::VectorXd::Zero(K);
    double best = -std::numeric_limits<double>::infinity();
    Eigen::MatrixXd lp(grid_n, grid_n);
    std::vector<double> b0s(grid_n), as(grid_n);
    for (int i = 0; i < grid_n; ++i) {
      b0s[i] = b0_lo + (b0_hi - b0_lo) * i / (grid_n - 1.0);
      as[i] = a_lo + (a_hi - a_lo) * i / (grid_n - 1.0);
    }
    std::vector<Eigen::VectorXd> phi_cache(with_phi ? grid_n * grid_n : 0);
    for (int i = 0; i < grid_n; ++i)
      for (int j = 0; j < grid_n; ++j) {
        Eigen::VectorXd* pn = with_phi ? &phi_cache[i * grid_n + j] : nullptr;
        double v = marginal(b0s[i], as[j], pn);
        v += -0.5 * b0s[i] * b0s[i] / var_beta0 - 0.5 * as[j] * as[j] / var_alpha;
        lp(i, j) = v;
        best = std::max(best, v);
      }
    for (int i = 0; i < grid_n; ++i)
      for (int j = 0; j < grid_n; ++j) {
        const double w = std::exp(lp(i, j) - best);
        norm += w;
        sb += w * b0s[i];
        sb2 += w * b0s[i] * b0s[i];
        sa += w * as[j];
        sa2 += w * as[j] * as[j];
        if (with_phi) sphi += w * phi_cache[i * grid_n + j];
      }
    out.mean_beta0 = sb / norm;
    out.sd_beta0 = std::sqrt(sb2 / norm - out.mean_beta0 * out.mean_beta0);
    out.mean_alpha = sa / norm;
    out.sd_alpha = std::sqrt(sa2 / norm - out.mean_alpha * out.mean_alpha);
    if (with_phi) out.mean_phi = sphi / norm;
  };

  // coarse pass to locate the mass, then a tight pass for the moments
  double ysum = 0, esum = 0;
  for (int k = 0; k < K; ++k) {
    ysum += static_cast<double>(y[k]);
    esum += e[k];
  }
  const double b0c = std::log((ysum + 0.5) / esum);
  OracleResult coarse;
  sweep(b0c - 2.5, b0c + 2.5, -4.0, 4.0, false, coarse);
  OracleResult fine;
  sweep(coarse.mean_beta0 - 8 * coarse.sd_beta0, coarse.mean_beta0 + 8 * coarse.sd_beta0,
        coarse.mean_alpha - 8 * coarse.sd_alpha, coarse.mean_alpha + 8 * coarse.sd_alpha, true,
        fine);
  return fine;
}

}  // namespace spar::testsup
