#include "spar/erf.hpp"

#include <cmath>
#include <stdexcept>

#include "spar/stats.hpp"

namespace spar {

std::string erf_kind_name(ErfKind kind) {
  switch (kind) {
    case ErfKind::linear: return "linear";
    case ErfKind::pspline_rw2: return "pspline";
    case ErfKind::berkson_linear: return "berkson";
  }
  return "?";
}

ErfKind parse_erf_kind(const std::string& name) {
  if (name == "linear") return ErfKind::linear;
  if (name == "pspline") return ErfKind::pspline_rw2;
  if (name == "berkson") return ErfKind::berkson_linear;
  throw std::invalid_argument("unknown ERF '" + name + "' (expected linear, pspline or berkson)");
}

void ErfSpec::validate() const {
  if (kind == ErfKind::pspline_rw2 && n_bins < 4)
    throw std::invalid_argument("ErfSpec: RW2 needs n_bins >= 4");
  if (sigma2_x < 0.0) throw std::invalid_argument("ErfSpec: sigma2_x must be nonnegative");
  if (!(prior_precision_alpha > 0.0))
    throw std::invalid_argument("ErfSpec: prior_precision_alpha must be positive");
}

int Rw2Basis::assign(double x) const {
  if (x >= hi) return n_bins - 1;  // max closed into the last bin
  int b = static_cast<int>(std::floor((x - lo) / width));
  if (b < 0) b = 0;
  if (b > n_bins - 1) b = n_bins - 1;
  return b;
}

Eigen::VectorXd Rw2Basis::eval(const Eigen::VectorXd& coef, const Eigen::VectorXd& x) const {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index k = 0; k < x.size(); ++k) g(k) = coef(assign(x(k)));
  return g;
}

Rw2Basis build_rw2_basis(const Eigen::VectorXd& x, int n_bins) {
  if (n_bins < 4) throw std::invalid_argument("build_rw2_basis: n_bins >= 4 required");
  if (x.size() < 2) throw std::invalid_argument("build_rw2_basis: need at least 2 values");
  Rw2Basis b;
  b.n_bins = n_bins;
  b.lo = x.minCoeff();
  b.hi = x.maxCoeff();
  if (!(b.hi > b.lo)) throw std::invalid_argument("build_rw2_basis: exposure is constant");
  b.width = (b.hi - b.lo) / n_bins;

  b.bin_of.resize(x.size());
  for (Eigen::Index k = 0; k < x.size(); ++k) b.bin_of[k] = b.assign(x(k));

  b.second_diff = Eigen::MatrixXd::Zero(n_bins - 2, n_bins);
  for (int i = 0; i < n_bins - 2; ++i) {
    b.second_diff(i, i) = 1.0;
    b.second_diff(i, i + 1) = -2.0;
    b.second_diff(i, i + 2) = 1.0;
  }
  b.penalty = b.second_diff.transpose() * b.second_diff;
  return b;
}

BerksonContract berkson_linear_contract(const Eigen::VectorXd& x_tilde, double sigma2_x) {
  if (sigma2_x < 0.0)
    throw std::invalid_argument("berkson_linear_contract: sigma2_x must be nonnegative");
  BerksonContract c;
  c.x_tilde = x_tilde;
  c.sigma2_x = sigma2_x;
  c.collapses_to_linear = (sigma2_x == 0.0);
  return c;
}

ErfPosterior summarize_erf_draws(const Eigen::VectorXd& grid, const Eigen::MatrixXd& draws) {
  if (draws.rows() == 0) throw std::invalid_argument("summarize_erf_draws: no draws");
  if (draws.cols() != grid.size())
    throw std::invalid_argument("summarize_erf_draws: grid/draw width mismatch");
  ErfPosterior p;
  p.grid = grid;
  p.samples = draws;
  const Eigen::Index g = grid.size();
  p.mean.resize(g);
  p.lower95.resize(g);
  p.upper95.resize(g);
  for (Eigen::Index j = 0; j < g; ++j) {
    std::vector<double> col(draws.col(j).data(), draws.col(j).data() + draws.rows());
    p.mean(j) = stats::mean(col);
    p.lower95(j) = stats::quantile(col, 0.025);
    p.upper95(j) = stats::quantile(col, 0.975);
  }
  return p;
}

RrSummary rr_report(const std::vector<double>& alpha_samples, double delta) {
  if (alpha_samples.empty()) throw std::invalid_argument("rr_report: empty sample set");
  if (!(delta > 0.0)) throw std::invalid_argument("rr_report: delta must be positive");
  std::vector<double> rr(alpha_samples.size());
  for (std::size_t s = 0; s < alpha_samples.size(); ++s) rr[s] = std::exp(alpha_samples[s] * delta);
  RrSummary out;
  out.mean = stats::mean(rr);
  out.lower95 = stats::quantile(rr, 0.025);
  out.upper95 = stats::quantile(rr, 0.975);
  return out;
}

ErfPosterior rr_relative_to_min(const ErfPosterior& erf) {
  if (erf.samples.rows() == 0) throw std::invalid_argument("rr_relative_to_min: empty sample set");
  Eigen::MatrixXd rr = erf.samples;
  for (Eigen::Index s = 0; s < rr.rows(); ++s) {
    const double ref = rr(s, 0);
    for (Eigen::Index j = 0; j < rr.cols(); ++j) rr(s, j) = std::exp(rr(s, j) - ref);
  }
  return summarize_erf_draws(erf.grid, rr);
}

}  // namespace spar
