#include "spar/inference.hpp"

#include <omp.h>

#include <cstdio>
#include <cstdlib>

#include <Eigen/SparseCholesky>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "spar/rng.hpp"
#include "spar/stats.hpp"

namespace spar {

namespace {

constexpr double kLogTwoPi = 1.8378770664093454836;
constexpr double kLogTwo = 0.6931471805599453094;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kEtaClamp = 30.0;    // proposal expansion point only
constexpr double kUridge = 1e-8;      // proposal regularization of the ICAR block

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double logit(double p) { return std::log(p / (1.0 - p)); }

// half-normal prior with precision tau0 on sigma = exp(-log_tau / 2),
// expressed as a density over log_tau (Jacobian included)
double half_normal_log_scale(double log_tau, double tau0) {
  const double sigma2 = std::exp(-log_tau);
  return 0.5 * std::log(2.0 * tau0) - 0.5 * (kLogTwoPi - kLogTwo) - 0.5 * tau0 * sigma2 -
         0.5 * log_tau - kLogTwo;
}

double half_normal_log_scale_grad(double log_tau, double tau0) {
  const double sigma2 = std::exp(-log_tau);
  return 0.5 * tau0 * sigma2 - 0.5;
}

struct Workspace {
  const Dataset* data = nullptr;
  const ModelSpec* spec = nullptr;
  int K = 0;
  Eigen::VectorXd x;  // observed exposure column
  Rw2Basis rw2;
  double penalty_logdet_plus = 0.0;
  bool has_m = false, has_x = false, has_u = false;
  int n_delta = 0;

  double tau_eff(const ParameterState& s) const {
    return spec->fix_tau_phi ? *spec->fix_tau_phi : std::exp(s.log_tau_phi);
  }
  double rho_eff(const ParameterState& s) const {
    return spec->fix_rho ? *spec->fix_rho : sigmoid(s.logit_rho);
  }
};

Workspace make_workspace(const Dataset& data, const ModelSpec& spec) {
  spec.validate(data);
  Workspace ws;
  ws.data = &data;
  ws.spec = &spec;
  ws.K = data.n_units();
  ws.x = data.exposures.col(spec.erf.exposure_index);
  ws.has_m = spec.confounder_mode == ConfounderMode::oob_offset && spec.sigma2_m > 0.0;
  ws.has_x = spec.erf.kind == ErfKind::berkson_linear && spec.erf.sigma2_x > 0.0;
  ws.has_u = spec.include_icar;
  ws.n_delta = spec.confounder_mode == ConfounderMode::linear
                   ? static_cast<int>(data.confounders.cols())
                   : 0;
  if (spec.erf.kind == ErfKind::pspline_rw2) {
    ws.rw2 = build_rw2_basis(ws.x, spec.erf.n_bins);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(ws.rw2.penalty);
    double ld = 0.0;
    const double tol = es.eigenvalues().maxCoeff() * 1e-12;
    for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i)
      if (es.eigenvalues()(i) > tol) ld += std::log(es.eigenvalues()(i));
    ws.penalty_logdet_plus = ld;
  }
  return ws;
}

Eigen::VectorXd compute_g(const ParameterState& state, const Workspace& ws) {
  switch (ws.spec->erf.kind) {
    case ErfKind::linear:
      return state.erf_params(0) * ws.x;
    case ErfKind::berkson_linear:
      return state.erf_params(0) * (ws.has_x ? state.x_latent : ws.x);
    case ErfKind::pspline_rw2: {
      Eigen::VectorXd g(ws.K);
      for (int k = 0; k < ws.K; ++k) g(k) = state.erf_params(ws.rw2.bin_of[k]);
      return g;
    }
  }
  throw std::logic_error("compute_g: unreachable");
}

Eigen::VectorXd compute_m(const ParameterState& state, const Workspace& ws) {
  if (ws.spec->confounder_mode == ConfounderMode::oob_offset)
    return ws.has_m ? state.m : ws.spec->mhat;
  if (ws.n_delta == 0) return Eigen::VectorXd::Zero(ws.K);
  return ws.data->confounders * state.delta;
}

Eigen::VectorXd compute_phi(const ParameterState& state, const Workspace& ws) {
  const double tau = ws.tau_eff(state);
  const double rho = ws.rho_eff(state);
  const double a = std::sqrt((1.0 - rho) / tau);
  Eigen::VectorXd phi = a * state.v;
  if (ws.has_u) phi += std::sqrt(rho / tau) * state.u;
  return phi;
}

bool state_finite(const ParameterState& s) {
  if (!std::isfinite(s.beta0) || !std::isfinite(s.log_tau_phi) || !std::isfinite(s.logit_rho) ||
      !std::isfinite(s.log_tau_gamma))
    return false;
  for (const auto* vec : {&s.erf_params, &s.delta, &s.m, &s.x_latent, &s.u, &s.v})
    if (vec->size() > 0 && !vec->allFinite()) return false;
  return true;
}

double log_posterior_ws(const ParameterState& state, const Workspace& ws) {
  if (!state_finite(state)) return kNegInf;
  const ModelSpec& spec = *ws.spec;
  const Dataset& data = *ws.data;

  const Eigen::VectorXd g = compute_g(state, ws);
  const Eigen::VectorXd m = compute_m(state, ws);
  const Eigen::VectorXd phi = compute_phi(state, ws);
  if (!phi.allFinite()) return kNegInf;

  double lp = 0.0;
  for (int k = 0; k < ws.K; ++k) {
    const double eta = state.beta0 + g(k) + m(k) + phi(k);
    const double log_mu = std::log(data.e[k]) + eta;
    const double mu = std::exp(log_mu);
    if (!std::isfinite(mu)) return kNegInf;
    lp += static_cast<double>(data.y[k]) * log_mu - mu -
          std::lgamma(static_cast<double>(data.y[k]) + 1.0);
  }

  lp += -0.5 * state.beta0 * state.beta0 / spec.beta0_prior_variance -
        0.5 * (std::log(spec.beta0_prior_variance) + kLogTwoPi);

  if (spec.erf.kind == ErfKind::pspline_rw2) {
    const int rank = spec.erf.n_bins - 2;
    const double tau_g = std::exp(state.log_tau_gamma);
    const double quad = state.erf_params.dot(ws.rw2.penalty * state.erf_params);
    lp += 0.5 * rank * state.log_tau_gamma - 0.5 * tau_g * quad +
          0.5 * ws.penalty_logdet_plus - 0.5 * rank * kLogTwoPi;
    lp += half_normal_log_scale(state.log_tau_gamma, spec.hyper.tau0);
  } else {
    const double pa = spec.erf.prior_precision_alpha;
    const double alpha = state.erf_params(0);
    lp += 0.5 * std::log(pa) - 0.5 * kLogTwoPi - 0.5 * pa * alpha * alpha;
  }

  for (int j = 0; j < ws.n_delta; ++j)
    lp += -0.5 * state.delta(j) * state.delta(j) / spec.delta_prior_variance -
          0.5 * (std::log(spec.delta_prior_variance) + kLogTwoPi);

  if (ws.has_m) {
    for (int k = 0; k < ws.K; ++k) {
      const double d = state.m(k) - spec.mhat(k);
      lp += -0.5 * d * d / spec.sigma2_m - 0.5 * (std::log(spec.sigma2_m) + kLogTwoPi);
    }
  }

  if (ws.has_x) {
    const double s2 = spec.erf.sigma2_x;
    for (int k = 0; k < ws.K; ++k) {
      const double d = state.x_latent(k) - ws.x(k);
      lp += -0.5 * d * d / s2 - 0.5 * (std::log(s2) + kLogTwoPi);
    }
  }

  lp += -0.5 * state.v.squaredNorm() - 0.5 * ws.K * kLogTwoPi;

  if (ws.has_u) {
    // intrinsic prior, improper up to a constant that never varies
    lp += -0.5 * state.u.dot(spec.precision.q_matrix * state.u);
  }

  if (!spec.fix_tau_phi) lp += half_normal_log_scale(state.log_tau_phi, spec.hyper.tau0);
  if (!spec.fix_rho) {
    const double d = (state.logit_rho - spec.hyper.pc_rho_mean) / spec.hyper.pc_rho_sd;
    lp += -0.5 * d * d - std::log(spec.hyper.pc_rho_sd) - 0.5 * kLogTwoPi;
  }
  return std::isfinite(lp) ? lp : kNegInf;
}

ParameterState log_posterior_grad_ws(const ParameterState& state, const Workspace& ws) {
  const ModelSpec& spec = *ws.spec;
  const Dataset& data = *ws.data;

  const Eigen::VectorXd g = compute_g(state, ws);
  const Eigen::VectorXd m = compute_m(state, ws);
  const double tau = ws.tau_eff(state);
  const double rho = ws.rho_eff(state);
  const double a = std::sqrt((1.0 - rho) / tau);
  const double b = ws.has_u ? std::sqrt(rho / tau) : 0.0;
  Eigen::VectorXd phi = a * state.v;
  if (ws.has_u) phi += b * state.u;

  Eigen::VectorXd score(ws.K);  // y - mu
  for (int k = 0; k < ws.K; ++k) {
    const double eta = state.beta0 + g(k) + m(k) + phi(k);
    score(k) = static_cast<double>(data.y[k]) - data.e[k] * std::exp(eta);
  }

  ParameterState grad;
  grad.erf_params = Eigen::VectorXd::Zero(state.erf_params.size());
  grad.delta = Eigen::VectorXd::Zero(state.delta.size());
  grad.m = Eigen::VectorXd::Zero(state.m.size());
  grad.x_latent = Eigen::VectorXd::Zero(state.x_latent.size());
  grad.u = Eigen::VectorXd::Zero(state.u.size());
  grad.v = Eigen::VectorXd::Zero(state.v.size());

  grad.beta0 = score.sum() - state.beta0 / spec.beta0_prior_variance;

  if (spec.erf.kind == ErfKind::pspline_rw2) {
    for (int k = 0; k < ws.K; ++k) grad.erf_params(ws.rw2.bin_of[k]) += score(k);
    const double tau_g = std::exp(state.log_tau_gamma);
    grad.erf_params -= tau_g * (ws.rw2.penalty * state.erf_params);
    const int rank = spec.erf.n_bins - 2;
    grad.log_tau_gamma =
        0.5 * rank - 0.5 * tau_g * state.erf_params.dot(ws.rw2.penalty * state.erf_params) +
        half_normal_log_scale_grad(state.log_tau_gamma, spec.hyper.tau0);
  } else {
    const Eigen::VectorXd& xeff = ws.has_x ? state.x_latent : ws.x;
    grad.erf_params(0) =
        score.dot(xeff) - spec.erf.prior_precision_alpha * state.erf_params(0);
  }

  if (ws.n_delta > 0)
    grad.delta = data.confounders.transpose() * score - state.delta / spec.delta_prior_variance;

  if (ws.has_m) grad.m = score - (state.m - spec.mhat) / spec.sigma2_m;

  if (ws.has_x)
    grad.x_latent =
        state.erf_params(0) * score - (state.x_latent - ws.x) / spec.erf.sigma2_x;

  grad.v = a * score - state.v;
  if (ws.has_u) grad.u = b * score - spec.precision.q_matrix * state.u;

  if (!spec.fix_tau_phi) {
    grad.log_tau_phi = score.dot(-0.5 * phi) +
                       half_normal_log_scale_grad(state.log_tau_phi, spec.hyper.tau0);
  }
  if (!spec.fix_rho) {
    // d phi / d logit_rho, with d rho / d logit = rho (1 - rho)
    Eigen::VectorXd dphi = (-0.5 * rho * std::sqrt(1.0 - rho) / std::sqrt(tau)) * state.v;
    if (ws.has_u) dphi += (0.5 * (1.0 - rho) * std::sqrt(rho) / std::sqrt(tau)) * state.u;
    grad.logit_rho = score.dot(dphi) -
                     (state.logit_rho - spec.hyper.pc_rho_mean) /
                         (spec.hyper.pc_rho_sd * spec.hyper.pc_rho_sd);
  }
  return grad;
}

}  // namespace

void ModelSpec::validate(const Dataset& data) const {
  data.validate();
  erf.validate();
  hyper.validate();
  if (erf.exposure_index < 0 || erf.exposure_index >= data.exposures.cols())
    throw std::invalid_argument("ModelSpec: exposure_index out of range");
  if (sigma2_m < 0.0) throw std::invalid_argument("ModelSpec: sigma2_m must be nonnegative");
  if (confounder_mode == ConfounderMode::oob_offset &&
      mhat.size() != data.n_units())
    throw std::invalid_argument("ModelSpec: mhat must have one entry per unit");
  if (precision.n_units() != data.n_units())
    throw std::invalid_argument("ModelSpec: precision size mismatch");
  if (fix_rho && (*fix_rho < 0.0 || *fix_rho > 1.0))
    throw std::invalid_argument("ModelSpec: fixed rho outside [0,1]");
  if (fix_tau_phi && !(*fix_tau_phi > 0.0))
    throw std::invalid_argument("ModelSpec: fixed tau_phi must be positive");
  if (!(beta0_prior_variance > 0.0) || !(delta_prior_variance > 0.0))
    throw std::invalid_argument("ModelSpec: prior variances must be positive");
}

ParameterState make_initial_state(const Dataset& data, const ModelSpec& spec) {
  const Workspace ws = make_workspace(data, spec);
  ParameterState s;
  double ysum = 0.0, esum = 0.0;
  for (int k = 0; k < ws.K; ++k) {
    ysum += static_cast<double>(data.y[k]);
    // crude intercept MLE given the fixed confounder offset
    const double off =
        spec.confounder_mode == ConfounderMode::oob_offset ? spec.mhat(k) : 0.0;
    esum += data.e[k] * std::exp(off);
  }
  s.beta0 = std::log((ysum + 0.5) / esum);
  s.erf_params = Eigen::VectorXd::Zero(spec.erf.kind == ErfKind::pspline_rw2 ? spec.erf.n_bins : 1);
  s.delta = Eigen::VectorXd::Zero(ws.n_delta);
  if (ws.has_m) s.m = spec.mhat;
  if (ws.has_x) s.x_latent = ws.x;
  if (ws.has_u) s.u = Eigen::VectorXd::Zero(ws.K);
  s.v = Eigen::VectorXd::Zero(ws.K);
  s.log_tau_phi = std::log(spec.fix_tau_phi ? *spec.fix_tau_phi : spec.hyper.tau_phi);
  const double rho0 = spec.fix_rho ? *spec.fix_rho : spec.hyper.rho;
  s.logit_rho = logit(std::clamp(rho0, 1e-12, 1.0 - 1e-12));
  s.log_tau_gamma = 0.0;
  return s;
}

double log_posterior(const ParameterState& state, const Dataset& data, const ModelSpec& spec) {
  return log_posterior_ws(state, make_workspace(data, spec));
}

ParameterState log_posterior_grad(const ParameterState& state, const Dataset& data,
                                  const ModelSpec& spec) {
  return log_posterior_grad_ws(state, make_workspace(data, spec));
}

namespace {

struct CoordRef {
  std::string name;
  double* ptr;
};

std::vector<CoordRef> coord_refs(ParameterState& s, const ModelSpec& spec) {
  std::vector<CoordRef> refs;
  refs.push_back({"beta0", &s.beta0});
  for (Eigen::Index i = 0; i < s.erf_params.size(); ++i)
    refs.push_back({s.erf_params.size() > 1 ? "gamma_" + std::to_string(i) : "alpha",
                    &s.erf_params(i)});
  for (Eigen::Index i = 0; i < s.delta.size(); ++i)
    refs.push_back({"delta_" + std::to_string(i), &s.delta(i)});
  for (Eigen::Index i = 0; i < s.m.size(); ++i)
    refs.push_back({"m_" + std::to_string(i), &s.m(i)});
  for (Eigen::Index i = 0; i < s.x_latent.size(); ++i)
    refs.push_back({"x_" + std::to_string(i), &s.x_latent(i)});
  for (Eigen::Index i = 0; i < s.u.size(); ++i)
    refs.push_back({"u_" + std::to_string(i), &s.u(i)});
  for (Eigen::Index i = 0; i < s.v.size(); ++i)
    refs.push_back({"v_" + std::to_string(i), &s.v(i)});
  if (!spec.fix_tau_phi) refs.push_back({"log_tau_phi", &s.log_tau_phi});
  if (!spec.fix_rho) refs.push_back({"logit_rho", &s.logit_rho});
  if (spec.erf.kind == ErfKind::pspline_rw2)
    refs.push_back({"log_tau_gamma", &s.log_tau_gamma});
  return refs;
}

}  // namespace

Eigen::VectorXd flatten_state(const ParameterState& state, const ModelSpec& spec) {
  ParameterState copy = state;
  const auto refs = coord_refs(copy, spec);
  Eigen::VectorXd w(refs.size());
  for (std::size_t i = 0; i < refs.size(); ++i) w(i) = *refs[i].ptr;
  return w;
}

ParameterState unflatten_state(const Eigen::VectorXd& w, const ParameterState& like,
                               const ModelSpec& spec) {
  ParameterState s = like;
  const auto refs = coord_refs(s, spec);
  if (w.size() != static_cast<Eigen::Index>(refs.size()))
    throw std::invalid_argument("unflatten_state: dimension mismatch");
  for (std::size_t i = 0; i < refs.size(); ++i) *refs[i].ptr = w(i);
  return s;
}

std::vector<std::string> active_coordinate_names(const ParameterState& state,
                                                 const ModelSpec& spec) {
  ParameterState copy = state;
  std::vector<std::string> names;
  for (const auto& ref : coord_refs(copy, spec)) names.push_back(ref.name);
  return names;
}

// ---------------------------------------------------------------------------
// sampler
// ---------------------------------------------------------------------------

namespace {

struct WLayout {
  int i_beta0 = 0;
  int o_erf = 0, n_erf = 0;
  int o_delta = 0, n_delta = 0;
  int o_m = 0, n_m = 0;
  int o_u = 0, n_u = 0;
  int o_v = 0, n_v = 0;
  int dim = 0;
};

WLayout make_layout(const Workspace& ws) {
  WLayout l;
  int at = 1;
  l.o_erf = at;
  l.n_erf = ws.spec->erf.kind == ErfKind::pspline_rw2 ? ws.spec->erf.n_bins : 1;
  at += l.n_erf;
  l.o_delta = at;
  l.n_delta = ws.n_delta;
  at += l.n_delta;
  l.o_m = at;
  l.n_m = ws.has_m ? ws.K : 0;
  at += l.n_m;
  l.o_u = at;
  l.n_u = ws.has_u ? ws.K : 0;
  at += l.n_u;
  l.o_v = at;
  l.n_v = ws.K;
  at += l.n_v;
  l.dim = at;
  return l;
}

Eigen::VectorXd state_to_w(const ParameterState& s, const WLayout& l) {
  Eigen::VectorXd w(l.dim);
  w(l.i_beta0) = s.beta0;
  w.segment(l.o_erf, l.n_erf) = s.erf_params;
  if (l.n_delta) w.segment(l.o_delta, l.n_delta) = s.delta;
  if (l.n_m) w.segment(l.o_m, l.n_m) = s.m;
  if (l.n_u) w.segment(l.o_u, l.n_u) = s.u;
  w.segment(l.o_v, l.n_v) = s.v;
  return w;
}

void w_to_state(const Eigen::VectorXd& w, const WLayout& l, ParameterState& s) {
  s.beta0 = w(l.i_beta0);
  s.erf_params = w.segment(l.o_erf, l.n_erf);
  if (l.n_delta) s.delta = w.segment(l.o_delta, l.n_delta);
  if (l.n_m) s.m = w.segment(l.o_m, l.n_m);
  if (l.n_u) s.u = w.segment(l.o_u, l.n_u);
  s.v = w.segment(l.o_v, l.n_v);
}

struct Proposal {
  Eigen::VectorXd mean;
  Eigen::SparseMatrix<double> qstar;
  double half_logdet = 0.0;
  int n_con = 0;
  Eigen::MatrixXd v_corr;  // Q*^{-1} A'
  Eigen::LDLT<Eigen::MatrixXd> s_ldlt;
  double s_half_logdet = 0.0;
  Eigen::VectorXd a_mean;
  bool ok = false;

  // density of the constraint-conditioned Gaussian at a point with Ax = 0
  double logq(const Eigen::VectorXd& x) const {
    const Eigen::VectorXd d = x - mean;
    double lq = half_logdet - 0.5 * static_cast<double>(x.size()) * kLogTwoPi -
                0.5 * d.dot(qstar * d);
    if (n_con > 0) {
      lq += s_half_logdet + 0.5 * n_con * kLogTwoPi +
            0.5 * a_mean.dot(s_ldlt.solve(a_mean));
    }
    return lq;
  }
};

struct WBlockMachine {
  WLayout layout;
  std::vector<Eigen::Triplet<double>> trips;
  Eigen::SparseMatrix<double> qbuf;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver;
  bool pattern_ready = false;
  Eigen::MatrixXd a_rows;  // n_con x dim constraint matrix (dense, few rows)
  int n_con = 0;

  explicit WBlockMachine(const Workspace& ws) {
    layout = make_layout(ws);
    qbuf.resize(layout.dim, layout.dim);
    std::vector<Eigen::VectorXd> rows;
    if (ws.has_u) {
      for (const auto& members : ws.spec->precision.components.members) {
        if (members.size() < 2) continue;
        Eigen::VectorXd row = Eigen::VectorXd::Zero(layout.dim);
        for (int k : members) row(layout.o_u + k) = 1.0;
        rows.push_back(std::move(row));
      }
    }
    if (ws.spec->erf.kind == ErfKind::pspline_rw2) {
      Eigen::VectorXd row = Eigen::VectorXd::Zero(layout.dim);
      for (int j = 0; j < layout.n_erf; ++j) row(layout.o_erf + j) = 1.0;
      rows.push_back(std::move(row));
    }
    n_con = static_cast<int>(rows.size());
    a_rows.resize(n_con, layout.dim);
    for (int r = 0; r < n_con; ++r) a_rows.row(r) = rows[r];
  }

  // row-k design entries of the linear predictor eta = C w (+ fixed offset)
  void design_row(const Workspace& ws, const ParameterState& state, int k,
                  std::vector<std::pair<int, double>>& entries) const {
    entries.clear();
    entries.emplace_back(layout.i_beta0, 1.0);
    if (ws.spec->erf.kind == ErfKind::pspline_rw2) {
      entries.emplace_back(layout.o_erf + ws.rw2.bin_of[k], 1.0);
    } else {
      const double xv = ws.has_x ? state.x_latent(k) : ws.x(k);
      entries.emplace_back(layout.o_erf, xv);
    }
    for (int j = 0; j < layout.n_delta; ++j)
      entries.emplace_back(layout.o_delta + j, ws.data->confounders(k, j));
    if (layout.n_m) entries.emplace_back(layout.o_m + k, 1.0);
    const double tau = ws.tau_eff(state);
    const double rho = ws.rho_eff(state);
    if (layout.n_u) entries.emplace_back(layout.o_u + k, std::sqrt(rho / tau));
    entries.emplace_back(layout.o_v + k, std::sqrt((1.0 - rho) / tau));
  }

  double eta_offset(const Workspace& ws, int k) const {
    // everything in eta is carried by w except the fixed m-hat offset
    if (ws.spec->confounder_mode == ConfounderMode::oob_offset && !ws.has_m)
      return ws.spec->mhat(k);
    return 0.0;
  }

  void assemble(const Workspace& ws, const ParameterState& expand, Eigen::VectorXd& bstar) {
    const ModelSpec& spec = *ws.spec;
    trips.clear();

    // prior precision
    trips.emplace_back(layout.i_beta0, layout.i_beta0, 1.0 / spec.beta0_prior_variance);
    if (spec.erf.kind == ErfKind::pspline_rw2) {
      const double tau_g = std::exp(expand.log_tau_gamma);
      for (int i = 0; i < layout.n_erf; ++i)
        for (int j = std::max(0, i - 2); j <= std::min(layout.n_erf - 1, i + 2); ++j)
          trips.emplace_back(layout.o_erf + i, layout.o_erf + j, tau_g * ws.rw2.penalty(i, j));
    } else {
      trips.emplace_back(layout.o_erf, layout.o_erf, spec.erf.prior_precision_alpha);
    }
    for (int j = 0; j < layout.n_delta; ++j)
      trips.emplace_back(layout.o_delta + j, layout.o_delta + j, 1.0 / spec.delta_prior_variance);
    for (int k = 0; k < layout.n_m; ++k)
      trips.emplace_back(layout.o_m + k, layout.o_m + k, 1.0 / spec.sigma2_m);
    if (layout.n_u) {
      const auto& q = spec.precision.q_matrix;
      for (int c = 0; c < q.outerSize(); ++c)
        for (Eigen::SparseMatrix<double>::InnerIterator it(q, c); it; ++it)
          trips.emplace_back(layout.o_u + static_cast<int>(it.row()),
                             layout.o_u + static_cast<int>(it.col()), it.value());
      for (int k = 0; k < layout.n_u; ++k)
        trips.emplace_back(layout.o_u + k, layout.o_u + k, kUridge);
    }
    for (int k = 0; k < layout.n_v; ++k)
      trips.emplace_back(layout.o_v + k, layout.o_v + k, 1.0);

    // likelihood curvature at the (clamped) expansion-point linear predictor
    bstar.setZero(layout.dim);
    for (int k = 0; k < layout.n_m; ++k)
      bstar(layout.o_m + k) = spec.mhat(k) / spec.sigma2_m;

    const Eigen::VectorXd g = compute_g(expand, ws);
    const Eigen::VectorXd m = compute_m(expand, ws);
    const Eigen::VectorXd phi = compute_phi(expand, ws);
    std::vector<std::pair<int, double>> entries;
    for (int k = 0; k < ws.K; ++k) {
      const double eta_c =
          std::clamp(expand.beta0 + g(k) + m(k) + phi(k), -kEtaClamp, kEtaClamp);
      const double mu = ws.data->e[k] * std::exp(eta_c);
      design_row(ws, expand, k, entries);
      const double off = eta_offset(ws, k);
      const double lin = (static_cast<double>(ws.data->y[k]) - mu) + mu * (eta_c - off);
      for (const auto& [ci, vi] : entries) {
        bstar(ci) += vi * lin;
        for (const auto& [cj, vj] : entries) trips.emplace_back(ci, cj, mu * vi * vj);
      }
    }
    qbuf.setFromTriplets(trips.begin(), trips.end());
  }

  // The proposal expands the likelihood around a short deterministic Newton
  // path started at the current state, so jumps land near the conditional
  // mode even when the chain starts far away. Both MH densities are built by
  // the same procedure, keeping the kernel exact.
  Proposal build(const Workspace& ws, const ParameterState& state, int n_newton = 2) {
    Proposal prop;
    ParameterState expand = state;
    Eigen::VectorXd bstar;
    for (int step = 0; step < n_newton; ++step) {
      assemble(ws, expand, bstar);
      if (!pattern_ready) {
        solver.analyzePattern(qbuf);
        pattern_ready = true;
      }
      solver.factorize(qbuf);
      if (solver.info() != Eigen::Success) return prop;
      const Eigen::VectorXd dvec = solver.vectorD();
      if ((dvec.array() <= 0.0).any()) return prop;

      Eigen::VectorXd mean = solver.solve(bstar);
      Eigen::MatrixXd v_corr;
      if (n_con > 0) v_corr = solver.solve(a_rows.transpose());

      if (step + 1 < n_newton) {
        Eigen::VectorXd next = mean;
        if (n_con > 0) {
          const Eigen::MatrixXd s = a_rows * v_corr;
          next -= v_corr * Eigen::LDLT<Eigen::MatrixXd>(s).solve(a_rows * mean);
        }
        if (!next.allFinite()) return prop;
        w_to_state(next, layout, expand);
        continue;
      }

      prop.qstar = qbuf;
      prop.half_logdet = 0.5 * dvec.array().log().sum();
      prop.mean = std::move(mean);
      prop.n_con = n_con;
      if (n_con > 0) {
        prop.v_corr = std::move(v_corr);
        const Eigen::MatrixXd s = a_rows * prop.v_corr;
        prop.s_ldlt.compute(s);
        if (prop.s_ldlt.info() != Eigen::Success) return prop;
        prop.s_half_logdet = 0.5 * prop.s_ldlt.vectorD().array().log().sum();
        if (!std::isfinite(prop.s_half_logdet)) return prop;
        prop.a_mean = a_rows * prop.mean;
      }
      prop.ok = std::isfinite(prop.half_logdet) && prop.mean.allFinite();
    }
    return prop;
  }

  // raw draw from N(mean, Q*^{-1}) then conditioned on A w = 0
  Eigen::VectorXd draw(const Proposal& prop, rng::Engine& eng) {
    Eigen::VectorXd z(layout.dim);
    for (int i = 0; i < layout.dim; ++i) z(i) = rng::normal(eng);
    const Eigen::VectorXd dvec = solver.vectorD();
    z.array() /= dvec.array().sqrt();
    Eigen::VectorXd t = solver.matrixU().solve(z);
    Eigen::VectorXd w = prop.mean + solver.permutationPinv() * t;
    if (prop.n_con > 0) w -= prop.v_corr * prop.s_ldlt.solve(a_rows * w);
    return w;
  }
};

struct AdaptiveScale {
  double log_sigma = std::log(0.5);
  long long n = 0;

  double sigma() const { return std::exp(log_sigma); }
  void update(bool accepted, bool adapting) {
    ++n;
    if (!adapting) return;
    const double rate = std::min(0.1, 3.0 / std::sqrt(static_cast<double>(n)));
    log_sigma += rate * ((accepted ? 1.0 : 0.0) - 0.44);
    log_sigma = std::clamp(log_sigma, -12.0, 6.0);
  }
};

struct ChainDraws {
  std::vector<double> beta0, tau, rho, taug;
  std::vector<Eigen::VectorXd> erf, delta, m, xlat, u, v, phi, gphi;
  long long acc_w = 0, try_w = 0, acc_x = 0, try_x = 0;
  long long acc_tau = 0, try_tau = 0, acc_rho = 0, try_rho = 0;
};

ChainDraws run_chain(const Dataset& data, const ModelSpec& spec, const Workspace& ws,
                     const SamplerConfig& config, int chain) {
  auto eng = rng::make_engine(config.seed, static_cast<std::uint64_t>(chain));
  ParameterState state = make_initial_state(data, spec);

  // overdispersed starts
  state.beta0 += 0.2 * rng::normal(eng);
  for (Eigen::Index i = 0; i < state.erf_params.size(); ++i)
    state.erf_params(i) += 0.05 * rng::normal(eng);
  if (!spec.fix_tau_phi) state.log_tau_phi += 0.5 * rng::normal(eng);
  if (!spec.fix_rho) state.logit_rho += 0.5 * rng::normal(eng);
  if (spec.erf.kind == ErfKind::pspline_rw2) state.log_tau_gamma += 0.5 * rng::normal(eng);

  WBlockMachine machine(ws);
  AdaptiveScale sc_tau, sc_tau_iw, sc_rho, sc_rho_iw, sc_taug;

  // warm start: one draw from the Gaussian approximation at the Newton mode,
  // so the chain begins inside the proposal's typical set instead of at the
  // degenerate all-zeros field
  {
    Proposal init_prop = machine.build(ws, state);
    if (init_prop.ok) {
      ParameterState warm = state;
      w_to_state(machine.draw(init_prop, eng), machine.layout, warm);
      if (log_posterior_ws(warm, ws) != kNegInf) state = std::move(warm);
    }
  }

  double lp = log_posterior_ws(state, ws);
  ChainDraws draws;

  const bool free_tau = !spec.fix_tau_phi.has_value();
  const bool free_rho = !spec.fix_rho.has_value();
  const bool pspline = spec.erf.kind == ErfKind::pspline_rw2;

  auto mh_1d = [&](double& coord, AdaptiveScale& sc, bool adapting) -> bool {
    const double old = coord;
    coord = old + sc.sigma() * rng::normal(eng);
    const double lp_new = log_posterior_ws(state, ws);
    bool acc = std::log(rng::uniform01(eng)) < lp_new - lp;
    if (acc)
      lp = lp_new;
    else
      coord = old;
    sc.update(acc, adapting);
    return acc;
  };

  // rescaling move: a random-walk step on the transformed hyperparameter with
  // the fields rescaled so phi is unchanged (the centered view of the update)
  auto interweave_tau = [&](bool adapting) -> bool {
    const double eps = sc_tau_iw.sigma() * rng::normal(eng);
    const double s = std::exp(0.5 * eps);
    ParameterState prop = state;
    prop.log_tau_phi += eps;
    prop.v *= s;
    if (ws.has_u) prop.u *= s;
    const double lp_new = log_posterior_ws(prop, ws);
    const double dims = static_cast<double>(prop.v.size() + prop.u.size());
    const double log_jac = dims * 0.5 * eps;
    bool acc = std::log(rng::uniform01(eng)) < lp_new - lp + log_jac;
    if (acc) {
      state = std::move(prop);
      lp = lp_new;
    }
    sc_tau_iw.update(acc, adapting);
    return acc;
  };

  auto interweave_rho = [&](bool adapting) -> bool {
    const double eps = sc_rho_iw.sigma() * rng::normal(eng);
    const double rho_old = ws.rho_eff(state);
    ParameterState prop = state;
    prop.logit_rho = std::clamp(state.logit_rho + eps, -45.0, 45.0);
    const double rho_new = sigmoid(prop.logit_rho);
    const double sv = std::sqrt((1.0 - rho_old) / (1.0 - rho_new));
    prop.v *= sv;
    double log_jac = static_cast<double>(prop.v.size()) * std::log(sv);
    if (ws.has_u) {
      const double su = std::sqrt(rho_old / rho_new);
      prop.u *= su;
      log_jac += static_cast<double>(prop.u.size()) * std::log(su);
    }
    if (!std::isfinite(log_jac)) {
      sc_rho_iw.update(false, adapting);
      return false;
    }
    const double lp_new = log_posterior_ws(prop, ws);
    bool acc = std::log(rng::uniform01(eng)) < lp_new - lp + log_jac;
    if (acc) {
      state = std::move(prop);
      lp = lp_new;
    }
    sc_rho_iw.update(acc, adapting);
    return acc;
  };

  auto x_block_move = [&]() -> long long {
    // per-site MH; sites are conditionally independent given everything else
    const double alpha = state.erf_params(0);
    const double s2 = spec.erf.sigma2_x;
    const Eigen::VectorXd m = compute_m(state, ws);
    const Eigen::VectorXd phi = compute_phi(state, ws);
    auto site_gauss = [&](int k, double x0, double& q, double& mn) {
      double xc = x0;  // short Newton path to the site conditional mode
      for (int it = 0; it < 2; ++it) {
        const double eta =
            std::clamp(state.beta0 + alpha * xc + m(k) + phi(k), -kEtaClamp, kEtaClamp);
        const double mu = ws.data->e[k] * std::exp(eta);
        q = 1.0 / s2 + mu * alpha * alpha;
        mn = (ws.x(k) / s2 + alpha * (static_cast<double>(ws.data->y[k]) - mu) +
              mu * alpha * alpha * xc) /
             q;
        xc = mn;
      }
    };
    auto site_logpost = [&](int k, double xv) {
      const double eta = state.beta0 + alpha * xv + m(k) + phi(k);
      const double log_mu = std::log(ws.data->e[k]) + eta;
      const double mu = std::exp(log_mu);
      if (!std::isfinite(mu)) return kNegInf;
      const double d = xv - ws.x(k);
      return static_cast<double>(ws.data->y[k]) * log_mu - mu - 0.5 * d * d / s2;
    };
    long long accepted = 0;
    for (int k = 0; k < ws.K; ++k) {
      double q0, mn0, q1, mn1;
      site_gauss(k, state.x_latent(k), q0, mn0);
      const double xp = mn0 + rng::normal(eng) / std::sqrt(q0);
      site_gauss(k, xp, q1, mn1);
      const double d0 = xp - mn0;
      const double d1 = state.x_latent(k) - mn1;
      const double logq_fwd = 0.5 * std::log(q0) - 0.5 * q0 * d0 * d0;
      const double logq_rev = 0.5 * std::log(q1) - 0.5 * q1 * d1 * d1;
      const double delta =
          site_logpost(k, xp) - site_logpost(k, state.x_latent(k)) + logq_rev - logq_fwd;
      if (std::log(rng::uniform01(eng)) < delta) {
        state.x_latent(k) = xp;
        ++accepted;
      }
    }
    lp = log_posterior_ws(state, ws);
    return accepted;
  };

  const int total = config.burn_in + config.n_samples;
  for (int iter = 0; iter < total; ++iter) {
    const bool adapting = iter < config.burn_in;

    // joint latent Gaussian block
    {
      ++draws.try_w;
      Proposal fwd = machine.build(ws, state);
      if (fwd.ok) {
        const Eigen::VectorXd w_cur = state_to_w(state, machine.layout);
        const Eigen::VectorXd w_prop = machine.draw(fwd, eng);
        ParameterState prop = state;
        w_to_state(w_prop, machine.layout, prop);
        const double lp_new = log_posterior_ws(prop, ws);
        if (lp_new != kNegInf) {
          const double logq_fwd = fwd.logq(w_prop);
          Proposal rev = machine.build(ws, prop);
          if (rev.ok) {
            const double logq_rev = rev.logq(w_cur);
            if (std::getenv("SPAR_MCMC_DEBUG") && iter < 12 && chain == 0) {
              std::fprintf(stderr,
                           "sweep %d: lp_new=%.3f lp=%.3f dlq=%.3f (fwd=%.3f rev=%.3f)\n",
                           iter, lp_new, lp, logq_rev - logq_fwd, logq_fwd, logq_rev);
            }
            if (std::log(rng::uniform01(eng)) < lp_new - lp + logq_rev - logq_fwd) {
              state = std::move(prop);
              lp = lp_new;
              ++draws.acc_w;
            }
          }
        } else if (std::getenv("SPAR_MCMC_DEBUG") && iter < 12 && chain == 0) {
          std::fprintf(stderr, "sweep %d: proposal landed at -inf\n", iter);
        }
      } else if (std::getenv("SPAR_MCMC_DEBUG") && iter < 12 && chain == 0) {
        std::fprintf(stderr, "sweep %d: proposal build failed\n", iter);
      }
    }

    if (ws.has_x) {
      draws.try_x += ws.K;
      draws.acc_x += x_block_move();
    }

    if (free_tau) {
      ++draws.try_tau;
      if (mh_1d(state.log_tau_phi, sc_tau, adapting)) ++draws.acc_tau;
      ++draws.try_tau;
      if (interweave_tau(adapting)) ++draws.acc_tau;
    }
    if (free_rho) {
      ++draws.try_rho;
      if (mh_1d(state.logit_rho, sc_rho, adapting)) ++draws.acc_rho;
      ++draws.try_rho;
      if (interweave_rho(adapting)) ++draws.acc_rho;
    }
    if (pspline) mh_1d(state.log_tau_gamma, sc_taug, adapting);

    const int post = iter - config.burn_in + 1;
    if (post > 0 && post % config.thin == 0) {
      draws.beta0.push_back(state.beta0);
      draws.tau.push_back(ws.tau_eff(state));
      draws.rho.push_back(ws.rho_eff(state));
      draws.taug.push_back(std::exp(state.log_tau_gamma));
      draws.erf.push_back(state.erf_params);
      draws.delta.push_back(state.delta);
      draws.m.push_back(state.m);
      draws.xlat.push_back(state.x_latent);
      draws.u.push_back(state.u);
      draws.v.push_back(state.v);
      const Eigen::VectorXd phi = compute_phi(state, ws);
      draws.phi.push_back(phi);
      draws.gphi.push_back(compute_g(state, ws) + phi);
    }
  }
  return draws;
}

PosteriorSamples merge_chains(const std::vector<ChainDraws>& chains, const Workspace& ws,
                              const SamplerConfig& config) {
  const int per = config.retained_per_chain();
  const int total = static_cast<int>(chains.size()) * per;
  PosteriorSamples out;
  out.n_samples = total;
  const int K = ws.K;
  const int n_erf = chains.empty() || chains[0].erf.empty()
                        ? 0
                        : static_cast<int>(chains[0].erf[0].size());
  out.erf_params.resize(total, n_erf);
  out.delta.resize(total, ws.n_delta);
  out.latent_m.resize(total, ws.has_m ? K : 0);
  out.latent_x.resize(total, ws.has_x ? K : 0);
  out.u.resize(total, ws.has_u ? K : 0);
  out.v.resize(total, K);
  out.phi.resize(total, K);
  out.g_plus_phi.resize(total, K);

  int s = 0;
  long long try_w = 0, acc_w = 0, try_x = 0, acc_x = 0, try_tau = 0, acc_tau = 0, try_rho = 0,
            acc_rho = 0;
  for (const auto& c : chains) {
    for (int i = 0; i < per; ++i, ++s) {
      out.beta0.push_back(c.beta0[i]);
      out.tau_phi.push_back(c.tau[i]);
      out.rho.push_back(c.rho[i]);
      out.tau_gamma.push_back(c.taug[i]);
      out.erf_params.row(s) = c.erf[i];
      if (ws.n_delta) out.delta.row(s) = c.delta[i];
      if (ws.has_m) out.latent_m.row(s) = c.m[i];
      if (ws.has_x) out.latent_x.row(s) = c.xlat[i];
      if (ws.has_u) out.u.row(s) = c.u[i];
      out.v.row(s) = c.v[i];
      out.phi.row(s) = c.phi[i];
      out.g_plus_phi.row(s) = c.gphi[i];
    }
    try_w += c.try_w;
    acc_w += c.acc_w;
    try_x += c.try_x;
    acc_x += c.acc_x;
    try_tau += c.try_tau;
    acc_tau += c.acc_tau;
    try_rho += c.try_rho;
    acc_rho += c.acc_rho;
  }
  out.accept_w = try_w ? static_cast<double>(acc_w) / try_w : 0.0;
  out.accept_x = try_x ? static_cast<double>(acc_x) / try_x : 0.0;
  out.accept_tau = try_tau ? static_cast<double>(acc_tau) / try_tau : 0.0;
  out.accept_rho = try_rho ? static_cast<double>(acc_rho) / try_rho : 0.0;
  return out;
}

void attach_diagnostics(PosteriorSamples& out, const std::vector<ChainDraws>& chains,
                        const Workspace& ws, const SamplerConfig& config) {
  const int per = config.retained_per_chain();
  if (per < 4 || chains.size() < 1) {
    out.max_rhat = 1.0;
    out.warnings.push_back("too few retained draws per chain for split-Rhat diagnostics");
    return;
  }
  double worst = 1.0;
  auto check = [&](auto accessor) {
    std::vector<std::vector<double>> series;
    for (const auto& c : chains) {
      std::vector<double> s(per);
      for (int i = 0; i < per; ++i) s[i] = accessor(c, i);
      series.push_back(std::move(s));
    }
    worst = std::max(worst, split_rhat(series));
  };
  check([](const ChainDraws& c, int i) { return c.beta0[i]; });
  const int n_erf = chains[0].erf.empty() ? 0 : static_cast<int>(chains[0].erf[0].size());
  for (int j = 0; j < n_erf; ++j)
    check([j](const ChainDraws& c, int i) { return c.erf[i](j); });
  for (int j = 0; j < ws.n_delta; ++j)
    check([j](const ChainDraws& c, int i) { return c.delta[i](j); });
  if (!ws.spec->fix_tau_phi)
    check([](const ChainDraws& c, int i) { return std::log(c.tau[i]); });
  if (!ws.spec->fix_rho) check([](const ChainDraws& c, int i) { return c.rho[i]; });
  for (int k = 0; k < ws.K; ++k)
    check([k](const ChainDraws& c, int i) { return c.phi[i](k); });
  out.max_rhat = worst;
  if (worst > 1.1)
    out.warnings.push_back("split-Rhat " + std::to_string(worst) +
                           " exceeds 1.1; chains may not have converged");
}

PosteriorSamples sample_posterior_impl(const Dataset& data, const ModelSpec& spec,
                                       const SamplerConfig& config, bool parallel) {
  if (data.n_units() < 2) throw std::invalid_argument("sample_posterior: need K >= 2");
  if (config.n_chains < 1 || config.n_samples < 1 || config.burn_in < 0 || config.thin < 1)
    throw std::invalid_argument("sample_posterior: invalid sampler configuration");
  if (config.retained_per_chain() < 1)
    throw std::invalid_argument("sample_posterior: thinning retains no draws");
  const Workspace ws = make_workspace(data, spec);

  std::vector<ChainDraws> chains(config.n_chains);
  const int nt = parallel ? (config.n_threads > 0 ? config.n_threads : omp_get_max_threads()) : 1;
#pragma omp parallel for schedule(dynamic) num_threads(nt)
  for (int c = 0; c < config.n_chains; ++c) chains[c] = run_chain(data, spec, ws, config, c);

  PosteriorSamples out = merge_chains(chains, ws, config);
  attach_diagnostics(out, chains, ws, config);
  return out;
}

}  // namespace

PosteriorSamples sample_posterior(const Dataset& data, const ModelSpec& spec,
                                  const SamplerConfig& config) {
  return sample_posterior_impl(data, spec, config, true);
}

PosteriorSamples sample_posterior_reference(const Dataset& data, const ModelSpec& spec,
                                            const SamplerConfig& config) {
  return sample_posterior_impl(data, spec, config, false);
}

Eigen::MatrixXd linear_predictors(const PosteriorSamples& samples, const Dataset& data,
                                  const ModelSpec& spec) {
  const Workspace ws = make_workspace(data, spec);
  const int S = samples.n_samples;
  Eigen::MatrixXd eta(S, ws.K);
  for (int s = 0; s < S; ++s) {
    Eigen::VectorXd g(ws.K);
    if (spec.erf.kind == ErfKind::pspline_rw2) {
      for (int k = 0; k < ws.K; ++k) g(k) = samples.erf_params(s, ws.rw2.bin_of[k]);
    } else if (ws.has_x) {
      g = samples.erf_params(s, 0) * samples.latent_x.row(s).transpose();
    } else {
      g = samples.erf_params(s, 0) * ws.x;
    }
    Eigen::VectorXd m;
    if (spec.confounder_mode == ConfounderMode::oob_offset) {
      m = ws.has_m ? Eigen::VectorXd(samples.latent_m.row(s).transpose()) : spec.mhat;
    } else if (ws.n_delta > 0) {
      m = data.confounders * samples.delta.row(s).transpose();
    } else {
      m = Eigen::VectorXd::Zero(ws.K);
    }
    for (int k = 0; k < ws.K; ++k)
      eta(s, k) = samples.beta0[s] + g(k) + m(k) + samples.phi(s, k);
  }
  return eta;
}

namespace {

double poisson_loglik_row(const Eigen::VectorXd& eta, const Dataset& data) {
  double ll = 0.0;
  for (int k = 0; k < data.n_units(); ++k) {
    const double log_mu = std::log(data.e[k]) + eta(k);
    ll += static_cast<double>(data.y[k]) * log_mu - std::exp(log_mu) -
          std::lgamma(static_cast<double>(data.y[k]) + 1.0);
  }
  return ll;
}

}  // namespace

WaicResult waic(const PosteriorSamples& samples, const Dataset& data, const ModelSpec& spec) {
  if (samples.n_samples < 2) throw std::invalid_argument("waic: need at least 2 samples");
  const Eigen::MatrixXd eta = linear_predictors(samples, data, spec);
  const int S = samples.n_samples;
  const int K = data.n_units();
  WaicResult res;
  double lppd = 0.0;
  std::vector<double> ll(S);
  for (int k = 0; k < K; ++k) {
    for (int s = 0; s < S; ++s) {
      const double log_mu = std::log(data.e[k]) + eta(s, k);
      ll[s] = static_cast<double>(data.y[k]) * log_mu - std::exp(log_mu) -
              std::lgamma(static_cast<double>(data.y[k]) + 1.0);
    }
    lppd += stats::logsumexp(ll) - std::log(static_cast<double>(S));
    res.p_w += stats::variance(ll);
  }
  res.waic = -2.0 * (lppd - res.p_w);
  return res;
}

DevianceSummary deviance_summaries(const PosteriorSamples& samples, const Dataset& data,
                                   const ModelSpec& spec) {
  if (samples.n_samples < 1) throw std::invalid_argument("deviance_summaries: need samples");
  const Eigen::MatrixXd eta = linear_predictors(samples, data, spec);
  DevianceSummary out;
  for (int s = 0; s < samples.n_samples; ++s)
    out.d_bar += -2.0 * poisson_loglik_row(eta.row(s).transpose(), data);
  out.d_bar /= samples.n_samples;

  // posterior means of the quantities entering the linear predictor
  PosteriorSamples mean_draw;
  mean_draw.n_samples = 1;
  mean_draw.beta0 = {stats::mean(samples.beta0)};
  mean_draw.erf_params = samples.erf_params.colwise().mean();
  mean_draw.delta = samples.delta.colwise().mean();
  mean_draw.latent_m = Eigen::MatrixXd(samples.latent_m.colwise().mean());
  mean_draw.latent_x = Eigen::MatrixXd(samples.latent_x.colwise().mean());
  mean_draw.phi = samples.phi.colwise().mean();
  const Eigen::MatrixXd eta_mean = linear_predictors(mean_draw, data, spec);
  out.d_at_mean = -2.0 * poisson_loglik_row(eta_mean.row(0).transpose(), data);
  return out;
}

double split_rhat(const std::vector<std::vector<double>>& chains) {
  std::vector<std::vector<double>> halves;
  for (const auto& c : chains) {
    const std::size_t half = c.size() / 2;
    if (half < 2) throw std::invalid_argument("split_rhat: need >= 4 draws per chain");
    halves.emplace_back(c.begin(), c.begin() + half);
    halves.emplace_back(c.begin() + half, c.begin() + 2 * half);
  }
  const double n = static_cast<double>(halves[0].size());
  std::vector<double> means, vars;
  for (const auto& h : halves) {
    means.push_back(stats::mean(h));
    vars.push_back(stats::variance(h));
  }
  const double w = stats::mean(vars);
  const double b = n * stats::variance(means);
  if (w < 1e-300) return 1.0;
  const double var_plus = (n - 1.0) / n * w + b / n;
  return std::sqrt(var_plus / w);
}

double mcse_mean(const std::vector<double>& draws, int n_batches) {
  const int n = static_cast<int>(draws.size());
  if (n < 2 * n_batches) n_batches = std::max(2, n / 2);
  const int bs = n / n_batches;
  std::vector<double> bm;
  for (int b = 0; b < n_batches; ++b) {
    double s = 0.0;
    for (int i = b * bs; i < (b + 1) * bs; ++i) s += draws[i];
    bm.push_back(s / bs);
  }
  return stats::sd(bm) / std::sqrt(static_cast<double>(n_batches));
}

double mcse_sd(const std::vector<double>& draws, int n_batches) {
  const int n = static_cast<int>(draws.size());
  if (n < 2 * n_batches) n_batches = std::max(2, n / 2);
  const int bs = n / n_batches;
  std::vector<double> bv;
  for (int b = 0; b < n_batches; ++b) {
    std::vector<double> chunk(draws.begin() + b * bs, draws.begin() + (b + 1) * bs);
    bv.push_back(stats::variance(chunk));
  }
  const double mcse_var = stats::sd(bv) / std::sqrt(static_cast<double>(n_batches));
  const double overall_sd = stats::sd(draws);
  return mcse_var / std::max(2.0 * overall_sd, 1e-12);
}

}  // namespace spar
