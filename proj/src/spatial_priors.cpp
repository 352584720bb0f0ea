#include "spar/spatial_priors.hpp"

#include <cmath>
#include <stdexcept>

namespace spar {

Eigen::SparseMatrix<double> icar_precision(const NeighborLists& neighbors) {
  const int n = static_cast<int>(neighbors.size());
  if (n == 0) throw std::invalid_argument("icar_precision: empty adjacency");
  std::vector<Eigen::Triplet<double>> trips;
  for (int k = 0; k < n; ++k) {
    trips.emplace_back(k, k, static_cast<double>(neighbors[k].size()));
    for (int j : neighbors[k]) trips.emplace_back(k, j, -1.0);
  }
  Eigen::SparseMatrix<double> q(n, n);
  q.setFromTriplets(trips.begin(), trips.end());
  return q;
}

Components connected_components(const NeighborLists& neighbors) {
  const int n = static_cast<int>(neighbors.size());
  Components comp;
  comp.label.assign(n, -1);
  for (int start = 0; start < n; ++start) {
    if (comp.label[start] >= 0) continue;
    const int id = comp.count();
    comp.members.emplace_back();
    std::vector<int> stack = {start};
    comp.label[start] = id;
    while (!stack.empty()) {
      const int k = stack.back();
      stack.pop_back();
      comp.members[id].push_back(k);
      for (int j : neighbors[k]) {
        if (comp.label[j] < 0) {
          comp.label[j] = id;
          stack.push_back(j);
        }
      }
    }
  }
  for (auto& m : comp.members) std::sort(m.begin(), m.end());
  return comp;
}

namespace {

// variances of the constrained generalized inverse of one component
Eigen::VectorXd component_variances(const Eigen::MatrixXd& qc, int eigen_cap) {
  const int n = static_cast<int>(qc.rows());
  Eigen::VectorXd var(n);
  if (n <= eigen_cap) {
    // Moore-Penrose pseudoinverse diagonal; equals the sum-to-zero
    // constrained covariance because the null space is the constant vector
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(qc);
    if (es.info() != Eigen::Success)
      throw std::runtime_error("icar_marginal_variances: eigendecomposition failed");
    const Eigen::VectorXd& ev = es.eigenvalues();
    const double tol = ev(n - 1) * 1e-9 * n;
    var.setZero();
    for (int i = 0; i < n; ++i) {
      if (ev(i) <= tol) continue;
      var += es.eigenvectors().col(i).cwiseAbs2() / ev(i);
    }
  } else {
    // solve on the sum-to-zero subspace spanned by b_i = e_i - e_{n-1}
    Eigen::MatrixXd b = Eigen::MatrixXd::Zero(n, n - 1);
    for (int i = 0; i < n - 1; ++i) {
      b(i, i) = 1.0;
      b(n - 1, i) = -1.0;
    }
    const Eigen::MatrixXd m = b.transpose() * qc * b;
    Eigen::LLT<Eigen::MatrixXd> llt(m);
    if (llt.info() != Eigen::Success)
      throw std::runtime_error("icar_marginal_variances: subspace solve failed");
    const Eigen::MatrixXd cov_sub = llt.solve(Eigen::MatrixXd::Identity(n - 1, n - 1));
    // B (B'QB)^{-1} B' is basis independent and equals the pseudoinverse
    const Eigen::MatrixXd cov = b * cov_sub * b.transpose();
    for (int i = 0; i < n; ++i) var(i) = cov(i, i);
  }
  return var;
}

}  // namespace

Eigen::VectorXd icar_marginal_variances(const Eigen::SparseMatrix<double>& q,
                                        const Components& components, int eigen_cap) {
  const int n = static_cast<int>(q.rows());
  Eigen::VectorXd var(n);
  const Eigen::MatrixXd qd = Eigen::MatrixXd(q);
  for (const auto& members : components.members) {
    const int nc = static_cast<int>(members.size());
    if (nc == 1) {
      var(members[0]) = 1.0;  // independence fallback
      continue;
    }
    Eigen::MatrixXd qc(nc, nc);
    for (int i = 0; i < nc; ++i)
      for (int j = 0; j < nc; ++j) qc(i, j) = qd(members[i], members[j]);
    const Eigen::VectorXd vc = component_variances(qc, eigen_cap);
    for (int i = 0; i < nc; ++i) var(members[i]) = vc(i);
  }
  return var;
}

ScaledIcarPrecision scale_icar(const Eigen::SparseMatrix<double>& q,
                               const Components& components, int eigen_cap) {
  const int n = static_cast<int>(q.rows());
  if (n == 0) throw std::invalid_argument("scale_icar: empty precision");

  // unit-variance independent effect for singleton components
  Eigen::SparseMatrix<double> q_mod = q;
  for (const auto& members : components.members)
    if (members.size() == 1) q_mod.coeffRef(members[0], members[0]) = 1.0;
  q_mod.makeCompressed();

  const Eigen::VectorXd var = icar_marginal_variances(q_mod, components, eigen_cap);
  double log_sum = 0.0;
  for (int k = 0; k < n; ++k) {
    if (!(var(k) > 0.0)) throw std::runtime_error("scale_icar: nonpositive marginal variance");
    log_sum += std::log(var(k));
  }
  const double s = std::exp(log_sum / n);

  ScaledIcarPrecision out;
  out.q_matrix = q_mod * s;
  out.q_matrix.makeCompressed();
  out.scale_factor = s;
  out.components = components;
  return out;
}

ScaledIcarPrecision scale_icar(const NeighborLists& neighbors, int eigen_cap) {
  return scale_icar(icar_precision(neighbors), connected_components(neighbors), eigen_cap);
}

void Bym2Hyperparams::validate() const {
  if (!(tau_phi > 0.0)) throw std::invalid_argument("Bym2Hyperparams: tau_phi must be positive");
  if (rho < 0.0 || rho > 1.0) throw std::invalid_argument("Bym2Hyperparams: rho outside [0,1]");
  if (!(tau0 > 0.0)) throw std::invalid_argument("Bym2Hyperparams: tau0 must be positive");
  if (!(pc_rho_sd > 0.0)) throw std::invalid_argument("Bym2Hyperparams: pc_rho_sd must be positive");
}

Eigen::VectorXd bym2_compose(const Eigen::VectorXd& v, const Eigen::VectorXd& u, double rho,
                             double tau_phi) {
  if (v.size() != u.size()) throw std::invalid_argument("bym2_compose: length mismatch");
  if (!(tau_phi > 0.0)) throw std::invalid_argument("bym2_compose: tau_phi must be positive");
  if (rho < 0.0 || rho > 1.0) throw std::invalid_argument("bym2_compose: rho outside [0,1]");
  return (std::sqrt(1.0 - rho) * v + std::sqrt(rho) * u) / std::sqrt(tau_phi);
}

}  // namespace spar
