#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <vector>

namespace minvar {

struct QpKktResiduals {
  double stationarity = 0.0;      // max |(Sigma w - mu 1 - eta)_i| on the support
  double primal_budget = 0.0;     // |1'w - 1|
  double primal_negativity = 0.0; // max(0, -min_i w_i)
  double complementarity = 0.0;   // max_i |w_i * eta_i|
  double dual_feasibility = 0.0;  // max(0, -min_i eta_i)

  double worst() const {
    double m = stationarity;
    m = std::max(m, primal_budget);
    m = std::max(m, primal_negativity);
    m = std::max(m, complementarity);
    return std::max(m, dual_feasibility);
  }
};

struct QpResult {
  Eigen::VectorXd weights;
  double variance = 0.0;
  double multiplier = 0.0;  // budget-constraint multiplier mu
  int pivots = 0;
  bool converged = false;
  QpKktResiduals kkt;
};

/// KKT residuals of min w'Sigma w s.t. 1'w = 1, w >= 0 at a candidate w.
/// eta := Sigma w - mu 1 with mu the active-support value of (Sigma w).
inline QpKktResiduals longonly_kkt_residuals(const Eigen::MatrixXd& sigma,
                                             const Eigen::VectorXd& w, double mu) {
  QpKktResiduals r;
  const Eigen::VectorXd grad = sigma * w;
  const Eigen::VectorXd eta = grad.array() - mu;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    if (w(i) > 0.0) r.stationarity = std::max(r.stationarity, std::abs(eta(i)));
    r.complementarity = std::max(r.complementarity, std::abs(w(i) * eta(i)));
    r.dual_feasibility = std::max(r.dual_feasibility, -eta(i));
    r.primal_negativity = std::max(r.primal_negativity, -w(i));
  }
  r.primal_budget = std::abs(w.sum() - 1.0);
  r.dual_feasibility = std::max(0.0, r.dual_feasibility);
  r.primal_negativity = std::max(0.0, r.primal_negativity);
  return r;
}

/// Long-only GMV: minimize w'Sigma w subject to 1'w = 1, w >= 0.
///
/// Primal active-set iteration on the nonnegativity constraints with the
/// budget handled by elimination: on the current support F the
/// equality-constrained optimum is Sigma_FF^-1 1 / (1' Sigma_FF^-1 1).
/// Infeasible candidates trigger a line-search step back to the last blocking
/// constraint; optimality is declared when all off-support multipliers are
/// nonnegative. Finite termination for positive-definite Sigma.
///
/// A diagonal jitter of 1e-10 * trace/n is added when the smallest eigenvalue
/// falls below 1e-12 * trace/n.
inline QpResult solve_longonly_gmv(Eigen::MatrixXd sigma, int max_pivots = -1) {
  const Eigen::Index n = sigma.rows();
  if (n == 0 || sigma.cols() != n)
    throw std::invalid_argument("solve_longonly_gmv: square matrix required");
  sigma = 0.5 * (sigma + sigma.transpose());
  const double scale = std::max(sigma.trace() / static_cast<double>(n), 1e-300);
  {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sigma,
                                                      Eigen::EigenvaluesOnly);
    if (es.eigenvalues()(0) < 1e-12 * scale)
      sigma.diagonal().array() += 1e-10 * scale;
  }
  if (max_pivots < 0) max_pivots = static_cast<int>(10 * n * n + 64);

  std::vector<bool> in_support(static_cast<std::size_t>(n), false);
  std::vector<Eigen::Index> support;
  // Start from the single lowest-variance asset (feasible vertex).
  Eigen::Index start = 0;
  sigma.diagonal().minCoeff(&start);
  support.push_back(start);
  in_support[static_cast<std::size_t>(start)] = true;
  Eigen::VectorXd w = Eigen::VectorXd::Zero(n);
  w(start) = 1.0;

  auto solve_on_support = [&](Eigen::VectorXd& candidate) {
    const auto k = static_cast<Eigen::Index>(support.size());
    Eigen::MatrixXd s(k, k);
    for (Eigen::Index a = 0; a < k; ++a)
      for (Eigen::Index b = 0; b < k; ++b) s(a, b) = sigma(support[a], support[b]);
    Eigen::VectorXd u = s.ldlt().solve(Eigen::VectorXd::Ones(k));
    const double denom = u.sum();
    if (!(denom > 0.0))
      throw std::runtime_error("solve_longonly_gmv: degenerate support system");
    candidate.setZero(n);
    for (Eigen::Index a = 0; a < k; ++a) candidate(support[a]) = u(a) / denom;
  };

  QpResult res;
  Eigen::VectorXd candidate(n);
  const double tol = 1e-11 * std::max(1.0, scale);
  for (res.pivots = 0; res.pivots < max_pivots; ++res.pivots) {
    solve_on_support(candidate);

    if (candidate.minCoeff() < -tol) {
      // Step toward the candidate until the first support weight hits zero.
      double alpha = 1.0;
      Eigen::Index blocker = -1;
      for (Eigen::Index idx : support) {
        if (candidate(idx) < w(idx)) {
          const double a = w(idx) / (w(idx) - candidate(idx));
          if (a < alpha) {
            alpha = a;
            blocker = idx;
          }
        }
      }
      w = w + alpha * (candidate - w);
      if (blocker >= 0) {
        w(blocker) = 0.0;
        in_support[static_cast<std::size_t>(blocker)] = false;
        support.erase(std::find(support.begin(), support.end(), blocker));
      }
      continue;
    }

    w = candidate;
    const Eigen::VectorXd grad = sigma * w;
    double mu = 0.0;
    for (Eigen::Index idx : support) mu += grad(idx);
    mu /= static_cast<double>(support.size());

    // Most violating off-support multiplier.
    double worst = -tol;
    Eigen::Index entering = -1;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (in_support[static_cast<std::size_t>(i)]) continue;
      const double eta = grad(i) - mu;
      if (eta < worst) {
        worst = eta;
        entering = i;
      }
    }
    if (entering < 0) {
      res.converged = true;
      res.multiplier = mu;
      break;
    }
    support.push_back(entering);
    in_support[static_cast<std::size_t>(entering)] = true;
  }

  if (!res.converged)
    throw std::runtime_error("solve_longonly_gmv: pivot cap reached without convergence");
  res.weights = w;
  res.variance = w.dot(sigma * w);
  res.kkt = longonly_kkt_residuals(sigma, w, res.multiplier);
  return res;
}

}  // namespace minvar
