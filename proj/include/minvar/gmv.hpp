#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "minvar/autodiff.hpp"
#include "minvar/rng.hpp"
#include "minvar/vol_mlp.hpp"

namespace minvar {

/// Eigendecomposition of a sample correlation matrix, ascending order.
struct SpectralDecomp {
  Eigen::VectorXd eigenvalues;
  Eigen::MatrixXd eigenvectors;  // column k pairs with eigenvalues(k)
};

/// Inverse-covariance estimate together with its retained factors
/// (precision = D^-1 V L^-1 V^T D^-1).
struct PrecisionEstimate {
  Eigen::MatrixXd precision;
  Eigen::VectorXd inv_vols;         // diagonal of D^-1
  Eigen::MatrixXd factor_vectors;   // V (diagonal-projected eigenvectors)
  Eigen::VectorXd inv_eigenvalues;  // diagonal of L^-1
};

struct PortfolioWeights {
  enum class Constraint { kUnconstrained, kLongOnly };
  Eigen::VectorXd w;
  Constraint constraint = Constraint::kUnconstrained;
};

// ---------------------------------------------------------------------------
// Graph ops (differentiable path)
// ---------------------------------------------------------------------------

/// Copy with the diagonal pinned to exactly 1. The diagonal of a standardized
/// correlation is identically 1 as a function of the inputs, so its true
/// derivative is zero; pinning it removes the cancelling gradient terms.
inline ad::Var set_unit_diagonal(ad::Var c) {
  ad::Tape& t = *c.tape;
  const ad::Tensor& vc = t.val(c);
  if (vc.rank() != 2 || vc.rows() != vc.cols())
    throw std::invalid_argument("set_unit_diagonal: square matrix required");
  const auto n = vc.rows();
  ad::Tensor out = vc;
  for (ad::Tensor::Index i = 0; i < n; ++i) out.at(i, i) = 1.0;
  const bool needs = t.needs_grad(c);
  ad::Var o{&t, t.emplace(std::move(out), needs)};
  if (needs) {
    t.set_backward(o.id, [=](ad::Tape& tp) {
      const ad::Tensor& g = tp.grad_raw(o.id);
      ad::Tensor& gc = tp.ensure_grad(c.id);
      for (ad::Tensor::Index i = 0; i < n; ++i)
        for (ad::Tensor::Index j = 0; j < n; ++j)
          if (i != j) gc.at(i, j) += g.at(i, j);
    });
  }
  return o;
}

struct CorrelationGraph {
  ad::Var correlation;  // n x n, unit diagonal
  ad::Var sigma;        // population-convention marginal stds of the window
  ad::Var standardized;  // dt x n
};

/// Standardize a (dt x n) window per asset (subtract mean, divide by the
/// population std) and form C = Z^T Z / dt. Throws on zero-variance columns.
inline CorrelationGraph sample_correlation(ad::Var window) {
  ad::Tape& t = *window.tape;
  const ad::Tensor& w = t.val(window);
  if (w.rank() != 2 || w.rows() < 2)
    throw std::invalid_argument("sample_correlation: (dt x n) window with dt >= 2 required");
  const auto dt = w.rows();
  const auto n = w.cols();
  ad::Var sigma = marginal_std(window);
  ad::Var centered = ad::sub(window, ad::broadcast_rows(ad::mean_axis(window, 0), dt));
  ad::Var z = ad::div(centered, ad::broadcast_rows(sigma, dt));
  ad::Var corr = ad::cmul(ad::matmul(ad::transpose(z), z), 1.0 / static_cast<double>(dt));
  (void)n;
  return CorrelationGraph{set_unit_diagonal(corr), sigma, z};
}

/// V_NN = Diag(diag(V L V^T))^{-1/2} V, so that V_NN L V_NN^T has unit
/// diagonal. `eigenvalues` is the diagonal of L (not its inverse).
inline ad::Var project_eigvecs(ad::Var eigvecs, ad::Var eigenvalues) {
  ad::Tape& t = *eigvecs.tape;
  const ad::Tensor& v = t.val(eigvecs);
  if (v.rank() != 2 || v.rows() != v.cols())
    throw std::invalid_argument("project_eigvecs: square eigenvector matrix required");
  const auto n = v.rows();
  if (t.val(eigenvalues).size() != n)
    throw std::invalid_argument("project_eigvecs: eigenvalue count mismatch");
  for (ad::Tensor::Index k = 0; k < n; ++k)
    if (!(t.val(eigenvalues).at(k) > 0.0))
      throw std::domain_error("project_eigvecs: eigenvalues must be positive");
  // diag(V L V^T)_i = sum_k V_ik^2 L_k
  ad::Var d = ad::reshape(
      ad::matmul(ad::square(eigvecs), ad::reshape(eigenvalues, {n, 1})), {n});
  const ad::Tensor& dv = t.val(d);
  for (ad::Tensor::Index i = 0; i < n; ++i)
    if (!(dv.at(i) > 0.0))
      throw std::domain_error("project_eigvecs: zero diagonal in V L V^T at row " +
                              std::to_string(i));
  ad::Var scale = ad::reciprocal(ad::sqrt(d));
  return ad::mul(eigvecs, ad::broadcast_cols(scale, n));
}

/// Precision = D^-1 V L^-1 V^T D^-1, numerically symmetrized.
inline ad::Var assemble_precision(ad::Var inv_vols, ad::Var factor_vectors,
                                  ad::Var inv_eigenvalues) {
  ad::Tape& t = *factor_vectors.tape;
  const auto n = t.val(factor_vectors).rows();
  if (t.val(inv_vols).size() != n || t.val(inv_eigenvalues).size() != n)
    throw std::invalid_argument("assemble_precision: dimension mismatch");
  ad::Var scaled = ad::mul(factor_vectors, ad::broadcast_rows(inv_eigenvalues, n));
  ad::Var core = ad::matmul(scaled, ad::transpose(factor_vectors));
  ad::Var outer =
      ad::matmul(ad::reshape(inv_vols, {n, 1}), ad::reshape(inv_vols, {1, n}));
  ad::Var prec = ad::mul(outer, core);
  ad::Var sym = ad::cmul(ad::add(prec, ad::transpose(prec)), 0.5);
  if (!t.val(sym).all_finite())
    throw std::domain_error("assemble_precision: non-finite entries");
  return sym;
}

/// w = P 1 / (1^T P 1). Throws if the normalizer is not positive.
inline ad::Var gmv_weights(ad::Var precision) {
  ad::Tape& t = *precision.tape;
  const ad::Tensor& p = t.val(precision);
  if (p.rank() != 2 || p.rows() != p.cols())
    throw std::invalid_argument("gmv_weights: square matrix required");
  const auto n = p.rows();
  ad::Var ones = t.constant(ad::Tensor({n, 1}, 1.0));
  ad::Var s = ad::matmul(precision, ones);
  ad::Var denom = ad::sum(s);
  if (!(t.val(denom).scalar_value() > 0.0))
    throw std::domain_error("gmv_weights: 1' P 1 <= 0, precision estimate is broken");
  return ad::reshape(ad::div(s, denom), {n});
}

/// Realized short-horizon variance loss: (n / dt_out) * sum_t (w . r_t)^2,
/// computed without materializing the OOS covariance.
inline ad::Var gmv_loss(ad::Var weights, ad::Var oos_returns) {
  ad::Tape& t = *weights.tape;
  const ad::Tensor& r = t.val(oos_returns);
  if (r.rank() != 2 || r.rows() < 1)
    throw std::invalid_argument("gmv_loss: (dt_out x n) returns required");
  const auto n = t.val(weights).size();
  if (r.cols() != n) throw std::invalid_argument("gmv_loss: weight/return dimension mismatch");
  ad::Var port = ad::matmul(oos_returns, ad::reshape(weights, {n, 1}));
  return ad::cmul(ad::sum(ad::square(port)),
                  static_cast<double>(n) / static_cast<double>(r.rows()));
}

// ---------------------------------------------------------------------------
// Plain-matrix counterparts (estimator benchmarks, backtests, tests)
// ---------------------------------------------------------------------------

struct CorrelationResult {
  Eigen::MatrixXd correlation;
  Eigen::VectorXd sigma;  // population-convention stds
  Eigen::VectorXd mean;
};

inline CorrelationResult sample_correlation_eval(const Eigen::MatrixXd& window) {
  const auto dt = window.rows();
  const auto n = window.cols();
  if (dt < 2) throw std::invalid_argument("sample_correlation_eval: dt >= 2 required");
  CorrelationResult out;
  out.mean = window.colwise().mean();
  Eigen::MatrixXd centered = window.rowwise() - out.mean.transpose();
  out.sigma.resize(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    out.sigma(j) = std::sqrt(centered.col(j).squaredNorm() / static_cast<double>(dt));
    if (!(out.sigma(j) > 0.0))
      throw std::domain_error("sample_correlation_eval: zero-variance column " +
                              std::to_string(j));
  }
  Eigen::MatrixXd z = centered.array().rowwise() / out.sigma.transpose().array();
  out.correlation = z.transpose() * z / static_cast<double>(dt);
  out.correlation.diagonal().setOnes();
  out.correlation = 0.5 * (out.correlation + out.correlation.transpose());
  return out;
}

/// Eigendecomposition helper with the ascending/sign conventions used across
/// the library.
inline SpectralDecomp spectral_decomp(const Eigen::MatrixXd& symmetric) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 *
                                                    (symmetric + symmetric.transpose()));
  if (es.info() != Eigen::Success)
    throw std::runtime_error("spectral_decomp: solver failed");
  SpectralDecomp d;
  d.eigenvalues = es.eigenvalues();
  d.eigenvectors = es.eigenvectors();
  for (Eigen::Index k = 0; k < d.eigenvectors.cols(); ++k) {
    Eigen::Index arg = 0;
    d.eigenvectors.col(k).cwiseAbs().maxCoeff(&arg);
    if (d.eigenvectors(arg, k) < 0.0) d.eigenvectors.col(k) *= -1.0;
  }
  return d;
}

inline Eigen::VectorXd gmv_weights_eval(const Eigen::MatrixXd& precision) {
  Eigen::VectorXd s = precision * Eigen::VectorXd::Ones(precision.rows());
  const double denom = s.sum();
  if (!(denom > 0.0))
    throw std::domain_error("gmv_weights_eval: 1' P 1 <= 0");
  return s / denom;
}

inline double gmv_loss_eval(const Eigen::VectorXd& w, const Eigen::MatrixXd& oos_returns) {
  const Eigen::VectorXd port = oos_returns * w;
  return static_cast<double>(w.size()) * port.squaredNorm() /
         static_cast<double>(oos_returns.rows());
}

/// Rebuild the precision matrix from factors (plain path).
inline Eigen::MatrixXd assemble_precision_eval(const Eigen::VectorXd& inv_vols,
                                               const Eigen::MatrixXd& factor_vectors,
                                               const Eigen::VectorXd& inv_eigenvalues) {
  Eigen::MatrixXd core = factor_vectors * inv_eigenvalues.asDiagonal() *
                         factor_vectors.transpose();
  Eigen::MatrixXd prec =
      inv_vols.asDiagonal() * core * inv_vols.asDiagonal();
  return 0.5 * (prec + prec.transpose());
}

inline Eigen::MatrixXd project_eigvecs_eval(const Eigen::MatrixXd& eigvecs,
                                            const Eigen::VectorXd& eigenvalues) {
  const auto n = eigvecs.rows();
  Eigen::VectorXd d = (eigvecs.array().square().matrix() * eigenvalues);
  for (Eigen::Index i = 0; i < n; ++i)
    if (!(d(i) > 0.0)) throw std::domain_error("project_eigvecs_eval: zero diagonal");
  return d.array().rsqrt().matrix().asDiagonal() * eigvecs;
}

// ---------------------------------------------------------------------------
// Eigen-mode decomposition of the GMV portfolio
// ---------------------------------------------------------------------------

struct ModeContribution {
  double alignment = 0.0;   // c_k >= 0 under the sign convention
  double eigenvalue = 0.0;  // mode variance
  double ratio = 0.0;       // c_k / eigenvalue
};

struct EigenWeightDecomposition {
  std::vector<ModeContribution> modes;      // ascending eigenvalue order
  Eigen::VectorXd reconstructed_weights;    // normalized to sum 1
};

/// Covariance-basis decomposition: w proportional to sum_k (c_k / zeta_k) u_k
/// with c_k = u_k . 1, eigenvectors oriented so c_k >= 0.
inline EigenWeightDecomposition eigen_weight_decomposition(const Eigen::MatrixXd& sigma) {
  SpectralDecomp d = spectral_decomp(sigma);
  const auto n = sigma.rows();
  EigenWeightDecomposition out;
  Eigen::VectorXd w = Eigen::VectorXd::Zero(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    Eigen::VectorXd u = d.eigenvectors.col(k);
    double c = u.sum();
    if (c < 0.0) {
      u = -u;
      c = -c;
    }
    out.modes.push_back({c, d.eigenvalues(k), c / d.eigenvalues(k)});
    w += (c / d.eigenvalues(k)) * u;
  }
  out.reconstructed_weights = w / w.sum();
  return out;
}

/// Correlation-basis decomposition: c_k = sum_i v_ik / sigma_i and
/// w_i proportional to sum_k (c_k / lambda_k) v_ik / sigma_i.
inline EigenWeightDecomposition eigen_weight_decomposition(const Eigen::MatrixXd& corr,
                                                           const Eigen::VectorXd& sigma) {
  SpectralDecomp d = spectral_decomp(corr);
  const auto n = corr.rows();
  EigenWeightDecomposition out;
  Eigen::VectorXd w = Eigen::VectorXd::Zero(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    Eigen::VectorXd v = d.eigenvectors.col(k);
    double c = (v.array() / sigma.array()).sum();
    if (c < 0.0) {
      v = -v;
      c = -c;
    }
    out.modes.push_back({c, d.eigenvalues(k), c / d.eigenvalues(k)});
    w += (c / d.eigenvalues(k)) * (v.array() / sigma.array()).matrix();
  }
  out.reconstructed_weights = w / w.sum();
  return out;
}

// ---------------------------------------------------------------------------
// Finite-sample variance inflation (Monte Carlo vs closed form)
// ---------------------------------------------------------------------------

inline double predicted_inflation(int n, int dt_in) {
  const double q = static_cast<double>(n) / static_cast<double>(dt_in);
  if (q >= 1.0) throw std::invalid_argument("predicted_inflation: requires dt_in > n");
  return 1.0 + q / (1.0 - q);
}

struct InflationResult {
  double mc_ratio = 0.0;
  double predicted = 0.0;
  int trials = 0;
};

/// Monte-Carlo estimate of E[sigma_PTF^2] / sigma_star^2 for the plug-in GMV
/// with the zero-mean MLE covariance. dt_out = 0 evaluates the portfolio on
/// the population covariance (the exact conditional OOS variance); dt_out > 0
/// samples an OOS panel of that length instead.
inline InflationResult variance_inflation_mc(int n, int dt_in, int trials, Rng& rng,
                                             int dt_out = 0) {
  if (dt_in <= n + 2)
    throw std::invalid_argument("variance_inflation_mc: requires dt_in > n + 2");
  // Population: unit variances with mild uniform correlation.
  Eigen::MatrixXd sigma = Eigen::MatrixXd::Constant(n, n, 0.1);
  sigma.diagonal().setOnes();
  Eigen::LLT<Eigen::MatrixXd> chol(sigma);
  const Eigen::MatrixXd L = chol.matrixL();
  const double sigma_star2 =
      1.0 / (sigma.ldlt().solve(Eigen::VectorXd::Ones(n))).sum();

  double acc = 0.0;
  for (int trial = 0; trial < trials; ++trial) {
    Eigen::MatrixXd x(dt_in, n);
    for (int t = 0; t < dt_in; ++t)
      for (int j = 0; j < n; ++j) x(t, j) = rng.normal();
    x = x * L.transpose();
    const Eigen::MatrixXd s = x.transpose() * x / static_cast<double>(dt_in);
    const Eigen::VectorXd u = s.ldlt().solve(Eigen::VectorXd::Ones(n));
    const Eigen::VectorXd w = u / u.sum();
    double realized;
    if (dt_out <= 0) {
      realized = w.dot(sigma * w);
    } else {
      Eigen::MatrixXd y(dt_out, n);
      for (int t = 0; t < dt_out; ++t)
        for (int j = 0; j < n; ++j) y(t, j) = rng.normal();
      y = y * L.transpose();
      realized = (y * w).squaredNorm() / static_cast<double>(dt_out);
    }
    acc += realized / sigma_star2;
  }
  return InflationResult{acc / trials, predicted_inflation(n, dt_in), trials};
}

}  // namespace minvar
