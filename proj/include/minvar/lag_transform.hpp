#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "minvar/autodiff.hpp"

namespace minvar {

/// Daily-to-annual scale applied inside the lag transform.
inline constexpr double kAnnualization = 252.0;

/// Per-lag rescale/soft-clip parameters. Lag index 0 is the MOST RECENT day;
/// index dt_in-1 is the oldest. beta is stored through a softplus
/// reparameterization so positivity never constrains the optimizer.
struct LagParams {
  ad::Tensor alpha;     // length dt_in
  ad::Tensor beta_raw;  // length dt_in; beta = softplus(beta_raw) > 0

  int dt_in() const { return static_cast<int>(alpha.size()); }
  long long parameter_count() const { return 2 * alpha.size(); }
  double beta(int lag) const { return ad::softplus_scalar(beta_raw.at(lag)); }
};

/// Inverse of softplus: the raw value whose softplus equals y.
inline double softplus_inverse(double y) {
  if (y <= 0.0) throw std::invalid_argument("softplus_inverse: y must be > 0");
  // log(e^y - 1), stable for small and large y.
  return y + std::log(-std::expm1(-y));
}

/// Neutral start: alpha = 1 at every lag, beta = 0.5 at every lag.
inline LagParams init_lag_params(int dt_in) {
  if (dt_in < 1) throw std::invalid_argument("init_lag_params: dt_in must be >= 1");
  LagParams p;
  p.alpha = ad::Tensor({static_cast<ad::Tensor::Index>(dt_in)}, 1.0);
  p.beta_raw = ad::Tensor({static_cast<ad::Tensor::Index>(dt_in)}, softplus_inverse(0.5));
  return p;
}

/// Parameter leaves bound to one tape.
struct LagVars {
  ad::Var alpha;
  ad::Var beta_raw;
};

inline LagVars bind_lag_params(ad::Tape& tape, const LagParams& p, bool requires_grad = true) {
  return LagVars{tape.leaf(p.alpha, requires_grad), tape.leaf(p.beta_raw, requires_grad)};
}

/// r~[t,i] = (alpha_t / beta_t) * tanh(252 * beta_t * r[t,i]).
///
/// `returns_lagged` must be (dt_in x n) with row 0 the most recent day.
/// Differentiable in returns, alpha and beta_raw.
inline ad::Var lag_transform(ad::Var returns_lagged, const LagVars& params) {
  ad::Tape& t = *returns_lagged.tape;
  const ad::Tensor& r = t.val(returns_lagged);
  if (r.rank() != 2) throw std::invalid_argument("lag_transform: rank-2 window required");
  const auto dt = r.rows();
  const auto n = r.cols();
  if (t.val(params.alpha).size() != dt)
    throw std::invalid_argument("lag_transform: window length " + std::to_string(dt) +
                                " does not match dt_in " +
                                std::to_string(t.val(params.alpha).size()));
  ad::Var beta = ad::softplus(params.beta_raw);
  ad::Var scale = ad::broadcast_cols(ad::div(params.alpha, beta), n);  // alpha_t / beta_t
  ad::Var inner = ad::cmul(ad::mul(ad::broadcast_cols(beta, n), returns_lagged), kAnnualization);
  return ad::mul(scale, ad::tanh(inner));
}

/// Plain (no-tape) evaluation; Scalar = float gives the single-precision
/// inference mode.
template <typename Scalar = double>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> lag_transform_eval(
    const Eigen::MatrixXd& returns_lagged, const LagParams& p) {
  if (returns_lagged.rows() != p.alpha.size())
    throw std::invalid_argument("lag_transform_eval: window length mismatch");
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> out(returns_lagged.rows(),
                                                            returns_lagged.cols());
  for (Eigen::Index t = 0; t < returns_lagged.rows(); ++t) {
    const Scalar a = static_cast<Scalar>(p.alpha.at(t));
    const Scalar b = static_cast<Scalar>(p.beta(static_cast<int>(t)));
    for (Eigen::Index i = 0; i < returns_lagged.cols(); ++i) {
      const Scalar x = static_cast<Scalar>(kAnnualization) * b *
                       static_cast<Scalar>(returns_lagged(t, i));
      out(t, i) = a / b * std::tanh(x);
    }
  }
  return out;
}

/// Post-training report: the per-lag profiles plus the smallest L such that
/// the first L lags carry at least half of the total alpha mass.
struct LagDiagnostics {
  std::vector<double> alpha;
  std::vector<double> beta;
  int half_mass_lag = 0;  // 1-based count of most-recent lags
};

inline LagDiagnostics lag_diagnostics(const LagParams& p) {
  LagDiagnostics d;
  const int dt = p.dt_in();
  d.alpha.resize(dt);
  d.beta.resize(dt);
  double total = 0.0;
  for (int t = 0; t < dt; ++t) {
    d.alpha[t] = p.alpha.at(t);
    d.beta[t] = p.beta(t);
    total += d.alpha[t];
  }
  double run = 0.0;
  d.half_mass_lag = dt;
  for (int t = 0; t < dt; ++t) {
    run += d.alpha[t];
    if (run >= 0.5 * total) {
      d.half_mass_lag = t + 1;
      break;
    }
  }
  return d;
}

}  // namespace minvar
