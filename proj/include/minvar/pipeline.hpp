#pragma once

#include "minvar/eigen_cleaner.hpp"
#include "minvar/gmv.hpp"
#include "minvar/lag_transform.hpp"
#include "minvar/qp.hpp"
#include "minvar/vol_mlp.hpp"

namespace minvar {

/// All trainable parameters of the three-block estimator.
struct ModelParams {
  LagParams lag;
  BiLstmParams lstm;
  VolMlpParams mlp;

  int dt_in() const { return lag.dt_in(); }
  int omega() const { return lstm.width(); }
  long long parameter_count() const {
    return lag.parameter_count() + lstm.parameter_count() + mlp.parameter_count();
  }
};

inline ModelParams init_model(int dt_in, int omega, const Rng& rng) {
  ModelParams p;
  p.lag = init_lag_params(dt_in);
  Rng lstm_rng = rng.split("init.lstm");
  p.lstm = init_bilstm(omega, lstm_rng);
  Rng mlp_rng = rng.split("init.mlp");
  p.mlp = init_vol_mlp(mlp_rng);
  return p;
}

struct ModelVars {
  LagVars lag;
  BiLstmVars lstm;
  VolMlpVars mlp;
};

inline ModelVars bind_model(ad::Tape& tape, const ModelParams& p, bool requires_grad = true) {
  return ModelVars{bind_lag_params(tape, p.lag, requires_grad),
                   bind_bilstm(tape, p.lstm, requires_grad),
                   bind_vol_mlp(tape, p.mlp, requires_grad)};
}

/// Named access to the parameter tensors in the canonical (checkpoint) order.
struct NamedTensor {
  std::string name;
  ad::Tensor* tensor;
};

inline std::vector<NamedTensor> named_parameters(ModelParams& p) {
  return {
      {"lag.alpha", &p.lag.alpha},     {"lag.beta_raw", &p.lag.beta_raw},
      {"lstm.fwd.W", &p.lstm.fwd.W},   {"lstm.fwd.U", &p.lstm.fwd.U},
      {"lstm.fwd.b", &p.lstm.fwd.b},   {"lstm.bwd.W", &p.lstm.bwd.W},
      {"lstm.bwd.U", &p.lstm.bwd.U},   {"lstm.bwd.b", &p.lstm.bwd.b},
      {"lstm.head.a", &p.lstm.head_a}, {"lstm.head.b", &p.lstm.head_b},
      {"mlp.w1", &p.mlp.w1},           {"mlp.b1", &p.mlp.b1},
      {"mlp.w2", &p.mlp.w2},           {"mlp.b2", &p.mlp.b2},
      {"mlp.w3", &p.mlp.w3},           {"mlp.b3", &p.mlp.b3},
      {"mlp.w4", &p.mlp.w4},           {"mlp.b4", &p.mlp.b4},
  };
}

/// Parameter Vars of a bound model in the same canonical order.
inline std::vector<ad::Var> model_vars_in_order(const ModelVars& v) {
  return {v.lag.alpha,   v.lag.beta_raw, v.lstm.fwd.W, v.lstm.fwd.U, v.lstm.fwd.b,
          v.lstm.bwd.W,  v.lstm.bwd.U,   v.lstm.bwd.b, v.lstm.head_a, v.lstm.head_b,
          v.mlp.w1,      v.mlp.b1,       v.mlp.w2,     v.mlp.b2,      v.mlp.w3,
          v.mlp.b3,      v.mlp.w4,       v.mlp.b4};
}

struct PipelineGraph {
  ad::Var transformed;      // lag-mapped window
  ad::Var sigma;            // marginal stds of the transformed window
  ad::Var correlation;      // unit-diagonal sample correlation
  ad::Var eigenvalues;      // raw spectrum, ascending
  ad::Var eigenvectors;
  ad::Var cleaned_inverse;  // inverse eigenvalues, sum = n
  ad::Var inv_vols;         // MLP inverse volatilities, mean 1
  ad::Var precision;
  ad::Var weights;
};

/// Full differentiable forward pass: lag-transformed window -> GMV weights.
/// `window_lagged` is (dt_in x n) with row 0 the most recent day.
inline PipelineGraph forward_pipeline(ad::Tape& tape, const ModelVars& model,
                                      const Eigen::MatrixXd& window_lagged) {
  PipelineGraph g;
  const double q = static_cast<double>(window_lagged.cols()) /
                   static_cast<double>(window_lagged.rows());
  ad::Var window = tape.constant(ad::Tensor::from_eigen_mat(window_lagged));
  g.transformed = lag_transform(window, model.lag);
  auto corr = sample_correlation(g.transformed);
  g.sigma = corr.sigma;
  g.correlation = corr.correlation;
  auto eig = ad::eigh_sym(g.correlation);
  g.eigenvalues = eig.eigenvalues;
  g.eigenvectors = eig.eigenvectors;
  g.cleaned_inverse = clean_spectrum(g.eigenvalues, q, model.lstm);
  ad::Var lambda_clean = ad::reciprocal(g.cleaned_inverse);
  ad::Var vnn = project_eigvecs(g.eigenvectors, lambda_clean);
  g.inv_vols = vol_mlp_forward(g.sigma, model.mlp);
  g.precision = assemble_precision(g.inv_vols, vnn, g.cleaned_inverse);
  g.weights = gmv_weights(g.precision);
  return g;
}

/// Forward plus realized OOS loss; `oos_returns` is (dt_out x n) in
/// chronological order.
inline std::pair<PipelineGraph, ad::Var> forward_pipeline_loss(
    ad::Tape& tape, const ModelVars& model, const Eigen::MatrixXd& window_lagged,
    const Eigen::MatrixXd& oos_returns) {
  PipelineGraph g = forward_pipeline(tape, model, window_lagged);
  ad::Var loss =
      gmv_loss(g.weights, tape.constant(ad::Tensor::from_eigen_mat(oos_returns)));
  return {g, loss};
}

// ---------------------------------------------------------------------------
// Plain inference path (no tape); Scalar = float is the single-precision mode
// ---------------------------------------------------------------------------

template <typename Scalar>
struct PipelineEval {
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  Vec sigma;
  Vec raw_spectrum;
  Vec cleaned_inverse;
  Vec inv_vols;
  Mat precision;
  Vec weights;
};

template <typename Scalar = double>
PipelineEval<Scalar> run_pipeline(const Eigen::MatrixXd& window_lagged,
                                  const ModelParams& params) {
  using Vec = typename PipelineEval<Scalar>::Vec;
  using Mat = typename PipelineEval<Scalar>::Mat;
  const auto dt = window_lagged.rows();
  const auto n = window_lagged.cols();
  const Scalar q = static_cast<Scalar>(static_cast<double>(n) / static_cast<double>(dt));

  PipelineEval<Scalar> out;
  Mat transformed = lag_transform_eval<Scalar>(window_lagged, params.lag);

  Vec mean = transformed.colwise().mean();
  Mat centered = transformed.rowwise() - mean.transpose();
  out.sigma.resize(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    out.sigma(j) = std::sqrt(centered.col(j).squaredNorm() / static_cast<Scalar>(dt));
    if (!(out.sigma(j) > Scalar(0)))
      throw std::domain_error("run_pipeline: zero-variance column");
  }
  Mat z = centered.array().rowwise() / out.sigma.transpose().array();
  Mat corr = z.transpose() * z / static_cast<Scalar>(dt);
  corr.diagonal().setOnes();
  corr = Scalar(0.5) * (corr + corr.transpose());

  Eigen::SelfAdjointEigenSolver<Mat> es(corr);
  if (es.info() != Eigen::Success) throw std::runtime_error("run_pipeline: eigh failed");
  out.raw_spectrum = es.eigenvalues();
  Mat vhat = es.eigenvectors();

  out.cleaned_inverse = clean_spectrum_eval<Scalar>(out.raw_spectrum, q, params.lstm);
  Vec lambda_clean = out.cleaned_inverse.cwiseInverse();

  Vec d = (vhat.array().square().matrix() * lambda_clean);
  Mat vnn = d.array().rsqrt().matrix().asDiagonal() * vhat;

  out.inv_vols = vol_mlp_eval<Scalar>(out.sigma, params.mlp);
  Mat core = vnn * out.cleaned_inverse.asDiagonal() * vnn.transpose();
  out.precision = out.inv_vols.asDiagonal() * core * out.inv_vols.asDiagonal();
  out.precision = Scalar(0.5) * (out.precision + out.precision.transpose());

  Vec s = out.precision * Vec::Ones(n);
  const Scalar denom = s.sum();
  if (!(denom > Scalar(0))) throw std::domain_error("run_pipeline: 1' P 1 <= 0");
  out.weights = s / denom;
  return out;
}

/// Long-only weights from the trained estimator: invert the learned precision
/// and hand the covariance to the external QP.
inline Eigen::VectorXd longonly_weights_from_model(const Eigen::MatrixXd& window_lagged,
                                                   const ModelParams& params) {
  auto eval = run_pipeline<double>(window_lagged, params);
  Eigen::MatrixXd cov = eval.precision.inverse();
  cov = 0.5 * (cov + cov.transpose());
  return solve_longonly_gmv(cov).weights;
}

}  // namespace minvar
