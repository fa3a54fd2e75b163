#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "minvar/gmv.hpp"
#include "minvar/rng.hpp"
#include "minvar/stats.hpp"

namespace minvar {

// ---------------------------------------------------------------------------
// Linear shrinkage (Ledoit-Wolf 2004, shrinkage toward the scaled identity)
// ---------------------------------------------------------------------------

struct LinearShrinkageResult {
  Eigen::MatrixXd covariance;
  double intensity = 0.0;  // rho in [0, 1]
  double target_scale = 0.0;  // mu = trace(S)/n
};

/// Shrunk covariance S* = (1-rho) S + rho mu I with the optimal intensity
/// estimated from the (demeaned) data.
inline LinearShrinkageResult clean_ls(const Eigen::MatrixXd& window) {
  const auto dt = window.rows();
  const auto n = window.cols();
  if (dt < 2) throw std::invalid_argument("clean_ls: dt >= 2 required");
  Eigen::MatrixXd x = window.rowwise() - window.colwise().mean();
  Eigen::MatrixXd s = x.transpose() * x / static_cast<double>(dt);

  const double mu = s.trace() / static_cast<double>(n);
  Eigen::MatrixXd centered = s - mu * Eigen::MatrixXd::Identity(n, n);
  const double d2 = centered.squaredNorm() / static_cast<double>(n);

  double bbar2 = 0.0;
  for (Eigen::Index t = 0; t < dt; ++t) {
    Eigen::MatrixXd outer = x.row(t).transpose() * x.row(t);
    bbar2 += (outer - s).squaredNorm() / static_cast<double>(n);
  }
  bbar2 /= static_cast<double>(dt) * static_cast<double>(dt);
  const double b2 = std::min(bbar2, d2);

  LinearShrinkageResult out;
  out.target_scale = mu;
  out.intensity = d2 > 0.0 ? std::clamp(b2 / d2, 0.0, 1.0) : 1.0;
  out.covariance =
      (1.0 - out.intensity) * s + out.intensity * mu * Eigen::MatrixXd::Identity(n, n);
  return out;
}

/// Test hook: apply a forced intensity to a given sample covariance.
inline Eigen::MatrixXd clean_ls_with_intensity(const Eigen::MatrixXd& s, double rho) {
  const auto n = s.rows();
  const double mu = s.trace() / static_cast<double>(n);
  return (1.0 - rho) * s + rho * mu * Eigen::MatrixXd::Identity(n, n);
}

// ---------------------------------------------------------------------------
// Power mapping
// ---------------------------------------------------------------------------

/// Off-diagonal c -> sign(c) |c|^gamma, unit diagonal, then a PSD projection
/// (eigenvalue floor 1e-10) when the mapped matrix is indefinite.
inline Eigen::MatrixXd clean_pm(const Eigen::MatrixXd& corr, double gamma) {
  if (gamma < 1.0) throw std::invalid_argument("clean_pm: gamma must be >= 1");
  const auto n = corr.rows();
  Eigen::MatrixXd out(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    out(i, i) = 1.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double c = 0.5 * (corr(i, j) + corr(j, i));
      const double mapped = (c >= 0.0 ? 1.0 : -1.0) * std::pow(std::abs(c), gamma);
      out(i, j) = mapped;
      out(j, i) = mapped;
    }
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(out);
  if (es.eigenvalues()(0) < 1e-10) {
    Eigen::VectorXd floored = es.eigenvalues().cwiseMax(1e-10);
    out = es.eigenvectors() * floored.asDiagonal() * es.eigenvectors().transpose();
    out = 0.5 * (out + out.transpose());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Quadratic-inverse shrinkage (Ledoit-Wolf 2022 recipe)
// ---------------------------------------------------------------------------

/// Nonlinear shrinkage of a sample spectrum. `eigenvalues` may arrive in any
/// order; the result is aligned with the input. Requires q < 1. The output
/// passes an isotonic pass (rank-monotone in the input ordering by value) and
/// preserves the trace.
inline Eigen::VectorXd clean_qis(const Eigen::VectorXd& eigenvalues, double q) {
  const auto p = eigenvalues.size();
  if (p < 2) throw std::invalid_argument("clean_qis: need at least 2 eigenvalues");
  if (!(q > 0.0) || q >= 1.0)
    throw std::invalid_argument("clean_qis: aspect ratio must lie in (0, 1)");

  std::vector<Eigen::Index> order(static_cast<std::size_t>(p));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&eigenvalues](auto a, auto b) {
    return eigenvalues(a) < eigenvalues(b);
  });
  Eigen::VectorXd lam(p);
  for (Eigen::Index k = 0; k < p; ++k) lam(k) = eigenvalues(order[static_cast<std::size_t>(k)]);
  const double floor = 1e-12 * std::max(1.0, lam(p - 1));
  lam = lam.cwiseMax(floor);

  const double c = q;
  const double h = std::pow(std::min(c * c, 1.0 / (c * c)), 0.35) /
                   std::pow(static_cast<double>(p), 0.35);
  Eigen::VectorXd x = lam.cwiseInverse();

  Eigen::VectorXd theta(p), htheta(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    double tj = 0.0, hj = 0.0;
    for (Eigen::Index i = 0; i < p; ++i) {
      const double diff = x(i) - x(j);
      const double denom = diff * diff + h * h * x(i) * x(i);
      tj += x(i) * diff / denom;
      hj += h * x(i) * x(i) / denom;
    }
    theta(j) = tj / static_cast<double>(p);
    htheta(j) = hj / static_cast<double>(p);
  }

  Eigen::VectorXd delta(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    const double atheta2 = theta(j) * theta(j) + htheta(j) * htheta(j);
    delta(j) = 1.0 / ((1.0 - c) * (1.0 - c) * x(j) +
                      2.0 * c * (1.0 - c) * x(j) * theta(j) + c * c * x(j) * atheta2);
  }
  delta *= lam.sum() / delta.sum();

  // Rank-monotone output; pooling preserves the sum (and hence the trace).
  std::vector<double> iso =
      stats::isotonic_fit(std::vector<double>(delta.data(), delta.data() + p));

  Eigen::VectorXd out(p);
  for (Eigen::Index k = 0; k < p; ++k)
    out(order[static_cast<std::size_t>(k)]) = iso[static_cast<std::size_t>(k)];
  return out;
}

// ---------------------------------------------------------------------------
// Eigenvalue clipping (Marchenko-Pastur edge)
// ---------------------------------------------------------------------------

/// Replace every eigenvalue below the MP bulk edge (1+sqrt(q))^2 by the bulk
/// average; eigenvalues above the edge pass through. Trace-preserving.
inline Eigen::VectorXd clean_clip(const Eigen::VectorXd& eigenvalues, double q,
                                  double edge_override = -1.0) {
  if (!(q > 0.0)) throw std::invalid_argument("clean_clip: aspect ratio must be > 0");
  const double edge =
      edge_override > 0.0 ? edge_override : (1.0 + std::sqrt(q)) * (1.0 + std::sqrt(q));
  double bulk_sum = 0.0;
  int bulk_count = 0;
  for (Eigen::Index i = 0; i < eigenvalues.size(); ++i)
    if (eigenvalues(i) <= edge) {
      bulk_sum += eigenvalues(i);
      ++bulk_count;
    }
  Eigen::VectorXd out = eigenvalues;
  if (bulk_count > 0) {
    const double level = bulk_sum / bulk_count;
    for (Eigen::Index i = 0; i < out.size(); ++i)
      if (out(i) <= edge) out(i) = level;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Frobenius oracle (population-aware; test oracle and AO ingredient)
// ---------------------------------------------------------------------------

struct OracleResult {
  Eigen::VectorXd eigenvalues;  // f_k, aligned with the columns of Vhat
  Eigen::MatrixXd overlap;      // Psi_kl = sum_i (vhat_ik v_il)^2
  double max_row_error = 0.0;   // bistochasticity residuals
  double max_col_error = 0.0;
};

/// f_k = sum_l lambda_l Psi_kl: the Frobenius-optimal eigenvalues for the
/// fixed sample eigenvectors Vhat against the reference matrix C_ref.
/// Verifies that Psi is bi-stochastic to 1e-10.
inline OracleResult oracle_eigenvalues(const Eigen::MatrixXd& vhat,
                                       const Eigen::MatrixXd& c_ref) {
  const auto n = vhat.rows();
  if (vhat.cols() != n || c_ref.rows() != n || c_ref.cols() != n)
    throw std::invalid_argument("oracle_eigenvalues: dimension mismatch");
  if ((vhat.transpose() * vhat - Eigen::MatrixXd::Identity(n, n)).cwiseAbs().maxCoeff() > 1e-8)
    throw std::invalid_argument("oracle_eigenvalues: eigenvectors not orthonormal");

  SpectralDecomp ref = spectral_decomp(c_ref);
  Eigen::MatrixXd m = vhat.transpose() * ref.eigenvectors;
  OracleResult out;
  out.overlap = m.cwiseProduct(m);
  out.eigenvalues = out.overlap * ref.eigenvalues;
  for (Eigen::Index k = 0; k < n; ++k) {
    out.max_row_error = std::max(out.max_row_error, std::abs(out.overlap.row(k).sum() - 1.0));
    out.max_col_error = std::max(out.max_col_error, std::abs(out.overlap.col(k).sum() - 1.0));
  }
  if (out.max_row_error > 1e-10 || out.max_col_error > 1e-10)
    throw std::runtime_error("oracle_eigenvalues: overlap matrix not bi-stochastic");
  return out;
}

/// Independent closed form of the same quantity: f_k = vhat_k' C_ref vhat_k.
inline Eigen::VectorXd oracle_eigenvalues_quadratic(const Eigen::MatrixXd& vhat,
                                                    const Eigen::MatrixXd& c_ref) {
  const auto n = vhat.cols();
  Eigen::VectorXd f(n);
  for (Eigen::Index k = 0; k < n; ++k) f(k) = vhat.col(k).dot(c_ref * vhat.col(k));
  return f;
}

// ---------------------------------------------------------------------------
// Average Oracle
// ---------------------------------------------------------------------------

struct AoTable {
  int n = 0;
  int dt_in = 0;
  std::string span;  // free-form calibration annotation
  Eigen::VectorXd eigenvalues;  // rank-indexed, ascending rank order
};

/// Rank-wise average of oracle eigenvalues over bootstrap window pairs drawn
/// from a calibration panel. Each sample pairs an in-sample correlation's
/// eigenvectors with the realized correlation of the out-of-sample window
/// (one-day shift between the two windows).
inline AoTable calibrate_ao(const Eigen::MatrixXd& panel, int n, int dt_in, int dt_out,
                            int samples, Rng& rng, const std::string& span = "") {
  const auto total_days = panel.rows();
  const auto total_assets = panel.cols();
  if (n < 2 || n > total_assets)
    throw std::invalid_argument("calibrate_ao: asset count out of range");
  const long long span_needed = dt_in + 1 + dt_out;
  if (total_days < span_needed)
    throw std::invalid_argument("calibrate_ao: panel shorter than one window pair");

  AoTable table;
  table.n = n;
  table.dt_in = dt_in;
  table.span = span;
  table.eigenvalues = Eigen::VectorXd::Zero(n);

  int accepted = 0;
  int attempts = 0;
  const int max_attempts = samples * 20 + 100;
  while (accepted < samples && ++attempts <= max_attempts) {
    const long long start = rng.uniform_int(0, total_days - span_needed);
    std::vector<int> pick(static_cast<std::size_t>(total_assets));
    std::iota(pick.begin(), pick.end(), 0);
    for (int i = 0; i < n; ++i)
      std::swap(pick[static_cast<std::size_t>(i)],
                pick[static_cast<std::size_t>(rng.uniform_int(i, total_assets - 1))]);

    Eigen::MatrixXd in_window(dt_in, n), out_window(dt_out, n);
    for (int j = 0; j < n; ++j) {
      in_window.col(j) = panel.col(pick[static_cast<std::size_t>(j)])
                             .segment(start, dt_in);
      out_window.col(j) = panel.col(pick[static_cast<std::size_t>(j)])
                              .segment(start + dt_in + 1, dt_out);
    }
    try {
      auto cin = sample_correlation_eval(in_window);
      auto cout_r = sample_correlation_eval(out_window);
      SpectralDecomp din = spectral_decomp(cin.correlation);
      table.eigenvalues +=
          oracle_eigenvalues_quadratic(din.eigenvectors, cout_r.correlation);
      ++accepted;
    } catch (const std::domain_error&) {
      // zero-variance window column; redraw
    }
  }
  if (accepted < samples)
    throw std::runtime_error("calibrate_ao: could not draw enough valid window pairs");
  table.eigenvalues /= static_cast<double>(accepted);
  return table;
}

/// Input-agnostic cleaning: ignores the sample spectrum values, returns the
/// stored rank-indexed table (which must match the requested dimension).
inline Eigen::VectorXd clean_ao(const Eigen::VectorXd& eigenvalues, const AoTable& table) {
  if (eigenvalues.size() != table.n)
    throw std::invalid_argument("clean_ao: no table for n = " +
                                std::to_string(eigenvalues.size()));
  return table.eigenvalues;
}

inline void save_ao_table(const AoTable& table, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_ao_table: cannot open " + path);
  out << "# n=" << table.n << ",dt_in=" << table.dt_in << ",span=" << table.span << "\n";
  out << "rank,eigenvalue\n";
  out.precision(17);
  for (Eigen::Index k = 0; k < table.eigenvalues.size(); ++k)
    out << k << "," << table.eigenvalues(k) << "\n";
}

inline AoTable load_ao_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_ao_table: cannot open " + path);
  AoTable table;
  std::string line;
  std::vector<double> values;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto grab = [&line](const std::string& key) {
        const auto pos = line.find(key + "=");
        if (pos == std::string::npos) return std::string();
        auto end = line.find(',', pos);
        if (end == std::string::npos) end = line.size();
        return line.substr(pos + key.size() + 1, end - pos - key.size() - 1);
      };
      if (!grab("n").empty()) table.n = std::stoi(grab("n"));
      if (!grab("dt_in").empty()) table.dt_in = std::stoi(grab("dt_in"));
      table.span = grab("span");
      continue;
    }
    if (line.rfind("rank,", 0) == 0) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos)
      throw std::runtime_error("load_ao_table: malformed row '" + line + "'");
    values.push_back(std::stod(line.substr(comma + 1)));
  }
  table.eigenvalues = Eigen::Map<Eigen::VectorXd>(values.data(),
                                                  static_cast<Eigen::Index>(values.size()));
  if (table.n == 0) table.n = static_cast<int>(values.size());
  if (table.eigenvalues.size() != table.n)
    throw std::runtime_error("load_ao_table: row count does not match header n");
  return table;
}

// ---------------------------------------------------------------------------
// Univariate weight rules
// ---------------------------------------------------------------------------

inline PortfolioWeights erb_weights(const Eigen::VectorXd& variances) {
  for (Eigen::Index i = 0; i < variances.size(); ++i)
    if (!(variances(i) > 0.0))
      throw std::invalid_argument("erb_weights: variances must be positive");
  PortfolioWeights out;
  out.w = variances.cwiseInverse();
  out.w /= out.w.sum();
  out.constraint = PortfolioWeights::Constraint::kLongOnly;
  return out;
}

inline PortfolioWeights mcw_weights(const Eigen::VectorXd& market_caps) {
  for (Eigen::Index i = 0; i < market_caps.size(); ++i)
    if (!(market_caps(i) > 0.0))
      throw std::invalid_argument("mcw_weights: caps must be positive");
  PortfolioWeights out;
  out.w = market_caps / market_caps.sum();
  out.constraint = PortfolioWeights::Constraint::kLongOnly;
  return out;
}

// ---------------------------------------------------------------------------
// Pipeline dispatcher: window -> cleaned covariance
// ---------------------------------------------------------------------------

enum class EstimatorKind { kMle, kLs, kPm, kQis, kAo, kClip, kOracle };

inline const char* estimator_name(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::kMle: return "mle";
    case EstimatorKind::kLs: return "ls";
    case EstimatorKind::kPm: return "pm";
    case EstimatorKind::kQis: return "qis";
    case EstimatorKind::kAo: return "ao";
    case EstimatorKind::kClip: return "clip";
    case EstimatorKind::kOracle: return "oracle";
  }
  return "?";
}

inline EstimatorKind parse_estimator(const std::string& s) {
  if (s == "mle") return EstimatorKind::kMle;
  if (s == "ls") return EstimatorKind::kLs;
  if (s == "pm") return EstimatorKind::kPm;
  if (s == "qis") return EstimatorKind::kQis;
  if (s == "ao") return EstimatorKind::kAo;
  if (s == "clip") return EstimatorKind::kClip;
  if (s == "oracle") return EstimatorKind::kOracle;
  throw std::invalid_argument("unknown estimator tag '" + s + "'");
}

struct EstimatorConfig {
  EstimatorKind kind = EstimatorKind::kMle;
  double pm_gamma = 1.5;
  const AoTable* ao_table = nullptr;
  // Population correlation; only the (non-implementable) oracle consumes it.
  const Eigen::MatrixXd* reference_correlation = nullptr;
};

/// Renormalize a spectrally-rebuilt matrix back to unit diagonal.
inline Eigen::MatrixXd rebuild_correlation(const Eigen::MatrixXd& vhat,
                                           const Eigen::VectorXd& cleaned) {
  Eigen::MatrixXd c = vhat * cleaned.asDiagonal() * vhat.transpose();
  Eigen::VectorXd d = c.diagonal();
  for (Eigen::Index i = 0; i < d.size(); ++i)
    if (!(d(i) > 0.0)) throw std::domain_error("rebuild_correlation: nonpositive diagonal");
  Eigen::VectorXd s = d.array().rsqrt();
  c = s.asDiagonal() * c * s.asDiagonal();
  c.diagonal().setOnes();
  return 0.5 * (c + c.transpose());
}

struct CleanedCovariance {
  Eigen::MatrixXd covariance;   // D C_clean D
  Eigen::MatrixXd correlation;  // C_clean
  Eigen::VectorXd sigma;        // MLE marginal vols of the window
  Eigen::VectorXd raw_spectrum;
  Eigen::VectorXd cleaned_spectrum;
};

/// Benchmark route: estimate the correlation, clean it per the configured
/// method, and project back on the univariate MLE volatilities.
inline CleanedCovariance estimate_covariance(const Eigen::MatrixXd& window,
                                             const EstimatorConfig& cfg) {
  CleanedCovariance out;
  auto cr = sample_correlation_eval(window);
  out.sigma = cr.sigma;
  const double q =
      static_cast<double>(window.cols()) / static_cast<double>(window.rows());
  SpectralDecomp d = spectral_decomp(cr.correlation);
  out.raw_spectrum = d.eigenvalues;

  switch (cfg.kind) {
    case EstimatorKind::kMle:
      out.correlation = cr.correlation;
      out.cleaned_spectrum = d.eigenvalues;
      break;
    case EstimatorKind::kLs: {
      // Shrink the standardized-return covariance (equal to the correlation);
      // the scaled-identity target keeps the diagonal at exactly one.
      Eigen::MatrixXd z =
          (window.rowwise() - window.colwise().mean()).array().rowwise() /
          cr.sigma.transpose().array();
      auto ls = clean_ls(z);
      out.correlation = ls.covariance;
      out.correlation.diagonal().setOnes();
      out.cleaned_spectrum = spectral_decomp(out.correlation).eigenvalues;
      break;
    }
    case EstimatorKind::kPm:
      out.correlation = clean_pm(cr.correlation, cfg.pm_gamma);
      out.cleaned_spectrum = spectral_decomp(out.correlation).eigenvalues;
      break;
    case EstimatorKind::kQis:
      out.cleaned_spectrum = clean_qis(d.eigenvalues, q);
      out.correlation = rebuild_correlation(d.eigenvectors, out.cleaned_spectrum);
      break;
    case EstimatorKind::kAo:
      if (cfg.ao_table == nullptr)
        throw std::invalid_argument("estimate_covariance: AO requires a calibrated table");
      out.cleaned_spectrum = clean_ao(d.eigenvalues, *cfg.ao_table);
      out.correlation = rebuild_correlation(d.eigenvectors, out.cleaned_spectrum);
      break;
    case EstimatorKind::kClip:
      out.cleaned_spectrum = clean_clip(d.eigenvalues, q);
      out.correlation = rebuild_correlation(d.eigenvectors, out.cleaned_spectrum);
      break;
    case EstimatorKind::kOracle: {
      if (cfg.reference_correlation == nullptr)
        throw std::invalid_argument(
            "estimate_covariance: oracle requires the reference correlation");
      out.cleaned_spectrum =
          oracle_eigenvalues(d.eigenvectors, *cfg.reference_correlation).eigenvalues;
      out.correlation = rebuild_correlation(d.eigenvectors, out.cleaned_spectrum);
      break;
    }
  }
  out.covariance =
      out.sigma.asDiagonal() * out.correlation * out.sigma.asDiagonal();
  out.covariance = 0.5 * (out.covariance + out.covariance.transpose());
  return out;
}

}  // namespace minvar
