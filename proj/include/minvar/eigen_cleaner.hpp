#pragma once

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "minvar/autodiff.hpp"
#include "minvar/rng.hpp"
#include "minvar/stats.hpp"

namespace minvar {

/// One LSTM cell: input dimension 2 (eigenvalue, aspect ratio), hidden width
/// omega. Gate slabs are stacked [input, forget, candidate, output] along the
/// 4*omega axis.
struct LstmCellParams {
  ad::Tensor W;  // 4w x 2
  ad::Tensor U;  // 4w x w
  ad::Tensor b;  // 4w
};

/// Bidirectional LSTM over the sorted spectrum plus the shared dense head.
struct BiLstmParams {
  LstmCellParams fwd;
  LstmCellParams bwd;
  ad::Tensor head_a;  // 2w
  ad::Tensor head_b;  // 1

  int width() const { return static_cast<int>(fwd.U.cols()); }

  long long parameter_count() const {
    return fwd.W.size() + fwd.U.size() + fwd.b.size() + bwd.W.size() + bwd.U.size() +
           bwd.b.size() + head_a.size() + head_b.size();
  }
};

/// 8w^2 + 26w + 1: each cell carries 4w^2 + 12w, the head adds 2w + 1.
inline long long bilstm_param_count(int omega) {
  if (omega < 1) throw std::invalid_argument("bilstm_param_count: omega must be >= 1");
  const long long w = omega;
  return 8 * w * w + 26 * w + 1;
}

/// Uniform +-1/sqrt(omega) for all weight matrices (head included), forget
/// bias +1, every other bias 0.
inline BiLstmParams init_bilstm(int omega, Rng& rng) {
  if (omega < 1) throw std::invalid_argument("init_bilstm: omega must be >= 1");
  const double bound = 1.0 / std::sqrt(static_cast<double>(omega));
  auto fill_uniform = [&rng, bound](ad::Tensor& t) {
    for (ad::Tensor::Index i = 0; i < t.size(); ++i) t.at(i) = rng.uniform(-bound, bound);
  };
  auto make_cell = [&](LstmCellParams& c) {
    c.W = ad::Tensor({4LL * omega, 2});
    c.U = ad::Tensor({4LL * omega, omega});
    c.b = ad::Tensor({4LL * omega}, 0.0);
    fill_uniform(c.W);
    fill_uniform(c.U);
    for (int i = omega; i < 2 * omega; ++i) c.b.at(i) = 1.0;  // forget slab
  };
  BiLstmParams p;
  make_cell(p.fwd);
  make_cell(p.bwd);
  p.head_a = ad::Tensor({2LL * omega});
  fill_uniform(p.head_a);
  p.head_b = ad::Tensor({1}, 0.0);
  return p;
}

struct LstmCellVars {
  ad::Var W, U, b;
};

struct BiLstmVars {
  LstmCellVars fwd, bwd;
  ad::Var head_a, head_b;
  int omega = 0;
};

inline BiLstmVars bind_bilstm(ad::Tape& tape, const BiLstmParams& p, bool requires_grad = true) {
  BiLstmVars v;
  v.fwd = {tape.leaf(p.fwd.W, requires_grad), tape.leaf(p.fwd.U, requires_grad),
           tape.leaf(p.fwd.b, requires_grad)};
  v.bwd = {tape.leaf(p.bwd.W, requires_grad), tape.leaf(p.bwd.U, requires_grad),
           tape.leaf(p.bwd.b, requires_grad)};
  v.head_a = tape.leaf(p.head_a, requires_grad);
  v.head_b = tape.leaf(p.head_b, requires_grad);
  v.omega = p.width();
  return v;
}

/// Standard LSTM update. x is rank-1 length 2, h and m rank-1 length omega.
/// Returns {h', m'}.
inline std::pair<ad::Var, ad::Var> lstm_cell(ad::Var x, ad::Var h, ad::Var m,
                                             const LstmCellVars& cell, int omega) {
  using namespace ad;
  Var z = reshape(add(add(matmul(cell.W, reshape(x, {2, 1})),
                          matmul(cell.U, reshape(h, {omega, 1}))),
                      reshape(cell.b, {4LL * omega, 1})),
                  {4LL * omega});
  Var i = sigmoid(slice(z, 0, omega));
  Var f = sigmoid(slice(z, omega, omega));
  Var g = tanh(slice(z, 2LL * omega, omega));
  Var o = sigmoid(slice(z, 3LL * omega, omega));
  Var m_next = add(mul(f, m), mul(i, g));
  Var h_next = mul(o, tanh(m_next));
  return {h_next, m_next};
}

/// Map a sample spectrum to cleaned INVERSE eigenvalues.
///
/// The input is sorted ascending internally (ties broken by original index),
/// the forward cell scans smallest-to-largest and the backward cell the
/// reverse, both from zero states. Each rank's concatenated hidden pair goes
/// through softplus(a.h + b); the outputs are rescaled so they sum to n and
/// un-sorted to the caller's ordering. Fully differentiable; the sort
/// permutation is held fixed during backward.
inline ad::Var clean_spectrum(ad::Var eigenvalues, double q, const BiLstmVars& p) {
  using namespace ad;
  Tape& t = *eigenvalues.tape;
  const Tensor& lam = t.val(eigenvalues);
  if (lam.rank() != 1) throw std::invalid_argument("clean_spectrum: rank-1 spectrum required");
  const auto n = lam.size();
  if (n < 2) throw std::invalid_argument("clean_spectrum: need at least 2 eigenvalues");
  if (!lam.all_finite()) throw std::invalid_argument("clean_spectrum: non-finite eigenvalue");
  if (!(q > 0.0)) throw std::invalid_argument("clean_spectrum: aspect ratio must be > 0");

  std::vector<Tensor::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&lam](auto a, auto b) { return lam.at(a) < lam.at(b); });

  Var sorted = gather(eigenvalues, order);
  Var qv = t.constant(Tensor::scalar(q));
  const int omega = p.omega;
  Tensor zero_state({static_cast<Tensor::Index>(omega)}, 0.0);

  auto scan = [&](const LstmCellVars& cell, bool reverse) {
    std::vector<Var> hs(static_cast<std::size_t>(n));
    Var h = t.constant(zero_state);
    Var m = t.constant(zero_state);
    for (Tensor::Index step = 0; step < n; ++step) {
      const Tensor::Index k = reverse ? n - 1 - step : step;
      Var x = concat(slice(sorted, k, 1), qv);
      auto [h2, m2] = lstm_cell(x, h, m, cell, omega);
      h = h2;
      m = m2;
      hs[static_cast<std::size_t>(k)] = h;
    }
    return hs;
  };
  std::vector<Var> hf = scan(p.fwd, false);
  std::vector<Var> hb = scan(p.bwd, true);

  std::vector<Var> rows(static_cast<std::size_t>(n));
  for (std::size_t k = 0; k < rows.size(); ++k) rows[k] = concat(hf[k], hb[k]);
  Var H = stack_rows(rows);  // n x 2w
  Var pre = reshape(matmul(H, reshape(p.head_a, {2LL * omega, 1})), {n});
  Var y = softplus(add(pre, p.head_b));
  // Remove the arbitrary overall scale: inverse eigenvalues sum to n.
  Var normalized = cmul(div(y, sum(y)), static_cast<double>(n));

  std::vector<Tensor::Index> inverse(order.size());
  for (std::size_t i = 0; i < order.size(); ++i)
    inverse[static_cast<std::size_t>(order[i])] = static_cast<Tensor::Index>(i);
  return gather(normalized, inverse);
}

/// Convenience entry point mirroring clean_spectrum for plain parameter sets.
inline ad::Var clean_spectrum(ad::Var eigenvalues, double q, const BiLstmParams& params,
                              bool requires_grad = false) {
  BiLstmVars v = bind_bilstm(*eigenvalues.tape, params, requires_grad);
  return clean_spectrum(eigenvalues, q, v);
}

/// Plain (no-tape) evaluation of the cleaner; Scalar = float gives the
/// single-precision inference mode.
template <typename Scalar = double>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> clean_spectrum_eval(
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& eigenvalues, Scalar q,
    const BiLstmParams& p) {
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  const Eigen::Index n = eigenvalues.size();
  if (n < 2) throw std::invalid_argument("clean_spectrum_eval: need at least 2 eigenvalues");
  const int omega = p.width();

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&eigenvalues](auto a, auto b) {
    return eigenvalues(a) < eigenvalues(b);
  });

  Mat Wf = p.fwd.W.mat().cast<Scalar>(), Uf = p.fwd.U.mat().cast<Scalar>();
  Mat Wb = p.bwd.W.mat().cast<Scalar>(), Ub = p.bwd.U.mat().cast<Scalar>();
  Vec bf = p.fwd.b.vec().cast<Scalar>(), bb = p.bwd.b.vec().cast<Scalar>();
  Vec a = p.head_a.vec().cast<Scalar>();
  const Scalar bias = static_cast<Scalar>(p.head_b.at(0));

  auto sig = [](Scalar x) {
    if (x >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-x));
    const Scalar e = std::exp(x);
    return e / (Scalar(1) + e);
  };

  auto scan = [&](const Mat& W, const Mat& U, const Vec& b, bool reverse) {
    Mat hs(n, omega);
    Vec h = Vec::Zero(omega), m = Vec::Zero(omega);
    for (Eigen::Index step = 0; step < n; ++step) {
      const Eigen::Index k = reverse ? n - 1 - step : step;
      Vec x(2);
      x << eigenvalues(order[static_cast<std::size_t>(k)]), q;
      Vec z = W * x + U * h + b;
      for (int j = 0; j < omega; ++j) {
        const Scalar i_g = sig(z(j));
        const Scalar f_g = sig(z(omega + j));
        const Scalar g_g = std::tanh(z(2 * omega + j));
        const Scalar o_g = sig(z(3 * omega + j));
        m(j) = f_g * m(j) + i_g * g_g;
        h(j) = o_g * std::tanh(m(j));
      }
      hs.row(k) = h.transpose();
    }
    return hs;
  };
  Mat hf = scan(Wf, Uf, bf, false);
  Mat hb = scan(Wb, Ub, bb, true);

  Vec y(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    Scalar pre = bias;
    pre += hf.row(k).dot(a.head(omega).transpose());
    pre += hb.row(k).dot(a.tail(omega).transpose());
    y(k) = std::max(pre, Scalar(0)) + std::log1p(std::exp(-std::abs(pre)));
  }
  y *= static_cast<Scalar>(n) / y.sum();

  Vec out(n);
  for (Eigen::Index k = 0; k < n; ++k) out(order[static_cast<std::size_t>(k)]) = y(k);
  return out;
}

/// Per-rank dispersion of a set of spectra (median, 95% band, and the
/// standard deviation of log eigenvalues across samples).
struct SpectrumStability {
  std::vector<double> median;
  std::vector<double> lo95;
  std::vector<double> hi95;
  std::vector<double> log_std;
};

inline SpectrumStability spectrum_stability(const std::vector<Eigen::VectorXd>& spectra) {
  if (spectra.size() < 2)
    throw std::invalid_argument("spectrum_stability: need at least 2 samples");
  const Eigen::Index n = spectra.front().size();
  for (const auto& s : spectra)
    if (s.size() != n) throw std::invalid_argument("spectrum_stability: ragged samples");
  SpectrumStability out;
  out.median.resize(static_cast<std::size_t>(n));
  out.lo95.resize(static_cast<std::size_t>(n));
  out.hi95.resize(static_cast<std::size_t>(n));
  out.log_std.resize(static_cast<std::size_t>(n));
  for (Eigen::Index k = 0; k < n; ++k) {
    std::vector<double> vals, logs;
    vals.reserve(spectra.size());
    logs.reserve(spectra.size());
    for (const auto& s : spectra) {
      vals.push_back(s(k));
      logs.push_back(std::log(std::max(s(k), 1e-300)));
    }
    const auto idx = static_cast<std::size_t>(k);
    out.median[idx] = stats::median(vals);
    out.lo95[idx] = stats::quantile(vals, 0.025);
    out.hi95[idx] = stats::quantile(vals, 0.975);
    out.log_std[idx] = stats::stddev_pop(logs);
  }
  return out;
}

}  // namespace minvar
