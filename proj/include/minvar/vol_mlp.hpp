#pragma once

#include <array>
#include <stdexcept>

#include "minvar/autodiff.hpp"
#include "minvar/rng.hpp"

namespace minvar {

/// Scalar-in/scalar-out volatility network: dense 1-64-32-16-1 with
/// leaky-ReLU hidden activations and a softplus output. The same weights are
/// applied to every asset's standard deviation independently.
struct VolMlpParams {
  static constexpr std::array<int, 5> kLayers = {1, 64, 32, 16, 1};
  static constexpr double kLeakySlope = 0.01;

  ad::Tensor w1, b1;  // 64x1, 64
  ad::Tensor w2, b2;  // 32x64, 32
  ad::Tensor w3, b3;  // 16x32, 16
  ad::Tensor w4, b4;  // 1x16, 1

  long long parameter_count() const {
    return w1.size() + b1.size() + w2.size() + b2.size() + w3.size() + b3.size() + w4.size() +
           b4.size();
  }
};

/// Uniform +-1/sqrt(fan_in) weights, zero biases.
inline VolMlpParams init_vol_mlp(Rng& rng) {
  VolMlpParams p;
  auto dense = [&rng](int out, int in, ad::Tensor& w, ad::Tensor& b) {
    w = ad::Tensor({out, in});
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    for (ad::Tensor::Index i = 0; i < w.size(); ++i) w.at(i) = rng.uniform(-bound, bound);
    b = ad::Tensor({out}, 0.0);
  };
  dense(64, 1, p.w1, p.b1);
  dense(32, 64, p.w2, p.b2);
  dense(16, 32, p.w3, p.b3);
  dense(1, 16, p.w4, p.b4);
  return p;
}

struct VolMlpVars {
  ad::Var w1, b1, w2, b2, w3, b3, w4, b4;
};

inline VolMlpVars bind_vol_mlp(ad::Tape& tape, const VolMlpParams& p, bool requires_grad = true) {
  return VolMlpVars{tape.leaf(p.w1, requires_grad), tape.leaf(p.b1, requires_grad),
                    tape.leaf(p.w2, requires_grad), tape.leaf(p.b2, requires_grad),
                    tape.leaf(p.w3, requires_grad), tape.leaf(p.b3, requires_grad),
                    tape.leaf(p.w4, requires_grad), tape.leaf(p.b4, requires_grad)};
}

/// Per-asset sample standard deviation with the population divisor:
/// sigma_i = sqrt(mean(x^2) - mean(x)^2) over the rows of a (dt x n) window.
/// Throws on a zero-variance column (such assets must be filtered upstream).
inline ad::Var marginal_std(ad::Var window) {
  ad::Tape& t = *window.tape;
  const ad::Tensor& w = t.val(window);
  if (w.rank() != 2 || w.rows() < 2)
    throw std::invalid_argument("marginal_std: (dt x n) window with dt >= 2 required");
  ad::Var m = ad::mean_axis(window, 0);
  ad::Var m2 = ad::mean_axis(ad::square(window), 0);
  ad::Var var = ad::sub(m2, ad::square(m));
  const ad::Tensor& v = t.val(var);
  for (ad::Tensor::Index i = 0; i < v.size(); ++i)
    if (!(v.at(i) > 0.0))
      throw std::domain_error("marginal_std: zero-variance column " + std::to_string(i));
  return ad::sqrt(var);
}

/// Map marginal standard deviations to normalized inverse volatilities.
/// Each scalar passes through the MLP independently; the softplus output is
/// divided by its cross-sectional mean, so the result always has mean 1.
inline ad::Var vol_mlp_forward(ad::Var sigma, const VolMlpVars& p) {
  ad::Tape& t = *sigma.tape;
  const ad::Tensor& s = t.val(sigma);
  if (s.rank() != 1) throw std::invalid_argument("vol_mlp_forward: rank-1 input required");
  for (ad::Tensor::Index i = 0; i < s.size(); ++i)
    if (!(s.at(i) > 0.0))
      throw std::domain_error("vol_mlp_forward: non-positive input at " + std::to_string(i));
  const auto n = s.size();
  ad::Var x = ad::reshape(sigma, {n, 1});
  auto layer = [n](ad::Var in, ad::Var w, ad::Var b) {
    return ad::add(ad::matmul(in, ad::transpose(w)), ad::broadcast_rows(b, n));
  };
  ad::Var h1 = ad::leaky_relu(layer(x, p.w1, p.b1), VolMlpParams::kLeakySlope);
  ad::Var h2 = ad::leaky_relu(layer(h1, p.w2, p.b2), VolMlpParams::kLeakySlope);
  ad::Var h3 = ad::leaky_relu(layer(h2, p.w3, p.b3), VolMlpParams::kLeakySlope);
  ad::Var out = ad::softplus(ad::reshape(layer(h3, p.w4, p.b4), {n}));
  return ad::div(out, ad::mean(out));
}

/// Plain evaluation of the MLP on one scalar (pre-normalization output).
template <typename Scalar = double>
Scalar vol_mlp_scalar_eval(Scalar sigma, const VolMlpParams& p) {
  auto layer = [](const auto& in, const ad::Tensor& w, const ad::Tensor& b, auto& out,
                  bool last) {
    for (ad::Tensor::Index o = 0; o < w.rows(); ++o) {
      Scalar acc = static_cast<Scalar>(b.at(o));
      for (ad::Tensor::Index i = 0; i < w.cols(); ++i)
        acc += static_cast<Scalar>(w.at(o, i)) * in[static_cast<std::size_t>(i)];
      if (!last && acc < Scalar(0)) acc *= static_cast<Scalar>(VolMlpParams::kLeakySlope);
      out[static_cast<std::size_t>(o)] = acc;
    }
  };
  std::vector<Scalar> a0{sigma}, a1(64), a2(32), a3(16), a4(1);
  layer(a0, p.w1, p.b1, a1, false);
  layer(a1, p.w2, p.b2, a2, false);
  layer(a2, p.w3, p.b3, a3, false);
  layer(a3, p.w4, p.b4, a4, true);
  const Scalar x = a4[0];
  return std::max(x, Scalar(0)) + std::log1p(std::exp(-std::abs(x)));
}

/// Plain evaluation on a vector, normalized to mean 1.
template <typename Scalar = double>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> vol_mlp_eval(
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& sigma, const VolMlpParams& p) {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> out(sigma.size());
  for (Eigen::Index i = 0; i < sigma.size(); ++i) {
    if (!(sigma(i) > Scalar(0)))
      throw std::domain_error("vol_mlp_eval: non-positive input");
    out(i) = vol_mlp_scalar_eval<Scalar>(sigma(i), p);
  }
  return out / out.mean();
}

}  // namespace minvar
