#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "minvar/tensor.hpp"

namespace minvar::ad {

/// First/second-moment accumulators for one parameter tensor.
struct AdamState {
  Tensor m;
  Tensor v;
  long long step = 0;

  static AdamState like(const Tensor& p) {
    AdamState s;
    s.m = p;
    s.m.fill(0.0);
    s.v = p;
    s.v.fill(0.0);
    return s;
  }
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Global L2 norm across a gradient list.
inline double global_grad_norm(const std::vector<Tensor>& grads) {
  double ss = 0.0;
  for (const auto& g : grads) ss += g.vec().squaredNorm();
  return std::sqrt(ss);
}

/// Scale all gradients in place so the global norm does not exceed max_norm.
/// Returns the pre-clip norm.
inline double clip_global_norm(std::vector<Tensor>& grads, double max_norm) {
  const double norm = global_grad_norm(grads);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto& g : grads) g.vec() *= s;
  }
  return norm;
}

/// One Adam update with bias correction. Rejects the step (returns false,
/// parameters and state untouched) if any gradient entry is non-finite.
inline bool adam_step(std::vector<Tensor*> params, const std::vector<Tensor>& grads,
                      std::vector<AdamState>& state, double lr,
                      const AdamConfig& cfg = AdamConfig{}) {
  if (params.size() != grads.size() || params.size() != state.size())
    throw std::invalid_argument("adam_step: params/grads/state size mismatch");
  for (const auto& g : grads)
    if (!g.all_finite()) return false;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& x = *params[p];
    const Tensor& g = grads[p];
    AdamState& s = state[p];
    if (!x.same_shape(g) || !x.same_shape(s.m))
      throw std::invalid_argument("adam_step: shape mismatch in parameter group " +
                                  std::to_string(p));
    s.step += 1;
    const double b1t = 1.0 - std::pow(cfg.beta1, static_cast<double>(s.step));
    const double b2t = 1.0 - std::pow(cfg.beta2, static_cast<double>(s.step));
    for (Tensor::Index i = 0; i < x.size(); ++i) {
      const double gi = g.at(i);
      s.m.at(i) = cfg.beta1 * s.m.at(i) + (1.0 - cfg.beta1) * gi;
      s.v.at(i) = cfg.beta2 * s.v.at(i) + (1.0 - cfg.beta2) * gi * gi;
      const double mhat = s.m.at(i) / b1t;
      const double vhat = s.v.at(i) / b2t;
      x.at(i) -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
  return true;
}

}  // namespace minvar::ad
