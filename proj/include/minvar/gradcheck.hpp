#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "minvar/autodiff.hpp"

namespace minvar::ad {

struct GradCheckEntry {
  std::string group;
  Tensor::Index element = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  GradCheckEntry worst;
  std::size_t parameters_checked = 0;
  // Split view: relative error over elements whose gradient magnitude exceeds
  // `resolvable_floor`, absolute |analytic - numeric| over the rest. Central
  // differences cannot resolve relative error on near-zero gradients inside a
  // non-zero objective, so deep-network checks assert on these two fields.
  double resolvable_floor = 0.0;
  double max_rel_err_resolvable = 0.0;
  double max_abs_err_unresolvable = 0.0;
};

/// One named parameter tensor subject to checking.
struct GradCheckParam {
  std::string name;
  Tensor* tensor;
};

/// Compare the reverse-mode gradient of a scalar graph function against
/// central finite differences, element by element.
///
/// `f` receives a fresh tape and the leaf Vars bound to the current parameter
/// values (one per entry of `params`, same order) and must return a scalar
/// Var. Relative error uses denominator max(|analytic|, |numeric|, 1e-8).
/// `stride` > 1 checks every stride-th element of each tensor (element 0
/// always included); 1 checks all.
inline GradCheckReport grad_check(
    const std::function<Var(Tape&, const std::vector<Var>&)>& f,
    std::vector<GradCheckParam> params, double h, Tensor::Index stride = 1,
    double resolvable_floor = 0.0) {
  GradCheckReport report;
  report.resolvable_floor = resolvable_floor;

  auto eval = [&](bool with_grad) {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(params.size());
    for (auto& p : params) vars.push_back(tape.leaf(*p.tensor, with_grad));
    Var loss = f(tape, vars);
    double value = tape.val(loss).scalar_value();
    std::vector<Tensor> grads;
    if (with_grad) {
      tape.backward(loss);
      for (auto& v : vars) grads.push_back(tape.grad(v));
    }
    return std::make_pair(value, std::move(grads));
  };

  auto [base_value, analytic] = eval(true);
  (void)base_value;

  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& x = *params[p].tensor;
    for (Tensor::Index i = 0; i < x.size(); i += std::max<Tensor::Index>(1, stride)) {
      const double x0 = x.at(i);
      x.at(i) = x0 + h;
      const double fp = eval(false).first;
      x.at(i) = x0 - h;
      const double fm = eval(false).first;
      x.at(i) = x0;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[p].at(i);
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      ++report.parameters_checked;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst = GradCheckEntry{params[p].name, i, a, numeric, rel};
      }
      if (std::max(std::abs(a), std::abs(numeric)) > resolvable_floor)
        report.max_rel_err_resolvable = std::max(report.max_rel_err_resolvable, rel);
      else
        report.max_abs_err_unresolvable =
            std::max(report.max_abs_err_unresolvable, std::abs(a - numeric));
    }
  }
  return report;
}

}  // namespace minvar::ad
