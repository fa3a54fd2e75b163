#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "minvar/tensor.hpp"

namespace minvar::ad {

class Tape;

/// Handle to a node on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::int32_t id = -1;
  bool valid() const { return tape != nullptr && id >= 0; }
};

/// Dynamic reverse-mode tape. Nodes are recorded in evaluation order;
/// backward() visits them exactly once in reverse, accumulating gradients
/// additively. Single-threaded; independent tapes may run concurrently.
class Tape {
 public:
  struct Node {
    Tensor value;
    Tensor grad;
    bool grad_alloc = false;
    bool needs_grad = false;
    std::function<void(Tape&)> backward;
  };

  Tape() { nodes_.reserve(256); }

  Var leaf(Tensor value, bool requires_grad = true) {
    return Var{this, emplace(std::move(value), requires_grad)};
  }

  Var constant(Tensor value) { return Var{this, emplace(std::move(value), false)}; }

  Var constant_scalar(double v) { return constant(Tensor::scalar(v)); }

  const Tensor& val(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }

  bool needs_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].needs_grad; }

  /// Gradient of the last backward() pass wrt node v; zeros if v was not
  /// reached.
  Tensor grad(Var v) const {
    const Node& n = nodes_[static_cast<std::size_t>(v.id)];
    if (n.grad_alloc) return n.grad;
    Tensor z = n.value;
    z.fill(0.0);
    return z;
  }

  void backward(Var root) {
    if (root.tape != this) throw std::logic_error("backward: root from another tape");
    Node& r = nodes_[static_cast<std::size_t>(root.id)];
    if (r.value.size() != 1)
      throw std::invalid_argument("backward requires a scalar root, got " +
                                  r.value.shape_string());
    for (auto& n : nodes_) n.grad_alloc = false;
    ensure_grad(root.id).data()[0] = 1.0;
    for (std::int32_t i = root.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.grad_alloc && n.backward) n.backward(*this);
    }
  }

  std::size_t node_count() const { return nodes_.size(); }

  // --- used by op implementations ---

  std::int32_t emplace(Tensor value, bool needs) {
    nodes_.push_back(Node{std::move(value), Tensor(), false, needs, nullptr});
    return static_cast<std::int32_t>(nodes_.size() - 1);
  }

  void set_backward(std::int32_t id, std::function<void(Tape&)> fn) {
    nodes_[static_cast<std::size_t>(id)].backward = std::move(fn);
  }

  Tensor& ensure_grad(std::int32_t id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.grad_alloc) {
      n.grad = n.value;
      n.grad.fill(0.0);
      n.grad_alloc = true;
    }
    return n.grad;
  }

  const Tensor& grad_raw(std::int32_t id) const {
    return nodes_[static_cast<std::size_t>(id)].grad;
  }

 private:
  std::vector<Node> nodes_;
};

namespace detail {

inline void require_same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw std::logic_error("operands live on different tapes");
}

inline bool is_scalar(const Tensor& t) { return t.size() == 1; }

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops (same shape, or scalar on either side)
// ---------------------------------------------------------------------------

namespace detail {

template <typename FwdFn, typename BwdFn>
Var binary_ew(Var a, Var b, FwdFn fwd, BwdFn bwd, const char* name) {
  require_same_tape(a, b);
  Tape& t = *a.tape;
  const Tensor& va = t.val(a);
  const Tensor& vb = t.val(b);
  const bool sa = is_scalar(va), sb = is_scalar(vb);
  if (!sa && !sb && !va.same_shape(vb))
    throw std::invalid_argument(std::string(name) + ": shape mismatch " + va.shape_string() +
                                " vs " + vb.shape_string());
  Tensor out = sa ? vb : va;
  const auto n = out.size();
  for (Tensor::Index i = 0; i < n; ++i)
    out.at(i) = fwd(va.at(sa ? 0 : i), vb.at(sb ? 0 : i));
  const bool needs = t.needs_grad(a) || t.needs_grad(b);
  Var o{&t, t.emplace(std::move(out), needs)};
  if (needs) {
    t.set_backward(o.id, [=](Tape& tp) {
      const Tensor& g = tp.grad_raw(o.id);
      const Tensor& xa = tp.val(a);
      const Tensor& xb = tp.val(b);
      const bool na = tp.needs_grad(a), nb = tp.needs_grad(b);
      Tensor* ga = na ? &tp.ensure_grad(a.id) : nullptr;
      Tensor* gb = nb ? &tp.ensure_grad(b.id) : nullptr;
      const auto m = g.size();
      for (Tensor::Index i = 0; i < m; ++i) {
        double da, db;
        bwd(xa.at(sa ? 0 : i), xb.at(sb ? 0 : i), g.at(i), da, db);
        if (ga) ga->at(sa ? 0 : i) += da;
        if (gb) gb->at(sb ? 0 : i) += db;
      }
    });
  }
  return o;
}

template <typename FwdFn, typename BwdFn>
Var unary_ew(Var a, FwdFn fwd, BwdFn bwd) {
  Tape& t = *a.tape;
  const Tensor& va = t.val(a);
  Tensor out = va;
  const auto n = out.size();
  for (Tensor::Index i = 0; i < n; ++i) out.at(i) = fwd(va.at(i));
  const bool needs = t.needs_grad(a);
  Var o{&t, t.emplace(std::move(out), needs)};
  if (needs) {
    t.set_backward(o.id, [=](Tape& tp) {
      const Tensor& g = tp.grad_raw(o.id);
      const Tensor& x = tp.val(a);
      const Tensor& y = tp.val(o);
      Tensor& ga = tp.ensure_grad(a.id);
      const auto m = g.size();
      for (Tensor::Index i = 0; i < m; ++i) ga.at(i) += bwd(x.at(i), y.at(i)) * g.at(i);
    });
  }
  return o;
}

}  // namespace detail

inline Var add(Var a, Var b) {
  return detail::binary_ew(
      a, b, [](double x, double y) { return x + y; },
      [](double, double, double g, double& da, double& db) {
        da = g;
        db = g;
      },
      "add");
}

inline Var sub(Var a, Var b) {
  return detail::binary_ew(
      a, b, [](double x, double y) { return x - y; },
      [](double, double, double g, double& da, double& db) {
        da = g;
        db = -g;
      },
      "sub");
}

inline Var mul(Var a, Var b) {
  return detail::binary_ew(
      a, b, [](double x, double y) { return x * y; },
      [](double x, double y, double g, double& da, double& db) {
        da = g * y;
        db = g * x;
      },
      "mul");
}

inline Var div(Var a, Var b) {
  return detail::binary_ew(
      a, b, [](double x, double y) { return x / y; },
      [](double x, double y, double g, double& da, double& db) {
        da = g / y;
        db = -g * x / (y * y);
      },
      "div");
}

// Constant-scalar variants (no node for the constant).

inline Var cadd(Var a, double c) {
  return detail::unary_ew(
      a, [=](double x) { return x + c; }, [](double, double) { return 1.0; });
}

inline Var cmul(Var a, double c) {
  return detail::unary_ew(
      a, [=](double x) { return x * c; }, [=](double, double) { return c; });
}

inline Var neg(Var a) { return cmul(a, -1.0); }

// ---------------------------------------------------------------------------
// Elementwise unary functions
// ---------------------------------------------------------------------------

inline Var tanh(Var a) {
  return detail::unary_ew(
      a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

inline double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Var sigmoid(Var a) {
  return detail::unary_ew(
      a, [](double x) { return sigmoid_scalar(x); },
      [](double, double y) { return y * (1.0 - y); });
}

inline double softplus_scalar(double x) {
  // log(1 + e^x), overflow-safe on both tails.
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

inline Var softplus(Var a) {
  return detail::unary_ew(
      a, [](double x) { return softplus_scalar(x); },
      [](double x, double) { return sigmoid_scalar(x); });
}

inline Var leaky_relu(Var a, double slope = 0.01) {
  return detail::unary_ew(
      a, [=](double x) { return x > 0.0 ? x : slope * x; },
      [=](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

inline Var sqrt(Var a) {
  return detail::unary_ew(
      a, [](double x) { return std::sqrt(x); },
      [](double, double y) { return 0.5 / y; });
}

inline Var log(Var a) {
  return detail::unary_ew(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Var exp(Var a) {
  return detail::unary_ew(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Var square(Var a) {
  return detail::unary_ew(
      a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

inline Var reciprocal(Var a) {
  return detail::unary_ew(
      a, [](double x) { return 1.0 / x; }, [](double, double y) { return -y * y; });
}

// ---------------------------------------------------------------------------
// Structural ops
// ---------------------------------------------------------------------------

inline Var reshape(Var a, std::initializer_list<Tensor::Index> shape) {
  Tape& t = *a.tape;
  Tensor out = t.val(a).reshaped(shape);
  const bool needs = t.needs_grad(a);
  Var o{&t, t.emplace(std::move(out), needs)};
  if (needs) {
    t.set_backward(o.id, [=](Tape& tp) {
      const Tensor& g = tp.grad_raw(o.id);
      Tensor& ga = tp.ensure_grad(a.id);
      ga.vec() += g.vec();
    });
  }
  return o;
}

inline Var matmul(Var a, Var b) {
  detail::require_same_tape(a, b);
  Tape& t = *a.tape;
  const Tensor& va = t.val(a);
  const Tensor& vb = t.val(b);
  if (va.rank() != 2 || vb.rank() != 2 || va.cols() != vb.rows())
    throw std::invalid_argument("matmul: incompatible shapes " + va.shape_string() + " x " +
                                vb.shape_string());
  Tensor out({va.rows(), vb.cols()});
  out.mat() = va.mat() * vb.mat();
  const bool needs = t.needs_grad(a) || t.needs_grad(b);
  Var o{&t, t.emplace(std::move(out), needs)};
  if (needs) {
    t.set_backward(o.id, [=](Tape& tp) {
      const Tensor& g = tp.grad_raw(o.id);
      if (tp.needs_grad(a))
        tp.ensure_grad(a.id).mat() += g.mat() * tp.val(b).mat().transpose();
      if (tp.needs_grad(b))
        tp.ensure_grad(b.id).mat() += tp.val(a).mat().transpose() * g.mat();
    });
  }
  return o;
}

inline Var transpose(Var a) {
  Tape& t = *a.tape;
  const Tensor& va = t.val(a);
  if (va.rank() != 2) throw std::invalid_argument("transpose requires rank 2");
  Tensor out({va.cols(), va.rows()});
  out.mat() = va.mat().transpose();
  const bool needs = t.needs_grad(a);
  Var o{&t, t.emplace(std::move(out), needs)};
  if (needs) {
    t.set_backward(o.id, [=](Tape& tp) {
      tp.ensure_grad(a.id).mat() += tp.grad_raw(o.id).mat().transpose();
    });
  }
  return o;
}

inline Var sum(Var a) {
  Tape& t = *a.tape;
  Tensor out = Tensor::scalar(t.val(a).vec().sum());
  const bool needs = t.needs_grad(a);
  Var o{&t, t.emplace(std::move(out), needs)};
  if (needs) {
    t.set_backward(o.id, [=](Tape& tp) {
      const double g = tp.grad_raw(o.id).at(0);
      Tensor& ga = tp.ensure_grad(a.id);
      ga.vec().array() += g;
    });
  }
  return o;
}

inline Var mean(Var a) {
  const auto n = a.tape->val(a).size();
  return cmul(sum(a), 1.0 / static_cast<double>(n));
}

/// Sum of a rank-2 tensor along an axis: axis 0 collapses rows (result length
/// cols), axis 1 collapses columns (result length rows).
inline Var sum_axis(Var a, int axis) {
  Tape& t = *a.tape;
  const Tensor& va = t.val(a);
  if (va.rank() != 2 || (axis != 0 && axis != 1))
    throw std::invalid_argument("sum_axis: rank-2 input and axis in {0,1} required");
  Tensor out({axis == 0 ? va.cols() : va.rows()});
  if (axis == 0)
    out.vec() = va.mat().colwise().sum().transpose();
  else
    out.vec() = va.mat().rowwise().sum();
  const bool needs = t.needs_grad(a);
  Var o{&t, t.emplace(std::move(out), needs)};
  if (needs) {
    t.set_backward(o.id, [=](Tape& tp) {
      const Tensor& g = tp.grad_raw(o.id);
      Tensor& ga = tp.ensure_grad(a.id);
      if (axis == 0)
        ga.mat().rowwise() += g.vec().transpose();
      else
        ga.mat().colwise() += g.vec();
    });
  }
  return o;
}

inline Var mean_axis(Var a, int axis) {
  const Tensor& va = a.tape->val(a);
  const double denom = static_cast<double>(axis == 0 ? va.rows() : va.cols());
  return cmul(sum_axis(a, axis), 1.0 / denom);
}

/// Concatenate rank-1 tensors into one rank-1 tensor.
inline Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat: empty input");
  Tape& t = *parts[0].tape;
  Tensor::Index total = 0;
  bool needs = false;
  for (Var p : parts) {
    detail::require_same_tape(parts[0], p);
    if (t.val(p).rank() > 1) throw std::invalid_argument("concat: rank-1 inputs required");
    total += t.val(p).size();
    needs = needs || t.needs_grad(p);
  }
  Tensor out({total});
  Tensor::Index off = 0;
  for (Var p : parts) {
    const Tensor& v = t.val(p);
    for (Tensor::Index i = 0; i < v.size(); ++i) out.at(off + i) = v.at(i);
    off += v.size();
  }
  std::vector<Var> saved(parts.begin(), parts.end());
  Var o{&t, t.emplace(std::move(out), needs)};
  if (needs) {
    t.set_backward(o.id, [=, saved = std::move(saved)](Tape& tp) {
      const Tensor& g = tp.grad_raw(o.id);
      Tensor::Index pos = 0;
      for (Var p : saved) {
        const auto sz = tp.val(p).size();
        if (tp.needs_grad(p)) {
          Tensor& gp = tp.ensure_grad(p.id);
          for (Tensor::Index i = 0; i < sz; ++i) gp.at(i) += g.at(pos + i);
        }
        pos += sz;
      }
    });
  }
  return o;
}

inline Var concat(Var a, Var b) {
  const Var parts[2] = {a, b};
  return concat(std::span<const Var>(parts, 2));
}

/// Stack rank-1 tensors of equal length as the rows of a rank-2 tensor.
inline Var stack_rows(std::span<const Var> rows) {
  if (rows.empty()) throw std::invalid_argument("stack_rows: empty input");
  Tape& t = *rows[0].tape;
  const Tensor::Index n = t.val(rows[0]).size();
  bool needs = false;
  for (Var r : rows) {
    detail::require_same_tape(rows[0], r);
    if (t.val(r).size() != n) throw std::invalid_argument("stack_rows: ragged rows");
    needs = needs || t.needs_grad(r);
  }
  Tensor out({static_cast<Tensor::Index>(rows.size()), n});
  for (std::size_t k = 0; k < rows.size(); ++k)
    for (Tensor::Index i = 0; i < n; ++i)
      out.at(static_cast<Tensor::Index>(k), i) = t.val(rows[k]).at(i);
  std::vector<Var> saved(rows.begin(), rows.end());
  Var o{&t, t.emplace(std::move(out), needs)};
  if (needs) {
    t.set_backward(o.id, [=, saved = std::move(saved)](Tape& tp) {
      const Tensor& g = tp.grad_raw(o.id);
      for (std::size_t k = 0; k < saved.size(); ++k) {
        if (!tp.needs_grad(saved[k])) continue;
        Tensor& gr = tp.ensure_grad(saved[k].id);
        for (Tensor::Index i = 0; i < n; ++i)
          gr.at(i) += g.at(static_cast<Tensor::Index>(k), i);
      }
    });
  }
  return o;
}

inline Var slice(Var a, Tensor::Index offset, Tensor::Index len) {
  Tape& t = *a.tape;
  const Tensor& va = t.val(a);
  if (va.rank() != 1 || offset < 0 || offset + len > va.size())
    throw std::invalid_argument("slice: out of range");
  Tensor out({len});
  for (Tensor::Index i = 0; i < len; ++i) out.at(i) = va.at(offset + i);
  const bool needs = t.needs_grad(a);
  Var o{&t, t.emplace(std::move(out), needs)};
  if (needs) {
    t.set_backward(o.id, [=](Tape& tp) {
      const Tensor& g = tp.grad_raw(o.id);
      Tensor& ga = tp.ensure_grad(a.id);
      for (Tensor::Index i = 0; i < len; ++i) ga.at(offset + i) += g.at(i);
    });
  }
  return o;
}

/// Gather elements of a rank-1 tensor: out[i] = a[indices[i]].
inline Var gather(Var a, std::vector<Tensor::Index> indices) {
  Tape& t = *a.tape;
  const Tensor& va = t.val(a);
  if (va.rank() != 1) throw std::invalid_argument("gather: rank-1 input required");
  Tensor out({static_cast<Tensor::Index>(indices.size())});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= va.size())
      throw std::invalid_argument("gather: index out of range");
    out.at(static_cast<Tensor::Index>(i)) = va.at(indices[i]);
  }
  const bool needs = t.needs_grad(a);
  Var o{&t, t.emplace(std::move(out), needs)};
  if (needs) {
    t.set_backward(o.id, [=, idx = std::move(indices)](Tape& tp) {
      const Tensor& g = tp.grad_raw(o.id);
      Tensor& ga = tp.ensure_grad(a.id);
      for (std::size_t i = 0; i < idx.size(); ++i)
        ga.at(idx[i]) += g.at(static_cast<Tensor::Index>(i));
    });
  }
  return o;
}

/// Repeat a length-n vector as the rows of an (m x n) matrix.
inline Var broadcast_rows(Var v, Tensor::Index m) {
  Tape& t = *v.tape;
  const Tensor& vv = t.val(v);
  if (vv.rank() != 1) throw std::invalid_argument("broadcast_rows: rank-1 input required");
  Tensor out({m, vv.size()});
  out.mat().rowwise() = vv.vec().transpose();
  const bool needs = t.needs_grad(v);
  Var o{&t, t.emplace(std::move(out), needs)};
  if (needs) {
    t.set_backward(o.id, [=](Tape& tp) {
      tp.ensure_grad(v.id).vec() += tp.grad_raw(o.id).mat().colwise().sum().transpose();
    });
  }
  return o;
}

/// Repeat a length-m vector as the columns of an (m x n) matrix.
inline Var broadcast_cols(Var v, Tensor::Index n) {
  Tape& t = *v.tape;
  const Tensor& vv = t.val(v);
  if (vv.rank() != 1) throw std::invalid_argument("broadcast_cols: rank-1 input required");
  Tensor out({vv.size(), n});
  out.mat().colwise() = vv.vec();
  const bool needs = t.needs_grad(v);
  Var o{&t, t.emplace(std::move(out), needs)};
  if (needs) {
    t.set_backward(o.id, [=](Tape& tp) {
      tp.ensure_grad(v.id).vec() += tp.grad_raw(o.id).mat().rowwise().sum();
    });
  }
  return o;
}

inline Var dot(Var a, Var b) { return sum(mul(a, b)); }

// Operator sugar.
inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator+(Var a, double c) { return cadd(a, c); }
inline Var operator-(Var a, double c) { return cadd(a, -c); }
inline Var operator*(Var a, double c) { return cmul(a, c); }
inline Var operator*(double c, Var a) { return cmul(a, c); }
inline Var operator/(Var a, double c) { return cmul(a, 1.0 / c); }
inline Var operator-(Var a) { return neg(a); }

// ---------------------------------------------------------------------------
// Differentiable symmetric eigendecomposition
// ---------------------------------------------------------------------------

struct EighResult {
  Var eigenvalues;   // rank-1, ascending
  Var eigenvectors;  // rank-2, column k pairs with eigenvalue k
};

/// Clamp applied to the pairwise factors 1/(lambda_i - lambda_j) in the
/// eigenvector backward rule; keeps gradients finite near degeneracy.
inline constexpr double kEighDegeneracyClamp = 1e12;

/// Eigendecomposition of a symmetric matrix, differentiable in the input.
///
/// The input is symmetrized as (A + A^T)/2 after an asymmetry check at
/// `sym_tol`. Eigenvalues come out ascending; each eigenvector is oriented so
/// its largest-magnitude component is positive (first such index on ties).
inline EighResult eigh_sym(Var a, double sym_tol = 1e-10) {
  Tape& t = *a.tape;
  const Tensor& va = t.val(a);
  if (va.rank() != 2 || va.rows() != va.cols())
    throw std::invalid_argument("eigh_sym: square matrix required, got " + va.shape_string());
  const Tensor::Index n = va.rows();
  const auto A = va.mat();
  const double scale = std::max(1.0, A.cwiseAbs().maxCoeff());
  const double asym = (A - A.transpose()).cwiseAbs().maxCoeff();
  if (asym > sym_tol * scale)
    throw std::invalid_argument("eigh_sym: matrix asymmetry " + std::to_string(asym) +
                                " exceeds tolerance");
  Eigen::MatrixXd As = 0.5 * (A + A.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(As);
  if (solver.info() != Eigen::Success)
    throw std::runtime_error("eigh_sym: eigen solver failed to converge");
  Eigen::VectorXd lam = solver.eigenvalues();
  Eigen::MatrixXd V = solver.eigenvectors();
  for (Tensor::Index k = 0; k < n; ++k) {
    Tensor::Index arg = 0;
    double best = -1.0;
    for (Tensor::Index i = 0; i < n; ++i) {
      const double m = std::abs(V(i, k));
      if (m > best) {
        best = m;
        arg = i;
      }
    }
    if (V(arg, k) < 0.0) V.col(k) = -V.col(k);
  }

  const bool needs = t.needs_grad(a);
  Var lam_var{&t, t.emplace(Tensor::from_eigen_vec(lam), needs)};
  Var vec_var{&t, t.emplace(Tensor::from_eigen_mat(V), needs)};

  if (needs) {
    // d(loss)/dA contribution from eigenvalue gradients: V diag(g) V^T.
    t.set_backward(lam_var.id, [=](Tape& tp) {
      const Tensor& g = tp.grad_raw(lam_var.id);
      const auto Vm = tp.val(vec_var).mat();
      tp.ensure_grad(a.id).mat() += Vm * g.vec().asDiagonal() * Vm.transpose();
    });
    // Contribution from eigenvector gradients:
    //   G = V (F o (V^T gV)) V^T,   F_jk = 1/(lambda_k - lambda_j),
    // symmetrized to account for the (A + A^T)/2 pre-step.
    t.set_backward(vec_var.id, [=](Tape& tp) {
      const Tensor& gv = tp.grad_raw(vec_var.id);
      const auto Vm = tp.val(vec_var).mat();
      const auto lm = tp.val(lam_var).vec();
      Eigen::MatrixXd M = Vm.transpose() * gv.mat();
      for (Tensor::Index j = 0; j < n; ++j) {
        for (Tensor::Index k = 0; k < n; ++k) {
          if (j == k) {
            M(j, k) = 0.0;
            continue;
          }
          const double d = lm(k) - lm(j);
          double f;
          if (d == 0.0)
            f = kEighDegeneracyClamp;
          else
            f = std::clamp(1.0 / d, -kEighDegeneracyClamp, kEighDegeneracyClamp);
          M(j, k) *= f;
        }
      }
      Eigen::MatrixXd G = Vm * M * Vm.transpose();
      tp.ensure_grad(a.id).mat() += 0.5 * (G + G.transpose());
    });
  }
  return EighResult{lam_var, vec_var};
}

}  // namespace minvar::ad
