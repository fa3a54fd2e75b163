#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace minvar::ad {

/// Dense tensor of 64-bit floats, rank 0..3, row-major storage.
class Tensor {
 public:
  using Index = std::int64_t;
  using MatrixRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatMap = Eigen::Map<MatrixRM>;
  using ConstMatMap = Eigen::Map<const MatrixRM>;
  using VecMap = Eigen::Map<Eigen::VectorXd>;
  using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

  Tensor() : rank_(0), dims_{1, 1, 1}, data_(1, 0.0) {}

  static Tensor scalar(double v) {
    Tensor t;
    t.data_[0] = v;
    return t;
  }

  static Tensor zeros(std::initializer_list<Index> shape) { return Tensor(shape, 0.0); }

  static Tensor full(std::initializer_list<Index> shape, double v) { return Tensor(shape, v); }

  Tensor(std::initializer_list<Index> shape, double fill) {
    set_shape(std::vector<Index>(shape));
    data_.assign(static_cast<std::size_t>(size()), fill);
  }

  explicit Tensor(const std::vector<Index>& shape, double fill = 0.0) {
    set_shape(shape);
    data_.assign(static_cast<std::size_t>(size()), fill);
  }

  static Tensor from_vector(const std::vector<double>& v) {
    Tensor t;
    t.rank_ = 1;
    t.dims_ = {static_cast<Index>(v.size()), 1, 1};
    t.data_ = v;
    return t;
  }

  static Tensor from_eigen_vec(const Eigen::VectorXd& v) {
    Tensor t;
    t.rank_ = 1;
    t.dims_ = {v.size(), 1, 1};
    t.data_.assign(v.data(), v.data() + v.size());
    return t;
  }

  static Tensor from_eigen_mat(const Eigen::MatrixXd& m) {
    Tensor t;
    t.rank_ = 2;
    t.dims_ = {m.rows(), m.cols(), 1};
    t.data_.resize(static_cast<std::size_t>(m.size()));
    MatMap(t.data_.data(), m.rows(), m.cols()) = m;
    return t;
  }

  int rank() const { return rank_; }
  Index dim(int i) const { return dims_[static_cast<std::size_t>(i)]; }
  Index rows() const { return dims_[0]; }
  Index cols() const { return dims_[1]; }
  Index size() const { return dims_[0] * dims_[1] * dims_[2]; }

  bool same_shape(const Tensor& o) const { return rank_ == o.rank_ && dims_ == o.dims_; }

  std::string shape_string() const {
    std::string s = "(";
    for (int i = 0; i < rank_; ++i) {
      if (i) s += ",";
      s += std::to_string(dims_[static_cast<std::size_t>(i)]);
    }
    return s + ")";
  }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& at(Index i) { return data_[static_cast<std::size_t>(i)]; }
  double at(Index i) const { return data_[static_cast<std::size_t>(i)]; }
  double& at(Index i, Index j) { return data_[static_cast<std::size_t>(i * dims_[1] + j)]; }
  double at(Index i, Index j) const { return data_[static_cast<std::size_t>(i * dims_[1] + j)]; }

  double scalar_value() const {
    if (size() != 1) throw std::logic_error("Tensor::scalar_value on non-scalar " + shape_string());
    return data_[0];
  }

  MatMap mat() { return MatMap(data_.data(), dims_[0], rank_ >= 2 ? dims_[1] : 1); }
  ConstMatMap mat() const { return ConstMatMap(data_.data(), dims_[0], rank_ >= 2 ? dims_[1] : 1); }
  VecMap vec() { return VecMap(data_.data(), size()); }
  ConstVecMap vec() const { return ConstVecMap(data_.data(), size()); }

  Eigen::VectorXd to_eigen_vector() const { return vec(); }
  Eigen::MatrixXd to_eigen_matrix() const { return mat(); }

  void fill(double v) { data_.assign(data_.size(), v); }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  Tensor reshaped(std::initializer_list<Index> shape) const {
    Tensor t = *this;
    t.set_shape(std::vector<Index>(shape));
    if (t.size() != size())
      throw std::invalid_argument("Tensor::reshaped: element count mismatch");
    return t;
  }

 private:
  void set_shape(const std::vector<Index>& shape) {
    if (shape.size() > 3) throw std::invalid_argument("Tensor rank > 3 unsupported");
    rank_ = static_cast<int>(shape.size());
    dims_ = {1, 1, 1};
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (shape[i] < 0) throw std::invalid_argument("negative tensor dimension");
      dims_[i] = shape[i];
    }
  }

  int rank_;
  std::array<Index, 3> dims_;
  std::vector<double> data_;
};

}  // namespace minvar::ad
