#pragma once

#include <cstddef>
#include <vector>

namespace persurv {

// Dense row-major matrix of doubles. Vectors are 1 x n.
class Tensor {
 public:
  Tensor() = default;
  Tensor(int rows, int cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows) * cols, fill) {}
  Tensor(int rows, int cols, std::vector<double> data);

  static Tensor row(std::vector<double> values);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  std::vector<int> shape() const { return {rows_, cols_}; }
  bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  double& operator()(int r, int c) { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
  double operator()(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  const std::vector<double>& values() const { return data_; }

  void fill(double v);
  // this += s * o
  void axpy(double s, const Tensor& o);

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> data_;
};

// C (+)= A B, A B^T and A^T B. Shapes are checked and throw kShapeMismatch.
void matmul_into(const Tensor& a, const Tensor& b, Tensor& c, bool accumulate = false);
void matmul_nt_into(const Tensor& a, const Tensor& b, Tensor& c, bool accumulate = false);
void matmul_tn_into(const Tensor& a, const Tensor& b, Tensor& c, bool accumulate = false);

Tensor matmul(const Tensor& a, const Tensor& b);

double max_abs(const Tensor& t);

}  // namespace persurv
