#include "persurv/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "persurv/error.hpp"

namespace persurv {

namespace {

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw Error(ErrorCode::kShapeMismatch, std::string(op) + ": (" + std::to_string(a.rows()) + "x" +
                                             std::to_string(a.cols()) + ") vs (" + std::to_string(b.rows()) +
                                             "x" + std::to_string(b.cols()) + ")");
}

void prepare(Tensor& c, int rows, int cols, bool accumulate) {
  if (accumulate) {
    if (c.rows() != rows || c.cols() != cols) throw Error(ErrorCode::kShapeMismatch, "accumulator shape");
  } else if (c.rows() != rows || c.cols() != cols) {
    c = Tensor(rows, cols);
  } else {
    c.fill(0.0);
  }
}

}  // namespace

Tensor::Tensor(int rows, int cols, std::vector<double> data) : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != static_cast<std::size_t>(rows) * cols) {
    throw Error(ErrorCode::kShapeMismatch, "value count does not match shape");
  }
}

Tensor Tensor::row(std::vector<double> values) {
  const int n = static_cast<int>(values.size());
  return Tensor(1, n, std::move(values));
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::axpy(double s, const Tensor& o) {
  if (!same_shape(o)) shape_error("axpy", *this, o);
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += s * o.data_[i];
}

void matmul_into(const Tensor& a, const Tensor& b, Tensor& c, bool accumulate) {
  if (a.cols() != b.rows()) shape_error("matmul", a, b);
  prepare(c, a.rows(), b.cols(), accumulate);
  const int n = a.rows(), k = a.cols(), m = b.cols();
  for (int i = 0; i < n; ++i) {
    double* crow = c.data() + static_cast<std::size_t>(i) * m;
    for (int p = 0; p < k; ++p) {
      const double av = a(i, p);
      if (av == 0.0) continue;
      const double* brow = b.data() + static_cast<std::size_t>(p) * m;
      for (int j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

void matmul_nt_into(const Tensor& a, const Tensor& b, Tensor& c, bool accumulate) {
  if (a.cols() != b.cols()) shape_error("matmul_nt", a, b);
  prepare(c, a.rows(), b.rows(), accumulate);
  const int n = a.rows(), k = a.cols(), m = b.rows();
  for (int i = 0; i < n; ++i) {
    const double* arow = a.data() + static_cast<std::size_t>(i) * k;
    for (int j = 0; j < m; ++j) {
      const double* brow = b.data() + static_cast<std::size_t>(j) * k;
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += arow[p] * brow[p];
      c(i, j) += s;
    }
  }
}

void matmul_tn_into(const Tensor& a, const Tensor& b, Tensor& c, bool accumulate) {
  if (a.rows() != b.rows()) shape_error("matmul_tn", a, b);
  prepare(c, a.cols(), b.cols(), accumulate);
  const int n = a.rows(), k = a.cols(), m = b.cols();
  for (int p = 0; p < n; ++p) {
    const double* brow = b.data() + static_cast<std::size_t>(p) * m;
    for (int i = 0; i < k; ++i) {
      const double av = a(p, i);
      if (av == 0.0) continue;
      double* crow = c.data() + static_cast<std::size_t>(i) * m;
      for (int j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  Tensor c;
  matmul_into(a, b, c);
  return c;
}

double max_abs(const Tensor& t) {
  double m = 0.0;
  for (double v : t.values()) m = std::max(m, std::abs(v));
  return m;
}

}  // namespace persurv
