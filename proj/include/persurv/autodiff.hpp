#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "persurv/tensor.hpp"

namespace persurv::ad {

struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Tensor& grad_slot();
};

// Handle to a node of the dynamic tape. Copies share the node.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  // Zero-filled if nothing flowed into this node.
  const Tensor& grad() const;
  bool requires_grad() const { return node_->requires_grad; }
  int rows() const { return node_->value.rows(); }
  int cols() const { return node_->value.cols(); }
  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& ptr() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node> node_;
};

// While alive, new nodes never record parents or backward closures.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

Var constant(Tensor t);
Var leaf(Tensor t, bool requires_grad = true);

Var matmul(const Var& a, const Var& b);
Var matmul_nt(const Var& a, const Var& b);  // a b^T
Var add(const Var& a, const Var& b);
Var add_row(const Var& a, const Var& row);  // row broadcast over a's rows
Var scale(const Var& a, double s);
Var relu(const Var& a);
Var tanh(const Var& a);

// Row-wise softmax. `col_mask`, if non-empty, zeroes the masked columns of
// every row exactly; each row needs at least one unmasked column.
Var softmax_rows(const Var& a, const std::vector<char>& col_mask = {});
// Log-softmax of a 1 x m row with masked entries at -infinity.
Var log_softmax_row(const Var& a, const std::vector<char>& mask);

Var concat_cols(const Var& a, const Var& b);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice_cols(const Var& a, int c0, int c1);
Var slice_rows(const Var& a, int r0, int r1);
Var gather_rows(const Var& a, const std::vector<int>& rows);
Var mean_rows(const Var& a);
Var pick(const Var& a, int r, int c);  // 1 x 1
Var sum_scalars(const std::vector<Var>& xs);

// Batch normalization over rows with batch statistics (biased variance).
// The statistics used are written to `mean` / `var` when given.
Var batchnorm_train(const Var& x, const Var& gamma, const Var& beta, double eps, Tensor* mean = nullptr,
                    Tensor* var = nullptr);
// Batch normalization with fixed statistics.
Var batchnorm_eval(const Var& x, const Var& gamma, const Var& beta, const Tensor& mean, const Tensor& var,
                   double eps);

// Reverse sweep from a 1 x 1 root, seeding d root = 1.
void backward(const Var& root);

}  // namespace persurv::ad
