#include "persurv/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "persurv/error.hpp"

namespace persurv::ad {

namespace {

thread_local bool g_grad_enabled = true;

using Backward = std::function<void(Node&)>;

Var make(Tensor value, std::vector<std::shared_ptr<Node>> parents, Backward fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (g_grad_enabled) {
    const bool any = std::any_of(parents.begin(), parents.end(), [](const auto& p) { return p->requires_grad; });
    if (any) {
      node->requires_grad = true;
      node->parents = std::move(parents);
      node->backward = std::move(fn);
    }
  }
  return Var(std::move(node));
}

void require(bool ok, const char* what) {
  if (!ok) throw Error(ErrorCode::kShapeMismatch, what);
}

// Whether a parent slot should receive gradient.
bool wants(const Node& self, std::size_t i) { return self.parents[i]->requires_grad; }

}  // namespace

Tensor& Node::grad_slot() {
  if (!grad.same_shape(value)) grad = Tensor(value.rows(), value.cols());
  return grad;
}

const Tensor& Var::grad() const {
  node_->grad_slot();
  return node_->grad;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

Var constant(Tensor t) { return make(std::move(t), {}, nullptr); }

Var leaf(Tensor t, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->value = std::move(t);
  node->requires_grad = requires_grad;
  return Var(std::move(node));
}

Var matmul(const Var& a, const Var& b) {
  Tensor out;
  matmul_into(a.value(), b.value(), out);
  return make(std::move(out), {a.ptr(), b.ptr()}, [](Node& self) {
    Node& A = *self.parents[0];
    Node& B = *self.parents[1];
    if (wants(self, 0)) matmul_nt_into(self.grad, B.value, A.grad_slot(), true);
    if (wants(self, 1)) matmul_tn_into(A.value, self.grad, B.grad_slot(), true);
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  Tensor out;
  matmul_nt_into(a.value(), b.value(), out);
  return make(std::move(out), {a.ptr(), b.ptr()}, [](Node& self) {
    Node& A = *self.parents[0];
    Node& B = *self.parents[1];
    if (wants(self, 0)) matmul_into(self.grad, B.value, A.grad_slot(), true);
    if (wants(self, 1)) matmul_tn_into(self.grad, A.value, B.grad_slot(), true);
  });
}

Var add(const Var& a, const Var& b) {
  require(a.value().same_shape(b.value()), "add: shapes differ");
  Tensor out = a.value();
  out.axpy(1.0, b.value());
  return make(std::move(out), {a.ptr(), b.ptr()}, [](Node& self) {
    for (std::size_t i = 0; i < 2; ++i) {
      if (wants(self, i)) self.parents[i]->grad_slot().axpy(1.0, self.grad);
    }
  });
}

Var add_row(const Var& a, const Var& row) {
  require(row.rows() == 1 && row.cols() == a.cols(), "add_row: row shape");
  Tensor out = a.value();
  const int n = out.rows(), m = out.cols();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) out(i, j) += row.value()(0, j);
  return make(std::move(out), {a.ptr(), row.ptr()}, [n, m](Node& self) {
    if (wants(self, 0)) self.parents[0]->grad_slot().axpy(1.0, self.grad);
    if (wants(self, 1)) {
      Tensor& g = self.parents[1]->grad_slot();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) g(0, j) += self.grad(i, j);
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= s;
  return make(std::move(out), {a.ptr()}, [s](Node& self) { self.parents[0]->grad_slot().axpy(s, self.grad); });
}

Var relu(const Var& a) {
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(out[i], 0.0);
  return make(std::move(out), {a.ptr()}, [](Node& self) {
    Tensor& g = self.parents[0]->grad_slot();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (self.value[i] > 0.0) g[i] += self.grad[i];
  });
}

Var tanh(const Var& a) {
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
  return make(std::move(out), {a.ptr()}, [](Node& self) {
    Tensor& g = self.parents[0]->grad_slot();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (1.0 - self.value[i] * self.value[i]);
  });
}

Var softmax_rows(const Var& a, const std::vector<char>& col_mask) {
  const int n = a.rows(), m = a.cols();
  require(col_mask.empty() || static_cast<int>(col_mask.size()) == m, "softmax_rows: mask length");
  const auto on = [&col_mask](int j) { return col_mask.empty() || col_mask[j]; };
  Tensor out(n, m);
  for (int i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < m; ++j)
      if (on(j)) mx = std::max(mx, a.value()(i, j));
    if (!std::isfinite(mx)) throw Error(ErrorCode::kAllMasked, "softmax over an empty support");
    double z = 0.0;
    for (int j = 0; j < m; ++j) {
      if (!on(j)) continue;
      out(i, j) = std::exp(a.value()(i, j) - mx);
      z += out(i, j);
    }
    for (int j = 0; j < m; ++j) out(i, j) /= z;
  }
  return make(std::move(out), {a.ptr()}, [n, m](Node& self) {
    Tensor& g = self.parents[0]->grad_slot();
    for (int i = 0; i < n; ++i) {
      double dot = 0.0;
      for (int j = 0; j < m; ++j) dot += self.grad(i, j) * self.value(i, j);
      for (int j = 0; j < m; ++j) g(i, j) += self.value(i, j) * (self.grad(i, j) - dot);
    }
  });
}

Var log_softmax_row(const Var& a, const std::vector<char>& mask) {
  const int m = a.cols();
  require(a.rows() == 1 && static_cast<int>(mask.size()) == m, "log_softmax_row: shape");
  double mx = -std::numeric_limits<double>::infinity();
  bool any = false;
  for (int j = 0; j < m; ++j) {
    if (!mask[j]) continue;
    any = true;
    // NaN propagates instead of masquerading as an empty support.
    if (std::isnan(a.value()(0, j)) || a.value()(0, j) > mx) mx = a.value()(0, j);
    if (std::isnan(mx)) break;
  }
  if (!any) throw Error(ErrorCode::kAllMasked, "no feasible action");
  double z = 0.0;
  for (int j = 0; j < m; ++j)
    if (mask[j]) z += std::exp(a.value()(0, j) - mx);
  const double lse = mx + std::log(z);
  Tensor out(1, m, -std::numeric_limits<double>::infinity());
  for (int j = 0; j < m; ++j)
    if (mask[j]) out(0, j) = a.value()(0, j) - lse;
  return make(std::move(out), {a.ptr()}, [mask, m](Node& self) {
    Tensor& g = self.parents[0]->grad_slot();
    double total = 0.0;
    for (int j = 0; j < m; ++j)
      if (mask[j]) total += self.grad(0, j);
    for (int j = 0; j < m; ++j)
      if (mask[j]) g(0, j) += self.grad(0, j) - std::exp(self.value(0, j)) * total;
  });
}

Var concat_cols(const Var& a, const Var& b) { return concat_cols(std::vector<Var>{a, b}); }

Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols: no parts");
  const int n = parts[0].rows();
  int m = 0;
  for (const Var& p : parts) {
    require(p.rows() == n, "concat_cols: row counts differ");
    m += p.cols();
  }
  Tensor out(n, m);
  std::vector<std::shared_ptr<Node>> parents;
  int c0 = 0;
  for (const Var& p : parts) {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < p.cols(); ++j) out(i, c0 + j) = p.value()(i, j);
    c0 += p.cols();
    parents.push_back(p.ptr());
  }
  return make(std::move(out), std::move(parents), [n](Node& self) {
    int off = 0;
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      Node& p = *self.parents[k];
      const int w = p.value.cols();
      if (p.requires_grad) {
        Tensor& g = p.grad_slot();
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < w; ++j) g(i, j) += self.grad(i, off + j);
      }
      off += w;
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_rows: no parts");
  const int m = parts[0].cols();
  int n = 0;
  for (const Var& p : parts) {
    require(p.cols() == m, "concat_rows: column counts differ");
    n += p.rows();
  }
  Tensor out(n, m);
  std::vector<std::shared_ptr<Node>> parents;
  std::size_t off = 0;
  for (const Var& p : parts) {
    std::copy(p.value().data(), p.value().data() + p.value().size(), out.data() + off);
    off += p.value().size();
    parents.push_back(p.ptr());
  }
  return make(std::move(out), std::move(parents), [](Node& self) {
    std::size_t o = 0;
    for (auto& p : self.parents) {
      const std::size_t sz = p->value.size();
      if (p->requires_grad) {
        Tensor& g = p->grad_slot();
        for (std::size_t i = 0; i < sz; ++i) g[i] += self.grad[o + i];
      }
      o += sz;
    }
  });
}

Var slice_cols(const Var& a, int c0, int c1) {
  require(0 <= c0 && c0 <= c1 && c1 <= a.cols(), "slice_cols: range");
  const int n = a.rows(), w = c1 - c0;
  Tensor out(n, w);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < w; ++j) out(i, j) = a.value()(i, c0 + j);
  return make(std::move(out), {a.ptr()}, [n, w, c0](Node& self) {
    Tensor& g = self.parents[0]->grad_slot();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < w; ++j) g(i, c0 + j) += self.grad(i, j);
  });
}

Var slice_rows(const Var& a, int r0, int r1) {
  require(0 <= r0 && r0 <= r1 && r1 <= a.rows(), "slice_rows: range");
  const int m = a.cols();
  const std::size_t off = static_cast<std::size_t>(r0) * m;
  Tensor out(r1 - r0, m);
  std::copy(a.value().data() + off, a.value().data() + off + out.size(), out.data());
  return make(std::move(out), {a.ptr()}, [off](Node& self) {
    Tensor& g = self.parents[0]->grad_slot();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[off + i] += self.grad[i];
  });
}

Var gather_rows(const Var& a, const std::vector<int>& rows) {
  const int m = a.cols();
  Tensor out(static_cast<int>(rows.size()), m);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    require(rows[k] >= 0 && rows[k] < a.rows(), "gather_rows: index");
    for (int j = 0; j < m; ++j) out(static_cast<int>(k), j) = a.value()(rows[k], j);
  }
  return make(std::move(out), {a.ptr()}, [rows, m](Node& self) {
    Tensor& g = self.parents[0]->grad_slot();
    for (std::size_t k = 0; k < rows.size(); ++k)
      for (int j = 0; j < m; ++j) g(rows[k], j) += self.grad(static_cast<int>(k), j);
  });
}

Var mean_rows(const Var& a) {
  const int n = a.rows(), m = a.cols();
  require(n > 0, "mean_rows: empty");
  Tensor out(1, m);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) out(0, j) += a.value()(i, j);
  for (int j = 0; j < m; ++j) out(0, j) /= n;
  return make(std::move(out), {a.ptr()}, [n, m](Node& self) {
    Tensor& g = self.parents[0]->grad_slot();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) g(i, j) += self.grad(0, j) / n;
  });
}

Var pick(const Var& a, int r, int c) {
  require(r >= 0 && r < a.rows() && c >= 0 && c < a.cols(), "pick: index");
  return make(Tensor(1, 1, a.value()(r, c)), {a.ptr()},
              [r, c](Node& self) { self.parents[0]->grad_slot()(r, c) += self.grad[0]; });
}

Var sum_scalars(const std::vector<Var>& xs) {
  double s = 0.0;
  std::vector<std::shared_ptr<Node>> parents;
  for (const Var& x : xs) {
    require(x.value().size() == 1, "sum_scalars: non-scalar");
    s += x.value()[0];
    parents.push_back(x.ptr());
  }
  return make(Tensor(1, 1, s), std::move(parents), [](Node& self) {
    for (auto& p : self.parents)
      if (p->requires_grad) p->grad_slot()[0] += self.grad[0];
  });
}

Var batchnorm_train(const Var& x, const Var& gamma, const Var& beta, double eps, Tensor* mean_out,
                    Tensor* var_out) {
  const int n = x.rows(), m = x.cols();
  require(n > 0 && gamma.cols() == m && beta.cols() == m, "batchnorm: shape");
  Tensor mean(1, m), var(1, m), xhat(n, m), inv_std(1, m), out(n, m);
  const Tensor& X = x.value();
  for (int j = 0; j < m; ++j) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += X(i, j);
    mean(0, j) = s / n;
    double v = 0.0;
    for (int i = 0; i < n; ++i) v += (X(i, j) - mean(0, j)) * (X(i, j) - mean(0, j));
    var(0, j) = v / n;
    inv_std(0, j) = 1.0 / std::sqrt(var(0, j) + eps);
    for (int i = 0; i < n; ++i) {
      xhat(i, j) = (X(i, j) - mean(0, j)) * inv_std(0, j);
      out(i, j) = gamma.value()(0, j) * xhat(i, j) + beta.value()(0, j);
    }
  }
  if (mean_out) *mean_out = mean;
  if (var_out) *var_out = var;
  return make(std::move(out), {x.ptr(), gamma.ptr(), beta.ptr()},
              [xhat = std::move(xhat), inv_std = std::move(inv_std), n, m](Node& self) {
                const Tensor& G = self.grad;
                const Tensor& gam = self.parents[1]->value;
                for (int j = 0; j < m; ++j) {
                  double sg = 0.0, sgx = 0.0;
                  for (int i = 0; i < n; ++i) {
                    sg += G(i, j);
                    sgx += G(i, j) * xhat(i, j);
                  }
                  if (wants(self, 2)) self.parents[2]->grad_slot()(0, j) += sg;
                  if (wants(self, 1)) self.parents[1]->grad_slot()(0, j) += sgx;
                  if (wants(self, 0)) {
                    Tensor& gx = self.parents[0]->grad_slot();
                    const double k = gam(0, j) * inv_std(0, j) / n;
                    for (int i = 0; i < n; ++i) gx(i, j) += k * (n * G(i, j) - sg - xhat(i, j) * sgx);
                  }
                }
              });
}

Var batchnorm_eval(const Var& x, const Var& gamma, const Var& beta, const Tensor& mean, const Tensor& var,
                   double eps) {
  const int n = x.rows(), m = x.cols();
  require(gamma.cols() == m && beta.cols() == m && mean.cols() == m && var.cols() == m, "batchnorm: shape");
  Tensor inv_std(1, m), out(n, m);
  for (int j = 0; j < m; ++j) inv_std(0, j) = 1.0 / std::sqrt(var(0, j) + eps);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j)
      out(i, j) = gamma.value()(0, j) * (x.value()(i, j) - mean(0, j)) * inv_std(0, j) + beta.value()(0, j);
  return make(std::move(out), {x.ptr(), gamma.ptr(), beta.ptr()}, [mean, inv_std, n, m](Node& self) {
    const Tensor& G = self.grad;
    const Tensor& X = self.parents[0]->value;
    const Tensor& gam = self.parents[1]->value;
    for (int j = 0; j < m; ++j) {
      double sg = 0.0, sgx = 0.0;
      for (int i = 0; i < n; ++i) {
        sg += G(i, j);
        sgx += G(i, j) * (X(i, j) - mean(0, j)) * inv_std(0, j);
      }
      if (wants(self, 2)) self.parents[2]->grad_slot()(0, j) += sg;
      if (wants(self, 1)) self.parents[1]->grad_slot()(0, j) += sgx;
      if (wants(self, 0)) {
        Tensor& gx = self.parents[0]->grad_slot();
        for (int i = 0; i < n; ++i) gx(i, j) += G(i, j) * gam(0, j) * inv_std(0, j);
      }
    }
  });
}

void backward(const Var& root) {
  require(root.value().size() == 1, "backward: root must be scalar");
  if (!root.requires_grad()) return;
  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node(), 0}};
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && p->backward && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root.node()->grad_slot()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->grad.same_shape(n->value)) n->backward(*n);
  }
}

}  // namespace persurv::ad
