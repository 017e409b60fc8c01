#pragma once

#include <Eigen/Dense>
#include <cassert>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace cfinet {

// Reverse-mode autodiff over dense double tensors. Values are stored
// flattened row-major; ops run eagerly and record a backward closure when
// gradients are required.

namespace ad {

struct Node {
  std::vector<int> shape;
  Eigen::ArrayXd value;
  Eigen::ArrayXd grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  int64_t numel() const { return value.size(); }
  void ensure_grad() {
    if (grad.size() != value.size()) grad = Eigen::ArrayXd::Zero(value.size());
  }
};

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace ad

// Scoped autograd off-switch; ops executed inside produce constant results.
struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(ad::grad_mode()) { ad::grad_mode() = false; }
  ~NoGradGuard() { ad::grad_mode() = prev; }
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
    Tensor t = make(std::move(shape));
    t.n_->value.setZero();
    t.n_->requires_grad = requires_grad;
    return t;
  }
  static Tensor full(std::vector<int> shape, double v) {
    Tensor t = make(std::move(shape));
    t.n_->value.setConstant(v);
    return t;
  }
  static Tensor scalar(double v) { return full({}, v); }
  static Tensor from(std::vector<int> shape, const std::vector<double>& data,
                     bool requires_grad = false) {
    Tensor t = make(std::move(shape));
    if (static_cast<int64_t>(data.size()) != t.numel())
      throw std::invalid_argument("Tensor::from: size mismatch");
    for (int64_t i = 0; i < t.numel(); ++i) t.n_->value[i] = data[i];
    t.n_->requires_grad = requires_grad;
    return t;
  }

  bool defined() const { return static_cast<bool>(n_); }
  const std::vector<int>& shape() const { return n_->shape; }
  int dim(int i) const { return n_->shape[static_cast<size_t>(i)]; }
  int ndim() const { return static_cast<int>(n_->shape.size()); }
  int64_t numel() const { return n_->numel(); }

  double* data() { return n_->value.data(); }
  const double* data() const { return n_->value.data(); }
  double item() const {
    if (numel() != 1) throw std::logic_error("Tensor::item: not a scalar");
    return n_->value[0];
  }
  double at(int64_t i) const { return n_->value[i]; }

  bool requires_grad() const { return n_->requires_grad; }
  void set_requires_grad(bool v) { n_->requires_grad = v; }
  double* grad_data() {
    n_->ensure_grad();
    return n_->grad.data();
  }
  Eigen::ArrayXd& grad_array() {
    n_->ensure_grad();
    return n_->grad;
  }
  const Eigen::ArrayXd& value_array() const { return n_->value; }
  Eigen::ArrayXd& value_array() { return n_->value; }
  void zero_grad() {
    if (n_->grad.size()) n_->grad.setZero();
  }

  // Constant copy of the value, cut off from the graph.
  Tensor detach() const {
    Tensor t = make(n_->shape);
    t.n_->value = n_->value;
    return t;
  }

  // Runs reverse-mode accumulation from this scalar.
  void backward() const {
    if (numel() != 1) throw std::logic_error("backward: loss must be scalar");
    std::vector<ad::Node*> order;
    std::unordered_set<ad::Node*> seen;
    topo(n_.get(), seen, order);
    n_->ensure_grad();
    n_->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      ad::Node* node = *it;
      if (node->backward && node->grad.size()) node->backward(*node);
    }
  }

  std::shared_ptr<ad::Node> node() const { return n_; }

  // Builds the result node and wires parents when autograd is active.
  static Tensor result(std::vector<int> shape, std::vector<Tensor> parents,
                       std::function<void(ad::Node&)> backward) {
    Tensor t = make(std::move(shape));
    if (ad::grad_mode()) {
      bool need = false;
      for (const auto& p : parents) need = need || p.requires_grad();
      if (need) {
        t.n_->requires_grad = true;
        for (auto& p : parents) t.n_->parents.push_back(p.n_);
        t.n_->backward = std::move(backward);
      }
    }
    return t;
  }

 private:
  static Tensor make(std::vector<int> shape) {
    Tensor t;
    t.n_ = std::make_shared<ad::Node>();
    int64_t n = 1;
    for (int d : shape) n *= d;
    t.n_->shape = std::move(shape);
    t.n_->value = Eigen::ArrayXd::Zero(n);
    return t;
  }

  static void topo(ad::Node* n, std::unordered_set<ad::Node*>& seen,
                   std::vector<ad::Node*>& order) {
    if (!n || seen.count(n)) return;
    // Iterative DFS; graphs can be deep for long loss chains.
    std::vector<std::pair<ad::Node*, size_t>> stack{{n, 0}};
    seen.insert(n);
    while (!stack.empty()) {
      auto& [cur, idx] = stack.back();
      if (idx < cur->parents.size()) {
        ad::Node* p = cur->parents[idx++].get();
        if (p && !seen.count(p) && p->requires_grad) {
          seen.insert(p);
          stack.push_back({p, 0});
        }
      } else {
        order.push_back(cur);
        stack.pop_back();
      }
    }
  }

  std::shared_ptr<ad::Node> n_;
};

namespace ops {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using CMatMap = Eigen::Map<const RowMat>;

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  auto an = a.node().get();
  auto bn = b.node().get();
  Tensor out = Tensor::result(a.shape(), {a, b}, [an, bn](ad::Node& self) {
    if (an->requires_grad) {
      an->ensure_grad();
      an->grad += self.grad;
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      bn->grad += self.grad;
    }
  });
  out.value_array() = a.value_array() + b.value_array();
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  auto an = a.node().get();
  auto bn = b.node().get();
  Tensor out = Tensor::result(a.shape(), {a, b}, [an, bn](ad::Node& self) {
    if (an->requires_grad) {
      an->ensure_grad();
      an->grad += self.grad;
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      bn->grad -= self.grad;
    }
  });
  out.value_array() = a.value_array() - b.value_array();
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  auto an = a.node().get();
  auto bn = b.node().get();
  Tensor out = Tensor::result(a.shape(), {a, b}, [an, bn](ad::Node& self) {
    if (an->requires_grad) {
      an->ensure_grad();
      an->grad += self.grad * bn->value;
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      bn->grad += self.grad * an->value;
    }
  });
  out.value_array() = a.value_array() * b.value_array();
  return out;
}

inline Tensor scale(const Tensor& a, double s) {
  auto an = a.node().get();
  Tensor out = Tensor::result(a.shape(), {a}, [an, s](ad::Node& self) {
    an->ensure_grad();
    an->grad += self.grad * s;
  });
  out.value_array() = a.value_array() * s;
  return out;
}

inline Tensor add_scalar(const Tensor& a, double s) {
  auto an = a.node().get();
  Tensor out = Tensor::result(a.shape(), {a}, [an](ad::Node& self) {
    an->ensure_grad();
    an->grad += self.grad;
  });
  out.value_array() = a.value_array() + s;
  return out;
}

inline Tensor relu(const Tensor& a) {
  auto an = a.node().get();
  Tensor out = Tensor::result(a.shape(), {a}, [an](ad::Node& self) {
    an->ensure_grad();
    an->grad += self.grad * (self.value > 0.0).cast<double>();
  });
  out.value_array() = a.value_array().max(0.0);
  return out;
}

inline Tensor sigmoid(const Tensor& a) {
  auto an = a.node().get();
  Tensor out = Tensor::result(a.shape(), {a}, [an](ad::Node& self) {
    an->ensure_grad();
    an->grad += self.grad * self.value * (1.0 - self.value);
  });
  out.value_array() = 1.0 / (1.0 + (-a.value_array()).exp());
  return out;
}

inline Tensor exp(const Tensor& a) {
  auto an = a.node().get();
  Tensor out = Tensor::result(a.shape(), {a}, [an](ad::Node& self) {
    an->ensure_grad();
    an->grad += self.grad * self.value;
  });
  out.value_array() = a.value_array().exp();
  return out;
}

inline Tensor log(const Tensor& a) {
  auto an = a.node().get();
  Tensor out = Tensor::result(a.shape(), {a}, [an](ad::Node& self) {
    an->ensure_grad();
    an->grad += self.grad / an->value;
  });
  out.value_array() = a.value_array().log();
  return out;
}

inline Tensor sum(const Tensor& a) {
  auto an = a.node().get();
  Tensor out = Tensor::result({}, {a}, [an](ad::Node& self) {
    an->ensure_grad();
    an->grad += self.grad[0];
  });
  out.value_array()[0] = a.value_array().sum();
  return out;
}

inline Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw std::invalid_argument("mean: empty tensor");
  auto an = a.node().get();
  double inv = 1.0 / static_cast<double>(a.numel());
  Tensor out = Tensor::result({}, {a}, [an, inv](ad::Node& self) {
    an->ensure_grad();
    an->grad += self.grad[0] * inv;
  });
  out.value_array()[0] = a.value_array().mean();
  return out;
}

// C[m,n] = A[m,k] * B[k,n]
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
    throw std::invalid_argument("matmul: bad shapes");
  int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  auto an = a.node().get();
  auto bn = b.node().get();
  Tensor out = Tensor::result({m, n}, {a, b}, [an, bn, m, k, n](ad::Node& self) {
    CMatMap g(self.grad.data(), m, n);
    if (an->requires_grad) {
      an->ensure_grad();
      MatMap ga(an->grad.data(), m, k);
      CMatMap bv(bn->value.data(), k, n);
      ga.noalias() += g * bv.transpose();
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      MatMap gb(bn->grad.data(), k, n);
      CMatMap av(an->value.data(), m, k);
      gb.noalias() += av.transpose() * g;
    }
  });
  CMatMap av(a.data(), m, k);
  CMatMap bv(b.data(), k, n);
  MatMap ov(out.data(), m, n);
  ov.noalias() = av * bv;
  return out;
}

// C[m,n] = A[m,k] * B[n,k]^T
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(1))
    throw std::invalid_argument("matmul_nt: bad shapes");
  int m = a.dim(0), k = a.dim(1), n = b.dim(0);
  auto an = a.node().get();
  auto bn = b.node().get();
  Tensor out = Tensor::result({m, n}, {a, b}, [an, bn, m, k, n](ad::Node& self) {
    CMatMap g(self.grad.data(), m, n);
    if (an->requires_grad) {
      an->ensure_grad();
      MatMap ga(an->grad.data(), m, k);
      CMatMap bv(bn->value.data(), n, k);
      ga.noalias() += g * bv;
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      MatMap gb(bn->grad.data(), n, k);
      CMatMap av(an->value.data(), m, k);
      gb.noalias() += g.transpose() * av;
    }
  });
  CMatMap av(a.data(), m, k);
  CMatMap bv(b.data(), n, k);
  MatMap ov(out.data(), m, n);
  ov.noalias() = av * bv.transpose();
  return out;
}

// x[m,n] + bias[n] broadcast over rows.
inline Tensor add_rowvec(const Tensor& a, const Tensor& bias) {
  if (a.ndim() != 2 || bias.ndim() != 1 || a.dim(1) != bias.dim(0))
    throw std::invalid_argument("add_rowvec: bad shapes");
  int m = a.dim(0), n = a.dim(1);
  auto an = a.node().get();
  auto bn = bias.node().get();
  Tensor out = Tensor::result({m, n}, {a, bias}, [an, bn, m, n](ad::Node& self) {
    if (an->requires_grad) {
      an->ensure_grad();
      an->grad += self.grad;
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      CMatMap g(self.grad.data(), m, n);
      Eigen::Map<Eigen::VectorXd>(bn->grad.data(), n) += g.colwise().sum().transpose();
    }
  });
  CMatMap av(a.data(), m, n);
  Eigen::Map<const Eigen::RowVectorXd> bv(bias.data(), n);
  MatMap ov(out.data(), m, n);
  ov = av.rowwise() + bv;
  return out;
}

inline Tensor reshape(const Tensor& a, std::vector<int> shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  if (n != a.numel()) throw std::invalid_argument("reshape: numel mismatch");
  auto an = a.node().get();
  Tensor out = Tensor::result(std::move(shape), {a}, [an](ad::Node& self) {
    an->ensure_grad();
    an->grad += self.grad;
  });
  out.value_array() = a.value_array();
  return out;
}

// rows idx of a [m,n] matrix -> [k,n]
inline Tensor gather_rows(const Tensor& a, std::vector<int> idx) {
  if (a.ndim() != 2) throw std::invalid_argument("gather_rows: need 2-d");
  int n = a.dim(1), k = static_cast<int>(idx.size());
  auto an = a.node().get();
  auto idx_ptr = std::make_shared<std::vector<int>>(std::move(idx));
  Tensor out = Tensor::result({k, n}, {a}, [an, idx_ptr, n, k](ad::Node& self) {
    an->ensure_grad();
    for (int r = 0; r < k; ++r) {
      double* dst = an->grad.data() + static_cast<int64_t>((*idx_ptr)[r]) * n;
      const double* src = self.grad.data() + static_cast<int64_t>(r) * n;
      for (int c = 0; c < n; ++c) dst[c] += src[c];
    }
  });
  for (int r = 0; r < k; ++r) {
    const double* src = a.data() + static_cast<int64_t>((*idx_ptr)[r]) * n;
    double* dst = out.data() + static_cast<int64_t>(r) * n;
    std::copy(src, src + n, dst);
  }
  return out;
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
  int n = parts[0].ndim() == 1 ? parts[0].dim(0) : parts[0].dim(1);
  int total = 0;
  for (const auto& p : parts) {
    int cols = p.ndim() == 1 ? p.dim(0) : p.dim(1);
    if (cols != n) throw std::invalid_argument("concat_rows: col mismatch");
    total += p.ndim() == 1 ? 1 : p.dim(0);
  }
  std::vector<ad::Node*> nodes;
  std::vector<int> rows;
  for (const auto& p : parts) {
    nodes.push_back(p.node().get());
    rows.push_back(p.ndim() == 1 ? 1 : p.dim(0));
  }
  Tensor out = Tensor::result({total, n}, parts, [nodes, rows, n](ad::Node& self) {
    int64_t off = 0;
    for (size_t i = 0; i < nodes.size(); ++i) {
      int64_t cnt = static_cast<int64_t>(rows[i]) * n;
      if (nodes[i]->requires_grad) {
        nodes[i]->ensure_grad();
        nodes[i]->grad += self.grad.segment(off, cnt);
      }
      off += cnt;
    }
  });
  int64_t off = 0;
  for (const auto& p : parts) {
    out.value_array().segment(off, p.numel()) = p.value_array();
    off += p.numel();
  }
  return out;
}

// log(sum(exp(row))) per row of [m,n] -> [m]
inline Tensor logsumexp_rows(const Tensor& a) {
  if (a.ndim() != 2) throw std::invalid_argument("logsumexp_rows: need 2-d");
  int m = a.dim(0), n = a.dim(1);
  auto an = a.node().get();
  Tensor out = Tensor::result({m}, {a}, [an, m, n](ad::Node& self) {
    an->ensure_grad();
    for (int r = 0; r < m; ++r) {
      const double* row = an->value.data() + static_cast<int64_t>(r) * n;
      double lse = self.value[r];
      double g = self.grad[r];
      double* grow = an->grad.data() + static_cast<int64_t>(r) * n;
      for (int c = 0; c < n; ++c) grow[c] += g * std::exp(row[c] - lse);
    }
  });
  for (int r = 0; r < m; ++r) {
    const double* row = a.data() + static_cast<int64_t>(r) * n;
    double mx = row[0];
    for (int c = 1; c < n; ++c) mx = std::max(mx, row[c]);
    double s = 0.0;
    for (int c = 0; c < n; ++c) s += std::exp(row[c] - mx);
    out.data()[r] = mx + std::log(s);
  }
  return out;
}

// sum over a fixed subset of columns per row: [m,n] -> [m]
inline Tensor sum_cols_subset(const Tensor& a, std::vector<int> cols) {
  if (a.ndim() != 2) throw std::invalid_argument("sum_cols_subset: need 2-d");
  int m = a.dim(0), n = a.dim(1);
  auto an = a.node().get();
  auto cols_ptr = std::make_shared<std::vector<int>>(std::move(cols));
  Tensor out = Tensor::result({m}, {a}, [an, cols_ptr, m, n](ad::Node& self) {
    an->ensure_grad();
    for (int r = 0; r < m; ++r) {
      double g = self.grad[r];
      double* grow = an->grad.data() + static_cast<int64_t>(r) * n;
      for (int c : *cols_ptr) grow[c] += g;
    }
  });
  for (int r = 0; r < m; ++r) {
    const double* row = a.data() + static_cast<int64_t>(r) * n;
    double s = 0.0;
    for (int c : *cols_ptr) s += row[c];
    out.data()[r] = s;
  }
  return out;
}

// Rows scaled to unit L2 norm: v / max(||v||, eps).
inline Tensor l2_normalize_rows(const Tensor& a, double eps = 1e-12) {
  if (a.ndim() != 2) throw std::invalid_argument("l2_normalize_rows: need 2-d");
  int m = a.dim(0), n = a.dim(1);
  auto an = a.node().get();
  auto norms = std::make_shared<std::vector<double>>(m);
  Tensor out = Tensor::result({m, n}, {a}, [an, norms, m, n](ad::Node& self) {
    an->ensure_grad();
    for (int r = 0; r < m; ++r) {
      const double* y = self.value.data() + static_cast<int64_t>(r) * n;
      const double* gy = self.grad.data() + static_cast<int64_t>(r) * n;
      double* gx = an->grad.data() + static_cast<int64_t>(r) * n;
      double inv = 1.0 / (*norms)[r];
      double dot = 0.0;
      for (int c = 0; c < n; ++c) dot += gy[c] * y[c];
      for (int c = 0; c < n; ++c) gx[c] += inv * (gy[c] - dot * y[c]);
    }
  });
  for (int r = 0; r < m; ++r) {
    const double* x = a.data() + static_cast<int64_t>(r) * n;
    double s = 0.0;
    for (int c = 0; c < n; ++c) s += x[c] * x[c];
    double norm = std::max(std::sqrt(s), eps);
    (*norms)[r] = norm;
    double* y = out.data() + static_cast<int64_t>(r) * n;
    for (int c = 0; c < n; ++c) y[c] = x[c] / norm;
  }
  return out;
}

}  // namespace ops

}  // namespace cfinet
