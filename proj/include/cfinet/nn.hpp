#pragma once

#include <map>
#include <string>
#include <vector>

#include "cfinet/nn_ops.hpp"
#include "cfinet/rng.hpp"
#include "cfinet/tensor.hpp"

namespace cfinet {

// Named trainable tensors. Modules register their parameters here so the
// optimizer, checkpointing and gradient audits see one flat list.
class ParamStore {
 public:
  Tensor add(const std::string& name, Tensor t) {
    if (index_.count(name)) throw std::logic_error("ParamStore: duplicate param " + name);
    t.set_requires_grad(true);
    index_[name] = params_.size();
    params_.push_back({name, t});
    return t;
  }

  struct Entry {
    std::string name;
    Tensor tensor;
  };

  const std::vector<Entry>& entries() const { return params_; }
  std::vector<Entry>& entries() { return params_; }

  Tensor find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::logic_error("ParamStore: no param " + name);
    return params_[it->second].tensor;
  }

  void zero_grad() {
    for (auto& e : params_) e.tensor.zero_grad();
  }

  int64_t total_size() const {
    int64_t n = 0;
    for (const auto& e : params_) n += e.tensor.numel();
    return n;
  }

 private:
  std::vector<Entry> params_;
  std::map<std::string, size_t> index_;
};

namespace nn {

inline void fill_normal(Tensor& t, Rng& rng, double stddev) {
  for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.normal(0.0, stddev);
}

// He initialization for ReLU stacks.
inline void init_conv(Tensor& w, Rng& rng) {
  int64_t fan_in = w.dim(1) * static_cast<int64_t>(w.dim(2)) * w.dim(3);
  fill_normal(w, rng, std::sqrt(2.0 / static_cast<double>(fan_in)));
}
inline void init_linear(Tensor& w, Rng& rng) {
  fill_normal(w, rng, std::sqrt(2.0 / static_cast<double>(w.dim(0))));
}

struct Conv2d {
  Tensor w, b;
  int stride = 1, pad = 0;

  Conv2d() = default;
  Conv2d(ParamStore& ps, const std::string& name, int cin, int cout, int k, int stride_, int pad_,
         Rng& rng, double head_std = -1.0)
      : stride(stride_), pad(pad_) {
    w = ps.add(name + ".w", Tensor::zeros({cout, cin, k, k}));
    b = ps.add(name + ".b", Tensor::zeros({cout}));
    if (head_std == 0.0) {
      // stays zero
    } else if (head_std > 0.0) {
      fill_normal(w, rng, head_std);
    } else {
      init_conv(w, rng);
    }
  }

  Tensor forward(const Tensor& x) const { return ops::conv2d(x, w, b, stride, pad); }
};

struct Linear {
  Tensor w, b;  // w is [in,out]

  Linear() = default;
  Linear(ParamStore& ps, const std::string& name, int in, int out, Rng& rng,
         double head_std = -1.0) {
    w = ps.add(name + ".w", Tensor::zeros({in, out}));
    b = ps.add(name + ".b", Tensor::zeros({out}));
    if (head_std == 0.0) {
    } else if (head_std > 0.0) {
      fill_normal(w, rng, head_std);
    } else {
      init_linear(w, rng);
    }
  }

  Tensor forward(const Tensor& x) const { return ops::add_rowvec(ops::matmul(x, w), b); }
};

// SGD with momentum and decoupled-from-nothing classic weight decay
// (decay added to the gradient, detectron-style).
class SgdOptimizer {
 public:
  SgdOptimizer(ParamStore& ps, double lr, double momentum, double weight_decay)
      : ps_(ps), lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {
    velocity_.resize(ps.entries().size());
    for (size_t i = 0; i < velocity_.size(); ++i)
      velocity_[i] = Eigen::ArrayXd::Zero(ps.entries()[i].tensor.numel());
  }

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

  // Returns the pre-clip global gradient norm.
  double step(double max_grad_norm = 0.0) {
    double sq = 0.0;
    for (auto& e : ps_.entries()) {
      auto& g = e.tensor.grad_array();
      sq += (g * g).sum();
    }
    double norm = std::sqrt(sq);
    double clip = 1.0;
    if (max_grad_norm > 0.0 && norm > max_grad_norm) clip = max_grad_norm / norm;
    for (size_t i = 0; i < velocity_.size(); ++i) {
      auto& e = ps_.entries()[i];
      auto& g = e.tensor.grad_array();
      auto& v = velocity_[i];
      v = momentum_ * v + clip * g + weight_decay_ * e.tensor.value_array();
      e.tensor.value_array() -= lr_ * v;
    }
    return norm;
  }

 private:
  ParamStore& ps_;
  double lr_, momentum_, weight_decay_;
  std::vector<Eigen::ArrayXd> velocity_;
};

}  // namespace nn
}  // namespace cfinet
