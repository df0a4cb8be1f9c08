#pragma once

#include <cmath>
#include <unordered_map>
#include <vector>

#include "terracer/autodiff.hpp"

namespace terracer {

/// SGD with classical momentum: v = m*v + g; p -= lr*v.
template <typename T>
class Sgd {
 public:
  Sgd(T lr, T momentum = T(0)) : lr_(lr), momentum_(momentum) {}

  void step(const std::vector<Var<T>>& params) {
    for (const auto& p : params) {
      if (!p || p->grad.numel() == 0) continue;
      Tensor<T>& v = velocity_[p.get()];
      if (v.numel() == 0) v = Tensor<T>(p->value.shape());
      for (int64_t i = 0; i < p->value.numel(); ++i) {
        v[i] = momentum_ * v[i] + p->grad[i];
        p->value[i] -= lr_ * v[i];
      }
    }
  }

  T lr() const { return lr_; }

 private:
  T lr_, momentum_;
  std::unordered_map<Node<T>*, Tensor<T>> velocity_;
};

/// Adam with bias correction.
template <typename T>
class Adam {
 public:
  explicit Adam(T lr, T beta1 = T(0.9), T beta2 = T(0.999), T eps = T(1e-8))
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::vector<Var<T>>& params) {
    ++t_;
    const double bc1 = 1.0 - std::pow(double(beta1_), t_);
    const double bc2 = 1.0 - std::pow(double(beta2_), t_);
    for (const auto& p : params) {
      if (!p || p->grad.numel() == 0) continue;
      State& st = state_[p.get()];
      if (st.m.numel() == 0) {
        st.m = Tensor<T>(p->value.shape());
        st.v = Tensor<T>(p->value.shape());
      }
      for (int64_t i = 0; i < p->value.numel(); ++i) {
        const T g = p->grad[i];
        st.m[i] = beta1_ * st.m[i] + (T(1) - beta1_) * g;
        st.v[i] = beta2_ * st.v[i] + (T(1) - beta2_) * g * g;
        const double mhat = double(st.m[i]) / bc1;
        const double vhat = double(st.v[i]) / bc2;
        p->value[i] -= static_cast<T>(double(lr_) * mhat /
                                      (std::sqrt(vhat) + double(eps_)));
      }
    }
  }

  T lr() const { return lr_; }

 private:
  struct State {
    Tensor<T> m, v;
  };
  T lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::unordered_map<Node<T>*, State> state_;
};

}  // namespace terracer
