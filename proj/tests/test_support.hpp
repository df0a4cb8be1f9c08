#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "terracer/autodiff.hpp"
#include "terracer/rng.hpp"

namespace terracer::testing {

template <typename T>
double rel_err(T a, T b) {
  const double d = std::abs(double(a) - double(b));
  const double scale = std::max({std::abs(double(a)), std::abs(double(b)),
                                 1e-6});
  return d / scale;
}

template <typename T>
double max_rel_diff(const Tensor<T>& a, const Tensor<T>& b) {
  double m = 0;
  for (int64_t i = 0; i < a.numel(); ++i)
    m = std::max(m, rel_err(a[i], b[i]));
  return m;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  double m = 0;
  for (int64_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

template <typename T>
Tensor<T> random_tensor(Shape shape, std::mt19937_64& rng, T lo = T(-1),
                        T hi = T(1)) {
  Tensor<T> t(std::move(shape));
  fill_uniform(t, rng, lo, hi);
  return t;
}

/// Central finite differences against reverse-mode gradients.
///
/// `loss` rebuilds the scalar loss from the current leaf values on every
/// call; the analytic gradient is taken once via backward(), then every
/// element of every checked leaf is perturbed by +-h. Returns the max
/// relative error across all compared elements.
inline double fd_check(const std::vector<Var<double>>& leaves,
                       const std::function<Var<double>()>& loss,
                       double h = 1e-5) {
  for (const auto& l : leaves) l->clear_grad();
  Var<double> root = loss();
  backward(root);
  std::vector<Tensor<double>> analytic;
  analytic.reserve(leaves.size());
  for (const auto& l : leaves)
    analytic.push_back(l->grad.numel() ? l->grad
                                       : Tensor<double>(l->value.shape()));

  double worst = 0;
  for (size_t li = 0; li < leaves.size(); ++li) {
    auto& leaf = *leaves[li];
    for (int64_t i = 0; i < leaf.value.numel(); ++i) {
      const double keep = leaf.value[i];
      leaf.value[i] = keep + h;
      const double up = loss()->value[0];
      leaf.value[i] = keep - h;
      const double dn = loss()->value[0];
      leaf.value[i] = keep;
      const double numeric = (up - dn) / (2 * h);
      worst = std::max(worst, rel_err(analytic[li][i], numeric));
    }
  }
  return worst;
}

/// Same, but only for selected (leaf, element) pairs; used for whole-model
/// spot checks where full finite differences would be quadratic. The
/// denominator floor keeps sub-noise gradients (deep vanishing paths) from
/// registering as relative error.
inline double fd_check_spots(
    const std::vector<std::pair<Var<double>, int64_t>>& spots,
    const std::function<Var<double>()>& loss, double h = 1e-5,
    double denom_floor = 1e-6) {
  std::vector<Var<double>> leaves;
  for (const auto& [l, i] : spots) leaves.push_back(l);
  for (const auto& l : leaves) l->clear_grad();
  Var<double> root = loss();
  backward(root);
  double worst = 0;
  for (const auto& [leaf, i] : spots) {
    const double analytic = leaf->grad.numel() ? leaf->grad[i] : 0.0;
    const double keep = leaf->value[i];
    leaf->value[i] = keep + h;
    const double up = loss()->value[0];
    leaf->value[i] = keep - h;
    const double dn = loss()->value[0];
    leaf->value[i] = keep;
    const double numeric = (up - dn) / (2 * h);
    const double d = std::abs(analytic - numeric);
    worst = std::max(
        worst, d / std::max({std::abs(analytic), std::abs(numeric),
                             denom_floor}));
  }
  return worst;
}

/// Moves a freshly initialized model off its symmetric starting point
/// (zero biases and shifts put batchnorm outputs exactly on the relu
/// kink, where finite differences are undefined by construction).
template <typename T>
void jitter_params(std::vector<std::pair<std::string, Var<T>>>& params,
                   std::mt19937_64& rng, T amount = T(0.05)) {
  std::uniform_real_distribution<double> d(-double(amount), double(amount));
  for (auto& [name, v] : params)
    for (int64_t i = 0; i < v->value.numel(); ++i)
      v->value[i] += static_cast<T>(d(rng));
}

}  // namespace terracer::testing
