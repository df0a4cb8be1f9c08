#pragma once

#include <array>
#include <cmath>
#include <memory>
#include <vector>

#include "terracer/autodiff.hpp"
#include "terracer/kernels.hpp"

namespace terracer::ops {

namespace detail {

inline int conv_out_extent(int in, int k, int stride, int pad,
                           const char* axis) {
  const int span = in + 2 * pad - k;
  if (span < 0)
    throw ConfigError(std::string("kernel exceeds padded input on ") + axis +
                      " axis");
  return span / stride + 1;
}

template <typename T>
void check_rank(const Var<T>& v, int rank, const char* what) {
  if (!v || v->value.rank() != rank)
    throw ConfigError(std::string(what) + " must have rank " +
                      std::to_string(rank));
}

}  // namespace detail

// --------------------------------------------------------------- conv2d

/// 2D convolution: every output channel filters each input channel and
/// sums the per-channel responses. NCHW in, [Cout,Cin,kH,kW] weights.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b,
              int stride = 1, int pad = 0) {
  detail::check_rank(x, 4, "conv2d input");
  detail::check_rank(w, 4, "conv2d weight");
  detail::check_rank(b, 1, "conv2d bias");
  const Shape& xs = x->value.shape();
  const Shape& ws = w->value.shape();
  const int n = xs[0], ci = xs[1], h = xs[2], wd = xs[3];
  const int co = ws[0], kh = ws[2], kw = ws[3];
  if (ws[1] != ci)
    throw ConfigError("conv2d channel mismatch: input has " +
                      std::to_string(ci) + " channels, weight expects " +
                      std::to_string(ws[1]));
  if (b->value.dim(0) != co)
    throw ConfigError("conv2d bias extent != output channels");
  if (kh % 2 == 0 || kw % 2 == 0)
    throw ConfigError("conv2d kernel extents must be odd");
  if (pad < 0 || stride < 1) throw ConfigError("conv2d bad stride/padding");
  const int ho = detail::conv_out_extent(h, kh, stride, pad, "height");
  const int wo = detail::conv_out_extent(wd, kw, stride, pad, "width");

  Tensor<T> out({n, co, ho, wo});
  kernels::conv2d_forward(x->value.data(), w->value.data(), b->value.data(),
                          out.data(), n, ci, h, wd, co, kh, kw, stride, pad,
                          ho, wo);
  return make_op<T>(
      "conv2d", std::move(out), {x, w, b},
      [n, ci, h, wd, co, kh, kw, stride, pad, ho, wo](Node<T>& self) {
        const T* g = self.grad.data();
        auto& xin = *self.parents[0];
        auto& win = *self.parents[1];
        auto& bin = *self.parents[2];
        if (xin.requires_grad)
          kernels::conv2d_backward_input(g, win.value.data(),
                                         xin.grad_buf().data(), n, ci, h, wd,
                                         co, kh, kw, stride, pad, ho, wo);
        if (win.requires_grad)
          kernels::conv2d_backward_weight(g, xin.value.data(),
                                          win.grad_buf().data(), n, ci, h, wd,
                                          co, kh, kw, stride, pad, ho, wo);
        if (bin.requires_grad)
          kernels::conv_backward_bias(g, bin.grad_buf().data(), n, co,
                                      (int64_t)ho * wo);
      });
}

// --------------------------------------------------------------- conv3d

/// 3D convolution over (depth, height, width); depth carries the spectral
/// axis so cascaded kernels fuse a growing band neighbourhood. Stride and
/// padding are per-axis: the spectral squeeze needs zero depth padding.
template <typename T>
Var<T> conv3d(const Var<T>& x, const Var<T>& w, const Var<T>& b,
              std::array<int, 3> stride = {1, 1, 1},
              std::array<int, 3> pad = {0, 0, 0}) {
  detail::check_rank(x, 5, "conv3d input");
  detail::check_rank(w, 5, "conv3d weight");
  detail::check_rank(b, 1, "conv3d bias");
  const Shape& xs = x->value.shape();
  const Shape& ws = w->value.shape();
  const int n = xs[0], ci = xs[1], d = xs[2], h = xs[3], wd = xs[4];
  const int co = ws[0], kd = ws[2], kh = ws[3], kw = ws[4];
  if (ws[1] != ci)
    throw ConfigError("conv3d channel mismatch: input has " +
                      std::to_string(ci) + " channels, weight expects " +
                      std::to_string(ws[1]));
  if (b->value.dim(0) != co)
    throw ConfigError("conv3d bias extent != output channels");
  for (int i = 0; i < 3; ++i)
    if (pad[i] < 0 || stride[i] < 1)
      throw ConfigError("conv3d bad stride/padding");
  const int od = detail::conv_out_extent(d, kd, stride[0], pad[0], "depth");
  const int oh = detail::conv_out_extent(h, kh, stride[1], pad[1], "height");
  const int ow = detail::conv_out_extent(wd, kw, stride[2], pad[2], "width");

  Tensor<T> out({n, co, od, oh, ow});
  kernels::conv3d_forward(x->value.data(), w->value.data(), b->value.data(),
                          out.data(), n, ci, d, h, wd, co, kd, kh, kw, stride,
                          pad, od, oh, ow);
  return make_op<T>(
      "conv3d", std::move(out), {x, w, b},
      [n, ci, d, h, wd, co, kd, kh, kw, stride, pad, od, oh,
       ow](Node<T>& self) {
        const T* g = self.grad.data();
        auto& xin = *self.parents[0];
        auto& win = *self.parents[1];
        auto& bin = *self.parents[2];
        if (xin.requires_grad)
          kernels::conv3d_backward_input(g, win.value.data(),
                                         xin.grad_buf().data(), n, ci, d, h,
                                         wd, co, kd, kh, kw, stride, pad, od,
                                         oh, ow);
        if (win.requires_grad)
          kernels::conv3d_backward_weight(g, xin.value.data(),
                                          win.grad_buf().data(), n, ci, d, h,
                                          wd, co, kd, kh, kw, stride, pad, od,
                                          oh, ow);
        if (bin.requires_grad)
          kernels::conv_backward_bias(g, bin.grad_buf().data(), n, co,
                                      (int64_t)od * oh * ow);
      });
}

// -------------------------------------------------------------- pooling

/// Per-window argmax locations recorded by maxpool2d and replayed by
/// max_unpool2d on the decoder side. Indices are flat within each (batch,
/// channel) plane of the pre-pooling grid.
struct PoolIndices {
  int in_h = 0, in_w = 0;
  Shape out_shape;  // pooled shape [N,C,h,w]
  std::vector<uint32_t> idx;
};

template <typename T>
struct MaxPoolResult {
  Var<T> values;
  std::shared_ptr<PoolIndices> indices;
};

template <typename T>
MaxPoolResult<T> maxpool2d(const Var<T>& x) {
  detail::check_rank(x, 4, "maxpool2d input");
  const Shape& xs = x->value.shape();
  const int n = xs[0], c = xs[1], h = xs[2], w = xs[3];
  const int ho = (h + 1) / 2, wo = (w + 1) / 2;
  auto ind = std::make_shared<PoolIndices>();
  ind->in_h = h;
  ind->in_w = w;
  ind->out_shape = {n, c, ho, wo};
  ind->idx.resize((size_t)n * c * ho * wo);
  Tensor<T> out({n, c, ho, wo});
  kernels::maxpool2d_forward(x->value.data(), out.data(), ind->idx.data(), n,
                             c, h, w, ho, wo);
  Var<T> v = make_op<T>("maxpool2d", std::move(out), {x},
                        [ind, n, c, h, w, ho, wo](Node<T>& self) {
                          auto& xin = *self.parents[0];
                          if (xin.requires_grad)
                            kernels::maxpool2d_backward(
                                self.grad.data(), ind->idx.data(),
                                xin.grad_buf().data(), n, c, h, w, ho, wo);
                        });
  return {v, ind};
}

/// Sparse 2x up-sampling: zeros everywhere except at the recorded argmax
/// locations, which receive the input values.
template <typename T>
Var<T> max_unpool2d(const Var<T>& x, const std::shared_ptr<PoolIndices>& ind,
                    int out_h, int out_w) {
  detail::check_rank(x, 4, "max_unpool2d input");
  const Shape& xs = x->value.shape();
  if (!ind || ind->out_shape != xs)
    throw ConfigError("max_unpool2d: indices were recorded for shape " +
                      (ind ? shape_str(ind->out_shape) : std::string("null")) +
                      ", input is " + shape_str(xs));
  const int n = xs[0], c = xs[1], h = xs[2], w = xs[3];
  const uint32_t limit = static_cast<uint32_t>(out_h) * out_w;
  for (uint32_t i : ind->idx)
    if (i >= limit)
      throw DataError("max_unpool2d: recorded index out of range of output");
  Tensor<T> out({n, c, out_h, out_w});
  kernels::unpool2d_forward(x->value.data(), ind->idx.data(), out.data(), n,
                            c, h, w, out_h, out_w);
  return make_op<T>("max_unpool2d", std::move(out), {x},
                    [ind, n, c, h, w, out_h, out_w](Node<T>& self) {
                      auto& xin = *self.parents[0];
                      if (xin.requires_grad)
                        kernels::unpool2d_backward(
                            self.grad.data(), ind->idx.data(),
                            xin.grad_buf().data(), n, c, h, w, out_h, out_w);
                    });
}

// ------------------------------------------------------------ resampling

template <typename T>
Var<T> upsample_nearest(const Var<T>& x, int factor) {
  detail::check_rank(x, 4, "upsample_nearest input");
  if (factor < 1) throw ConfigError("upsample_nearest factor must be >= 1");
  const Shape& xs = x->value.shape();
  const int n = xs[0], c = xs[1], h = xs[2], w = xs[3];
  Tensor<T> out({n, c, h * factor, w * factor});
  kernels::nearest_forward(x->value.data(), out.data(), n, c, h, w, factor);
  return make_op<T>("upsample_nearest", std::move(out), {x},
                    [n, c, h, w, factor](Node<T>& self) {
                      auto& xin = *self.parents[0];
                      if (xin.requires_grad)
                        kernels::nearest_backward(self.grad.data(),
                                                  xin.grad_buf().data(), n, c,
                                                  h, w, factor);
                    });
}

/// Bilinear resize with cell-center sampling (align-corners = false), the
/// same convention the raster resampler uses for resolution ratios.
template <typename T>
Var<T> upsample_bilinear(const Var<T>& x, int out_h, int out_w) {
  detail::check_rank(x, 4, "upsample_bilinear input");
  if (out_h < 1 || out_w < 1)
    throw ConfigError("upsample_bilinear target extents must be positive");
  const Shape& xs = x->value.shape();
  const int n = xs[0], c = xs[1], h = xs[2], w = xs[3];
  Tensor<T> out({n, c, out_h, out_w});
  kernels::bilinear_forward(x->value.data(), out.data(), n, c, h, w, out_h,
                            out_w);
  return make_op<T>("upsample_bilinear", std::move(out), {x},
                    [n, c, h, w, out_h, out_w](Node<T>& self) {
                      auto& xin = *self.parents[0];
                      if (xin.requires_grad)
                        kernels::bilinear_backward(self.grad.data(),
                                                   xin.grad_buf().data(), n,
                                                   c, h, w, out_h, out_w);
                    });
}

/// k x k box mean with stride k (floor windows). Used to pool logit maps
/// down to the ground-truth grid while staying differentiable.
template <typename T>
Var<T> avgpool2d(const Var<T>& x, int k) {
  detail::check_rank(x, 4, "avgpool2d input");
  if (k < 1) throw ConfigError("avgpool2d window must be >= 1");
  const Shape& xs = x->value.shape();
  const int n = xs[0], c = xs[1], h = xs[2], w = xs[3];
  const int ho = h / k, wo = w / k;
  if (ho < 1 || wo < 1)
    throw ConfigError("avgpool2d window larger than input");
  Tensor<T> out({n, c, ho, wo});
  kernels::avgpool_forward(x->value.data(), out.data(), n, c, h, w, k, ho,
                           wo);
  return make_op<T>("avgpool2d", std::move(out), {x},
                    [n, c, h, w, k, ho, wo](Node<T>& self) {
                      auto& xin = *self.parents[0];
                      if (xin.requires_grad)
                        kernels::avgpool_backward(self.grad.data(),
                                                  xin.grad_buf().data(), n, c,
                                                  h, w, k, ho, wo);
                    });
}

// ----------------------------------------------------- channel plumbing

/// Concatenation along the channel axis; gradient splits back by slice.
template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& xs) {
  if (xs.empty()) throw ConfigError("concat_channels: no inputs");
  const Shape& s0 = xs[0]->value.shape();
  int total_c = 0;
  for (const auto& x : xs) {
    const Shape& s = x->value.shape();
    if (s.size() != s0.size())
      throw ConfigError("concat_channels: rank mismatch");
    for (size_t i = 0; i < s.size(); ++i)
      if (i != 1 && s[i] != s0[i])
        throw ConfigError("concat_channels: non-channel extents differ: " +
                          shape_str(s) + " vs " + shape_str(s0));
    total_c += s[1];
  }
  Shape os = s0;
  os[1] = total_c;
  const int n = s0[0];
  int64_t plane = 1;
  for (size_t i = 2; i < s0.size(); ++i) plane *= s0[i];

  Tensor<T> out(os);
  int64_t coff = 0;
  for (const auto& x : xs) {
    const int cc = x->value.dim(1);
    for (int im = 0; im < n; ++im) {
      const T* src = x->value.data() + (int64_t)im * cc * plane;
      T* dst = out.data() + ((int64_t)im * total_c + coff) * plane;
      std::copy(src, src + (int64_t)cc * plane, dst);
    }
    coff += cc;
  }
  return make_op<T>("concat_channels", std::move(out), xs,
                    [n, plane, total_c](Node<T>& self) {
                      int64_t off = 0;
                      for (auto& p : self.parents) {
                        const int cc = p->value.dim(1);
                        if (p->requires_grad) {
                          T* gdst = p->grad_buf().data();
                          const T* gsrc = self.grad.data();
                          for (int im = 0; im < n; ++im) {
                            const T* s =
                                gsrc + ((int64_t)im * total_c + off) * plane;
                            T* d = gdst + (int64_t)im * cc * plane;
                            for (int64_t i = 0; i < (int64_t)cc * plane; ++i)
                              d[i] += s[i];
                          }
                        }
                        off += cc;
                      }
                    });
}

template <typename T>
Var<T> slice_channels(const Var<T>& x, int c0, int c1) {
  const Shape& s = x->value.shape();
  if (s.size() < 2 || c0 < 0 || c1 > s[1] || c0 >= c1)
    throw ConfigError("slice_channels: bad range");
  Shape os = s;
  os[1] = c1 - c0;
  const int n = s[0], c = s[1];
  int64_t plane = 1;
  for (size_t i = 2; i < s.size(); ++i) plane *= s[i];
  Tensor<T> out(os);
  for (int im = 0; im < n; ++im) {
    const T* src = x->value.data() + ((int64_t)im * c + c0) * plane;
    std::copy(src, src + (int64_t)(c1 - c0) * plane,
              out.data() + (int64_t)im * (c1 - c0) * plane);
  }
  return make_op<T>("slice_channels", std::move(out), {x},
                    [n, c, c0, c1, plane](Node<T>& self) {
                      auto& xin = *self.parents[0];
                      if (!xin.requires_grad) return;
                      T* gdst = xin.grad_buf().data();
                      for (int im = 0; im < n; ++im) {
                        const T* s =
                            self.grad.data() + (int64_t)im * (c1 - c0) * plane;
                        T* d = gdst + ((int64_t)im * c + c0) * plane;
                        for (int64_t i = 0; i < (int64_t)(c1 - c0) * plane;
                             ++i)
                          d[i] += s[i];
                      }
                    });
}

// ------------------------------------------------------------ elementwise

/// Pixelwise sum; the fusion used by residual blocks. Gradient passes
/// unchanged to both operands.
template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  if (!a->value.same_shape(b->value))
    throw ConfigError("add: shape mismatch " + shape_str(a->value.shape()) +
                      " vs " + shape_str(b->value.shape()));
  Tensor<T> out(a->value.shape());
  const int64_t ne = out.numel();
  const T* pa = a->value.data();
  const T* pb = b->value.data();
  T* po = out.data();
  for (int64_t i = 0; i < ne; ++i) po[i] = pa[i] + pb[i];
  return make_op<T>("add", std::move(out), {a, b}, [](Node<T>& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      T* g = p->grad_buf().data();
      const T* sg = self.grad.data();
      for (int64_t i = 0; i < self.grad.numel(); ++i) g[i] += sg[i];
    }
  });
}

template <typename T>
Var<T> residual_add(const Var<T>& a, const Var<T>& b) {
  return add(a, b);
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  if (!a->value.same_shape(b->value)) throw ConfigError("mul: shape mismatch");
  Tensor<T> out(a->value.shape());
  for (int64_t i = 0; i < out.numel(); ++i)
    out[i] = a->value[i] * b->value[i];
  return make_op<T>("mul", std::move(out), {a, b}, [](Node<T>& self) {
    auto& av = *self.parents[0];
    auto& bv = *self.parents[1];
    const T* sg = self.grad.data();
    if (av.requires_grad) {
      T* g = av.grad_buf().data();
      for (int64_t i = 0; i < self.grad.numel(); ++i)
        g[i] += sg[i] * bv.value[i];
    }
    if (bv.requires_grad) {
      T* g = bv.grad_buf().data();
      for (int64_t i = 0; i < self.grad.numel(); ++i)
        g[i] += sg[i] * av.value[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& x, T alpha) {
  Tensor<T> out(x->value.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = alpha * x->value[i];
  return make_op<T>("scale", std::move(out), {x}, [alpha](Node<T>& self) {
    auto& xin = *self.parents[0];
    if (!xin.requires_grad) return;
    T* g = xin.grad_buf().data();
    for (int64_t i = 0; i < self.grad.numel(); ++i)
      g[i] += alpha * self.grad[i];
  });
}

/// max(0, x); the subgradient at 0 is 0.
template <typename T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> out(x->value.shape());
  const int64_t ne = out.numel();
  const T* p = x->value.data();
  T* po = out.data();
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < ne; ++i) po[i] = p[i] > T(0) ? p[i] : T(0);
  return make_op<T>("relu", std::move(out), {x}, [](Node<T>& self) {
    auto& xin = *self.parents[0];
    if (!xin.requires_grad) return;
    T* g = xin.grad_buf().data();
    const T* xv = xin.value.data();
    const T* sg = self.grad.data();
    const int64_t ne = self.grad.numel();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < ne; ++i)
      if (xv[i] > T(0)) g[i] += sg[i];
  });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape s) {
  if (shape_numel(s) != x->value.numel())
    throw ConfigError("reshape: element count mismatch " +
                      shape_str(x->value.shape()) + " -> " + shape_str(s));
  Tensor<T> out(s, x->value.vec());
  return make_op<T>("reshape", std::move(out), {x}, [](Node<T>& self) {
    auto& xin = *self.parents[0];
    if (!xin.requires_grad) return;
    T* g = xin.grad_buf().data();
    for (int64_t i = 0; i < self.grad.numel(); ++i) g[i] += self.grad[i];
  });
}

/// Spatial mirror of a NCHW tensor; its own inverse, so the gradient is the
/// same flip of the upstream gradient.
template <typename T>
Var<T> flip2d(const Var<T>& x, bool flip_v, bool flip_h) {
  detail::check_rank(x, 4, "flip2d input");
  const Shape& s = x->value.shape();
  const int n = s[0], c = s[1], h = s[2], w = s[3];
  auto apply = [n, c, h, w, flip_v, flip_h](const T* src, T* dst,
                                            bool accumulate) {
    for (int64_t pl = 0; pl < (int64_t)n * c; ++pl) {
      const T* sp = src + pl * h * w;
      T* dp = dst + pl * h * w;
      for (int y = 0; y < h; ++y) {
        const int sy = flip_v ? h - 1 - y : y;
        for (int x2 = 0; x2 < w; ++x2) {
          const int sx = flip_h ? w - 1 - x2 : x2;
          if (accumulate)
            dp[(int64_t)y * w + x2] += sp[(int64_t)sy * w + sx];
          else
            dp[(int64_t)y * w + x2] = sp[(int64_t)sy * w + sx];
        }
      }
    }
  };
  Tensor<T> out(s);
  apply(x->value.data(), out.data(), false);
  return make_op<T>("flip2d", std::move(out), {x}, [apply](Node<T>& self) {
    auto& xin = *self.parents[0];
    if (!xin.requires_grad) return;
    apply(self.grad.data(), xin.grad_buf().data(), true);
  });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  double acc = 0;
  for (int64_t i = 0; i < x->value.numel(); ++i) acc += x->value[i];
  Tensor<T> out({1});
  out[0] = static_cast<T>(acc);
  return make_op<T>("sum", std::move(out), {x}, [](Node<T>& self) {
    auto& xin = *self.parents[0];
    if (!xin.requires_grad) return;
    const T g = self.grad[0];
    T* gp = xin.grad_buf().data();
    for (int64_t i = 0; i < xin.value.numel(); ++i) gp[i] += g;
  });
}

// ------------------------------------------------------------- batch norm

/// Channel-wise batch normalization for NCHW or NCDHW inputs. In train
/// mode statistics come from the batch and the running buffers are updated
/// in place; in eval mode the running buffers are used and left untouched.
template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  const Var<T>& run_mean, const Var<T>& run_var, bool train,
                  T momentum = T(0.1), T eps = T(1e-5)) {
  const Shape& s = x->value.shape();
  if (s.size() < 3) throw ConfigError("batch_norm: input rank must be >= 3");
  const int n = s[0], c = s[1];
  int64_t sp = 1;
  for (size_t i = 2; i < s.size(); ++i) sp *= s[i];
  if (gamma->value.numel() != c || beta->value.numel() != c ||
      run_mean->value.numel() != c || run_var->value.numel() != c)
    throw ConfigError("batch_norm: parameter extents != channel count");

  Tensor<T> out(s);
  auto save_mean = std::make_shared<Tensor<T>>(Shape{c});
  auto save_var = std::make_shared<Tensor<T>>(Shape{c});
  if (train) {
    kernels::batchnorm_forward_train(
        x->value.data(), gamma->value.data(), beta->value.data(), out.data(),
        save_mean->data(), save_var->data(), run_mean->value.data(),
        run_var->value.data(), momentum, eps, n, c, sp);
  } else {
    kernels::batchnorm_forward_eval(x->value.data(), gamma->value.data(),
                                    beta->value.data(),
                                    run_mean->value.data(),
                                    run_var->value.data(), out.data(), eps, n,
                                    c, sp);
  }
  // Running buffers enter as parents without gradient so the eval path can
  // read them from the closure.
  return make_op<T>(
      "batch_norm", std::move(out), {x, gamma, beta, run_mean, run_var},
      [train, eps, n, c, sp, save_mean, save_var](Node<T>& self) {
        auto& xin = *self.parents[0];
        auto& gin = *self.parents[1];
        auto& bin = *self.parents[2];
        auto& rm = *self.parents[3];
        auto& rv = *self.parents[4];
        // grad buffers must exist even if a particular parent is frozen
        Tensor<T> dummy_g({c}), dummy_b({c}), dummy_x(xin.value.shape());
        T* gx = xin.requires_grad ? xin.grad_buf().data() : dummy_x.data();
        T* gg = gin.requires_grad ? gin.grad_buf().data() : dummy_g.data();
        T* gb = bin.requires_grad ? bin.grad_buf().data() : dummy_b.data();
        if (train) {
          kernels::batchnorm_backward_train(
              xin.value.data(), gin.value.data(), self.grad.data(),
              save_mean->data(), save_var->data(), gx, gg, gb, eps, n, c, sp);
        } else {
          kernels::batchnorm_backward_eval(
              xin.value.data(), gin.value.data(), self.grad.data(),
              rm.value.data(), rv.value.data(), gx, gg, gb, eps, n, c, sp);
        }
      });
}

// ---------------------------------------------------------- cross entropy

/// Mean negative log-softmax over labelled pixels. Pixels whose label
/// equals ignore_value contribute neither loss nor gradient, exactly. When
/// every pixel is ignored the loss is 0 with zero gradients.
template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits,
                             const Tensor<uint16_t>& labels,
                             uint16_t ignore_value = kNoDataLabel) {
  detail::check_rank(logits, 4, "softmax_cross_entropy logits");
  const Shape& s = logits->value.shape();
  const int n = s[0], c = s[1], h = s[2], w = s[3];
  if (labels.shape() != Shape{n, h, w})
    throw ConfigError("softmax_cross_entropy: labels must be " +
                      shape_str({n, h, w}) + ", got " +
                      shape_str(labels.shape()));

  auto probs = std::make_shared<Tensor<T>>(s);
  const int64_t plane = (int64_t)h * w;
  double loss_acc = 0;
  int64_t count = 0;
  const T* lg = logits->value.data();
  T* pr = probs->data();
  for (int im = 0; im < n; ++im) {
    for (int64_t i = 0; i < plane; ++i) {
      const uint16_t lab = labels[(int64_t)im * plane + i];
      if (lab != ignore_value && lab >= c)
        throw ConfigError("softmax_cross_entropy: label " +
                          std::to_string(lab) + " outside [0," +
                          std::to_string(c) + ")");
      double mx = -1e300;
      for (int ch = 0; ch < c; ++ch)
        mx = std::max(mx, double(lg[((int64_t)im * c + ch) * plane + i]));
      double denom = 0;
      for (int ch = 0; ch < c; ++ch)
        denom += std::exp(double(lg[((int64_t)im * c + ch) * plane + i]) - mx);
      for (int ch = 0; ch < c; ++ch) {
        const int64_t at = ((int64_t)im * c + ch) * plane + i;
        pr[at] = static_cast<T>(std::exp(double(lg[at]) - mx) / denom);
      }
      if (lab == ignore_value) continue;
      const int64_t at = ((int64_t)im * c + lab) * plane + i;
      loss_acc += (mx + std::log(denom)) - double(lg[at]);
      ++count;
    }
  }
  Tensor<T> out({1});
  out[0] = count > 0 ? static_cast<T>(loss_acc / double(count)) : T(0);

  auto labels_copy = std::make_shared<Tensor<uint16_t>>(labels);
  return make_op<T>(
      "softmax_cross_entropy", std::move(out), {logits},
      [probs, labels_copy, ignore_value, n, c, plane, count](Node<T>& self) {
        auto& lin = *self.parents[0];
        if (!lin.requires_grad || count == 0) return;
        const T g0 = self.grad[0];
        T* gl = lin.grad_buf().data();
        const T* pr = probs->data();
        const T inv = g0 / static_cast<T>(count);
        for (int im = 0; im < n; ++im) {
          for (int64_t i = 0; i < plane; ++i) {
            const uint16_t lab = (*labels_copy)[(int64_t)im * plane + i];
            if (lab == ignore_value) continue;
            for (int ch = 0; ch < c; ++ch) {
              const int64_t at = ((int64_t)im * c + ch) * plane + i;
              const T onehot = (ch == lab) ? T(1) : T(0);
              gl[at] += inv * (pr[at] - onehot);
            }
          }
        }
      });
}

}  // namespace terracer::ops
