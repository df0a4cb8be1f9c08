#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "terracer/tensor.hpp"

// OpenMP-parallel kernels behind the graph ops. Conventions:
//  - layout is row-major NCHW / NCDHW;
//  - forward kernels overwrite their output;
//  - backward kernels accumulate (+=) into gradient buffers;
//  - parallel loops split over (batch x channel) planes only, and every
//    output cell keeps a fixed serial summation order, so results are
//    bitwise identical for any thread count.
// Serial reference implementations with the same contracts live in
// terracer/ref_kernels.hpp and are used by the tests and the benchmark.

namespace terracer::kernels {

namespace detail {

// Zero-padded copy of every (n,c) plane; turns the 3x3 stencils into
// branch-free full-row passes.
template <typename T>
std::vector<T> pad_planes(const T* in, int n, int c, int h, int w, int py,
                          int px) {
  const int hp = h + 2 * py, wp = w + 2 * px;
  std::vector<T> out((size_t)n * c * hp * wp, T(0));
#pragma omp parallel for schedule(static)
  for (int64_t pl = 0; pl < (int64_t)n * c; ++pl) {
    const T* ip = in + pl * h * w;
    T* op = out.data() + pl * hp * wp;
    for (int y = 0; y < h; ++y)
      std::copy(ip + (int64_t)y * w, ip + (int64_t)y * w + w,
                op + (int64_t)(y + py) * wp + px);
  }
  return out;
}

template <typename T>
std::vector<T> pad_volumes(const T* in, int n, int c, int d, int h, int w) {
  const int dp = d + 2, hp = h + 2, wp = w + 2;
  std::vector<T> out((size_t)n * c * dp * hp * wp, T(0));
#pragma omp parallel for schedule(static)
  for (int64_t pl = 0; pl < (int64_t)n * c; ++pl) {
    const T* ip = in + pl * d * h * w;
    T* op = out.data() + pl * dp * hp * wp;
    for (int z = 0; z < d; ++z)
      for (int y = 0; y < h; ++y)
        std::copy(ip + ((int64_t)z * h + y) * w,
                  ip + ((int64_t)z * h + y) * w + w,
                  op + ((int64_t)(z + 1) * hp + (y + 1)) * wp + 1);
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------- conv2d

// 3x3/stride-1/pad-1 stencil over zero-padded planes: nine register taps,
// one full-width fma pass per row. This is the hot path of every model.
template <typename T>
void conv2d_forward_3x3(const T* __restrict in, const T* __restrict w,
                        const T* __restrict bias, T* __restrict out, int n,
                        int ci, int h, int wd, int co) {
  const std::vector<T> padded = detail::pad_planes(in, n, ci, h, wd, 1, 1);
  const int wp = wd + 2;
#pragma omp parallel for collapse(2) schedule(static)
  for (int im = 0; im < n; ++im) {
    for (int oc = 0; oc < co; ++oc) {
      T* __restrict op = out + ((int64_t)im * co + oc) * h * wd;
      std::fill(op, op + (int64_t)h * wd, bias ? bias[oc] : T(0));
      for (int ic = 0; ic < ci; ++ic) {
        const T* __restrict pp =
            padded.data() + ((int64_t)im * ci + ic) * (h + 2) * wp;
        const T* wk = w + ((int64_t)oc * ci + ic) * 9;
        const T w00 = wk[0], w01 = wk[1], w02 = wk[2];
        const T w10 = wk[3], w11 = wk[4], w12 = wk[5];
        const T w20 = wk[6], w21 = wk[7], w22 = wk[8];
        for (int oy = 0; oy < h; ++oy) {
          const T* __restrict r0 = pp + (int64_t)oy * wp;
          const T* __restrict r1 = r0 + wp;
          const T* __restrict r2 = r1 + wp;
          T* __restrict orow = op + (int64_t)oy * wd;
          for (int ox = 0; ox < wd; ++ox) {
            orow[ox] += w00 * r0[ox] + w01 * r0[ox + 1] + w02 * r0[ox + 2] +
                        w10 * r1[ox] + w11 * r1[ox + 1] + w12 * r1[ox + 2] +
                        w20 * r2[ox] + w21 * r2[ox + 1] + w22 * r2[ox + 2];
          }
        }
      }
    }
  }
}

// 1x1 projection: a flat axpy over each plane.
template <typename T>
void conv2d_forward_1x1(const T* __restrict in, const T* __restrict w,
                        const T* __restrict bias, T* __restrict out, int n,
                        int ci, int64_t plane, int co) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int im = 0; im < n; ++im) {
    for (int oc = 0; oc < co; ++oc) {
      T* __restrict op = out + ((int64_t)im * co + oc) * plane;
      std::fill(op, op + plane, bias ? bias[oc] : T(0));
      for (int ic = 0; ic < ci; ++ic) {
        const T* __restrict ip = in + ((int64_t)im * ci + ic) * plane;
        const T wv = w[(int64_t)oc * ci + ic];
        for (int64_t i = 0; i < plane; ++i) op[i] += wv * ip[i];
      }
    }
  }
}

template <typename T>
void conv2d_forward(const T* __restrict in, const T* __restrict w,
                    const T* __restrict bias, T* __restrict out, int n,
                    int ci, int h, int wd, int co, int kh, int kw, int stride,
                    int pad, int ho, int wo) {
  if (kh == 3 && kw == 3 && stride == 1 && pad == 1) {
    conv2d_forward_3x3(in, w, bias, out, n, ci, h, wd, co);
    return;
  }
  if (kh == 1 && kw == 1 && stride == 1 && pad == 0) {
    conv2d_forward_1x1(in, w, bias, out, n, ci, (int64_t)h * wd, co);
    return;
  }
#pragma omp parallel for collapse(2) schedule(static)
  for (int im = 0; im < n; ++im) {
    for (int oc = 0; oc < co; ++oc) {
      T* op = out + ((int64_t)im * co + oc) * ho * wo;
      const T bv = bias ? bias[oc] : T(0);
      std::fill(op, op + (int64_t)ho * wo, bv);
      for (int ic = 0; ic < ci; ++ic) {
        const T* ip = in + ((int64_t)im * ci + ic) * h * wd;
        const T* wp = w + ((int64_t)oc * ci + ic) * kh * kw;
        for (int ky = 0; ky < kh; ++ky) {
          for (int kx = 0; kx < kw; ++kx) {
            const T wv = wp[ky * kw + kx];
            for (int oy = 0; oy < ho; ++oy) {
              const int iy = oy * stride - pad + ky;
              if (iy < 0 || iy >= h) continue;
              const T* irow = ip + (int64_t)iy * wd;
              T* orow = op + (int64_t)oy * wo;
              if (stride == 1) {
                const int x0 = std::max(0, pad - kx);
                const int x1 = std::min(wo, wd + pad - kx);
                const T* ir = irow - pad + kx;
                for (int ox = x0; ox < x1; ++ox) orow[ox] += wv * ir[ox];
              } else {
                for (int ox = 0; ox < wo; ++ox) {
                  const int ix = ox * stride - pad + kx;
                  if (ix >= 0 && ix < wd) orow[ox] += wv * irow[ix];
                }
              }
            }
          }
        }
      }
    }
  }
}

// Input gradient of the 3x3 path: correlation of the padded upstream
// gradient with the 180-degree-flipped kernel.
template <typename T>
void conv2d_backward_input_3x3(const T* __restrict gout,
                               const T* __restrict w, T* __restrict gin,
                               int n, int ci, int h, int wd, int co) {
  const std::vector<T> padded = detail::pad_planes(gout, n, co, h, wd, 1, 1);
  const int wp = wd + 2;
#pragma omp parallel for collapse(2) schedule(static)
  for (int im = 0; im < n; ++im) {
    for (int ic = 0; ic < ci; ++ic) {
      T* __restrict gp = gin + ((int64_t)im * ci + ic) * h * wd;
      for (int oc = 0; oc < co; ++oc) {
        const T* __restrict pp =
            padded.data() + ((int64_t)im * co + oc) * (h + 2) * wp;
        const T* wk = w + ((int64_t)oc * ci + ic) * 9;
        const T w00 = wk[0], w01 = wk[1], w02 = wk[2];
        const T w10 = wk[3], w11 = wk[4], w12 = wk[5];
        const T w20 = wk[6], w21 = wk[7], w22 = wk[8];
        for (int y = 0; y < h; ++y) {
          // term (ky,kx) reads padded row y+2-ky, column x+2-kx
          const T* __restrict r0 = pp + (int64_t)(y + 2) * wp;  // ky = 0
          const T* __restrict r1 = pp + (int64_t)(y + 1) * wp;  // ky = 1
          const T* __restrict r2 = pp + (int64_t)y * wp;        // ky = 2
          T* __restrict grow = gp + (int64_t)y * wd;
          for (int x = 0; x < wd; ++x) {
            grow[x] += w00 * r0[x + 2] + w01 * r0[x + 1] + w02 * r0[x] +
                       w10 * r1[x + 2] + w11 * r1[x + 1] + w12 * r1[x] +
                       w20 * r2[x + 2] + w21 * r2[x + 1] + w22 * r2[x];
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_input_1x1(const T* __restrict gout,
                               const T* __restrict w, T* __restrict gin,
                               int n, int ci, int64_t plane, int co) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int im = 0; im < n; ++im) {
    for (int ic = 0; ic < ci; ++ic) {
      T* __restrict gp = gin + ((int64_t)im * ci + ic) * plane;
      for (int oc = 0; oc < co; ++oc) {
        const T* __restrict gop = gout + ((int64_t)im * co + oc) * plane;
        const T wv = w[(int64_t)oc * ci + ic];
        for (int64_t i = 0; i < plane; ++i) gp[i] += wv * gop[i];
      }
    }
  }
}

template <typename T>
void conv2d_backward_input(const T* __restrict gout, const T* __restrict w,
                           T* __restrict gin, int n, int ci,
                           int h, int wd, int co, int kh, int kw, int stride,
                           int pad, int ho, int wo) {
  if (kh == 3 && kw == 3 && stride == 1 && pad == 1) {
    conv2d_backward_input_3x3(gout, w, gin, n, ci, h, wd, co);
    return;
  }
  if (kh == 1 && kw == 1 && stride == 1 && pad == 0) {
    conv2d_backward_input_1x1(gout, w, gin, n, ci, (int64_t)h * wd, co);
    return;
  }
#pragma omp parallel for collapse(2) schedule(static)
  for (int im = 0; im < n; ++im) {
    for (int ic = 0; ic < ci; ++ic) {
      T* gp = gin + ((int64_t)im * ci + ic) * h * wd;
      for (int oc = 0; oc < co; ++oc) {
        const T* gop = gout + ((int64_t)im * co + oc) * ho * wo;
        const T* wp = w + ((int64_t)oc * ci + ic) * kh * kw;
        for (int ky = 0; ky < kh; ++ky) {
          for (int kx = 0; kx < kw; ++kx) {
            const T wv = wp[ky * kw + kx];
            if (stride == 1) {
              for (int y = 0; y < h; ++y) {
                const int oy = y + pad - ky;
                if (oy < 0 || oy >= ho) continue;
                const T* grow = gop + (int64_t)oy * wo + pad - kx;
                T* gr = gp + (int64_t)y * wd;
                const int x0 = std::max(0, kx - pad);
                const int x1 = std::min(wd, wo - pad + kx);
                for (int x = x0; x < x1; ++x) gr[x] += wv * grow[x];
              }
            } else {
              for (int oy = 0; oy < ho; ++oy) {
                const int iy = oy * stride - pad + ky;
                if (iy < 0 || iy >= h) continue;
                for (int ox = 0; ox < wo; ++ox) {
                  const int ix = ox * stride - pad + kx;
                  if (ix >= 0 && ix < wd)
                    gp[(int64_t)iy * wd + ix] +=
                        wv * gop[(int64_t)oy * wo + ox];
                }
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_weight_3x3(const T* __restrict gout,
                                const T* __restrict in, T* __restrict gw,
                                int n, int ci, int h, int wd, int co) {
  const std::vector<T> padded = detail::pad_planes(in, n, ci, h, wd, 1, 1);
  const int wp = wd + 2;
#pragma omp parallel for collapse(2) schedule(static)
  for (int oc = 0; oc < co; ++oc) {
    for (int ic = 0; ic < ci; ++ic) {
      T acc[9] = {};
      for (int im = 0; im < n; ++im) {
        const T* __restrict gop = gout + ((int64_t)im * co + oc) * h * wd;
        const T* __restrict pp =
            padded.data() + ((int64_t)im * ci + ic) * (h + 2) * wp;
        for (int oy = 0; oy < h; ++oy) {
          const T* __restrict grow = gop + (int64_t)oy * wd;
          const T* __restrict r0 = pp + (int64_t)oy * wp;
          const T* __restrict r1 = r0 + wp;
          const T* __restrict r2 = r1 + wp;
          T a0 = 0, a1 = 0, a2 = 0, a3 = 0, a4 = 0, a5 = 0, a6 = 0, a7 = 0,
            a8 = 0;
          for (int ox = 0; ox < wd; ++ox) {
            const T g = grow[ox];
            a0 += g * r0[ox];
            a1 += g * r0[ox + 1];
            a2 += g * r0[ox + 2];
            a3 += g * r1[ox];
            a4 += g * r1[ox + 1];
            a5 += g * r1[ox + 2];
            a6 += g * r2[ox];
            a7 += g * r2[ox + 1];
            a8 += g * r2[ox + 2];
          }
          acc[0] += a0; acc[1] += a1; acc[2] += a2;
          acc[3] += a3; acc[4] += a4; acc[5] += a5;
          acc[6] += a6; acc[7] += a7; acc[8] += a8;
        }
      }
      T* gwp = gw + ((int64_t)oc * ci + ic) * 9;
      for (int t = 0; t < 9; ++t) gwp[t] += acc[t];
    }
  }
}

template <typename T>
void conv2d_backward_weight_1x1(const T* __restrict gout,
                                const T* __restrict in, T* __restrict gw,
                                int n, int ci, int64_t plane, int co) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int oc = 0; oc < co; ++oc) {
    for (int ic = 0; ic < ci; ++ic) {
      T acc = T(0);
      for (int im = 0; im < n; ++im) {
        const T* __restrict gop = gout + ((int64_t)im * co + oc) * plane;
        const T* __restrict ip = in + ((int64_t)im * ci + ic) * plane;
        for (int64_t i = 0; i < plane; ++i) acc += gop[i] * ip[i];
      }
      gw[(int64_t)oc * ci + ic] += acc;
    }
  }
}

template <typename T>
void conv2d_backward_weight(const T* __restrict gout, const T* __restrict in,
                            T* __restrict gw, int n, int ci,
                            int h, int wd, int co, int kh, int kw, int stride,
                            int pad, int ho, int wo) {
  if (kh == 3 && kw == 3 && stride == 1 && pad == 1) {
    conv2d_backward_weight_3x3(gout, in, gw, n, ci, h, wd, co);
    return;
  }
  if (kh == 1 && kw == 1 && stride == 1 && pad == 0) {
    conv2d_backward_weight_1x1(gout, in, gw, n, ci, (int64_t)h * wd, co);
    return;
  }
#pragma omp parallel for collapse(2) schedule(static)
  for (int oc = 0; oc < co; ++oc) {
    for (int ic = 0; ic < ci; ++ic) {
      T* gwp = gw + ((int64_t)oc * ci + ic) * kh * kw;
      for (int ky = 0; ky < kh; ++ky) {
        for (int kx = 0; kx < kw; ++kx) {
          T acc = T(0);
          for (int im = 0; im < n; ++im) {
            const T* gop = gout + ((int64_t)im * co + oc) * ho * wo;
            const T* ip = in + ((int64_t)im * ci + ic) * h * wd;
            for (int oy = 0; oy < ho; ++oy) {
              const int iy = oy * stride - pad + ky;
              if (iy < 0 || iy >= h) continue;
              const T* irow = ip + (int64_t)iy * wd;
              const T* grow = gop + (int64_t)oy * wo;
              if (stride == 1) {
                const int x0 = std::max(0, pad - kx);
                const int x1 = std::min(wo, wd + pad - kx);
                const T* ir = irow - pad + kx;
                for (int ox = x0; ox < x1; ++ox) acc += grow[ox] * ir[ox];
              } else {
                for (int ox = 0; ox < wo; ++ox) {
                  const int ix = ox * stride - pad + kx;
                  if (ix >= 0 && ix < wd) acc += grow[ox] * irow[ix];
                }
              }
            }
          }
          gwp[ky * kw + kx] += acc;
        }
      }
    }
  }
}

template <typename T>
void conv_backward_bias(const T* gout, T* gb, int n, int co, int64_t plane) {
#pragma omp parallel for schedule(static)
  for (int oc = 0; oc < co; ++oc) {
    T acc = T(0);
    for (int im = 0; im < n; ++im) {
      const T* gop = gout + ((int64_t)im * co + oc) * plane;
      for (int64_t i = 0; i < plane; ++i) acc += gop[i];
    }
    gb[oc] += acc;
  }
}

// ---------------------------------------------------------------- conv3d

// 3x3x3 stencil over zero-padded volumes; 27 register taps per row pass.
template <typename T>
void conv3d_forward_3x3x3(const T* __restrict in, const T* __restrict w,
                          const T* __restrict bias, T* __restrict out, int n,
                          int ci, int d, int h, int wd, int co) {
  const std::vector<T> padded = detail::pad_volumes(in, n, ci, d, h, wd);
  const int hp = h + 2, wp = wd + 2;
#pragma omp parallel for collapse(2) schedule(static)
  for (int im = 0; im < n; ++im) {
    for (int oc = 0; oc < co; ++oc) {
      T* __restrict op = out + ((int64_t)im * co + oc) * d * h * wd;
      std::fill(op, op + (int64_t)d * h * wd, bias ? bias[oc] : T(0));
      for (int ic = 0; ic < ci; ++ic) {
        const T* __restrict pp =
            padded.data() + ((int64_t)im * ci + ic) * (d + 2) * hp * wp;
        const T* wk = w + ((int64_t)oc * ci + ic) * 27;
        for (int oz = 0; oz < d; ++oz) {
          for (int oy = 0; oy < h; ++oy) {
            T* __restrict orow = op + ((int64_t)oz * h + oy) * wd;
            for (int kz = 0; kz < 3; ++kz) {
              for (int ky = 0; ky < 3; ++ky) {
                const T* __restrict r =
                    pp + ((int64_t)(oz + kz) * hp + (oy + ky)) * wp;
                const T wa = wk[(kz * 3 + ky) * 3 + 0];
                const T wb = wk[(kz * 3 + ky) * 3 + 1];
                const T wc = wk[(kz * 3 + ky) * 3 + 2];
                for (int ox = 0; ox < wd; ++ox)
                  orow[ox] += wa * r[ox] + wb * r[ox + 1] + wc * r[ox + 2];
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv3d_forward(const T* __restrict in, const T* __restrict w,
                    const T* __restrict bias, T* __restrict out, int n,
                    int ci, int d, int h, int wd, int co, int kd, int kh,
                    int kw, std::array<int, 3> stride, std::array<int, 3> pad,
                    int od, int oh, int ow) {
  const auto [sd, sh, sw] = stride;
  const auto [pd, ph, pw] = pad;
  if (kd == 3 && kh == 3 && kw == 3 && sd == 1 && sh == 1 && sw == 1 &&
      pd == 1 && ph == 1 && pw == 1) {
    conv3d_forward_3x3x3(in, w, bias, out, n, ci, d, h, wd, co);
    return;
  }
#pragma omp parallel for collapse(2) schedule(static)
  for (int im = 0; im < n; ++im) {
    for (int oc = 0; oc < co; ++oc) {
      T* op = out + ((int64_t)im * co + oc) * od * oh * ow;
      const T bv = bias ? bias[oc] : T(0);
      std::fill(op, op + (int64_t)od * oh * ow, bv);
      for (int ic = 0; ic < ci; ++ic) {
        const T* ip = in + ((int64_t)im * ci + ic) * d * h * wd;
        const T* wp = w + ((int64_t)oc * ci + ic) * kd * kh * kw;
        for (int kz = 0; kz < kd; ++kz) {
          for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
              const T wv = wp[(kz * kh + ky) * kw + kx];
              for (int oz = 0; oz < od; ++oz) {
                const int iz = oz * sd - pd + kz;
                if (iz < 0 || iz >= d) continue;
                for (int oy = 0; oy < oh; ++oy) {
                  const int iy = oy * sh - ph + ky;
                  if (iy < 0 || iy >= h) continue;
                  const T* irow = ip + ((int64_t)iz * h + iy) * wd;
                  T* orow = op + ((int64_t)oz * oh + oy) * ow;
                  if (sw == 1) {
                    const int x0 = std::max(0, pw - kx);
                    const int x1 = std::min(ow, wd + pw - kx);
                    const T* ir = irow - pw + kx;
                    for (int ox = x0; ox < x1; ++ox) orow[ox] += wv * ir[ox];
                  } else {
                    for (int ox = 0; ox < ow; ++ox) {
                      const int ix = ox * sw - pw + kx;
                      if (ix >= 0 && ix < wd) orow[ox] += wv * irow[ix];
                    }
                  }
                }
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv3d_backward_input_3x3x3(const T* __restrict gout,
                                 const T* __restrict w, T* __restrict gin,
                                 int n, int ci, int d, int h, int wd,
                                 int co) {
  const std::vector<T> padded = detail::pad_volumes(gout, n, co, d, h, wd);
  const int hp = h + 2, wp = wd + 2;
#pragma omp parallel for collapse(2) schedule(static)
  for (int im = 0; im < n; ++im) {
    for (int ic = 0; ic < ci; ++ic) {
      T* __restrict gp = gin + ((int64_t)im * ci + ic) * d * h * wd;
      for (int oc = 0; oc < co; ++oc) {
        const T* __restrict pp =
            padded.data() + ((int64_t)im * co + oc) * (d + 2) * hp * wp;
        const T* wk = w + ((int64_t)oc * ci + ic) * 27;
        for (int z = 0; z < d; ++z) {
          for (int y = 0; y < h; ++y) {
            T* __restrict grow = gp + ((int64_t)z * h + y) * wd;
            for (int kz = 0; kz < 3; ++kz) {
              for (int ky = 0; ky < 3; ++ky) {
                // term (kz,ky,kx) reads padded (z+2-kz, y+2-ky, x+2-kx)
                const T* __restrict r =
                    pp + ((int64_t)(z + 2 - kz) * hp + (y + 2 - ky)) * wp;
                const T wa = wk[(kz * 3 + ky) * 3 + 0];
                const T wb = wk[(kz * 3 + ky) * 3 + 1];
                const T wc = wk[(kz * 3 + ky) * 3 + 2];
                for (int x = 0; x < wd; ++x)
                  grow[x] += wa * r[x + 2] + wb * r[x + 1] + wc * r[x];
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv3d_backward_input(const T* __restrict gout, const T* __restrict w,
                           T* __restrict gin, int n, int ci,
                           int d, int h, int wd, int co, int kd, int kh,
                           int kw, std::array<int, 3> stride,
                           std::array<int, 3> pad, int od, int oh, int ow) {
  const auto [sd, sh, sw] = stride;
  const auto [pd, ph, pw] = pad;
  if (kd == 3 && kh == 3 && kw == 3 && sd == 1 && sh == 1 && sw == 1 &&
      pd == 1 && ph == 1 && pw == 1) {
    conv3d_backward_input_3x3x3(gout, w, gin, n, ci, d, h, wd, co);
    return;
  }
#pragma omp parallel for collapse(2) schedule(static)
  for (int im = 0; im < n; ++im) {
    for (int ic = 0; ic < ci; ++ic) {
      T* gp = gin + ((int64_t)im * ci + ic) * d * h * wd;
      for (int oc = 0; oc < co; ++oc) {
        const T* gop = gout + ((int64_t)im * co + oc) * od * oh * ow;
        const T* wp = w + ((int64_t)oc * ci + ic) * kd * kh * kw;
        for (int kz = 0; kz < kd; ++kz) {
          for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
              const T wv = wp[(kz * kh + ky) * kw + kx];
              for (int oz = 0; oz < od; ++oz) {
                const int iz = oz * sd - pd + kz;
                if (iz < 0 || iz >= d) continue;
                for (int oy = 0; oy < oh; ++oy) {
                  const int iy = oy * sh - ph + ky;
                  if (iy < 0 || iy >= h) continue;
                  T* grow = gp + ((int64_t)iz * h + iy) * wd;
                  const T* gorow = gop + ((int64_t)oz * oh + oy) * ow;
                  for (int ox = 0; ox < ow; ++ox) {
                    const int ix = ox * sw - pw + kx;
                    if (ix >= 0 && ix < wd) grow[ix] += wv * gorow[ox];
                  }
                }
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv3d_backward_weight_3x3x3(const T* __restrict gout,
                                  const T* __restrict in, T* __restrict gw,
                                  int n, int ci, int d, int h, int wd,
                                  int co) {
  const std::vector<T> padded = detail::pad_volumes(in, n, ci, d, h, wd);
  const int hp = h + 2, wp = wd + 2;
#pragma omp parallel for collapse(2) schedule(static)
  for (int oc = 0; oc < co; ++oc) {
    for (int ic = 0; ic < ci; ++ic) {
      T acc[27] = {};
      for (int im = 0; im < n; ++im) {
        const T* __restrict gop =
            gout + ((int64_t)im * co + oc) * d * h * wd;
        const T* __restrict pp =
            padded.data() + ((int64_t)im * ci + ic) * (d + 2) * hp * wp;
        for (int oz = 0; oz < d; ++oz) {
          for (int oy = 0; oy < h; ++oy) {
            const T* __restrict grow = gop + ((int64_t)oz * h + oy) * wd;
            for (int kz = 0; kz < 3; ++kz) {
              for (int ky = 0; ky < 3; ++ky) {
                const T* __restrict r =
                    pp + ((int64_t)(oz + kz) * hp + (oy + ky)) * wp;
                T a = 0, b = 0, c = 0;
                for (int ox = 0; ox < wd; ++ox) {
                  const T g = grow[ox];
                  a += g * r[ox];
                  b += g * r[ox + 1];
                  c += g * r[ox + 2];
                }
                acc[(kz * 3 + ky) * 3 + 0] += a;
                acc[(kz * 3 + ky) * 3 + 1] += b;
                acc[(kz * 3 + ky) * 3 + 2] += c;
              }
            }
          }
        }
      }
      T* gwp = gw + ((int64_t)oc * ci + ic) * 27;
      for (int t = 0; t < 27; ++t) gwp[t] += acc[t];
    }
  }
}

template <typename T>
void conv3d_backward_weight(const T* __restrict gout, const T* __restrict in,
                            T* __restrict gw, int n, int ci,
                            int d, int h, int wd, int co, int kd, int kh,
                            int kw, std::array<int, 3> stride,
                            std::array<int, 3> pad, int od, int oh, int ow) {
  const auto [sd, sh, sw] = stride;
  const auto [pd, ph, pw] = pad;
  if (kd == 3 && kh == 3 && kw == 3 && sd == 1 && sh == 1 && sw == 1 &&
      pd == 1 && ph == 1 && pw == 1) {
    conv3d_backward_weight_3x3x3(gout, in, gw, n, ci, d, h, wd, co);
    return;
  }
#pragma omp parallel for collapse(2) schedule(static)
  for (int oc = 0; oc < co; ++oc) {
    for (int ic = 0; ic < ci; ++ic) {
      T* gwp = gw + ((int64_t)oc * ci + ic) * kd * kh * kw;
      for (int kz = 0; kz < kd; ++kz) {
        for (int ky = 0; ky < kh; ++ky) {
          for (int kx = 0; kx < kw; ++kx) {
            T acc = T(0);
            for (int im = 0; im < n; ++im) {
              const T* gop = gout + ((int64_t)im * co + oc) * od * oh * ow;
              const T* ip = in + ((int64_t)im * ci + ic) * d * h * wd;
              for (int oz = 0; oz < od; ++oz) {
                const int iz = oz * sd - pd + kz;
                if (iz < 0 || iz >= d) continue;
                for (int oy = 0; oy < oh; ++oy) {
                  const int iy = oy * sh - ph + ky;
                  if (iy < 0 || iy >= h) continue;
                  const T* irow = ip + ((int64_t)iz * h + iy) * wd;
                  const T* gorow = gop + ((int64_t)oz * oh + oy) * ow;
                  for (int ox = 0; ox < ow; ++ox) {
                    const int ix = ox * sw - pw + kx;
                    if (ix >= 0 && ix < wd) acc += gorow[ox] * irow[ix];
                  }
                }
              }
            }
            gwp[(kz * kh + ky) * kw + kx] += acc;
          }
        }
      }
    }
  }
}

// ------------------------------------------------------------- max pool

// 2x2/stride-2 max pooling. Odd extents behave as if padded with -inf on
// the bottom/right; recorded indices always point at real input cells.
// Ties resolve to the smallest flat index (scan order, strict >).
template <typename T>
void maxpool2d_forward(const T* in, T* out, uint32_t* idx, int n, int c,
                       int h, int w, int ho, int wo) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int im = 0; im < n; ++im) {
    for (int ch = 0; ch < c; ++ch) {
      const T* ip = in + ((int64_t)im * c + ch) * h * w;
      const int64_t obase = ((int64_t)im * c + ch) * ho * wo;
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
          T best{};
          uint32_t bi = 0;
          bool first = true;
          for (int dy = 0; dy < 2; ++dy) {
            const int iy = oy * 2 + dy;
            if (iy >= h) continue;
            for (int dx = 0; dx < 2; ++dx) {
              const int ix = ox * 2 + dx;
              if (ix >= w) continue;
              const T v = ip[(int64_t)iy * w + ix];
              if (first || v > best) {
                best = v;
                bi = static_cast<uint32_t>(iy * w + ix);
                first = false;
              }
            }
          }
          out[obase + (int64_t)oy * wo + ox] = best;
          idx[obase + (int64_t)oy * wo + ox] = bi;
        }
      }
    }
  }
}

template <typename T>
void maxpool2d_backward(const T* gout, const uint32_t* idx, T* gin, int n,
                        int c, int h, int w, int ho, int wo) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int im = 0; im < n; ++im) {
    for (int ch = 0; ch < c; ++ch) {
      T* gp = gin + ((int64_t)im * c + ch) * h * w;
      const int64_t obase = ((int64_t)im * c + ch) * ho * wo;
      for (int64_t i = 0; i < (int64_t)ho * wo; ++i)
        gp[idx[obase + i]] += gout[obase + i];
    }
  }
}

template <typename T>
void unpool2d_forward(const T* in, const uint32_t* idx, T* out, int n, int c,
                      int h, int w, int oh, int ow) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int im = 0; im < n; ++im) {
    for (int ch = 0; ch < c; ++ch) {
      const int64_t ibase = ((int64_t)im * c + ch) * h * w;
      T* op = out + ((int64_t)im * c + ch) * oh * ow;
      std::fill(op, op + (int64_t)oh * ow, T(0));
      for (int64_t i = 0; i < (int64_t)h * w; ++i)
        op[idx[ibase + i]] = in[ibase + i];
    }
  }
}

template <typename T>
void unpool2d_backward(const T* gout, const uint32_t* idx, T* gin, int n,
                       int c, int h, int w, int oh, int ow) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int im = 0; im < n; ++im) {
    for (int ch = 0; ch < c; ++ch) {
      const int64_t ibase = ((int64_t)im * c + ch) * h * w;
      const T* gop = gout + ((int64_t)im * c + ch) * oh * ow;
      for (int64_t i = 0; i < (int64_t)h * w; ++i)
        gin[ibase + i] += gop[idx[ibase + i]];
    }
  }
}

// ------------------------------------------------------------ resampling

template <typename T>
void nearest_forward(const T* in, T* out, int n, int c, int h, int w,
                     int factor) {
  const int oh = h * factor, ow = w * factor;
#pragma omp parallel for collapse(2) schedule(static)
  for (int im = 0; im < n; ++im) {
    for (int ch = 0; ch < c; ++ch) {
      const T* ip = in + ((int64_t)im * c + ch) * h * w;
      T* op = out + ((int64_t)im * c + ch) * oh * ow;
      for (int oy = 0; oy < oh; ++oy) {
        const T* irow = ip + (int64_t)(oy / factor) * w;
        T* orow = op + (int64_t)oy * ow;
        for (int ox = 0; ox < ow; ++ox) orow[ox] = irow[ox / factor];
      }
    }
  }
}

template <typename T>
void nearest_backward(const T* gout, T* gin, int n, int c, int h, int w,
                      int factor) {
  const int ow = w * factor;
#pragma omp parallel for collapse(2) schedule(static)
  for (int im = 0; im < n; ++im) {
    for (int ch = 0; ch < c; ++ch) {
      T* gp = gin + ((int64_t)im * c + ch) * h * w;
      const T* gop = gout + ((int64_t)im * c + ch) * (int64_t)h * factor * ow;
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          T acc = T(0);
          for (int dy = 0; dy < factor; ++dy) {
            const T* grow = gop + ((int64_t)(y * factor + dy)) * ow;
            for (int dx = 0; dx < factor; ++dx)
              acc += grow[x * factor + dx];
          }
          gp[(int64_t)y * w + x] += acc;
        }
      }
    }
  }
}

// Cell-center (align-corners = false) sampling tables shared by forward
// and backward.
struct BilinearAxis {
  std::vector<int> i0, i1;
  std::vector<double> f;  // weight of i1
};

inline BilinearAxis bilinear_axis(int in, int out) {
  BilinearAxis a;
  a.i0.resize(out);
  a.i1.resize(out);
  a.f.resize(out);
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    if (src > in - 1) src = in - 1;
    const int lo = static_cast<int>(src);
    a.i0[o] = lo;
    a.i1[o] = std::min(lo + 1, in - 1);
    a.f[o] = src - lo;
  }
  return a;
}

template <typename T>
void bilinear_forward(const T* in, T* out, int n, int c, int h, int w, int oh,
                      int ow) {
  const BilinearAxis ay = bilinear_axis(h, oh);
  const BilinearAxis ax = bilinear_axis(w, ow);
#pragma omp parallel for collapse(2) schedule(static)
  for (int im = 0; im < n; ++im) {
    for (int ch = 0; ch < c; ++ch) {
      const T* ip = in + ((int64_t)im * c + ch) * h * w;
      T* op = out + ((int64_t)im * c + ch) * oh * ow;
      for (int oy = 0; oy < oh; ++oy) {
        const T* r0 = ip + (int64_t)ay.i0[oy] * w;
        const T* r1 = ip + (int64_t)ay.i1[oy] * w;
        const double fy = ay.f[oy];
        T* orow = op + (int64_t)oy * ow;
        for (int ox = 0; ox < ow; ++ox) {
          const double fx = ax.f[ox];
          const double top = (1 - fx) * r0[ax.i0[ox]] + fx * r0[ax.i1[ox]];
          const double bot = (1 - fx) * r1[ax.i0[ox]] + fx * r1[ax.i1[ox]];
          orow[ox] = static_cast<T>((1 - fy) * top + fy * bot);
        }
      }
    }
  }
}

template <typename T>
void bilinear_backward(const T* gout, T* gin, int n, int c, int h, int w,
                       int oh, int ow) {
  const BilinearAxis ay = bilinear_axis(h, oh);
  const BilinearAxis ax = bilinear_axis(w, ow);
#pragma omp parallel for collapse(2) schedule(static)
  for (int im = 0; im < n; ++im) {
    for (int ch = 0; ch < c; ++ch) {
      T* gp = gin + ((int64_t)im * c + ch) * h * w;
      const T* gop = gout + ((int64_t)im * c + ch) * oh * ow;
      for (int oy = 0; oy < oh; ++oy) {
        const double fy = ay.f[oy];
        const T* grow = gop + (int64_t)oy * ow;
        T* g0 = gp + (int64_t)ay.i0[oy] * w;
        T* g1 = gp + (int64_t)ay.i1[oy] * w;
        for (int ox = 0; ox < ow; ++ox) {
          const double fx = ax.f[ox];
          const double g = grow[ox];
          g0[ax.i0[ox]] += static_cast<T>((1 - fy) * (1 - fx) * g);
          g0[ax.i1[ox]] += static_cast<T>((1 - fy) * fx * g);
          g1[ax.i0[ox]] += static_cast<T>(fy * (1 - fx) * g);
          g1[ax.i1[ox]] += static_cast<T>(fy * fx * g);
        }
      }
    }
  }
}

// ------------------------------------------------------------ average pool

// k x k box mean with stride k. Output extents are floor(h/k); trailing
// rows/columns beyond the last complete window receive no gradient.
template <typename T>
void avgpool_forward(const T* in, T* out, int n, int c, int h, int w, int k,
                     int ho, int wo) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int im = 0; im < n; ++im) {
    for (int ch = 0; ch < c; ++ch) {
      const T* ip = in + ((int64_t)im * c + ch) * h * w;
      T* op = out + ((int64_t)im * c + ch) * ho * wo;
      const T inv = T(1) / static_cast<T>(k * k);
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
          T acc = T(0);
          for (int dy = 0; dy < k; ++dy) {
            const T* irow = ip + (int64_t)(oy * k + dy) * w + ox * k;
            for (int dx = 0; dx < k; ++dx) acc += irow[dx];
          }
          op[(int64_t)oy * wo + ox] = acc * inv;
        }
      }
    }
  }
}

template <typename T>
void avgpool_backward(const T* gout, T* gin, int n, int c, int h, int w,
                      int k, int ho, int wo) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int im = 0; im < n; ++im) {
    for (int ch = 0; ch < c; ++ch) {
      T* gp = gin + ((int64_t)im * c + ch) * h * w;
      const T* gop = gout + ((int64_t)im * c + ch) * ho * wo;
      const T inv = T(1) / static_cast<T>(k * k);
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
          const T g = gop[(int64_t)oy * wo + ox] * inv;
          for (int dy = 0; dy < k; ++dy) {
            T* grow = gp + (int64_t)(oy * k + dy) * w + ox * k;
            for (int dx = 0; dx < k; ++dx) grow[dx] += g;
          }
        }
      }
    }
  }
}

// ------------------------------------------------------------- batch norm

// Per-channel statistics over batch and all spatial axes (s = product of
// spatial extents). Double accumulators keep the float path accurate.
template <typename T>
void batchnorm_forward_train(const T* x, const T* gamma, const T* beta, T* y,
                             T* save_mean, T* save_var, T* run_mean,
                             T* run_var, T momentum, T eps, int n, int c,
                             int64_t s) {
#pragma omp parallel for schedule(static)
  for (int ch = 0; ch < c; ++ch) {
    double sum = 0, sum2 = 0;
    for (int im = 0; im < n; ++im) {
      const T* xp = x + ((int64_t)im * c + ch) * s;
      for (int64_t i = 0; i < s; ++i) {
        const double v = xp[i];
        sum += v;
        sum2 += v * v;
      }
    }
    const double m = sum / (double(n) * s);
    double var = sum2 / (double(n) * s) - m * m;
    if (var < 0) var = 0;
    save_mean[ch] = static_cast<T>(m);
    save_var[ch] = static_cast<T>(var);
    run_mean[ch] = (T(1) - momentum) * run_mean[ch] + momentum * T(m);
    run_var[ch] = (T(1) - momentum) * run_var[ch] + momentum * T(var);
    const T inv = T(1) / static_cast<T>(std::sqrt(var + double(eps)));
    const T g = gamma[ch], b = beta[ch], mu = static_cast<T>(m);
    for (int im = 0; im < n; ++im) {
      const T* xp = x + ((int64_t)im * c + ch) * s;
      T* yp = y + ((int64_t)im * c + ch) * s;
      for (int64_t i = 0; i < s; ++i) yp[i] = g * (xp[i] - mu) * inv + b;
    }
  }
}

template <typename T>
void batchnorm_forward_eval(const T* x, const T* gamma, const T* beta,
                            const T* run_mean, const T* run_var, T* y, T eps,
                            int n, int c, int64_t s) {
#pragma omp parallel for schedule(static)
  for (int ch = 0; ch < c; ++ch) {
    const T inv = T(1) / static_cast<T>(
                             std::sqrt(double(run_var[ch]) + double(eps)));
    const T g = gamma[ch], b = beta[ch], mu = run_mean[ch];
    for (int im = 0; im < n; ++im) {
      const T* xp = x + ((int64_t)im * c + ch) * s;
      T* yp = y + ((int64_t)im * c + ch) * s;
      for (int64_t i = 0; i < s; ++i) yp[i] = g * (xp[i] - mu) * inv + b;
    }
  }
}

// Backward for the training path, using the saved batch statistics.
template <typename T>
void batchnorm_backward_train(const T* x, const T* gamma, const T* gy,
                              const T* save_mean, const T* save_var, T* gx,
                              T* ggamma, T* gbeta, T eps, int n, int c,
                              int64_t s) {
#pragma omp parallel for schedule(static)
  for (int ch = 0; ch < c; ++ch) {
    const double mu = save_mean[ch];
    const double inv = 1.0 / std::sqrt(double(save_var[ch]) + double(eps));
    double sum_gy = 0, sum_gy_xhat = 0;
    for (int im = 0; im < n; ++im) {
      const T* xp = x + ((int64_t)im * c + ch) * s;
      const T* gp = gy + ((int64_t)im * c + ch) * s;
      for (int64_t i = 0; i < s; ++i) {
        const double xh = (xp[i] - mu) * inv;
        sum_gy += gp[i];
        sum_gy_xhat += gp[i] * xh;
      }
    }
    ggamma[ch] += static_cast<T>(sum_gy_xhat);
    gbeta[ch] += static_cast<T>(sum_gy);
    const double m = double(n) * s;
    const double g = gamma[ch];
    for (int im = 0; im < n; ++im) {
      const T* xp = x + ((int64_t)im * c + ch) * s;
      const T* gp = gy + ((int64_t)im * c + ch) * s;
      T* op = gx + ((int64_t)im * c + ch) * s;
      for (int64_t i = 0; i < s; ++i) {
        const double xh = (xp[i] - mu) * inv;
        op[i] += static_cast<T>(g * inv *
                                (gp[i] - sum_gy / m - xh * sum_gy_xhat / m));
      }
    }
  }
}

// Backward for the frozen-statistics path (a per-channel affine map).
template <typename T>
void batchnorm_backward_eval(const T* x, const T* gamma, const T* gy,
                             const T* run_mean, const T* run_var, T* gx,
                             T* ggamma, T* gbeta, T eps, int n, int c,
                             int64_t s) {
#pragma omp parallel for schedule(static)
  for (int ch = 0; ch < c; ++ch) {
    const double mu = run_mean[ch];
    const double inv = 1.0 / std::sqrt(double(run_var[ch]) + double(eps));
    double sum_gy = 0, sum_gy_xhat = 0;
    const double g = gamma[ch];
    for (int im = 0; im < n; ++im) {
      const T* xp = x + ((int64_t)im * c + ch) * s;
      const T* gp = gy + ((int64_t)im * c + ch) * s;
      T* op = gx + ((int64_t)im * c + ch) * s;
      for (int64_t i = 0; i < s; ++i) {
        const double xh = (xp[i] - mu) * inv;
        sum_gy += gp[i];
        sum_gy_xhat += gp[i] * xh;
        op[i] += static_cast<T>(g * inv * gp[i]);
      }
    }
    ggamma[ch] += static_cast<T>(sum_gy_xhat);
    gbeta[ch] += static_cast<T>(sum_gy);
  }
}

}  // namespace terracer::kernels
