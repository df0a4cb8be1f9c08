#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "terracer/tensor.hpp"

// Serial reference implementations, kept deliberately naive: every output
// cell is an explicit sliding-window dot product with bounds-checked
// reads, written without sharing any loop structure with the OpenMP
// kernels. The unit tests pin the fast kernels against these, and the
// benchmark tool reports the speed gap.

namespace terracer::ref {

template <typename T>
Tensor<T> conv2d(const Tensor<T>& in, const Tensor<T>& w, const Tensor<T>& b,
                 int stride, int pad) {
  const int n = in.dim(0), ci = in.dim(1), h = in.dim(2), wd = in.dim(3);
  const int co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int ho = (h + 2 * pad - kh) / stride + 1;
  const int wo = (wd + 2 * pad - kw) / stride + 1;
  auto at = [&](int im, int ic, int y, int x) -> T {
    if (y < 0 || y >= h || x < 0 || x >= wd) return T(0);
    return in[(((int64_t)im * ci + ic) * h + y) * wd + x];
  };
  Tensor<T> out({n, co, ho, wo});
  for (int im = 0; im < n; ++im)
    for (int oc = 0; oc < co; ++oc)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          T acc = b.numel() ? b[oc] : T(0);
          for (int ic = 0; ic < ci; ++ic)
            for (int ky = 0; ky < kh; ++ky)
              for (int kx = 0; kx < kw; ++kx)
                acc += w[(((int64_t)oc * ci + ic) * kh + ky) * kw + kx] *
                       at(im, ic, oy * stride - pad + ky,
                          ox * stride - pad + kx);
          out[(((int64_t)im * co + oc) * ho + oy) * wo + ox] = acc;
        }
  return out;
}

template <typename T>
Tensor<T> conv3d(const Tensor<T>& in, const Tensor<T>& w, const Tensor<T>& b,
                 std::array<int, 3> stride, std::array<int, 3> pad) {
  const int n = in.dim(0), ci = in.dim(1), d = in.dim(2), h = in.dim(3),
            wd = in.dim(4);
  const int co = w.dim(0), kd = w.dim(2), kh = w.dim(3), kw = w.dim(4);
  const int od = (d + 2 * pad[0] - kd) / stride[0] + 1;
  const int oh = (h + 2 * pad[1] - kh) / stride[1] + 1;
  const int ow = (wd + 2 * pad[2] - kw) / stride[2] + 1;
  auto at = [&](int im, int ic, int z, int y, int x) -> T {
    if (z < 0 || z >= d || y < 0 || y >= h || x < 0 || x >= wd) return T(0);
    return in[((((int64_t)im * ci + ic) * d + z) * h + y) * wd + x];
  };
  Tensor<T> out({n, co, od, oh, ow});
  for (int im = 0; im < n; ++im)
    for (int oc = 0; oc < co; ++oc)
      for (int oz = 0; oz < od; ++oz)
        for (int oy = 0; oy < oh; ++oy)
          for (int ox = 0; ox < ow; ++ox) {
            T acc = b.numel() ? b[oc] : T(0);
            for (int ic = 0; ic < ci; ++ic)
              for (int kz = 0; kz < kd; ++kz)
                for (int ky = 0; ky < kh; ++ky)
                  for (int kx = 0; kx < kw; ++kx)
                    acc += w[((((int64_t)oc * ci + ic) * kd + kz) * kh + ky) *
                                 kw +
                             kx] *
                           at(im, ic, oz * stride[0] - pad[0] + kz,
                              oy * stride[1] - pad[1] + ky,
                              ox * stride[2] - pad[2] + kx);
            out[((((int64_t)im * co + oc) * od + oz) * oh + oy) * ow + ox] =
                acc;
          }
  return out;
}

/// 2x2/stride-2 windowed max; ties go to the smallest flat in-plane index.
template <typename T>
std::pair<Tensor<T>, std::vector<uint32_t>> maxpool2x2(const Tensor<T>& in) {
  const int n = in.dim(0), c = in.dim(1), h = in.dim(2), w = in.dim(3);
  const int ho = (h + 1) / 2, wo = (w + 1) / 2;
  Tensor<T> out({n, c, ho, wo});
  std::vector<uint32_t> idx((size_t)n * c * ho * wo);
  for (int im = 0; im < n; ++im)
    for (int ch = 0; ch < c; ++ch)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          // enumerate candidates in flat order so the first strict max wins
          std::vector<std::pair<int, T>> cand;
          for (int iy = oy * 2; iy < std::min(oy * 2 + 2, h); ++iy)
            for (int ix = ox * 2; ix < std::min(ox * 2 + 2, w); ++ix)
              cand.emplace_back(iy * w + ix,
                                in[(((int64_t)im * c + ch) * h + iy) * w + ix]);
          int best = cand[0].first;
          T bv = cand[0].second;
          for (const auto& [fi, v] : cand)
            if (v > bv) {
              bv = v;
              best = fi;
            }
          const int64_t o = (((int64_t)im * c + ch) * ho + oy) * wo + ox;
          out[o] = bv;
          idx[(size_t)o] = static_cast<uint32_t>(best);
        }
  return {std::move(out), std::move(idx)};
}

template <typename T>
Tensor<T> unpool2x2(const Tensor<T>& in, const std::vector<uint32_t>& idx,
                    int oh, int ow) {
  const int n = in.dim(0), c = in.dim(1), h = in.dim(2), w = in.dim(3);
  Tensor<T> out({n, c, oh, ow});
  for (int im = 0; im < n; ++im)
    for (int ch = 0; ch < c; ++ch)
      for (int64_t i = 0; i < (int64_t)h * w; ++i) {
        const int64_t src = ((int64_t)im * c + ch) * h * w + i;
        out[((int64_t)im * c + ch) * oh * ow + idx[(size_t)src]] = in[src];
      }
  return out;
}

/// Direct per-pixel cell-center bilinear interpolation.
template <typename T>
Tensor<T> bilinear(const Tensor<T>& in, int oh, int ow) {
  const int n = in.dim(0), c = in.dim(1), h = in.dim(2), w = in.dim(3);
  Tensor<T> out({n, c, oh, ow});
  auto clampi = [](double v, int hi) {
    if (v < 0) return 0.0;
    if (v > hi) return double(hi);
    return v;
  };
  for (int im = 0; im < n; ++im)
    for (int ch = 0; ch < c; ++ch)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          const double sy = clampi((oy + 0.5) * double(h) / oh - 0.5, h - 1);
          const double sx = clampi((ox + 0.5) * double(w) / ow - 0.5, w - 1);
          const int y0 = int(sy), x0 = int(sx);
          const int y1 = std::min(y0 + 1, h - 1);
          const int x1 = std::min(x0 + 1, w - 1);
          const double fy = sy - y0, fx = sx - x0;
          auto v = [&](int y, int x) -> double {
            return in[(((int64_t)im * c + ch) * h + y) * w + x];
          };
          out[(((int64_t)im * c + ch) * oh + oy) * ow + ox] =
              static_cast<T>((1 - fy) * ((1 - fx) * v(y0, x0) + fx * v(y0, x1)) +
                             fy * ((1 - fx) * v(y1, x0) + fx * v(y1, x1)));
        }
  return out;
}

template <typename T>
Tensor<T> nearest(const Tensor<T>& in, int factor) {
  const int n = in.dim(0), c = in.dim(1), h = in.dim(2), w = in.dim(3);
  Tensor<T> out({n, c, h * factor, w * factor});
  for (int im = 0; im < n; ++im)
    for (int ch = 0; ch < c; ++ch)
      for (int oy = 0; oy < h * factor; ++oy)
        for (int ox = 0; ox < w * factor; ++ox)
          out[(((int64_t)im * c + ch) * h * factor + oy) * w * factor + ox] =
              in[(((int64_t)im * c + ch) * h + oy / factor) * w +
                 ox / factor];
  return out;
}

/// All-pairs boundary-exclusion oracle. A cell is excluded when any cell
/// with a different label (NO_DATA counts as different) has its area within
/// radius_m of this cell's center. Quadratic in pixel count - test sizes
/// only.
inline Tensor<uint8_t> erode_bruteforce(const Tensor<uint16_t>& labels,
                                        double radius_m, double res_m) {
  const int h = labels.dim(0), w = labels.dim(1);
  Tensor<uint8_t> mask({h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const uint16_t me = labels[(int64_t)y * w + x];
      bool excluded = false;
      for (int qy = 0; qy < h && !excluded; ++qy)
        for (int qx = 0; qx < w; ++qx) {
          if (labels[(int64_t)qy * w + qx] == me) continue;
          // distance from my center to the nearest point of cell (qy,qx)
          const double dy = std::max(0.0, (std::abs(qy - y) - 0.5)) * res_m;
          const double dx = std::max(0.0, (std::abs(qx - x) - 0.5)) * res_m;
          if (std::sqrt(dy * dy + dx * dx) <= radius_m) {
            excluded = true;
            break;
          }
        }
      mask[(int64_t)y * w + x] = excluded ? 1 : 0;
    }
  return mask;
}

}  // namespace terracer::ref
