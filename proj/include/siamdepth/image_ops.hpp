#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "siamdepth/ops.hpp"

namespace siamdepth {

/// RightToLeft reconstructs the left view from the right one (samples at
/// j - d*W); LeftToRight reconstructs the right view from the left (j + d*W).
enum class WarpDirection { RightToLeft, LeftToRight };

/// Horizontal flip of a plain tensor: column j goes to W-1-j.
template <typename T>
Tensor<T> mirror(const Tensor<T>& t) {
  Tensor<T> out(t.shape());
  const Shape& s = t.shape();
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h; ++y) {
        const T* src = t.row(n, c, y);
        T* dst = out.row(n, c, y);
        for (int x = 0; x < s.w; ++x) dst[x] = src[s.w - 1 - x];
      }
  return out;
}

template <typename T>
Var<T> mirror(const Var<T>& t) {
  const NodeId id = t.id();
  return t.tape().record("mirror", mirror(t.value()), {t}, [id](Tape<T>& tape, const Tensor<T>& g) {
    auto* gi = tape.grad_for(id);
    const Tensor<T> mg = mirror(g);
    for (std::size_t i = 0; i < mg.size(); ++i) (*gi)[i] += mg[i];
  });
}

namespace detail {

/// Clamped sampling position and bilinear weights along one scanline.
template <typename T>
struct LineSample {
  int x0;
  int x1;
  T a;             // weight of x1
  bool inside;     // false when the coordinate was clamped
};

template <typename T>
LineSample<T> line_sample(T x, int width) {
  const T hi = static_cast<T>(width - 1);
  if (!(x > T(0))) return {0, 0, T(0), x == T(0)};
  if (!(x < hi)) return {width - 1, width - 1, T(0), false};
  const T f = std::floor(x);
  const int x0 = static_cast<int>(f);
  return {x0, x0 + 1, x - f, true};
}

}  // namespace detail

/// Bilinear scanline warp of `source` by a width-fraction disparity map.
/// Sample coordinates are clamped to [0, W-1]. Differentiable w.r.t. both the
/// source and the disparity (the disparity gradient is zero where clamped).
template <typename T>
Var<T> warp_horizontal(const Var<T>& source, const Var<T>& disparity, WarpDirection direction) {
  const Shape& ss = source.shape();
  const Shape& ds = disparity.shape();
  if (ds.c != 1) throw ShapeError("warp_horizontal: disparity must have one channel, got " + ds.str());
  if (ds.n != ss.n) throw ShapeError("warp_horizontal: batch mismatch (" + ss.str() + " vs " + ds.str() + ")");
  if (ds.h != ss.h) throw ShapeError("warp_horizontal: height mismatch (" + ss.str() + " vs " + ds.str() + ")");
  if (ds.w != ss.w) throw ShapeError("warp_horizontal: width mismatch (" + ss.str() + " vs " + ds.str() + ")");
  if (!disparity.value().all_finite()) throw NumericError("warp_horizontal: non-finite disparity");

  const T sign = direction == WarpDirection::RightToLeft ? T(-1) : T(1);
  const T width = static_cast<T>(ss.w);
  const Tensor<T>& src = source.value();
  const Tensor<T>& disp = disparity.value();
  Tensor<T> out(ss);
  for (int n = 0; n < ss.n; ++n)
    for (int y = 0; y < ss.h; ++y) {
      const T* drow = disp.row(n, 0, y);
      for (int x = 0; x < ss.w; ++x) {
        const auto s = detail::line_sample(static_cast<T>(x) + sign * drow[x] * width, ss.w);
        for (int c = 0; c < ss.c; ++c) {
          const T* srow = src.row(n, c, y);
          // lerp form: reproduces a constant row exactly
          out(n, c, y, x) = srow[s.x0] + s.a * (srow[s.x1] - srow[s.x0]);
        }
      }
    }

  const NodeId is = source.id(), id = disparity.id();
  return source.tape().record("warp_horizontal", std::move(out), {source, disparity},
                              [is, id, sign, width, ss](Tape<T>& t, const Tensor<T>& g) {
                                const Tensor<T>& src = t.value(is);
                                const Tensor<T>& disp = t.value(id);
                                auto* gs = t.grad_for(is);
                                auto* gd = t.grad_for(id);
                                for (int n = 0; n < ss.n; ++n)
                                  for (int y = 0; y < ss.h; ++y) {
                                    const T* drow = disp.row(n, 0, y);
                                    for (int x = 0; x < ss.w; ++x) {
                                      const auto s = detail::line_sample(
                                          static_cast<T>(x) + sign * drow[x] * width, ss.w);
                                      T dd = T(0);
                                      for (int c = 0; c < ss.c; ++c) {
                                        const T go = g(n, c, y, x);
                                        if (gs) {
                                          T* grow = gs->row(n, c, y);
                                          grow[s.x0] += (T(1) - s.a) * go;
                                          grow[s.x1] += s.a * go;
                                        }
                                        if (gd && s.inside && s.x1 != s.x0) {
                                          const T* srow = src.row(n, c, y);
                                          dd += go * (srow[s.x1] - srow[s.x0]);
                                        }
                                      }
                                      if (gd) (*gd)(n, 0, y, x) += dd * sign * width;
                                    }
                                  }
                              });
}

/// Normalised 1-D Gaussian taps for offsets -radius..radius.
template <typename T>
std::vector<T> gaussian_kernel(T sigma, int radius) {
  if (!(sigma > T(0))) throw NumericError("gaussian kernel: sigma must be > 0");
  if (radius < 1) throw NumericError("gaussian kernel: radius must be >= 1");
  std::vector<T> k(2 * radius + 1);
  T total = T(0);
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-static_cast<T>(i * i) / (T(2) * sigma * sigma));
    total += k[i + radius];
  }
  for (auto& v : k) v /= total;
  return k;
}

namespace detail {

/// out[i] = sum_k w_k in[i+k] / sum_{valid k} w_k, over lines of `len`
/// elements spaced `step` apart. `transpose` applies the adjoint.
template <typename T>
void blur_line(const T* in, T* out, int len, std::ptrdiff_t step, const std::vector<T>& k, int radius,
               const std::vector<T>& norm, bool transpose) {
  for (int i = 0; i < len; ++i) {
    const int lo = std::max(-radius, -i);
    const int hi = std::min(radius, len - 1 - i);
    const T inv = norm[i];
    if (!transpose) {
      T acc = T(0);
      for (int o = lo; o <= hi; ++o) acc += k[o + radius] * in[(i + o) * step];
      out[i * step] = acc * inv;
    } else {
      const T gi = in[i * step] * inv;
      for (int o = lo; o <= hi; ++o) out[(i + o) * step] += k[o + radius] * gi;
    }
  }
}

template <typename T>
std::vector<T> edge_norms(int len, const std::vector<T>& k, int radius) {
  std::vector<T> norm(len);
  for (int i = 0; i < len; ++i) {
    T s = T(0);
    for (int o = std::max(-radius, -i); o <= std::min(radius, len - 1 - i); ++o) s += k[o + radius];
    norm[i] = T(1) / s;
  }
  return norm;
}

template <typename T>
Tensor<T> blur_apply(const Tensor<T>& in, const std::vector<T>& k, int radius, bool transpose) {
  const Shape& s = in.shape();
  const auto nx = edge_norms(s.w, k, radius);
  const auto ny = edge_norms(s.h, k, radius);
  Tensor<T> tmp(s);
  Tensor<T> out(s);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const T* src = in.row(n, c, 0);
      T* mid = tmp.row(n, c, 0);
      T* dst = out.row(n, c, 0);
      if (!transpose) {
        for (int y = 0; y < s.h; ++y) blur_line(src + y * s.w, mid + y * s.w, s.w, 1, k, radius, nx, false);
        for (int x = 0; x < s.w; ++x) blur_line(mid + x, dst + x, s.h, s.w, k, radius, ny, false);
      } else {
        for (int x = 0; x < s.w; ++x) blur_line(src + x, mid + x, s.h, s.w, k, radius, ny, true);
        for (int y = 0; y < s.h; ++y) blur_line(mid + y * s.w, dst + y * s.w, s.w, 1, k, radius, nx, true);
      }
    }
  return out;
}

}  // namespace detail

/// Separable Gaussian blur. Border taps that fall outside the image are
/// dropped and the remaining weights renormalised, so constants are preserved.
template <typename T>
Tensor<T> gaussian_blur(const Tensor<T>& t, T sigma, int radius) {
  return detail::blur_apply(t, gaussian_kernel(sigma, radius), radius, false);
}

template <typename T>
Var<T> gaussian_blur(const Var<T>& t, T sigma, int radius) {
  auto k = gaussian_kernel(sigma, radius);
  Tensor<T> out = detail::blur_apply(t.value(), k, radius, false);
  const NodeId id = t.id();
  return t.tape().record("gaussian_blur", std::move(out), {t},
                         [id, k = std::move(k), radius](Tape<T>& tape, const Tensor<T>& g) {
                           const Tensor<T> back = detail::blur_apply(g, k, radius, true);
                           auto* gi = tape.grad_for(id);
                           for (std::size_t i = 0; i < back.size(); ++i) (*gi)[i] += back[i];
                         });
}

/// 2x2 mean pooling.
template <typename T>
Tensor<T> downsample2x(const Tensor<T>& t) {
  const Shape& s = t.shape();
  if (s.h % 2 != 0 || s.w % 2 != 0) throw ShapeError("downsample2x: odd spatial dimension in " + s.str());
  Tensor<T> out(Shape{s.n, s.c, s.h / 2, s.w / 2});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h / 2; ++y) {
        const T* r0 = t.row(n, c, 2 * y);
        const T* r1 = t.row(n, c, 2 * y + 1);
        T* dst = out.row(n, c, y);
        for (int x = 0; x < s.w / 2; ++x) {
          dst[x] = T(0.25) * ((r0[2 * x] + r0[2 * x + 1]) + (r1[2 * x] + r1[2 * x + 1]));
        }
      }
  return out;
}

template <typename T>
Var<T> downsample2x(const Var<T>& t) {
  const NodeId id = t.id();
  return t.tape().record("downsample2x", downsample2x(t.value()), {t}, [id](Tape<T>& tape, const Tensor<T>& g) {
    auto* gi = tape.grad_for(id);
    const Shape& s = g.shape();
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c)
        for (int y = 0; y < s.h; ++y) {
          const T* src = g.row(n, c, y);
          T* r0 = gi->row(n, c, 2 * y);
          T* r1 = gi->row(n, c, 2 * y + 1);
          for (int x = 0; x < s.w; ++x) {
            const T v = T(0.25) * src[x];
            r0[2 * x] += v;
            r0[2 * x + 1] += v;
            r1[2 * x] += v;
            r1[2 * x + 1] += v;
          }
        }
  });
}

/// Nearest-neighbour 2x upsampling; each value fills a 2x2 block.
template <typename T>
Tensor<T> upsample2x_nearest(const Tensor<T>& t) {
  const Shape& s = t.shape();
  Tensor<T> out(Shape{s.n, s.c, s.h * 2, s.w * 2});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h; ++y) {
        const T* src = t.row(n, c, y);
        T* r0 = out.row(n, c, 2 * y);
        T* r1 = out.row(n, c, 2 * y + 1);
        for (int x = 0; x < s.w; ++x) r0[2 * x] = r0[2 * x + 1] = r1[2 * x] = r1[2 * x + 1] = src[x];
      }
  return out;
}

template <typename T>
Var<T> upsample2x_nearest(const Var<T>& t) {
  const NodeId id = t.id();
  return t.tape().record("upsample2x_nearest", upsample2x_nearest(t.value()), {t},
                         [id](Tape<T>& tape, const Tensor<T>& g) {
                           auto* gi = tape.grad_for(id);
                           const Shape& s = gi->shape();
                           for (int n = 0; n < s.n; ++n)
                             for (int c = 0; c < s.c; ++c)
                               for (int y = 0; y < s.h; ++y) {
                                 const T* r0 = g.row(n, c, 2 * y);
                                 const T* r1 = g.row(n, c, 2 * y + 1);
                                 T* dst = gi->row(n, c, y);
                                 for (int x = 0; x < s.w; ++x) {
                                   dst[x] += (r0[2 * x] + r0[2 * x + 1]) + (r1[2 * x] + r1[2 * x + 1]);
                                 }
                               }
                         });
}

}  // namespace siamdepth
