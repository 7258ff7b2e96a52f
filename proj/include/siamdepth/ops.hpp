#pragma once

#include <Eigen/Core>

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "siamdepth/autodiff.hpp"

namespace siamdepth {

enum class Elementwise { Add, Sub, Mul, Div, Abs, Sigmoid, Elu, Scale, Offset };

namespace detail {

inline void require_same_shape(const char* op, const Shape& a, const Shape& b) {
  if (a == b) return;
  const char* dims[] = {"batch", "channel", "height", "width"};
  const int av[] = {a.n, a.c, a.h, a.w};
  const int bv[] = {b.n, b.c, b.h, b.w};
  for (int k = 0; k < 4; ++k) {
    if (av[k] != bv[k]) {
      throw ShapeError(std::string(op) + ": " + dims[k] + " mismatch (" + a.str() + " vs " + b.str() + ")");
    }
  }
}

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
T sigmoid(T x) {
  return x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

template <typename T>
T sign(T x) {
  return static_cast<T>((x > T(0)) - (x < T(0)));
}

}  // namespace detail

/// Pointwise operation. Binary kinds (Add, Sub, Mul, Div) need identical
/// shapes; Scale and Offset use `constant`.
template <typename T>
Var<T> elementwise(Elementwise kind, const Var<T>& a, const Var<T>& b = {}, T constant = T(0)) {
  Tape<T>& tape = a.tape();
  const Tensor<T>& av = a.value();
  Tensor<T> out(av.shape());
  const std::size_t n = av.size();
  const T* x = av.data().data();
  T* y = out.data().data();

  const bool binary = kind == Elementwise::Add || kind == Elementwise::Sub || kind == Elementwise::Mul ||
                      kind == Elementwise::Div;
  if (binary) {
    if (!b.valid()) throw ShapeError("elementwise: binary operation needs two operands");
    detail::require_same_shape("elementwise", av.shape(), b.shape());
    const T* z = b.value().data().data();
    const NodeId ia = a.id(), ib = b.id();
    switch (kind) {
      case Elementwise::Add:
        for (std::size_t i = 0; i < n; ++i) y[i] = x[i] + z[i];
        return tape.record("add", std::move(out), {a, b}, [ia, ib, n](Tape<T>& t, const Tensor<T>& g) {
          if (auto* ga = t.grad_for(ia)) for (std::size_t i = 0; i < n; ++i) (*ga)[i] += g[i];
          if (auto* gb = t.grad_for(ib)) for (std::size_t i = 0; i < n; ++i) (*gb)[i] += g[i];
        });
      case Elementwise::Sub:
        for (std::size_t i = 0; i < n; ++i) y[i] = x[i] - z[i];
        return tape.record("sub", std::move(out), {a, b}, [ia, ib, n](Tape<T>& t, const Tensor<T>& g) {
          if (auto* ga = t.grad_for(ia)) for (std::size_t i = 0; i < n; ++i) (*ga)[i] += g[i];
          if (auto* gb = t.grad_for(ib)) for (std::size_t i = 0; i < n; ++i) (*gb)[i] -= g[i];
        });
      case Elementwise::Mul:
        for (std::size_t i = 0; i < n; ++i) y[i] = x[i] * z[i];
        return tape.record("mul", std::move(out), {a, b}, [ia, ib, n](Tape<T>& t, const Tensor<T>& g) {
          const Tensor<T>& va = t.value(ia);
          const Tensor<T>& vb = t.value(ib);
          if (auto* ga = t.grad_for(ia)) for (std::size_t i = 0; i < n; ++i) (*ga)[i] += g[i] * vb[i];
          if (auto* gb = t.grad_for(ib)) for (std::size_t i = 0; i < n; ++i) (*gb)[i] += g[i] * va[i];
        });
      default:  // Div
        for (std::size_t i = 0; i < n; ++i) y[i] = x[i] / z[i];
        return tape.record("div", std::move(out), {a, b}, [ia, ib, n](Tape<T>& t, const Tensor<T>& g) {
          const Tensor<T>& va = t.value(ia);
          const Tensor<T>& vb = t.value(ib);
          if (auto* ga = t.grad_for(ia)) for (std::size_t i = 0; i < n; ++i) (*ga)[i] += g[i] / vb[i];
          if (auto* gb = t.grad_for(ib)) {
            for (std::size_t i = 0; i < n; ++i) (*gb)[i] -= g[i] * va[i] / (vb[i] * vb[i]);
          }
        });
    }
  }

  const NodeId ia = a.id();
  switch (kind) {
    case Elementwise::Abs:
      for (std::size_t i = 0; i < n; ++i) y[i] = std::abs(x[i]);
      return tape.record("abs", std::move(out), {a}, [ia, n](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T>& va = t.value(ia);
        auto* ga = t.grad_for(ia);
        for (std::size_t i = 0; i < n; ++i) (*ga)[i] += g[i] * detail::sign(va[i]);
      });
    case Elementwise::Sigmoid:
      if (!av.all_finite()) throw NumericError("sigmoid: non-finite input");
      for (std::size_t i = 0; i < n; ++i) y[i] = detail::sigmoid(x[i]);
      return tape.record("sigmoid", std::move(out), {a}, [ia, n](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T>& va = t.value(ia);
        auto* ga = t.grad_for(ia);
        for (std::size_t i = 0; i < n; ++i) {
          const T s = detail::sigmoid(va[i]);
          (*ga)[i] += g[i] * s * (T(1) - s);
        }
      });
    case Elementwise::Elu:
      if (!av.all_finite()) throw NumericError("elu: non-finite input");
      for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : std::expm1(x[i]);
      return tape.record("elu", std::move(out), {a}, [ia, n](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T>& va = t.value(ia);
        auto* ga = t.grad_for(ia);
        for (std::size_t i = 0; i < n; ++i) (*ga)[i] += va[i] > T(0) ? g[i] : g[i] * std::exp(va[i]);
      });
    case Elementwise::Scale:
      for (std::size_t i = 0; i < n; ++i) y[i] = constant * x[i];
      return tape.record("scale", std::move(out), {a}, [ia, n, constant](Tape<T>& t, const Tensor<T>& g) {
        auto* ga = t.grad_for(ia);
        for (std::size_t i = 0; i < n; ++i) (*ga)[i] += constant * g[i];
      });
    case Elementwise::Offset:
      for (std::size_t i = 0; i < n; ++i) y[i] = x[i] + constant;
      return tape.record("offset", std::move(out), {a}, [ia, n](Tape<T>& t, const Tensor<T>& g) {
        auto* ga = t.grad_for(ia);
        for (std::size_t i = 0; i < n; ++i) (*ga)[i] += g[i];
      });
    default:
      throw ShapeError("elementwise: unary operation given a second operand");
  }
}

template <typename T>
Var<T> operator+(const Var<T>& a, const Var<T>& b) { return elementwise(Elementwise::Add, a, b); }
template <typename T>
Var<T> operator-(const Var<T>& a, const Var<T>& b) { return elementwise(Elementwise::Sub, a, b); }
template <typename T>
Var<T> operator*(const Var<T>& a, const Var<T>& b) { return elementwise(Elementwise::Mul, a, b); }
template <typename T>
Var<T> operator/(const Var<T>& a, const Var<T>& b) { return elementwise(Elementwise::Div, a, b); }
template <typename T>
Var<T> operator*(T c, const Var<T>& a) { return elementwise(Elementwise::Scale, a, Var<T>{}, c); }
template <typename T>
Var<T> operator+(const Var<T>& a, T c) { return elementwise(Elementwise::Offset, a, Var<T>{}, c); }

template <typename T>
Var<T> abs(const Var<T>& a) { return elementwise(Elementwise::Abs, a); }
template <typename T>
Var<T> sigmoid(const Var<T>& a) { return elementwise(Elementwise::Sigmoid, a); }
template <typename T>
Var<T> elu(const Var<T>& a) { return elementwise(Elementwise::Elu, a); }
template <typename T>
Var<T> scale(const Var<T>& a, T c) { return elementwise(Elementwise::Scale, a, Var<T>{}, c); }
template <typename T>
Var<T> offset(const Var<T>& a, T c) { return elementwise(Elementwise::Offset, a, Var<T>{}, c); }

enum class Reduction { Mean, Sum };

/// Reduces every element to a [1,1,1,1] tensor.
template <typename T>
Var<T> reduce(Reduction kind, const Var<T>& t) {
  const Tensor<T>& v = t.value();
  if (v.empty()) throw ShapeError("reduce: empty tensor " + v.shape().str());
  double acc = 0.0;
  for (T x : v.data()) acc += static_cast<double>(x);
  const std::size_t n = v.size();
  const T factor = kind == Reduction::Mean ? T(1) / static_cast<T>(n) : T(1);
  if (kind == Reduction::Mean) acc /= static_cast<double>(n);
  const NodeId it = t.id();
  return t.tape().record(kind == Reduction::Mean ? "mean" : "sum", Tensor<T>::scalar(static_cast<T>(acc)), {t},
                         [it, n, factor](Tape<T>& tape, const Tensor<T>& g) {
                           auto* gt = tape.grad_for(it);
                           const T gv = g[0] * factor;
                           for (std::size_t i = 0; i < n; ++i) (*gt)[i] += gv;
                         });
}

template <typename T>
Var<T> mean(const Var<T>& t) { return reduce(Reduction::Mean, t); }
template <typename T>
Var<T> sum(const Var<T>& t) { return reduce(Reduction::Sum, t); }

/// Concatenates along the channel axis, preserving input order.
template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  Shape s = parts.front().shape();
  s.c = 0;
  for (const auto& p : parts) {
    const Shape& ps = p.shape();
    if (ps.n != s.n) throw ShapeError("concat_channels: batch mismatch (" + ps.str() + ")");
    if (ps.h != s.h) throw ShapeError("concat_channels: height mismatch (" + ps.str() + ")");
    if (ps.w != s.w) throw ShapeError("concat_channels: width mismatch (" + ps.str() + ")");
    s.c += ps.c;
  }
  if (parts.size() == 1) {
    const NodeId id = parts.front().id();
    return parts.front().tape().record("concat", parts.front().value(), parts, [id](Tape<T>& t, const Tensor<T>& g) {
      auto* gi = t.grad_for(id);
      for (std::size_t i = 0; i < g.size(); ++i) (*gi)[i] += g[i];
    });
  }
  Tensor<T> out(s);
  const std::size_t plane = s.plane();
  std::vector<NodeId> ids;
  std::vector<int> channels;
  for (int n = 0; n < s.n; ++n) {
    T* dst = out.data().data() + static_cast<std::size_t>(n) * s.c * plane;
    for (const auto& p : parts) {
      const std::size_t block = static_cast<std::size_t>(p.shape().c) * plane;
      const T* src = p.value().data().data() + static_cast<std::size_t>(n) * block;
      std::copy(src, src + block, dst);
      dst += block;
    }
  }
  for (const auto& p : parts) {
    ids.push_back(p.id());
    channels.push_back(p.shape().c);
  }
  return parts.front().tape().record("concat", std::move(out), parts,
                                     [ids, channels, s, plane](Tape<T>& t, const Tensor<T>& g) {
                                       for (int n = 0; n < s.n; ++n) {
                                         const T* src = g.data().data() + static_cast<std::size_t>(n) * s.c * plane;
                                         for (std::size_t k = 0; k < ids.size(); ++k) {
                                           const std::size_t block = static_cast<std::size_t>(channels[k]) * plane;
                                           if (auto* gk = t.grad_for(ids[k])) {
                                             T* dst = gk->data().data() + static_cast<std::size_t>(n) * block;
                                             for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
                                           }
                                           src += block;
                                         }
                                       }
                                     });
}

namespace detail {

struct ConvGeometry {
  int cin, kh, kw, stride, pad, h, w, ho, wo;
  std::size_t rows() const { return static_cast<std::size_t>(cin) * kh * kw; }
  std::size_t cols() const { return static_cast<std::size_t>(ho) * wo; }
};

template <typename T>
void im2col(const T* img, const ConvGeometry& g, T* col) {
  for (int c = 0; c < g.cin; ++c) {
    for (int ky = 0; ky < g.kh; ++ky) {
      for (int kx = 0; kx < g.kw; ++kx) {
        T* dst = col + ((static_cast<std::size_t>(c) * g.kh + ky) * g.kw + kx) * g.cols();
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          T* drow = dst + static_cast<std::size_t>(oy) * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(drow, drow + g.wo, T(0));
            continue;
          }
          const T* srow = img + (static_cast<std::size_t>(c) * g.h + iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            drow[ox] = (ix >= 0 && ix < g.w) ? srow[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* img) {
  for (int c = 0; c < g.cin; ++c) {
    for (int ky = 0; ky < g.kh; ++ky) {
      for (int kx = 0; kx < g.kw; ++kx) {
        const T* src = col + ((static_cast<std::size_t>(c) * g.kh + ky) * g.kw + kx) * g.cols();
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          const T* srow = src + static_cast<std::size_t>(oy) * g.wo;
          T* irow = img + (static_cast<std::size_t>(c) * g.h + iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.w) irow[ix] += srow[ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// 2-D cross-correlation with zero padding.
/// weight: [Cout, Cin, kh, kw], bias: [1, Cout, 1, 1] (any shape with Cout values).
template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& weight, const Var<T>& bias, int stride, int padding) {
  const Shape& is = input.shape();
  const Shape& ws = weight.shape();
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1, got " + std::to_string(stride));
  if (padding < 0) throw ShapeError("conv2d: padding must be >= 0, got " + std::to_string(padding));
  if (is.c != ws.c) {
    throw ShapeError("conv2d: input channels " + std::to_string(is.c) + " != weight Cin " + std::to_string(ws.c));
  }
  if (bias.value().size() != static_cast<std::size_t>(ws.n)) {
    throw ShapeError("conv2d: bias has " + std::to_string(bias.value().size()) + " values, expected Cout " +
                     std::to_string(ws.n));
  }
  const int ho = (is.h + 2 * padding - ws.h) / stride + 1;
  const int wo = (is.w + 2 * padding - ws.w) / stride + 1;
  if (is.h + 2 * padding < ws.h) throw ShapeError("conv2d: kernel height exceeds padded input height");
  if (is.w + 2 * padding < ws.w) throw ShapeError("conv2d: kernel width exceeds padded input width");

  const detail::ConvGeometry geo{is.c, ws.h, ws.w, stride, padding, is.h, is.w, ho, wo};
  const int cout = ws.n;
  const std::size_t K = geo.rows(), P = geo.cols();
  using Mat = detail::RowMatrix<T>;
  using MapC = Eigen::Map<const Mat>;
  using Map = Eigen::Map<Mat>;

  Tensor<T> out(Shape{is.n, cout, ho, wo});
  // im2col buffers are kept for the backward pass
  auto cols = std::make_shared<AlignedVector<T>>(static_cast<std::size_t>(is.n) * K * P);
  MapC wmat(weight.value().data().data(), cout, static_cast<Eigen::Index>(K));
  const T* bv = bias.value().data().data();
  for (int n = 0; n < is.n; ++n) {
    T* col = cols->data() + static_cast<std::size_t>(n) * K * P;
    detail::im2col(input.value().data().data() + static_cast<std::size_t>(n) * is.c * is.plane(), geo, col);
    Map o(out.data().data() + static_cast<std::size_t>(n) * cout * P, cout, static_cast<Eigen::Index>(P));
    o.noalias() = wmat * MapC(col, static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(P));
    for (int co = 0; co < cout; ++co) o.row(co).array() += bv[co];
  }

  const NodeId ii = input.id(), iw = weight.id(), ib = bias.id();
  const int batch = is.n;
  const std::size_t in_stride = static_cast<std::size_t>(is.c) * is.plane();
  return input.tape().record(
      "conv2d", std::move(out), {input, weight, bias},
      [=](Tape<T>& t, const Tensor<T>& g) {
        const auto Ki = static_cast<Eigen::Index>(K), Pi = static_cast<Eigen::Index>(P);
        auto* gw = t.grad_for(iw);
        auto* gb = t.grad_for(ib);
        auto* gi = t.grad_for(ii);
        AlignedVector<T> dcol(gi ? K * P : 0);
        for (int n = 0; n < batch; ++n) {
          MapC go(g.data().data() + static_cast<std::size_t>(n) * cout * P, cout, Pi);
          const T* col = cols->data() + static_cast<std::size_t>(n) * K * P;
          if (gw) {
            Map dw(gw->data().data(), cout, Ki);
            dw.noalias() += go * MapC(col, Ki, Pi).transpose();
          }
          if (gb) {
            for (int co = 0; co < cout; ++co) (*gb)[co] += go.row(co).sum();
          }
          if (gi) {
            MapC wm(t.value(iw).data().data(), cout, Ki);
            Map dc(dcol.data(), Ki, Pi);
            dc.noalias() = wm.transpose() * go;
            detail::col2im_add(dcol.data(), geo, gi->data().data() + static_cast<std::size_t>(n) * in_stride);
          }
        }
      });
}

}  // namespace siamdepth
