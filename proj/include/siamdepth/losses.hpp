#pragma once

#include <array>
#include <string>
#include <vector>

#include "siamdepth/image_ops.hpp"

namespace siamdepth {

/// Weights of the per-scale loss and the SSIM constants of the image loss.
struct LossWeights {
  double alpha_im = 1.0;
  double alpha_tv = 0.001;
  double alpha_lr = 1.0;
  double alpha_ssim_mix = 0.85;
  double c1 = 0.01 * 0.01;
  double c2 = 0.03 * 0.03;
  double ssim_sigma = 1.5;
  int ssim_radius = 3;

  void validate() const {
    if (alpha_im < 0 || alpha_tv < 0 || alpha_lr < 0) throw ConfigError("loss weights must be >= 0");
    if (alpha_ssim_mix < 0 || alpha_ssim_mix > 1) throw ConfigError("alpha_ssim_mix must lie in [0, 1]");
    if (!(c1 > 0) || !(c2 > 0)) throw ConfigError("SSIM constants c1, c2 must be > 0");
    if (!(ssim_sigma > 0)) throw ConfigError("ssim_sigma must be > 0");
    if (ssim_radius < 1) throw ConfigError("ssim_radius must be >= 1");
  }
};

/// Per-pixel SSIM with Gaussian-weighted local moments.
template <typename T>
Var<T> ssim_map(const Var<T>& x, const Var<T>& y, const LossWeights& w) {
  detail::require_same_shape("ssim_map", x.shape(), y.shape());
  const T sigma = static_cast<T>(w.ssim_sigma);
  const int r = w.ssim_radius;
  const T c1 = static_cast<T>(w.c1), c2 = static_cast<T>(w.c2);
  const Var<T> mu_x = gaussian_blur(x, sigma, r);
  const Var<T> mu_y = gaussian_blur(y, sigma, r);
  const Var<T> mu_xx = mu_x * mu_x;
  const Var<T> mu_yy = mu_y * mu_y;
  const Var<T> mu_xy = mu_x * mu_y;
  const Var<T> var_x = gaussian_blur(x * x, sigma, r) - mu_xx;
  const Var<T> var_y = gaussian_blur(y * y, sigma, r) - mu_yy;
  const Var<T> cov = gaussian_blur(x * y, sigma, r) - mu_xy;
  const Var<T> num = offset(scale(mu_xy, T(2)), c1) * offset(scale(cov, T(2)), c2);
  const Var<T> den = offset(mu_xx + mu_yy, c1) * offset(var_x + var_y, c2);
  return num / den;
}

/// Mean over pixels and channels of a*(1-SSIM)/2 + (1-a)*|target - reconstruction|.
template <typename T>
Var<T> image_loss(const Var<T>& target, const Var<T>& reconstruction, const LossWeights& w) {
  detail::require_same_shape("image_loss", target.shape(), reconstruction.shape());
  const T a = static_cast<T>(w.alpha_ssim_mix);
  const Var<T> l1 = abs(target - reconstruction);
  if (a == T(0)) return mean(l1);
  const Var<T> dssim = offset(scale(ssim_map(target, reconstruction, w), T(-0.5)), T(0.5));
  if (a == T(1)) return mean(dssim);
  return mean(scale(dssim, a) + scale(l1, T(1) - a));
}

enum class Side { Left, Right };

/// Mean |d_own - d_other sampled through d_own|. The left map looks up the
/// right one at j - d_l*W; the right map looks up the left one at j + d_r*W.
template <typename T>
Var<T> lr_consistency_loss(const Var<T>& d_own, const Var<T>& d_other, Side side) {
  detail::require_same_shape("lr_consistency_loss", d_own.shape(), d_other.shape());
  const auto dir = side == Side::Left ? WarpDirection::RightToLeft : WarpDirection::LeftToRight;
  return mean(abs(d_own - warp_horizontal(d_other, d_own, dir)));
}

/// Sum of absolute vertical and horizontal neighbour differences, divided by
/// the number of pixels (N*H*W for single-channel maps).
template <typename T>
Var<T> tv_loss(const Var<T>& d) {
  const Shape& s = d.shape();
  if (s.h < 2 || s.w < 2) throw ShapeError("tv_loss: needs H >= 2 and W >= 2, got " + s.str());
  const Tensor<T>& v = d.value();
  double acc = 0.0;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) {
          const T here = v(n, c, y, x);
          if (y + 1 < s.h) acc += std::abs(static_cast<double>(v(n, c, y + 1, x) - here));
          if (x + 1 < s.w) acc += std::abs(static_cast<double>(v(n, c, y, x + 1) - here));
        }
  const double count = static_cast<double>(s.numel());
  const NodeId id = d.id();
  return d.tape().record("tv_loss", Tensor<T>::scalar(static_cast<T>(acc / count)), {d},
                         [id, s, count](Tape<T>& t, const Tensor<T>& g) {
                           const Tensor<T>& v = t.value(id);
                           auto* gd = t.grad_for(id);
                           const T k = g[0] / static_cast<T>(count);
                           for (int n = 0; n < s.n; ++n)
                             for (int c = 0; c < s.c; ++c)
                               for (int y = 0; y < s.h; ++y)
                                 for (int x = 0; x < s.w; ++x) {
                                   const T here = v(n, c, y, x);
                                   if (y + 1 < s.h) {
                                     const T sg = k * detail::sign(v(n, c, y + 1, x) - here);
                                     (*gd)(n, c, y + 1, x) += sg;
                                     (*gd)(n, c, y, x) -= sg;
                                   }
                                   if (x + 1 < s.w) {
                                     const T sg = k * detail::sign(v(n, c, y, x + 1) - here);
                                     (*gd)(n, c, y, x + 1) += sg;
                                     (*gd)(n, c, y, x) -= sg;
                                   }
                                 }
                         });
}

/// The six terms of one scale and their weighted combination.
template <typename T>
struct ScaleLossBreakdown {
  Var<T> im_l, im_r, tv_l, tv_r, lr_l, lr_r;
  Var<T> combined;

  /// Scalar values in the order im_l, im_r, tv_l, tv_r, lr_l, lr_r.
  std::array<T, 6> terms() const {
    return {im_l.value().item(), im_r.value().item(), tv_l.value().item(),
            tv_r.value().item(), lr_l.value().item(), lr_r.value().item()};
  }
};

/// Combines the six terms exactly as scale_loss does: weights applied to the
/// left+right pair sums, pairs added in im, tv, lr order.
template <typename T>
T combine_scale_terms(const std::array<T, 6>& t, const LossWeights& w) {
  const T im = static_cast<T>(w.alpha_im) * (t[0] + t[1]);
  const T tv = static_cast<T>(w.alpha_tv) * (t[2] + t[3]);
  const T lr = static_cast<T>(w.alpha_lr) * (t[4] + t[5]);
  return (im + tv) + lr;
}

/// Single-scale loss. The left view is reconstructed from the right image with
/// d_l, the right view from the left image with d_r.
template <typename T>
ScaleLossBreakdown<T> scale_loss(const Var<T>& img_l, const Var<T>& img_r, const Var<T>& d_l, const Var<T>& d_r,
                                 const LossWeights& w) {
  detail::require_same_shape("scale_loss", img_l.shape(), img_r.shape());
  detail::require_same_shape("scale_loss", d_l.shape(), d_r.shape());
  ScaleLossBreakdown<T> b;
  const Var<T> recon_l = warp_horizontal(img_r, d_l, WarpDirection::RightToLeft);
  const Var<T> recon_r = warp_horizontal(img_l, d_r, WarpDirection::LeftToRight);
  b.im_l = image_loss(img_l, recon_l, w);
  b.im_r = image_loss(img_r, recon_r, w);
  b.tv_l = tv_loss(d_l);
  b.tv_r = tv_loss(d_r);
  b.lr_l = lr_consistency_loss(d_l, d_r, Side::Left);
  b.lr_r = lr_consistency_loss(d_r, d_l, Side::Right);
  const Var<T> im = scale(b.im_l + b.im_r, static_cast<T>(w.alpha_im));
  const Var<T> tv = scale(b.tv_l + b.tv_r, static_cast<T>(w.alpha_tv));
  const Var<T> lr = scale(b.lr_l + b.lr_r, static_cast<T>(w.alpha_lr));
  b.combined = (im + tv) + lr;
  return b;
}

inline constexpr int kNumScales = 4;

/// Plain sum of the per-scale losses.
template <typename T>
Var<T> total_loss(const std::vector<ScaleLossBreakdown<T>>& scales) {
  if (scales.size() != kNumScales) {
    throw ShapeError("total_loss: expected " + std::to_string(kNumScales) + " scales, got " +
                     std::to_string(scales.size()));
  }
  Var<T> acc = scales[0].combined;
  for (std::size_t s = 1; s < scales.size(); ++s) acc = acc + scales[s].combined;
  return acc;
}

/// Reference images for scales 1..4: the input followed by repeated 2x2 mean pooling.
template <typename T>
std::vector<Var<T>> image_pyramid(const Var<T>& image, int levels = kNumScales) {
  std::vector<Var<T>> out{image};
  for (int s = 1; s < levels; ++s) out.push_back(downsample2x(out.back()));
  return out;
}

}  // namespace siamdepth
