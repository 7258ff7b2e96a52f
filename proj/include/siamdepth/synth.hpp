#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>

#include "siamdepth/image_ops.hpp"
#include "siamdepth/metrics.hpp"
#include "siamdepth/random.hpp"

namespace siamdepth {

enum class SceneMode { ConstantPlane, TwoLayer };

struct SceneConfig {
  int height = 64;
  int width = 128;
  double disparity_px_min = 2.0;
  double disparity_px_max = 8.0;
  /// Gaussian smoothing of the finest texture octave. With perspective
  /// scaling this is the value at the farthest surface (smallest disparity).
  double texture_sigma = 1.25;
  /// Number of noise octaves; octave o is smoothed with sigma * 2^o.
  int texture_octaves = 5;
  /// Amplitude ratio between successive octaves (> 1 favours coarse structure).
  double octave_gain = 2.0;
  /// Scale texture features with disparity, so nearer surfaces show coarser
  /// texture, as a fixed-size pattern does under perspective.
  bool perspective_texture = true;
  /// Texture scale goes as (d / reference)^power; above 1 exaggerates the cue.
  double perspective_power = 1.0;
  SceneMode mode = SceneMode::ConstantPlane;
  CameraCalib calib{};

  /// Disparity at which the texture has its base scale.
  double reference_disparity_px() const { return std::max(disparity_px_min, 1.0); }

  void validate() const {
    if (height < 2 || width < 2) throw ConfigError("scene height and width must be >= 2");
    if (!(disparity_px_min >= 0) || !(disparity_px_max >= disparity_px_min)) {
      throw ConfigError("scene disparity range must satisfy 0 <= min <= max");
    }
    if (!(disparity_px_max < width / 4.0)) throw ConfigError("scene disparity_px_max must be below width / 4");
    if (mode == SceneMode::TwoLayer && disparity_px_max - disparity_px_min < 2.0) {
      throw ConfigError("two-layer scenes need a disparity range of at least 2 px");
    }
    if (!(texture_sigma > 0)) throw ConfigError("texture_sigma must be > 0");
    if (texture_octaves < 1) throw ConfigError("texture_octaves must be >= 1");
    if (!(octave_gain > 0)) throw ConfigError("octave_gain must be > 0");
    if (!(perspective_power >= 0)) throw ConfigError("perspective_power must be >= 0");
    calib.validate();
  }
};

/// A rectified stereo pair in [0,1] with optional ground truth in left-image
/// coordinates (width-fraction units).
template <typename T>
struct StereoSample {
  Tensor<T> left;   // [1,3,H,W]
  Tensor<T> right;  // [1,3,H,W]
  std::optional<Tensor<T>> gt_disparity;  // [1,1,H,W]
  /// 1 where the left pixel is visible in the right view.
  std::optional<Tensor<T>> visibility;
  CameraCalib calib{};
  std::uint64_t seed = 0;
  double disparity_px = 0;     // d* (background disparity in two-layer mode)
  double foreground_px = 0;    // two-layer mode only
};

/// right(i, j) = bilinear(texture, i, j + d_px) with clamped coordinates, so left
/// pixel j corresponds to right pixel j - d_px.
template <typename T>
Tensor<T> exact_shift(const Tensor<T>& texture, double d_px) {
  const Shape& s = texture.shape();
  if (!(d_px >= 0) || !(d_px < s.w)) throw ConfigError("exact_shift: shift must lie in [0, W)");
  Tensor<T> out(s);
  for (int x = 0; x < s.w; ++x) {
    const auto smp = detail::line_sample(static_cast<T>(x + d_px), s.w);
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c)
        for (int y = 0; y < s.h; ++y) {
          const T* row = texture.row(n, c, y);
          out(n, c, y, x) = (T(1) - smp.a) * row[smp.x0] + smp.a * row[smp.x1];
        }
  }
  return out;
}

namespace detail {

/// Sum of smoothed uniform-noise octaves per channel, min-max normalised to [0,1].
template <typename T>
Tensor<T> smooth_texture(Rng& rng, int height, int width, double sigma, int octaves, double gain) {
  Tensor<double> acc(Shape{1, 3, height, width});
  for (int o = 0; o < octaves; ++o) {
    Tensor<double> noise(Shape{1, 3, height, width});
    for (auto& v : noise.storage()) v = rng.uniform();
    const double s = sigma * std::ldexp(1.0, o);
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * s)));
    Tensor<double> smooth = gaussian_blur(noise, s, radius);
    for (int c = 0; c < 3; ++c) {
      double mean = 0, sq = 0;
      const std::size_t plane = smooth.shape().plane();
      const double* p = smooth.row(0, c, 0);
      for (std::size_t i = 0; i < plane; ++i) mean += p[i];
      mean /= static_cast<double>(plane);
      for (std::size_t i = 0; i < plane; ++i) sq += (p[i] - mean) * (p[i] - mean);
      const double inv_std = std::pow(gain, o) / std::sqrt(std::max(sq / static_cast<double>(plane), 1e-300));
      double* a = acc.row(0, c, 0);
      for (std::size_t i = 0; i < plane; ++i) a[i] += (p[i] - mean) * inv_std;
    }
  }
  Tensor<T> out(acc.shape());
  for (int c = 0; c < 3; ++c) {
    const std::size_t plane = acc.shape().plane();
    const double* a = acc.row(0, c, 0);
    const auto [lo, hi] = std::minmax_element(a, a + plane);
    const double range = std::max(*hi - *lo, 1e-12);
    T* dst = out.row(0, c, 0);
    for (std::size_t i = 0; i < plane; ++i) dst[i] = static_cast<T>((a[i] - *lo) / range);
  }
  return out;
}

template <typename T>
Tensor<T> crop_width(const Tensor<T>& t, int width) {
  const Shape& s = t.shape();
  Tensor<T> out(Shape{s.n, s.c, s.h, width});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h; ++y) std::copy(t.row(n, c, y), t.row(n, c, y) + width, out.row(n, c, y));
  return out;
}

}  // namespace detail

/// Texture for a surface at `d_px` disparity. Generated wider than the image
/// so the right view has real content at its right border.
template <typename T>
Tensor<T> scene_texture(Rng& rng, const SceneConfig& cfg, double d_px) {
  const double sigma =
      cfg.perspective_texture
          ? cfg.texture_sigma * std::pow(std::max(d_px, 1.0) / cfg.reference_disparity_px(), cfg.perspective_power)
          : cfg.texture_sigma;
  const int margin = static_cast<int>(std::ceil(cfg.disparity_px_max)) + 2;
  return detail::smooth_texture<T>(rng, cfg.height, cfg.width + margin, sigma, cfg.texture_octaves,
                                     cfg.octave_gain);
}

/// Procedural stereo pair with exact ground truth; identical for identical seeds.
template <typename T>
StereoSample<T> generate_scene(std::uint64_t seed, const SceneConfig& cfg) {
  cfg.validate();
  Rng rng(seed);
  const int H = cfg.height, W = cfg.width;
  StereoSample<T> s;
  s.seed = seed;
  s.calib = cfg.calib;

  if (cfg.mode == SceneMode::ConstantPlane) {
    const double d = rng.uniform(cfg.disparity_px_min, cfg.disparity_px_max);
    const Tensor<T> tex = scene_texture<T>(rng, cfg, d);
    s.left = detail::crop_width(tex, W);
    s.right = detail::crop_width(exact_shift(tex, d), W);
    s.disparity_px = d;
    s.gt_disparity = Tensor<T>(Shape{1, 1, H, W}, static_cast<T>(d / W));
    Tensor<T> vis(Shape{1, 1, H, W}, T(1));
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W && x < d; ++x) vis(0, 0, y, x) = T(0);
    s.visibility = std::move(vis);
    return s;
  }

  // background plane plus a nearer rectangle; the right view is composed far to near
  const double mid = 0.5 * (cfg.disparity_px_min + cfg.disparity_px_max);
  const double d_bg = rng.uniform(cfg.disparity_px_min, std::max(cfg.disparity_px_min, mid - 1.0));
  const double d_fg = rng.uniform(d_bg + 2.0, std::max(d_bg + 2.0, cfg.disparity_px_max));
  const int rw = static_cast<int>(rng.uniform(W / 5.0, W / 3.0));
  const int rh = static_cast<int>(rng.uniform(H / 3.0, H / 1.5));
  const int x0 = static_cast<int>(rng.uniform(W / 8.0, W - rw - W / 8.0));
  const int y0 = static_cast<int>(rng.uniform(0.0, H - rh));
  const Tensor<T> bg = scene_texture<T>(rng, cfg, d_bg);
  const Tensor<T> fg = scene_texture<T>(rng, cfg, d_fg);
  const Tensor<T> bg_r = exact_shift(bg, d_bg);
  const Tensor<T> fg_r = exact_shift(fg, d_fg);

  auto in_rect_left = [&](int y, double x) { return y >= y0 && y < y0 + rh && x >= x0 && x < x0 + rw; };
  s.left = Tensor<T>(Shape{1, 3, H, W});
  s.right = Tensor<T>(Shape{1, 3, H, W});
  Tensor<T> gt(Shape{1, 1, H, W});
  Tensor<T> vis(Shape{1, 1, H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const bool fg_left = in_rect_left(y, x);
      // right pixel x shows the foreground point at left column x + d_fg
      const bool fg_right = in_rect_left(y, x + d_fg);
      for (int c = 0; c < 3; ++c) {
        s.left(0, c, y, x) = fg_left ? fg(0, c, y, x) : bg(0, c, y, x);
        s.right(0, c, y, x) = fg_right ? fg_r(0, c, y, x) : bg_r(0, c, y, x);
      }
      const double d = fg_left ? d_fg : d_bg;
      gt(0, 0, y, x) = static_cast<T>(d / W);
      const double xr = x - d;
      const bool occluded = !fg_left && in_rect_left(y, xr + d_fg);
      vis(0, 0, y, x) = (xr >= 0 && !occluded) ? T(1) : T(0);
    }
  s.gt_disparity = std::move(gt);
  s.visibility = std::move(vis);
  s.disparity_px = d_bg;
  s.foreground_px = d_fg;
  return s;
}

}  // namespace siamdepth
