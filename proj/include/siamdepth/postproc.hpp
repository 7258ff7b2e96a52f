#pragma once

#include <algorithm>
#include <vector>

#include "siamdepth/network.hpp"

namespace siamdepth {

struct BlendConfig {
  double ramp_fraction = 0.05;

  void validate() const {
    if (!(ramp_fraction > 0 && ramp_fraction < 0.5)) throw ConfigError("ramp_fraction must lie in (0, 0.5)");
  }
};

/// Weight of the mirrored estimate at column j: 1 at the left border falling
/// linearly to 0 at column ramp_fraction * W.
inline double left_ramp_weight(int j, int width, double ramp_fraction) {
  const double r = ramp_fraction * width;
  if (j >= r) return 0.0;
  return 1.0 - j / r;
}

/// Blends `d` (from the image) with `d_from_mirror` (from the mirrored image,
/// mirrored back): the left border comes from d_from_mirror, the right border
/// from d, the centre is the average.
template <typename T>
Tensor<T> mirror_blend(const Tensor<T>& d, const Tensor<T>& d_from_mirror, const BlendConfig& cfg) {
  cfg.validate();
  detail::require_same_shape("mirror_blend", d.shape(), d_from_mirror.shape());
  const Shape& s = d.shape();
  std::vector<T> wl(s.w), wr(s.w);
  for (int j = 0; j < s.w; ++j) {
    wl[j] = static_cast<T>(left_ramp_weight(j, s.w, cfg.ramp_fraction));
    wr[j] = static_cast<T>(left_ramp_weight(s.w - 1 - j, s.w, cfg.ramp_fraction));
  }
  Tensor<T> out(s);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h; ++y) {
        const T* a = d.row(n, c, y);
        const T* b = d_from_mirror.row(n, c, y);
        T* o = out.row(n, c, y);
        for (int j = 0; j < s.w; ++j) {
          const T mean = T(0.5) * (a[j] + b[j]);
          const T v = wl[j] * b[j] + wr[j] * a[j] + (T(1) - wl[j] - wr[j]) * mean;
          // rounding must not leave the interval spanned by the two estimates
          o[j] = std::clamp(v, std::min(a[j], b[j]), std::max(a[j], b[j]));
        }
      }
  return out;
}

/// Full-resolution disparity with mirror-blend post-processing.
template <typename T>
Tensor<T> infer_with_pp(const Model<T>& model, const Tensor<T>& image, const BlendConfig& cfg = {}) {
  const Tensor<T> d = infer_mono(model, image)[0];
  const Tensor<T> d_mirror = mirror(infer_mono(model, mirror(image))[0]);
  return mirror_blend(d, d_mirror, cfg);
}

}  // namespace siamdepth
