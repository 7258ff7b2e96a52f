#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "siamdepth/error.hpp"
#include "siamdepth/tensor.hpp"

namespace siamdepth {

struct CameraCalib {
  double focal_px = 74.2;  // KITTI-like 0.58 * 128
  double baseline_m = 0.54;

  void validate() const {
    if (!(focal_px > 0) || !(baseline_m > 0)) throw ConfigError("focal_px and baseline_m must be > 0");
  }
};

/// Pixel selection; a non-zero entry means "evaluate".
using Mask = std::vector<std::uint8_t>;

/// depth = focal * baseline / (d * width) for width-fraction disparities.
/// Pixels outside `mask` (when given) get depth 0.
template <typename T>
Tensor<T> disparity_to_depth(const Tensor<T>& disparity, const CameraCalib& calib, int width_px,
                             const Mask* mask = nullptr) {
  calib.validate();
  if (width_px <= 0) throw ConfigError("disparity_to_depth: width must be > 0");
  if (mask && mask->size() != disparity.size()) throw ShapeError("disparity_to_depth: mask size mismatch");
  Tensor<T> out(disparity.shape());
  const double fb = calib.focal_px * calib.baseline_m;
  for (std::size_t i = 0; i < disparity.size(); ++i) {
    if (mask && !(*mask)[i]) continue;
    const double d = static_cast<double>(disparity[i]) * width_px;
    if (!(d > 0)) throw NumericError("disparity_to_depth: non-positive disparity inside the evaluation mask");
    out[i] = static_cast<T>(fb / d);
  }
  return out;
}

/// Error and accuracy measures of the Eigen split protocol.
struct EigenMetrics {
  double abs_rel = 0, sq_rel = 0, rmse = 0, rmse_log = 0;
  double delta1 = 0, delta2 = 0, delta3 = 0;
};

/// Scale-invariant log error suite of the KITTI single-image benchmark.
/// silog, sq_rel_pct and abs_rel_pct are x100; irmse is in 1/km.
struct SilogMetrics {
  double silog = 0, sq_rel_pct = 0, abs_rel_pct = 0, irmse = 0;
};

/// Make3D C1 measures (ground truth <= 70 m).
struct Make3dMetrics {
  double sq_rel = 0, abs_rel = 0, rmse = 0, log10 = 0;
};

struct DepthMetrics {
  EigenMetrics eigen;
  SilogMetrics silog;
  Make3dMetrics make3d;
};

inline constexpr double kMinDepth = 1e-3;
inline constexpr double kMake3dMaxDepth = 70.0;

namespace detail {

inline void check_sizes(const char* op, std::span<const double> pred, std::span<const double> gt, const Mask* mask) {
  if (pred.size() != gt.size()) throw ShapeError(std::string(op) + ": prediction and ground truth sizes differ");
  if (mask && mask->size() != gt.size()) throw ShapeError(std::string(op) + ": mask size differs from ground truth");
}

}  // namespace detail

/// Both depths are clamped to [kMinDepth, cap_m] before comparison.
inline EigenMetrics eigen_metrics(std::span<const double> pred, std::span<const double> gt, const Mask& mask,
                                  double cap_m = 80.0) {
  detail::check_sizes("eigen_metrics", pred, gt, &mask);
  if (!(cap_m > kMinDepth)) throw ConfigError("eigen_metrics: cap must exceed the minimum depth");
  double abs_rel = 0, sq_rel = 0, sq = 0, sq_log = 0;
  std::size_t d1 = 0, d2 = 0, d3 = 0, n = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!mask[i]) continue;
    const double g = std::clamp(gt[i], kMinDepth, cap_m);
    const double p = std::clamp(pred[i], kMinDepth, cap_m);
    const double e = g - p;
    abs_rel += std::abs(e) / g;
    sq_rel += e * e / g;
    sq += e * e;
    const double le = std::log(g) - std::log(p);
    sq_log += le * le;
    const double ratio = std::max(p / g, g / p);
    d1 += ratio < 1.25;
    d2 += ratio < 1.25 * 1.25;
    d3 += ratio < 1.25 * 1.25 * 1.25;
    ++n;
  }
  if (n == 0) throw DataError("eigen_metrics: empty evaluation mask");
  const double inv = 1.0 / static_cast<double>(n);
  return {abs_rel * inv, sq_rel * inv, std::sqrt(sq * inv), std::sqrt(sq_log * inv),
          static_cast<double>(d1) * inv, static_cast<double>(d2) * inv, static_cast<double>(d3) * inv};
}

inline SilogMetrics silog_suite(std::span<const double> pred, std::span<const double> gt, const Mask& mask) {
  detail::check_sizes("silog_suite", pred, gt, &mask);
  double e_sum = 0, e_sq = 0, abs_rel = 0, sq_rel = 0, inv_sq = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!mask[i]) continue;
    const double g = gt[i], p = pred[i];
    if (!(g > 0) || !(p > 0)) throw NumericError("silog_suite: non-positive depth inside the mask");
    const double e = std::log(p) - std::log(g);
    e_sum += e;
    e_sq += e * e;
    abs_rel += std::abs(g - p) / g;
    sq_rel += (g - p) * (g - p) / g;
    const double di = 1.0 / g - 1.0 / p;
    inv_sq += di * di;
    ++n;
  }
  if (n == 0) throw DataError("silog_suite: empty evaluation mask");
  const double inv = 1.0 / static_cast<double>(n);
  const double mean_e = e_sum * inv;
  return {(e_sq * inv - mean_e * mean_e) * 100.0, sq_rel * inv * 100.0, abs_rel * inv * 100.0,
          std::sqrt(inv_sq * inv) * 1000.0};
}

/// Evaluates pixels with ground truth <= 70 m (and inside `mask` when given).
inline Make3dMetrics make3d_c1(std::span<const double> pred, std::span<const double> gt,
                               const Mask* mask = nullptr) {
  detail::check_sizes("make3d_c1", pred, gt, mask);
  double sq_rel = 0, abs_rel = 0, sq = 0, log10 = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (mask && !(*mask)[i]) continue;
    const double g = gt[i], p = pred[i];
    if (!(g > 0) || !(p > 0)) throw NumericError("make3d_c1: non-positive depth");
    if (g > kMake3dMaxDepth) continue;
    const double e = g - p;
    sq_rel += e * e / g;
    abs_rel += std::abs(e) / g;
    sq += e * e;
    log10 += std::abs(std::log10(g) - std::log10(p));
    ++n;
  }
  if (n == 0) throw DataError("make3d_c1: no ground truth within 70 m");
  const double inv = 1.0 / static_cast<double>(n);
  return {sq_rel * inv, abs_rel * inv, std::sqrt(sq * inv), log10 * inv};
}

/// Half-open pixel ranges of the Garg/Eigen evaluation crop.
struct CropRect {
  int row0, row1, col0, col1;
};

inline CropRect eigen_crop(int height, int width) {
  return {static_cast<int>(std::floor(0.40810811 * height)), static_cast<int>(std::floor(0.99189189 * height)),
          static_cast<int>(std::floor(0.03594771 * width)), static_cast<int>(std::floor(0.96405229 * width))};
}

/// Row-major H*W mask of the crop.
inline Mask eigen_crop_mask(int height, int width) {
  const CropRect r = eigen_crop(height, width);
  Mask m(static_cast<std::size_t>(height) * width, 0);
  for (int y = r.row0; y < r.row1; ++y)
    for (int x = r.col0; x < r.col1; ++x) m[static_cast<std::size_t>(y) * width + x] = 1;
  return m;
}

}  // namespace siamdepth
