#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "siamdepth/image_ops.hpp"
#include "siamdepth/losses.hpp"
#include "siamdepth/random.hpp"

namespace siamdepth {

/// Encoder-decoder layout. The encoder has one stride-2 convolution per
/// entry of encoder_channels; decoder level k works at 1/2^(k-1) resolution
/// and the four finest levels carry a disparity head.
struct NetworkSpec {
  int input_channels = 3;
  std::vector<int> encoder_channels{16, 32, 64, 96, 128};
  std::vector<int> encoder_kernels{3, 3, 3, 3, 3};
  // 1x1 keeps the per-step output change of the wide decoder layers small
  // enough for Adam at lr 1e-3; the disparity heads are always 3x3
  int decoder_kernel = 1;
  double d_max = 0.3;
  int scales = kNumScales;

  int levels() const { return static_cast<int>(encoder_channels.size()); }

  /// Output width of decoder level k (1-based): the width of the encoder skip
  /// it merges with, or the first encoder width at full resolution.
  int decoder_channels(int k) const { return encoder_channels[std::max(k - 2, 0)]; }

  /// Input height and width must be multiples of this.
  int size_multiple() const { return 1 << levels(); }

  void validate() const {
    if (scales != kNumScales) throw ConfigError("network scales must be 4");
    if (levels() < scales + 1) throw ConfigError("encoder_channels needs at least scales + 1 entries");
    if (encoder_kernels.size() != encoder_channels.size()) {
      throw ConfigError("encoder_kernels must have one entry per encoder level");
    }
    for (int c : encoder_channels)
      if (c < 1) throw ConfigError("encoder channel counts must be >= 1");
    for (int k : encoder_kernels)
      if (k < 1 || k % 2 == 0) throw ConfigError("encoder kernels must be odd and >= 1");
    if (decoder_kernel < 1 || decoder_kernel % 2 == 0) throw ConfigError("decoder_kernel must be odd and >= 1");
    if (input_channels < 1) throw ConfigError("input_channels must be >= 1");
    if (!(d_max > 0.0 && d_max < 1.0)) throw ConfigError("d_max must lie in (0, 1)");
  }
};

/// A network specification and the weights that realise it.
template <typename T>
struct Model {
  NetworkSpec spec;
  ParameterSet<T> params;
};

/// Disparity maps for scales 1..4 (index 0 is full resolution), width-fraction units.
template <typename T>
using MultiScaleDisparity = std::array<Var<T>, kNumScales>;

template <typename T>
struct SiameseOutput {
  MultiScaleDisparity<T> left;
  MultiScaleDisparity<T> right;  // already mirrored back into right-image coordinates
};

inline constexpr int kHeadKernel = 3;

namespace detail {

template <typename T>
void add_conv(ParameterSet<T>& params, Rng& rng, const std::string& name, int cin, int cout, int k) {
  const int fan_in = cin * k * k;
  const double std_dev = std::sqrt(2.0 / fan_in);
  Tensor<T> w(Shape{cout, cin, k, k});
  for (auto& v : w.storage()) v = static_cast<T>(rng.normal() * std_dev);
  params.add(name + ".weight", std::move(w));
  params.add(name + ".bias", Tensor<T>(Shape{1, cout, 1, 1}));
}

template <typename T>
Var<T> conv_layer(Tape<T>& tape, const ParameterSet<T>& params, const std::string& name, const Var<T>& x,
                  int stride) {
  const Parameter<T>& w = params.at(name + ".weight");
  const Parameter<T>& b = params.at(name + ".bias");
  return conv2d(x, tape.parameter(w), tape.parameter(b), stride, w.value.shape().h / 2);
}

inline std::string enc_name(int k) { return "enc" + std::to_string(k); }
inline std::string dec_name(int k) { return "dec" + std::to_string(k); }
inline std::string disp_name(int k) { return "disp" + std::to_string(k); }

}  // namespace detail

/// He-initialised weights, zero biases; deterministic in `seed`.
template <typename T>
Model<T> init_params(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  Model<T> m{spec, {}};
  Rng rng(seed);
  const int L = spec.levels();
  int cin = spec.input_channels;
  for (int k = 1; k <= L; ++k) {
    detail::add_conv(m.params, rng, detail::enc_name(k), cin, spec.encoder_channels[k - 1],
                     spec.encoder_kernels[k - 1]);
    cin = spec.encoder_channels[k - 1];
  }
  int below = spec.encoder_channels[L - 1];
  for (int k = L; k >= 1; --k) {
    const int skip = k >= 2 ? spec.encoder_channels[k - 2] : spec.input_channels;
    const int coarser_disp = k < spec.scales ? 1 : 0;
    const int out = spec.decoder_channels(k);
    detail::add_conv(m.params, rng, detail::dec_name(k), below + skip + coarser_disp, out, spec.decoder_kernel);
    if (k <= spec.scales) detail::add_conv(m.params, rng, detail::disp_name(k), out, 1, kHeadKernel);
    below = out;
  }
  return m;
}

/// One branch: left-view disparity at four scales from a single image.
template <typename T>
MultiScaleDisparity<T> forward_single(const Model<T>& model, const Var<T>& image) {
  const NetworkSpec& spec = model.spec;
  const Shape& s = image.shape();
  const int mult = spec.size_multiple();
  if (s.c != spec.input_channels) {
    throw ShapeError("forward_single: expected " + std::to_string(spec.input_channels) + " channels, got " + s.str());
  }
  if (s.h % mult != 0 || s.w % mult != 0 || s.h == 0 || s.w == 0) {
    throw ShapeError("forward_single: image size " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                     " is not divisible by " + std::to_string(mult));
  }
  Tape<T>& tape = image.tape();
  const auto& params = model.params;
  const int L = spec.levels();

  std::vector<Var<T>> enc{image};
  for (int k = 1; k <= L; ++k) enc.push_back(elu(detail::conv_layer(tape, params, detail::enc_name(k), enc.back(), 2)));

  MultiScaleDisparity<T> disp;
  Var<T> x = enc[L];
  Var<T> coarser;
  const T d_max = static_cast<T>(spec.d_max);
  for (int k = L; k >= 1; --k) {
    std::vector<Var<T>> parts{upsample2x_nearest(x), enc[k - 1]};
    if (coarser.valid()) parts.push_back(upsample2x_nearest(coarser));
    x = elu(detail::conv_layer(tape, params, detail::dec_name(k), concat_channels(parts), 1));
    if (k <= spec.scales) {
      coarser = scale(sigmoid(detail::conv_layer(tape, params, detail::disp_name(k), x, 1)), d_max);
      disp[k - 1] = coarser;
    }
  }
  return disp;
}

/// Siamese pass with shared weights: the left branch sees I_l, the right
/// branch sees m(I_r) and its outputs are mirrored back, i.e. f' = m o f o m.
template <typename T>
SiameseOutput<T> forward_siamese(const Model<T>& model, const Var<T>& img_l, const Var<T>& img_r) {
  detail::require_same_shape("forward_siamese", img_l.shape(), img_r.shape());
  SiameseOutput<T> out;
  out.left = forward_single(model, img_l);
  const auto mirrored = forward_single(model, mirror(img_r));
  for (int s = 0; s < kNumScales; ++s) out.right[s] = mirror(mirrored[s]);
  return out;
}

/// Test-time entry point: plain values out, no right image involved.
template <typename T>
std::array<Tensor<T>, kNumScales> infer_mono(const Model<T>& model, const Tensor<T>& image) {
  Tape<T> tape;
  const auto d = forward_single(model, tape.constant(image));
  std::array<Tensor<T>, kNumScales> out;
  for (int s = 0; s < kNumScales; ++s) out[s] = d[s].value();
  return out;
}

}  // namespace siamdepth
