#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "siamdepth/losses.hpp"
#include "siamdepth/network.hpp"
#include "siamdepth/synth.hpp"

namespace siamdepth {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double learning_rate = 1e-4;

  void validate() const {
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw ConfigError("Adam betas must lie in [0, 1)");
    if (!(epsilon > 0)) throw ConfigError("Adam epsilon must be > 0");
    if (!(learning_rate > 0)) throw ConfigError("learning_rate must be > 0");
  }
};

/// First and second moments, aligned with a ParameterSet.
template <typename T>
struct AdamState {
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::int64_t t = 0;

  static AdamState zeros(const ParameterSet<T>& params) {
    AdamState s;
    for (const auto& p : params) {
      s.m.emplace_back(p.value.shape());
      s.v.emplace_back(p.value.shape());
    }
    return s;
  }

  bool operator==(const AdamState&) const = default;
};

/// One bias-corrected Adam update of every trainable parameter.
template <typename T>
void adam_step(ParameterSet<T>& params, const Gradients<T>& grads, AdamState<T>& state, const AdamConfig& cfg) {
  if (grads.size() != params.size()) {
    throw ConfigError("adam_step: " + std::to_string(grads.size()) + " gradients for " +
                      std::to_string(params.size()) + " parameters");
  }
  if (state.m.empty() && state.t == 0) state = AdamState<T>::zeros(params);
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ConfigError("adam_step: optimizer state does not match the parameter set");
  }
  state.t += 1;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T step = static_cast<T>(cfg.learning_rate / c1);
  const T inv_c2 = static_cast<T>(1.0 / c2);
  const T eps = static_cast<T>(cfg.epsilon);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!p.trainable) continue;
    const Tensor<T>& g = grads[i];
    if (g.shape() != p.value.shape()) throw ConfigError("adam_step: missing gradient for '" + p.name + "'");
    Tensor<T>& m = state.m[i];
    Tensor<T>& v = state.v[i];
    if (m.shape() != p.value.shape() || v.shape() != p.value.shape()) {
      throw ConfigError("adam_step: moment shape mismatch for '" + p.name + "'");
    }
    for (std::size_t k = 0; k < g.size(); ++k) {
      m[k] = b1 * m[k] + (T(1) - b1) * g[k];
      v[k] = b2 * v[k] + (T(1) - b2) * g[k] * g[k];
      p.value[k] -= step * m[k] / (std::sqrt(v[k] * inv_c2) + eps);
    }
  }
}

struct AugmentConfig {
  std::array<double, 2> gamma_range{0.8, 1.2};
  std::array<double, 2> brightness_range{0.5, 2.0};
  std::array<double, 2> color_range{0.8, 1.2};
  bool enabled = true;

  void validate() const {
    for (const auto& r : {gamma_range, brightness_range, color_range}) {
      if (!(r[0] > 0) || !(r[1] >= r[0])) throw ConfigError("augmentation ranges must be positive and ordered");
    }
  }
};

/// Photometric transform x -> clamp(x^gamma * brightness * color[c], 0, 1).
struct PhotometricTransform {
  double gamma = 1.0;
  double brightness = 1.0;
  std::array<double, 3> color{1.0, 1.0, 1.0};

  template <typename T>
  Tensor<T> apply(const Tensor<T>& img) const {
    Tensor<T> out(img.shape());
    const Shape& s = img.shape();
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c) {
        const double k = brightness * color[c % 3];
        for (int y = 0; y < s.h; ++y) {
          const T* src = img.row(n, c, y);
          T* dst = out.row(n, c, y);
          for (int x = 0; x < s.w; ++x) {
            const double v = std::pow(static_cast<double>(src[x]), gamma) * k;
            dst[x] = static_cast<T>(std::clamp(v, 0.0, 1.0));
          }
        }
      }
    return out;
  }

  static PhotometricTransform draw(Rng& rng, const AugmentConfig& cfg) {
    PhotometricTransform t;
    t.gamma = rng.uniform(cfg.gamma_range[0], cfg.gamma_range[1]);
    t.brightness = rng.uniform(cfg.brightness_range[0], cfg.brightness_range[1]);
    for (auto& c : t.color) c = rng.uniform(cfg.color_range[0], cfg.color_range[1]);
    return t;
  }
};

/// Applies one random photometric transform to both views; ground truth is untouched.
template <typename T>
StereoSample<T> augment(const StereoSample<T>& pair, Rng& rng, const AugmentConfig& cfg) {
  if (!cfg.enabled) return pair;
  const auto tr = PhotometricTransform::draw(rng, cfg);
  StereoSample<T> out = pair;
  out.left = tr.apply(pair.left);
  out.right = tr.apply(pair.right);
  return out;
}

struct TrainConfig {
  int batch_size = 8;
  int steps = 1000;
  std::uint64_t seed = 0;
  LossWeights loss{};
  NetworkSpec network{};
  AdamConfig adam{};
  AugmentConfig augment{};
  bool shuffle = false;
  int checkpoint_every = 0;  // 0 disables periodic checkpoints

  void validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (steps < 1) throw ConfigError("steps must be >= 1");
    if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
    loss.validate();
    network.validate();
    adam.validate();
    augment.validate();
  }
};

/// One row of the loss trace: the total and, per scale, the six terms in
/// im_l, im_r, tv_l, tv_r, lr_l, lr_r order.
struct LossRecord {
  int step = 0;
  double total = 0;
  std::array<std::array<double, 6>, kNumScales> terms{};
};

/// Non-finite loss or gradient during training.
class TrainingAborted : public NumericError {
 public:
  TrainingAborted(int step, const std::string& what) : NumericError(what), step_(step) {}
  int step() const { return step_; }

 private:
  int step_;
};

template <typename T>
struct SiameseLoss {
  Var<T> total;
  std::vector<ScaleLossBreakdown<T>> scales;
  SiameseOutput<T> disparities;

  LossRecord record(int step) const {
    LossRecord r;
    r.step = step;
    r.total = static_cast<double>(total.value().item());
    for (int s = 0; s < kNumScales; ++s) {
      const auto t = scales[s].terms();
      for (int k = 0; k < 6; ++k) r.terms[s][k] = static_cast<double>(t[k]);
    }
    return r;
  }
};

/// Siamese forward pass followed by the four-scale loss.
template <typename T>
SiameseLoss<T> siamese_loss(const Model<T>& model, const Var<T>& img_l, const Var<T>& img_r, const LossWeights& w) {
  SiameseLoss<T> out;
  out.disparities = forward_siamese(model, img_l, img_r);
  const auto pyr_l = image_pyramid(img_l);
  const auto pyr_r = image_pyramid(img_r);
  for (int s = 0; s < kNumScales; ++s) {
    out.scales.push_back(scale_loss(pyr_l[s], pyr_r[s], out.disparities.left[s], out.disparities.right[s], w));
  }
  out.total = total_loss(out.scales);
  return out;
}

/// Dataset indices used at `step`: sequential wrap-around, or a seeded
/// per-epoch permutation when shuffling.
inline std::vector<std::size_t> batch_indices(std::size_t dataset_size, int batch_size, int step, bool shuffle,
                                              std::uint64_t seed) {
  std::vector<std::size_t> idx;
  std::vector<std::size_t> perm;
  std::uint64_t perm_epoch = UINT64_MAX;
  for (int k = 0; k < batch_size; ++k) {
    const std::uint64_t pos = static_cast<std::uint64_t>(step) * batch_size + k;
    if (!shuffle) {
      idx.push_back(pos % dataset_size);
      continue;
    }
    const std::uint64_t epoch = pos / dataset_size;
    if (epoch != perm_epoch) {
      perm.resize(dataset_size);
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      Rng rng = Rng::derive(seed ^ 0x5348554646ULL, epoch);
      for (std::size_t i = dataset_size; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
      perm_epoch = epoch;
    }
    idx.push_back(perm[pos % dataset_size]);
  }
  return idx;
}

template <typename T>
struct TrainState {
  Model<T> model;
  AdamState<T> adam;
  int step = 0;  // number of completed steps
};

/// Called after every completed step with the state and that step's losses.
template <typename T>
using StepCallback = std::function<void(const TrainState<T>&, const LossRecord&)>;

/// Runs optimisation steps state.step .. cfg.steps-1. Deterministic given the
/// config, the dataset and the starting state, so a run resumed from a saved
/// state reproduces an uninterrupted run bit for bit.
template <typename T>
void train_steps(const std::vector<StereoSample<T>>& dataset, const TrainConfig& cfg, TrainState<T>& state,
                 const StepCallback<T>& on_step = {}) {
  cfg.validate();
  if (dataset.empty()) throw ConfigError("train: empty dataset");
  const int mult = cfg.network.size_multiple();
  for (const auto& s : dataset) {
    const Shape& sh = s.left.shape();
    if (sh.h % mult != 0 || sh.w % mult != 0) {
      throw ConfigError("train: image size " + std::to_string(sh.h) + "x" + std::to_string(sh.w) +
                        " is not divisible by " + std::to_string(mult));
    }
  }
  if (state.adam.m.empty()) state.adam = AdamState<T>::zeros(state.model.params);

  for (int step = state.step; step < cfg.steps; ++step) {
    Rng rng = Rng::derive(cfg.seed, static_cast<std::uint64_t>(step));
    std::vector<Tensor<T>> lefts, rights;
    for (std::size_t i : batch_indices(dataset.size(), cfg.batch_size, step, cfg.shuffle, cfg.seed)) {
      StereoSample<T> s = augment(dataset[i], rng, cfg.augment);
      lefts.push_back(std::move(s.left));
      rights.push_back(std::move(s.right));
    }
    Tape<T> tape;
    tape.set_check_finite(false);
    const Var<T> il = tape.constant(stack_batch<T>(lefts));
    const Var<T> ir = tape.constant(stack_batch<T>(rights));
    std::optional<SiameseLoss<T>> maybe;
    try {
      maybe.emplace(siamese_loss(state.model, il, ir, cfg.loss));
    } catch (const NumericError& e) {
      throw TrainingAborted(step, "training aborted at step " + std::to_string(step) + ": " + e.what());
    }
    const SiameseLoss<T>& loss = *maybe;
    const LossRecord rec = loss.record(step);

    auto abort = [&](const std::string& what) {
      std::ostringstream os;
      os << "training aborted at step " << step << ": " << what << " (total " << rec.total;
      for (int s = 0; s < kNumScales; ++s) {
        os << "; s" << s + 1;
        for (double t : rec.terms[s]) os << ' ' << t;
      }
      os << ')';
      throw TrainingAborted(step, os.str());
    };
    if (!std::isfinite(rec.total)) abort("non-finite loss");
    tape.backward(loss.total);
    const Gradients<T> grads = tape.parameter_gradients(state.model.params);
    for (const auto& g : grads)
      if (!g.all_finite()) abort("non-finite gradient");
    adam_step(state.model.params, grads, state.adam, cfg.adam);
    state.step = step + 1;
    if (on_step) on_step(state, rec);
  }
}

/// Fresh model from cfg.network and cfg.seed, trained for cfg.steps steps.
template <typename T>
TrainState<T> train(const std::vector<StereoSample<T>>& dataset, const TrainConfig& cfg,
                    std::vector<LossRecord>* trace = nullptr, const StepCallback<T>& on_step = {}) {
  cfg.validate();
  TrainState<T> state{init_params<T>(cfg.network, cfg.seed), {}, 0};
  train_steps<T>(dataset, cfg, state, [&](const TrainState<T>& st, const LossRecord& r) {
    if (trace) trace->push_back(r);
    if (on_step) on_step(st, r);
  });
  return state;
}

}  // namespace siamdepth
