#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "siamdepth/io.hpp"
#include "siamdepth/postproc.hpp"
#include "siamdepth/training.hpp"

namespace siamdepth {

/// Everything a command needs, read from one flat JSON object with
/// snake_case keys. Missing keys keep their defaults; unknown keys are errors.
struct RunConfig {
  TrainConfig train{};
  SceneConfig scene{};
  BlendConfig blend{};
  std::string data_dir = "data";
  std::string checkpoint_dir = "checkpoints";
  std::string output_dir = "out";

  void validate() const {
    train.validate();
    scene.validate();
    blend.validate();
    for (const auto* p : {&data_dir, &checkpoint_dir, &output_dir}) {
      if (p->empty()) throw ConfigError("data_dir, checkpoint_dir and output_dir must not be empty");
    }
  }
};

namespace detail {

using nlohmann::json;

inline const char* scene_mode_name(SceneMode m) { return m == SceneMode::TwoLayer ? "two_layer" : "constant_plane"; }

inline void bind(json& j, const char* key, int& v, bool load) {
  if (!load) {
    j[key] = v;
    return;
  }
  const json& x = j.at(key);
  if (!x.is_number_integer()) throw ConfigError(std::string(key) + ": expected an integer");
  const auto i = x.get<std::int64_t>();
  if (i < INT32_MIN || i > INT32_MAX) throw ConfigError(std::string(key) + ": out of range");
  v = static_cast<int>(i);
}

inline void bind(json& j, const char* key, std::uint64_t& v, bool load) {
  if (!load) {
    j[key] = v;
    return;
  }
  const json& x = j.at(key);
  if (!x.is_number_unsigned()) throw ConfigError(std::string(key) + ": expected a non-negative integer");
  v = x.get<std::uint64_t>();
}

inline void bind(json& j, const char* key, double& v, bool load) {
  if (!load) {
    j[key] = v;
    return;
  }
  const json& x = j.at(key);
  if (!x.is_number()) throw ConfigError(std::string(key) + ": expected a number");
  v = x.get<double>();
}

inline void bind(json& j, const char* key, bool& v, bool load) {
  if (!load) {
    j[key] = v;
    return;
  }
  const json& x = j.at(key);
  if (!x.is_boolean()) throw ConfigError(std::string(key) + ": expected true or false");
  v = x.get<bool>();
}

inline void bind(json& j, const char* key, std::string& v, bool load) {
  if (!load) {
    j[key] = v;
    return;
  }
  const json& x = j.at(key);
  if (!x.is_string()) throw ConfigError(std::string(key) + ": expected a string");
  v = x.get<std::string>();
}

inline void bind(json& j, const char* key, std::vector<int>& v, bool load) {
  if (!load) {
    j[key] = v;
    return;
  }
  const json& x = j.at(key);
  if (!x.is_array()) throw ConfigError(std::string(key) + ": expected an array of integers");
  std::vector<int> out;
  for (const auto& e : x) {
    if (!e.is_number_integer()) throw ConfigError(std::string(key) + ": expected an array of integers");
    out.push_back(e.get<int>());
  }
  v = std::move(out);
}

inline void bind(json& j, const char* key, std::array<double, 2>& v, bool load) {
  if (!load) {
    j[key] = v;
    return;
  }
  const json& x = j.at(key);
  if (!x.is_array() || x.size() != 2 || !x[0].is_number() || !x[1].is_number()) {
    throw ConfigError(std::string(key) + ": expected [low, high]");
  }
  v = {x[0].get<double>(), x[1].get<double>()};
}

inline void bind(json& j, const char* key, SceneMode& v, bool load) {
  if (!load) {
    j[key] = scene_mode_name(v);
    return;
  }
  const json& x = j.at(key);
  const std::string s = x.is_string() ? x.get<std::string>() : "";
  if (s == "constant_plane") v = SceneMode::ConstantPlane;
  else if (s == "two_layer") v = SceneMode::TwoLayer;
  else throw ConfigError(std::string(key) + ": expected \"constant_plane\" or \"two_layer\"");
}

/// Calls f(key, member) for every configurable field, in document order.
template <typename C, typename F>
void for_each_field(C& c, F&& f) {
  TrainConfig& t = c.train;
  f("batch_size", t.batch_size);
  f("steps", t.steps);
  f("seed", t.seed);
  f("shuffle", t.shuffle);
  f("checkpoint_every", t.checkpoint_every);
  f("learning_rate", t.adam.learning_rate);
  f("beta1", t.adam.beta1);
  f("beta2", t.adam.beta2);
  f("epsilon", t.adam.epsilon);
  f("alpha_im", t.loss.alpha_im);
  f("alpha_tv", t.loss.alpha_tv);
  f("alpha_lr", t.loss.alpha_lr);
  f("alpha_ssim_mix", t.loss.alpha_ssim_mix);
  f("ssim_c1", t.loss.c1);
  f("ssim_c2", t.loss.c2);
  f("ssim_sigma", t.loss.ssim_sigma);
  f("ssim_radius", t.loss.ssim_radius);
  f("augment", t.augment.enabled);
  f("gamma_range", t.augment.gamma_range);
  f("brightness_range", t.augment.brightness_range);
  f("color_range", t.augment.color_range);
  f("encoder_channels", t.network.encoder_channels);
  f("encoder_kernels", t.network.encoder_kernels);
  f("decoder_kernel", t.network.decoder_kernel);
  f("d_max", t.network.d_max);
  f("scales", t.network.scales);
  SceneConfig& s = c.scene;
  f("height", s.height);
  f("width", s.width);
  f("disparity_px_min", s.disparity_px_min);
  f("disparity_px_max", s.disparity_px_max);
  f("texture_sigma", s.texture_sigma);
  f("texture_octaves", s.texture_octaves);
  f("octave_gain", s.octave_gain);
  f("perspective_texture", s.perspective_texture);
  f("perspective_power", s.perspective_power);
  f("scene_mode", s.mode);
  f("focal_px", s.calib.focal_px);
  f("baseline_m", s.calib.baseline_m);
  f("ramp_fraction", c.blend.ramp_fraction);
  f("data_dir", c.data_dir);
  f("checkpoint_dir", c.checkpoint_dir);
  f("output_dir", c.output_dir);
}

}  // namespace detail

inline nlohmann::json to_json(const RunConfig& cfg) {
  RunConfig copy = cfg;
  nlohmann::json j = nlohmann::json::object();
  detail::for_each_field(copy, [&](const char* key, auto& v) { detail::bind(j, key, v, false); });
  return j;
}

/// Parses and validates; every problem is a ConfigError naming the key.
inline RunConfig run_config_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ConfigError("run config must be a JSON object");
  RunConfig cfg;
  nlohmann::json j = doc;
  std::vector<std::string> known;
  detail::for_each_field(cfg, [&](const char* key, auto& v) {
    known.emplace_back(key);
    if (j.contains(key)) detail::bind(j, key, v, true);
  });
  for (const auto& [key, _] : doc.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ConfigError("run config: unknown key \"" + key + "\"");
    }
  }
  cfg.validate();
  return cfg;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  try {
    return run_config_from_json(doc);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace siamdepth
