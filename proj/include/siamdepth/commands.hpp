#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "siamdepth/config.hpp"
#include "siamdepth/io.hpp"
#include "siamdepth/metrics.hpp"
#include "siamdepth/postproc.hpp"
#include "siamdepth/synth.hpp"
#include "siamdepth/training.hpp"

// File-level commands behind the siamdepth tool. Each validates all of its
// inputs before it creates or overwrites anything.

namespace siamdepth {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr const char* kDisparityUnits = "width_fraction";

/// Shortest decimal form that reads back to the same double.
inline std::string format_number(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return ec == std::errc() ? std::string(buf, p) : std::string("nan");
}

inline json read_json(const fs::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

inline void write_json(const fs::path& path, const json& j) { write_file(path, j.dump(2) + "\n"); }

/// Sidecar next to a disparity PFM: same stem, ".json".
inline fs::path sidecar_path(const fs::path& pfm) { return fs::path(pfm).replace_extension(".json"); }

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw DataError("cannot create directory " + dir.string());
}

// ---------------------------------------------------------------------------
// gen-data

struct GenDataResult {
  fs::path manifest;
  int count = 0;
};

/// Writes `count` scenes as sample_NNNN_{left,right}.ppm, sample_NNNN.pfm
/// (ground truth) and sample_NNNN.json, plus calib.json and manifest.json.
inline GenDataResult cmd_gen_data(const RunConfig& cfg, int count, std::uint64_t seed, const fs::path& out_dir) {
  cfg.validate();
  if (count < 1) throw ConfigError("gen-data: count must be >= 1");
  ensure_dir(out_dir);

  json samples = json::array();
  for (int i = 0; i < count; ++i) {
    const std::uint64_t scene_seed = Rng::derive(seed, static_cast<std::uint64_t>(i)).next();
    const StereoSample<double> s = generate_scene<double>(scene_seed, cfg.scene);
    char stem[32];
    std::snprintf(stem, sizeof(stem), "sample_%04d", i);
    const std::string base(stem);
    write_ppm(out_dir / (base + "_left.ppm"), s.left);
    write_ppm(out_dir / (base + "_right.ppm"), s.right);
    write_pfm(out_dir / (base + ".pfm"), *s.gt_disparity);
    json meta = {{"seed", scene_seed},
                 {"disparity_px", s.disparity_px},
                 {"units", kDisparityUnits},
                 {"d_max", cfg.scene.disparity_px_max / cfg.scene.width},
                 {"scene_mode", detail::scene_mode_name(cfg.scene.mode)},
                 {"width", cfg.scene.width},
                 {"height", cfg.scene.height},
                 {"focal_px", s.calib.focal_px},
                 {"baseline_m", s.calib.baseline_m}};
    if (cfg.scene.mode == SceneMode::TwoLayer) meta["foreground_px"] = s.foreground_px;
    write_json(out_dir / (base + ".json"), meta);
    samples.push_back(
        {{"left", base + "_left.ppm"}, {"right", base + "_right.ppm"}, {"gt", base + ".pfm"}, {"meta", base + ".json"}});
  }
  write_json(out_dir / "calib.json", {{"focal_px", cfg.scene.calib.focal_px}, {"baseline_m", cfg.scene.calib.baseline_m}});
  const json manifest = {{"count", count}, {"seed", seed}, {"config", to_json(cfg)}, {"samples", samples}};
  write_json(out_dir / "manifest.json", manifest);
  return {out_dir / "manifest.json", count};
}

// ---------------------------------------------------------------------------
// train

/// Left/right images of every manifest entry, in manifest order.
inline std::vector<StereoSample<float>> load_dataset(const fs::path& data_dir) {
  const fs::path mpath = data_dir / "manifest.json";
  if (!fs::exists(mpath)) throw DataError("no dataset manifest at " + mpath.string());
  const json manifest = read_json(mpath);
  if (!manifest.contains("samples") || !manifest["samples"].is_array()) {
    throw DataError(mpath.string() + ": missing \"samples\" list");
  }
  std::vector<StereoSample<float>> out;
  for (const auto& e : manifest["samples"]) {
    if (!e.contains("left") || !e.contains("right")) throw DataError(mpath.string() + ": entry without left/right");
    StereoSample<float> s;
    s.left = read_ppm<float>(data_dir / e["left"].get<std::string>());
    s.right = read_ppm<float>(data_dir / e["right"].get<std::string>());
    if (s.left.shape() != s.right.shape()) {
      throw DataError("left and right images differ in size: " + e["left"].get<std::string>());
    }
    out.push_back(std::move(s));
  }
  if (out.empty()) throw DataError(mpath.string() + ": empty dataset");
  return out;
}

inline void check_image_size(const NetworkSpec& spec, const Shape& s, const std::string& what) {
  const int m = spec.size_multiple();
  if (s.h % m != 0 || s.w % m != 0) {
    throw ConfigError(what + ": image size " + std::to_string(s.w) + "x" + std::to_string(s.h) +
                      " is not divisible by " + std::to_string(m) + " (the network downsamples " +
                      std::to_string(spec.levels()) + " times)");
  }
}

inline std::string loss_csv_header() {
  std::string h = "step,L_total";
  const char* terms[6] = {"im_l", "im_r", "tv_l", "tv_r", "lr_l", "lr_r"};
  for (int s = 1; s <= kNumScales; ++s)
    for (const char* t : terms) h += ",s" + std::to_string(s) + "_" + t;
  return h;
}

inline std::string loss_csv_row(const LossRecord& r) {
  std::string row = std::to_string(r.step) + "," + format_number(r.total);
  for (const auto& scale : r.terms)
    for (double v : scale) row += "," + format_number(v);
  return row;
}

/// Files of one saved training state: <stem>.smck, <stem>.adam, <stem>.json.
struct CheckpointFiles {
  fs::path params, adam, meta;
  static CheckpointFiles at(const fs::path& smck) {
    return {smck, fs::path(smck).replace_extension(".adam"), fs::path(smck).replace_extension(".json")};
  }
};

template <typename T>
void save_train_state(const fs::path& smck, const TrainState<T>& st) {
  const auto f = CheckpointFiles::at(smck);
  save_params(f.params, st.model.params);
  write_file(f.adam, encode_adam(st.model.params, st.adam));
  write_json(f.meta, {{"step", st.step}, {"adam_t", st.adam.t}});
}

template <typename T>
TrainState<T> load_train_state(const fs::path& smck, const NetworkSpec& spec) {
  const auto f = CheckpointFiles::at(smck);
  TrainState<T> st{init_params<T>(spec, 0), {}, 0};
  load_params(f.params, st.model.params);
  const json meta = read_json(f.meta);
  if (!meta.contains("step") || !meta["step"].is_number_integer() || !meta.contains("adam_t") ||
      !meta["adam_t"].is_number_integer()) {
    throw DataError(f.meta.string() + ": missing step or adam_t");
  }
  st.step = meta["step"].get<int>();
  try {
    st.adam = decode_adam<T>(read_file(f.adam), st.model.params, meta["adam_t"].get<std::int64_t>());
  } catch (const DataError& e) {
    throw DataError(f.adam.string() + ": " + e.what());
  }
  return st;
}

struct TrainResult {
  fs::path model;
  int steps = 0;
};

/// Trains on the manifest in cfg.data_dir. Checkpoints go to
/// cfg.checkpoint_dir, loss.csv and run.json to cfg.output_dir. With `resume`,
/// continues from a saved state; loss.csv must hold exactly the rows before it.
inline TrainResult cmd_train(const RunConfig& cfg, const std::optional<fs::path>& resume = std::nullopt,
                             std::ostream* log = nullptr) {
  cfg.validate();
  const auto dataset = load_dataset(cfg.data_dir);
  for (const auto& s : dataset) check_image_size(cfg.train.network, s.left.shape(), "train");

  TrainState<float> state{init_params<float>(cfg.train.network, cfg.train.seed), {}, 0};
  std::vector<std::string> kept_rows;
  const fs::path out_dir = cfg.output_dir, ckpt_dir = cfg.checkpoint_dir;
  if (resume) {
    state = load_train_state<float>(*resume, cfg.train.network);
    if (state.step > cfg.train.steps) throw ConfigError("resume: checkpoint is past the configured step count");
    std::ifstream in(out_dir / "loss.csv");
    if (!in) throw DataError("resume: no loss.csv in " + out_dir.string());
    std::string line;
    std::getline(in, line);
    if (line != loss_csv_header()) throw DataError("resume: loss.csv has an unexpected header");
    while (std::getline(in, line) && static_cast<int>(kept_rows.size()) < state.step) kept_rows.push_back(line);
    if (static_cast<int>(kept_rows.size()) != state.step) {
      throw DataError("resume: loss.csv holds fewer rows than the checkpoint's step count");
    }
  }

  ensure_dir(out_dir);
  ensure_dir(ckpt_dir);
  write_json(out_dir / "run.json", to_json(cfg));
  std::ofstream csv(out_dir / "loss.csv", std::ios::trunc);
  if (!csv) throw DataError("cannot write " + (out_dir / "loss.csv").string());
  csv << loss_csv_header() << '\n';
  for (const auto& r : kept_rows) csv << r << '\n';

  const int every = cfg.train.checkpoint_every;
  train_steps<float>(dataset, cfg.train, state, [&](const TrainState<float>& st, const LossRecord& r) {
    csv << loss_csv_row(r) << '\n';
    csv.flush();
    if (every > 0 && st.step % every == 0) {
      char name[32];
      std::snprintf(name, sizeof(name), "step_%06d.smck", st.step);
      save_train_state(ckpt_dir / name, st);
    }
    if (log && (st.step % 100 == 0 || st.step == cfg.train.steps)) {
      *log << "step " << st.step << "/" << cfg.train.steps << "  loss " << r.total << std::endl;
    }
  });
  if (!csv) throw DataError("error writing " + (out_dir / "loss.csv").string());
  const fs::path model = ckpt_dir / "model_final.smck";
  save_train_state(model, state);
  return {model, state.step};
}

// ---------------------------------------------------------------------------
// infer

/// One <stem>_disp.pfm and sidecar <stem>_disp.json per input image.
inline std::vector<fs::path> cmd_infer(const RunConfig& cfg, const fs::path& checkpoint,
                                       const std::vector<fs::path>& images, bool pp, const fs::path& out_dir) {
  cfg.validate();
  if (images.empty()) throw ConfigError("infer: no input images");
  Model<float> model = init_params<float>(cfg.train.network, 0);
  load_params(checkpoint, model.params);
  std::vector<Tensor<float>> inputs;
  for (const auto& p : images) {
    inputs.push_back(read_ppm<float>(p));
    check_image_size(cfg.train.network, inputs.back().shape(), p.string());
  }
  ensure_dir(out_dir);
  std::vector<fs::path> written;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Tensor<float> d = pp ? infer_with_pp(model, inputs[i], cfg.blend) : infer_mono(model, inputs[i])[0];
    const fs::path out = out_dir / (images[i].stem().string() + "_disp.pfm");
    write_pfm(out, d);
    write_json(sidecar_path(out), {{"units", kDisparityUnits},
                                   {"d_max", cfg.train.network.d_max},
                                   {"width", d.shape().w},
                                   {"height", d.shape().h},
                                   {"post_processing", pp},
                                   {"source", images[i].filename().string()}});
    written.push_back(out);
  }
  return written;
}

// ---------------------------------------------------------------------------
// eval

enum class Suite { Eigen, Silog, Make3d };

inline Suite parse_suite(const std::string& s) {
  if (s == "eigen") return Suite::Eigen;
  if (s == "silog") return Suite::Silog;
  if (s == "make3d") return Suite::Make3d;
  throw ConfigError("unknown suite '" + s + "' (expected eigen, silog or make3d)");
}

/// Metric columns of each suite, in CSV order.
inline std::vector<std::string> suite_columns(Suite s) {
  switch (s) {
    case Suite::Eigen: return {"abs_rel", "sq_rel", "rmse", "rmse_log", "delta1", "delta2", "delta3"};
    case Suite::Silog: return {"silog", "sq_rel_pct", "abs_rel_pct", "irmse"};
    case Suite::Make3d: return {"sq_rel", "abs_rel", "rmse", "log10"};
  }
  return {};
}

struct EvalOptions {
  Suite suite = Suite::Eigen;
  double cap_m = 80.0;
  bool eigen_crop = false;
};

/// Predicted disparities below this width fraction are raised to it before
/// conversion to depth, so a zero prediction reads as "very far".
inline constexpr double kMinPredictedDisparity = 1e-6;

inline std::vector<fs::path> list_pfms(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".pfm") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

inline void require_width_fraction(const fs::path& pfm) {
  const fs::path side = sidecar_path(pfm);
  if (!fs::exists(side)) throw DataError("missing sidecar " + side.string() + " (units unknown)");
  const json j = read_json(side);
  if (!j.contains("units") || j["units"] != kDisparityUnits) {
    throw DataError("unit mismatch: " + side.string() + " does not declare units \"" + kDisparityUnits + "\"");
  }
}

inline CameraCalib read_calib(const fs::path& path) {
  const json j = read_json(path);
  CameraCalib c;
  try {
    c.focal_px = j.at("focal_px").get<double>();
    c.baseline_m = j.at("baseline_m").get<double>();
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  c.validate();
  return c;
}

inline std::vector<double> suite_values(Suite suite, const std::vector<double>& pred, const std::vector<double>& gt,
                                        const Mask& mask, double cap) {
  switch (suite) {
    case Suite::Eigen: {
      const auto m = eigen_metrics(pred, gt, mask, cap);
      return {m.abs_rel, m.sq_rel, m.rmse, m.rmse_log, m.delta1, m.delta2, m.delta3};
    }
    case Suite::Silog: {
      const auto m = silog_suite(pred, gt, mask);
      return {m.silog, m.sq_rel_pct, m.abs_rel_pct, m.irmse};
    }
    case Suite::Make3d: {
      const auto m = make3d_c1(pred, gt, &mask);
      return {m.sq_rel, m.abs_rel, m.rmse, m.log10};
    }
  }
  return {};
}

struct EvalResult {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
  std::vector<double> mean;
};

/// Pairs predictions and ground truth by sorted file name, converts both to
/// depth and writes metrics.csv (one row per image, then "mean") and
/// metrics.json to out_dir.
inline EvalResult cmd_eval(const fs::path& pred_dir, const fs::path& gt_dir, const fs::path& calib_path,
                           const EvalOptions& opt, const fs::path& out_dir) {
  if (!(opt.cap_m > kMinDepth)) throw ConfigError("eval: cap must be > 0.001 m");
  const CameraCalib calib = read_calib(calib_path);
  const auto preds = list_pfms(pred_dir);
  const auto gts = list_pfms(gt_dir);
  if (preds.empty()) throw DataError("eval: no .pfm files in " + pred_dir.string());
  if (preds.size() != gts.size()) {
    throw DataError("eval: " + std::to_string(preds.size()) + " predictions but " + std::to_string(gts.size()) +
                    " ground-truth maps");
  }
  for (const auto& p : preds) require_width_fraction(p);
  for (const auto& g : gts) require_width_fraction(g);

  EvalResult res;
  res.columns = suite_columns(opt.suite);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const Tensor<double> dp = read_pfm<double>(preds[i]);
    const Tensor<double> dg = read_pfm<double>(gts[i]);
    if (dp.shape() != dg.shape()) {
      throw DataError("eval: " + preds[i].filename().string() + " is " + dp.shape().str() + " but " +
                      gts[i].filename().string() + " is " + dg.shape().str());
    }
    const int H = dg.shape().h, W = dg.shape().w;
    Mask mask(dg.size(), 0);
    for (std::size_t k = 0; k < dg.size(); ++k) mask[k] = dg[k] > 0;
    if (opt.eigen_crop && opt.suite == Suite::Eigen) {
      const Mask crop = eigen_crop_mask(H, W);
      for (std::size_t k = 0; k < mask.size(); ++k) mask[k] = mask[k] && crop[k];
    }
    Tensor<double> dp_floor = dp;
    for (double& v : dp_floor.storage()) {
      if (!std::isfinite(v)) throw NumericError("eval: non-finite disparity in " + preds[i].string());
      v = std::max(v, kMinPredictedDisparity);
    }
    const Tensor<double> zp = disparity_to_depth(dp_floor, calib, W, &mask);
    const Tensor<double> zg = disparity_to_depth(dg, calib, W, &mask);
    std::vector<double> pv(zp.storage().begin(), zp.storage().end()), gv(zg.storage().begin(), zg.storage().end());
    res.rows.push_back(suite_values(opt.suite, pv, gv, mask, opt.cap_m));
  }
  res.mean.assign(res.columns.size(), 0.0);
  for (const auto& r : res.rows)
    for (std::size_t k = 0; k < r.size(); ++k) res.mean[k] += r[k];
  for (double& m : res.mean) m /= static_cast<double>(res.rows.size());

  ensure_dir(out_dir);
  std::ostringstream csv;
  csv << "image";
  for (const auto& c : res.columns) csv << ',' << c;
  csv << '\n';
  for (std::size_t i = 0; i < res.rows.size(); ++i) {
    csv << preds[i].filename().string();
    for (double v : res.rows[i]) csv << ',' << format_number(v);
    csv << '\n';
  }
  csv << "mean";
  for (double v : res.mean) csv << ',' << format_number(v);
  csv << '\n';
  write_file(out_dir / "metrics.csv", csv.str());

  json mean = json::object();
  for (std::size_t k = 0; k < res.columns.size(); ++k) mean[res.columns[k]] = res.mean[k];
  const char* suite_name = opt.suite == Suite::Eigen ? "eigen" : opt.suite == Suite::Silog ? "silog" : "make3d";
  write_json(out_dir / "metrics.json", {{"suite", suite_name},
                                        {"cap_m", opt.cap_m},
                                        {"eigen_crop", opt.eigen_crop},
                                        {"count", res.rows.size()},
                                        {"mean", mean}});
  return res;
}

}  // namespace siamdepth
