#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

#include <gtest/gtest.h>

#include "siamdepth/commands.hpp"
#include "test_support.hpp"

using namespace siamdepth;
using namespace siamdepth::testing;
namespace fs = std::filesystem;

namespace {

/// Fresh directory under the system temp dir, removed on destruction.
struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("siamdepth_" + tag + "_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) { return read_file(p); }

RunConfig tiny_run(const fs::path& root) {
  RunConfig c;
  c.scene.height = 32;
  c.scene.width = 64;
  c.scene.disparity_px_min = 1;
  c.scene.disparity_px_max = 4;
  c.train.batch_size = 2;
  c.train.steps = 4;
  c.train.checkpoint_every = 2;
  c.train.adam.learning_rate = 1e-3;
  c.train.network.encoder_channels = {4, 6, 8, 8, 8};
  c.data_dir = (root / "data").string();
  c.checkpoint_dir = (root / "ckpt").string();
  c.output_dir = (root / "out").string();
  return c;
}

}  // namespace

TEST(Pfm, HeaderAndPayloadLayout) {
  const Tensor<float> m(Shape{1, 1, 2, 3}, {1, 2, 3, 4, 5, 6});
  const std::string bytes = encode_pfm(m);
  const std::string header = "Pf\n3 2\n-1.0\n";
  ASSERT_EQ(bytes.size(), header.size() + 24);
  EXPECT_EQ(bytes.substr(0, header.size()), header);
  // bottom row first, little-endian
  float first;
  std::memcpy(&first, bytes.data() + header.size(), 4);
  if constexpr (std::endian::native == std::endian::little) EXPECT_EQ(first, 4.0f);
  EXPECT_EQ(static_cast<unsigned char>(bytes[header.size() + 3]), 0x40);  // 4.0f = 0x40800000
  EXPECT_EQ(decode_pfm(bytes), m);
}

TEST(Pfm, BitExactRoundTrip) {
  Rng rng(1);
  Tensor<float> m = random_tensor(rng, {1, 1, 7, 5}, -3, 3).cast<float>();
  m[0] = -0.0f;
  m[1] = std::numeric_limits<float>::denorm_min();
  m[2] = std::numeric_limits<float>::infinity();
  const Tensor<float> back = decode_pfm(encode_pfm(m));
  for (std::size_t i = 0; i < m.size(); ++i) EXPECT_EQ(std::bit_cast<std::uint32_t>(back[i]), std::bit_cast<std::uint32_t>(m[i]));
}

TEST(Pfm, ReadsBigEndianFiles) {
  Rng rng(2);
  const Tensor<float> m = random_tensor(rng, {1, 1, 3, 4}).cast<float>();
  const std::string le = encode_pfm(m);
  const std::string header = "Pf\n4 3\n-1.0\n";
  std::string be = "Pf\n4 3\n1.0\n";
  for (std::size_t k = header.size(); k < le.size(); k += 4)
    for (int b = 3; b >= 0; --b) be.push_back(le[k + b]);
  EXPECT_EQ(decode_pfm(be), m);
}

TEST(Pfm, MalformedInputIsADataError) {
  const std::string good = encode_pfm(Tensor<float>(Shape{1, 1, 2, 3}));
  EXPECT_THROW(decode_pfm(good.substr(0, good.size() - 1)), DataError);
  EXPECT_THROW(decode_pfm(good + "x"), DataError);
  EXPECT_THROW(decode_pfm("PF\n3 2\n-1.0\n"), DataError);
  EXPECT_THROW(decode_pfm("Pf\n3 x\n-1.0\n"), DataError);
  EXPECT_THROW(decode_pfm("Pf\n3 2\n0\n"), DataError);
  EXPECT_THROW(decode_pfm(""), DataError);
  EXPECT_THROW(encode_pfm(Tensor<float>(Shape{1, 3, 2, 2})), ShapeError);
}

TEST(Ppm, RoundTripAndLayout) {
  Tensor<float> img(Shape{1, 3, 2, 2});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>(i) / 11;
  const std::string bytes = encode_ppm(img);
  const std::string header = "P6\n2 2\n255\n";
  ASSERT_EQ(bytes.size(), header.size() + 12);
  // interleaved RGB: pixel (0,0) is channels 0,1,2 at plane offsets 0,4,8
  EXPECT_EQ(static_cast<unsigned char>(bytes[header.size()]), 0);
  EXPECT_EQ(static_cast<unsigned char>(bytes[header.size() + 1]), std::lround(4 / 11.0 * 255));
  const Tensor<float> back = decode_ppm<float>(bytes);
  EXPECT_LE(max_abs_diff(back.cast<double>(), img.cast<double>()), 0.5 / 255 + 1e-7);
  EXPECT_EQ(encode_ppm(back), bytes);
  EXPECT_EQ(decode_ppm<float>("P6\n# comment\n2 2\n255\n" + bytes.substr(header.size())), back);
  EXPECT_THROW(decode_ppm<float>("P3\n2 2\n255\n"), DataError);
  EXPECT_THROW(decode_ppm<float>("P6\n2 2\n65535\n"), DataError);
  EXPECT_THROW(decode_ppm<float>(bytes.substr(0, bytes.size() - 2)), DataError);
}

TEST(Checkpoint, ParamsRoundTripAndMismatches) {
  NetworkSpec spec;
  spec.encoder_channels = {4, 6, 8, 8, 8};
  const auto a = init_params<float>(spec, 1);
  auto b = init_params<float>(spec, 2);
  decode_params_into(encode_params(a.params), b.params);
  EXPECT_EQ(a.params, b.params);

  NetworkSpec other = spec;
  other.encoder_channels = {4, 6, 8, 8, 9};
  auto c = init_params<float>(other, 3);
  const auto before = c.params;
  EXPECT_THROW(decode_params_into(encode_params(a.params), c.params), DataError);
  EXPECT_EQ(c.params, before);

  auto d = init_params<D>(spec, 1);
  EXPECT_THROW(decode_params_into(encode_params(a.params), d.params), DataError);
}

TEST(Checkpoint, AdamStateRoundTrip) {
  NetworkSpec spec;
  spec.encoder_channels = {4, 6, 8, 8, 8};
  const auto m = init_params<float>(spec, 1);
  Rng rng(3);
  AdamState<float> st = AdamState<float>::zeros(m.params);
  for (auto& t : st.m) t = random_tensor(rng, t.shape()).cast<float>();
  for (auto& t : st.v) t = random_tensor(rng, t.shape(), 0, 1).cast<float>();
  st.t = 17;
  EXPECT_EQ(decode_adam(encode_adam(m.params, st), m.params, 17), st);
}

TEST(RunConfig, JsonRoundTripAndErrors) {
  RunConfig c;
  c.train.steps = 123;
  c.scene.mode = SceneMode::TwoLayer;
  c.train.network.encoder_channels = {8, 8, 8, 8, 8};
  c.blend.ramp_fraction = 0.1;
  const RunConfig back = run_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_EQ(back.train.steps, 123);

  EXPECT_THROW(run_config_from_json({{"stepz", 5}}), ConfigError);
  EXPECT_THROW(run_config_from_json({{"steps", "five"}}), ConfigError);
  EXPECT_THROW(run_config_from_json({{"steps", 1.5}}), ConfigError);
  EXPECT_THROW(run_config_from_json({{"scene_mode", "tilted"}}), ConfigError);
  EXPECT_THROW(run_config_from_json({{"learning_rate", -1}}), ConfigError);
  EXPECT_THROW(run_config_from_json(nlohmann::json::array()), ConfigError);
  EXPECT_EQ(run_config_from_json(nlohmann::json::object()).train.batch_size, 8);

  TempDir dir("cfg");
  write_file(dir.path / "bad.json", "{ not json");
  EXPECT_THROW(load_run_config(dir.path / "bad.json"), ConfigError);
  EXPECT_THROW(load_run_config(dir.path / "missing.json"), ConfigError);
}

TEST(Commands, GenDataWritesQuadruplesAndIsDeterministic) {
  TempDir dir("gen");
  const RunConfig cfg = tiny_run(dir.path);
  cmd_gen_data(cfg, 4, 9, dir.path / "a");
  cmd_gen_data(cfg, 4, 9, dir.path / "b");
  const auto manifest = nlohmann::json::parse(slurp(dir.path / "a" / "manifest.json"));
  ASSERT_EQ(manifest["samples"].size(), 4u);
  for (int i = 0; i < 4; ++i) {
    const auto& e = manifest["samples"][i];
    char stem[32];
    std::snprintf(stem, sizeof(stem), "sample_%04d", i);
    EXPECT_EQ(e["left"], std::string(stem) + "_left.ppm");
    for (const char* k : {"left", "right", "gt", "meta"}) {
      const auto name = e[k].get<std::string>();
      EXPECT_EQ(slurp(dir.path / "a" / name), slurp(dir.path / "b" / name)) << name;
    }
  }
  EXPECT_EQ(slurp(dir.path / "a" / "manifest.json"), slurp(dir.path / "b" / "manifest.json"));
  const auto meta = nlohmann::json::parse(slurp(dir.path / "a" / "sample_0000.json"));
  EXPECT_EQ(meta["units"], "width_fraction");
  EXPECT_EQ(read_pfm(dir.path / "a" / "sample_0000.pfm").shape(), (Shape{1, 1, 32, 64}));

  cmd_gen_data(cfg, 4, 10, dir.path / "c");
  EXPECT_NE(slurp(dir.path / "a" / "sample_0000_left.ppm"), slurp(dir.path / "c" / "sample_0000_left.ppm"));
  EXPECT_THROW(cmd_gen_data(cfg, 0, 9, dir.path / "d"), ConfigError);
}

TEST(Commands, TrainWritesTraceAndResumesBitIdentically) {
  TempDir dir("train");
  RunConfig cfg = tiny_run(dir.path);
  cmd_gen_data(cfg, 4, 1, cfg.data_dir);
  const auto full = cmd_train(cfg);
  EXPECT_EQ(full.steps, 4);
  const std::string csv = slurp(fs::path(cfg.output_dir) / "loss.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), loss_csv_header());
  const std::string model = slurp(full.model);
  const fs::path mid = fs::path(cfg.checkpoint_dir) / "step_000002.smck";
  ASSERT_TRUE(fs::exists(mid));
  ASSERT_TRUE(fs::exists(fs::path(mid).replace_extension(".adam")));

  const auto resumed = cmd_train(cfg, mid);
  EXPECT_EQ(resumed.steps, 4);
  EXPECT_EQ(slurp(resumed.model), model);
  EXPECT_EQ(slurp(fs::path(cfg.output_dir) / "loss.csv"), csv);

  RunConfig odd = cfg;
  odd.train.network.encoder_channels = {4, 6, 8, 8, 9};
  EXPECT_THROW(cmd_train(odd, mid), DataError);
}

TEST(Commands, TrainRejectsIndivisibleImages) {
  TempDir dir("odd");
  RunConfig cfg = tiny_run(dir.path);
  cfg.scene.width = 48;
  cmd_gen_data(cfg, 2, 1, cfg.data_dir);
  try {
    cmd_train(cfg);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("32"), std::string::npos) << e.what();
  }
}

TEST(Commands, InferAndEval) {
  TempDir dir("infer");
  RunConfig cfg = tiny_run(dir.path);
  cmd_gen_data(cfg, 3, 1, cfg.data_dir);
  const auto model = cmd_train(cfg).model;
  std::vector<fs::path> imgs;
  for (int i = 0; i < 3; ++i) imgs.push_back(fs::path(cfg.data_dir) / ("sample_000" + std::to_string(i) + "_left.ppm"));

  const auto plain = cmd_infer(cfg, model, imgs, false, dir.path / "pred");
  const auto again = cmd_infer(cfg, model, imgs, false, dir.path / "pred2");
  const auto pp = cmd_infer(cfg, model, imgs, true, dir.path / "pp");
  ASSERT_EQ(plain.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(read_pfm(plain[i]).shape(), (Shape{1, 1, 32, 64}));
    EXPECT_EQ(slurp(plain[i]), slurp(again[i]));
    EXPECT_NE(slurp(plain[i]), slurp(pp[i]));
  }
  EXPECT_EQ(nlohmann::json::parse(slurp(sidecar_path(plain[0])))["units"], "width_fraction");

  // ground truth against itself: zero error, deltas 1
  const fs::path calib = fs::path(cfg.data_dir) / "calib.json";
  TempDir gt("gtonly");
  for (int i = 0; i < 3; ++i) {
    const std::string s = "sample_000" + std::to_string(i);
    fs::copy_file(fs::path(cfg.data_dir) / (s + ".pfm"), gt.path / (s + ".pfm"));
    fs::copy_file(fs::path(cfg.data_dir) / (s + ".json"), gt.path / (s + ".json"));
  }
  const auto self = cmd_eval(gt.path, gt.path, calib, {}, dir.path / "m0");
  EXPECT_EQ(self.columns, suite_columns(Suite::Eigen));
  for (int k = 0; k < 4; ++k) EXPECT_EQ(self.mean[k], 0.0);
  for (int k = 4; k < 7; ++k) EXPECT_EQ(self.mean[k], 1.0);
  const std::string mcsv = slurp(dir.path / "m0" / "metrics.csv");
  EXPECT_EQ(mcsv.substr(0, mcsv.find('\n')), "image,abs_rel,sq_rel,rmse,rmse_log,delta1,delta2,delta3");

  const auto r = cmd_eval(dir.path / "pred", gt.path, calib, {Suite::Make3d, 80, false}, dir.path / "m1");
  EXPECT_EQ(r.rows.size(), 3u);
  EXPECT_GT(r.mean[1], 0.0);

  // a pixel-unit sidecar is refused
  write_file(gt.path / "sample_0001.json", R"({"units": "pixels"})");
  EXPECT_THROW(cmd_eval(dir.path / "pred", gt.path, calib, {}, dir.path / "m2"), DataError);
  fs::remove(gt.path / "sample_0001.pfm");
  EXPECT_THROW(cmd_eval(dir.path / "pred", gt.path, calib, {}, dir.path / "m2"), DataError);
}

TEST(Commands, EvalCapChangesAggregatesBeyondIt) {
  // gt depths {40, 60} m with prediction 45 m everywhere
  TempDir dir("cap");
  const CameraCalib calib{100.0, 1.0};
  write_file(dir.path / "calib.json", R"({"focal_px": 100.0, "baseline_m": 1.0})");
  const int W = 4;
  auto disp_for = [&](double z) { return calib.focal_px * calib.baseline_m / (z * W); };
  fs::create_directories(dir.path / "gt");
  fs::create_directories(dir.path / "pred");
  write_pfm(dir.path / "gt" / "a.pfm", Tensor<float>(Shape{1, 1, 1, W}, std::vector<float>{
      static_cast<float>(disp_for(40)), static_cast<float>(disp_for(60)), static_cast<float>(disp_for(40)),
      static_cast<float>(disp_for(60))}));
  write_pfm(dir.path / "pred" / "a.pfm", Tensor<float>(Shape{1, 1, 1, W}, static_cast<float>(disp_for(45))));
  for (const char* d : {"gt", "pred"}) write_file(dir.path / d / "a.json", R"({"units": "width_fraction"})");
  const auto c80 = cmd_eval(dir.path / "pred", dir.path / "gt", dir.path / "calib.json", {Suite::Eigen, 80, false}, dir.path);
  const auto c50 = cmd_eval(dir.path / "pred", dir.path / "gt", dir.path / "calib.json", {Suite::Eigen, 50, false}, dir.path);
  EXPECT_NE(c80.mean[0], c50.mean[0]);
  EXPECT_NE(c80.mean[2], c50.mean[2]);
}
