// siamdepth: generate synthetic stereo data, train, infer and evaluate.
//
// Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numeric abort.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "siamdepth/commands.hpp"

namespace fs = std::filesystem;
using namespace siamdepth;

namespace {

enum ExitCode { kOk = 0, kConfig = 2, kData = 3, kNumeric = 4 };

RunConfig config_or_default(const std::string& path) { return path.empty() ? RunConfig{} : load_run_config(path); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-supervised monocular disparity from stereo pairs: data generation, training, inference, evaluation."};
  app.require_subcommand(1);

  std::string config_path;

  auto* gen = app.add_subcommand("gen-data", "Write synthetic stereo scenes (PPM pairs, ground-truth PFM, JSON)");
  int count = 8;
  std::optional<std::uint64_t> gen_seed;
  std::string gen_out;
  gen->add_option("-c,--config", config_path, "Run config JSON (scene fields are used)")->check(CLI::ExistingFile);
  gen->add_option("-n,--count", count, "Number of scenes")->check(CLI::PositiveNumber);
  gen->add_option("-s,--seed", gen_seed, "Dataset seed (default: the config's seed)");
  gen->add_option("-o,--out", gen_out, "Output directory (default: the config's data_dir)");

  auto* train = app.add_subcommand("train", "Train on the dataset in data_dir; writes checkpoints, loss.csv, run.json");
  std::string resume;
  train->add_option("-c,--config", config_path, "Run config JSON")->required()->check(CLI::ExistingFile);
  train->add_option("--resume", resume, "Continue from a saved state (<stem>.smck with .adam and .json beside it)")
      ->check(CLI::ExistingFile);

  auto* infer = app.add_subcommand("infer", "Predict full-resolution disparity for PPM images");
  std::string checkpoint, infer_out;
  std::vector<std::string> images;
  bool pp = false;
  infer->add_option("-c,--config", config_path, "Run config JSON (network and blend fields are used)")
      ->check(CLI::ExistingFile);
  infer->add_option("-m,--checkpoint", checkpoint, "Parameter checkpoint (.smck)")->required();
  infer->add_option("-o,--out", infer_out, "Output directory (default: the config's output_dir)");
  infer->add_flag("--pp", pp, "Blend with the prediction for the mirrored image (border post-processing)");
  infer->add_option("images", images, "Input PPM images")->required();

  auto* eval = app.add_subcommand("eval", "Depth metrics of predicted against ground-truth disparity PFMs");
  std::string pred_dir, gt_dir, calib_path, suite = "eigen", eval_out = ".";
  double cap = 80.0;
  bool eigen_crop = false;
  eval->add_option("--pred", pred_dir, "Directory of predicted disparity PFMs")->required();
  eval->add_option("--gt", gt_dir, "Directory of ground-truth disparity PFMs")->required();
  eval->add_option("--calib", calib_path, "Camera JSON with focal_px and baseline_m")->required();
  eval->add_option("--suite", suite, "eigen | silog | make3d")->check(CLI::IsMember({"eigen", "silog", "make3d"}));
  eval->add_option("--cap", cap, "Depth cap in metres (eigen suite)");
  eval->add_flag("--eigen-crop", eigen_crop, "Restrict the eigen suite to the standard evaluation crop");
  eval->add_option("-o,--out", eval_out, "Directory for metrics.csv and metrics.json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (*gen) {
      const RunConfig cfg = config_or_default(config_path);
      const auto r = cmd_gen_data(cfg, count, gen_seed.value_or(cfg.train.seed), gen_out.empty() ? cfg.data_dir : gen_out);
      std::cout << "wrote " << r.count << " scenes, manifest " << r.manifest.string() << "\n";
    } else if (*train) {
      const RunConfig cfg = load_run_config(config_path);
      const auto r = cmd_train(cfg, resume.empty() ? std::nullopt : std::optional<fs::path>(resume), &std::cout);
      std::cout << "trained " << r.steps << " steps, model " << r.model.string() << "\n";
    } else if (*infer) {
      const RunConfig cfg = config_or_default(config_path);
      std::vector<fs::path> paths(images.begin(), images.end());
      const auto out = cmd_infer(cfg, checkpoint, paths, pp, infer_out.empty() ? cfg.output_dir : infer_out);
      for (const auto& p : out) std::cout << p.string() << "\n";
    } else if (*eval) {
      const EvalOptions opt{parse_suite(suite), cap, eigen_crop};
      const auto r = cmd_eval(pred_dir, gt_dir, calib_path, opt, eval_out);
      for (std::size_t k = 0; k < r.columns.size(); ++k) {
        std::cout << r.columns[k] << " " << format_number(r.mean[k]) << "\n";
      }
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const ShapeError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumeric;
  }
  return kOk;
}
