#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "terracer/cli.hpp"
#include "terracer/raster.hpp"
#include "terracer/train.hpp"

using namespace terracer;
namespace fs = std::filesystem;

namespace {

int run_cli(std::initializer_list<const char*> args) {
  std::vector<const char*> argv{"terracer"};
  argv.insert(argv.end(), args.begin(), args.end());
  return cli::run(static_cast<int>(argv.size()), argv.data());
}

fs::path temp_dir(const char* tag) {
  fs::path p = fs::temp_directory_path() /
               (std::string("terracer-cli-") + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("--help exits 0") {
  CHECK(run_cli({"--help"}) == 0);
}

TEST_CASE("unknown flags are a usage error") {
  CHECK(run_cli({"params", "dn-e23-g12", "--frobnicate"}) == 2);
}

TEST_CASE("missing manifest is a runtime failure mentioning the path") {
  CHECK(run_cli({"dataset", "validate", "/does/not/exist.json"}) == 1);
}

TEST_CASE("unknown preset exits 2") {
  CHECK(run_cli({"params", "vgg-19"}) == 2);
}

TEST_CASE("params reports known presets") {
  CHECK(run_cli({"params", "segnet-13", "--classes", "24"}) == 0);
  CHECK(run_cli({"params", "dn3d-e45-g16"}) == 0);
}

TEST_CASE("full pipeline smoke: synth, validate, train, eval, predict") {
  const fs::path dir = temp_dir("pipeline");
  const std::string out = (dir / "data").string();
  CHECK(run_cli({"dataset", "synth", "--seed", "3", "--scenes", "3",
                 "--size", "96", "--classes", "4", "--out", out.c_str()}) ==
        0);
  const std::string manifest = out + "/manifest.json";
  CHECK(run_cli({"dataset", "validate", manifest.c_str()}) == 0);

  TrainConfig cfg;
  cfg.preset = "dn-e23-g12";
  cfg.manifest_path = manifest;
  cfg.strategy = "fine";
  cfg.epochs = 1;
  cfg.steps_per_epoch = 50;
  cfg.batch_size = 2;
  cfg.tile_px = 32;
  cfg.seed = 3;
  cfg.checkpoint_dir = (dir / "ckpt").string();
  const std::string cfg_path = (dir / "train.json").string();
  cfg.save_json(cfg_path);

  CHECK(run_cli({"train", "--config", cfg_path.c_str()}) == 0);
  const std::string ckpt = (dir / "ckpt" / "final.tckpt").string();
  CHECK(fs::exists(ckpt));
  CHECK(fs::exists(cfg.checkpoint_dir + "/metrics.jsonl"));

  const std::string report = (dir / "report.json").string();
  CHECK(run_cli({"eval", "--ckpt", ckpt.c_str(), "--manifest",
                 manifest.c_str(), "--split", "test", "--erode-m", "200",
                 "--report", report.c_str()}) == 0);
  CHECK(fs::exists(report));
  std::ifstream is(report);
  std::string body((std::istreambuf_iterator<char>(is)),
                   std::istreambuf_iterator<char>());
  CHECK(body.find("\"oa\"") != std::string::npos);

  const std::string map = (dir / "map.erb1").string();
  CHECK(run_cli({"predict", "--ckpt", ckpt.c_str(), "--manifest",
                 manifest.c_str(), "--scene", "synth-000", "--out",
                 map.c_str()}) == 0);
  CHECK(fs::exists(map));
  CHECK(fs::exists((dir / "map.ppm")));
  // the emitted raster is re-readable at the scene's grid
  Manifest man = Manifest::load(manifest);
  Scene s = load_scene(man, man.scene_ref("synth-000"));
  Tensor<uint16_t> back =
      read_erb1_u16(map, {s.height(), s.width()});
  for (int64_t i = 0; i < back.numel(); ++i)
    CHECK(back[i] != kNoDataLabel);
}
