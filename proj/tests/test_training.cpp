#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <sstream>

#include "terracer/checkpoint.hpp"
#include "terracer/eval.hpp"
#include "terracer/train.hpp"
#include "test_support.hpp"

using namespace terracer;
using namespace terracer::testing;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* tag) {
  fs::path p =
      fs::temp_directory_path() / (std::string("terracer-train-") + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

/// tiny five-scene fixture shared by the training tests
const Manifest& fixture_manifest() {
  static Manifest man = [] {
    SynthParams p;
    p.num_classes = 4;
    p.size_px = 120;
    p.noise_sigma = 0.03;
    return synthesize_dataset(404, 5, p, temp_dir("fixture"));
  }();
  return man;
}

TrainConfig small_cfg(const char* ckpt_tag) {
  TrainConfig cfg;
  cfg.preset = "dn-e23-g12";
  cfg.manifest_path = (fixture_manifest().root / "manifest.json").string();
  cfg.strategy = "fine";
  cfg.epochs = 1;
  cfg.batch_size = 2;
  cfg.tile_px = 32;
  cfg.steps_per_epoch = 4;
  cfg.seed = 11;
  cfg.checkpoint_dir = temp_dir(ckpt_tag).string();
  return cfg;
}

}  // namespace

TEST_CASE("multiscale loss: degenerate and hand-computed cases") {
  auto rng = make_rng(61);

  SUBCASE("one head with zero head weight is the plain pooled loss") {
    auto head = make_leaf(random_tensor<float>({1, 3, 30, 30}, rng), true);
    Tensor<uint16_t> labels({1, 2, 2}, {0, 1, 2, 0});
    auto total = loss_multiscale({head}, labels, 15, 30, 30, 1.0f, 0.0f);
    auto want = ops::softmax_cross_entropy(
        ops::avgpool2d(Var<float>(head), 15), labels);
    CHECK(total->value[0] ==
          doctest::Approx(want->value[0]).epsilon(1e-6));
  }

  SUBCASE("permuting equally weighted heads leaves the loss unchanged") {
    auto h1 = make_leaf(random_tensor<float>({1, 3, 16, 16}, rng));
    auto h2 = make_leaf(random_tensor<float>({1, 3, 8, 8}, rng));
    auto h3 = make_leaf(random_tensor<float>({1, 3, 32, 32}, rng));
    Tensor<uint16_t> labels({1, 2, 2}, {0, 1, 2, 1});
    auto a = loss_multiscale({h1, h2, h3}, labels, 16, 32, 32, 1.0f, 0.25f);
    auto b = loss_multiscale({h3, h1, h2}, labels, 16, 32, 32, 1.0f, 0.25f);
    CHECK(a->value[0] == doctest::Approx(b->value[0]).epsilon(1e-6));
  }

  SUBCASE("two-head 1x2x2 case matches manual arithmetic") {
    // heads already at full scale 2x2, pool factor 1, one class pair
    Tensor<float> h1t({1, 2, 2, 2}, {1, 0, 0, 1, 0, 1, 1, 0});
    Tensor<float> h2t({1, 2, 2, 2}, {0, 0, 1, 1, 1, 1, 0, 0});
    Tensor<uint16_t> labels({1, 2, 2}, {0, 1, 1, 0});
    auto h1 = make_leaf(std::move(h1t));
    auto h2 = make_leaf(std::move(h2t));
    auto total = loss_multiscale({h1, h2}, labels, 1, 2, 2, 1.0f, 0.5f);
    // averaged logits per pixel, then ln(1+e^(z_other-z_true)) per pixel
    auto ce = [](double z_true, double z_other) {
      return std::log(1.0 + std::exp(z_other - z_true));
    };
    // averaged logits per pixel: (0.5,0.5),(0,1),(0.5,0.5),(1,0);
    // labels 0,1,1,0
    const double avg_loss =
        (ce(0.5, 0.5) + ce(1.0, 0.0) + ce(0.5, 0.5) + ce(1.0, 0.0)) / 4.0;
    const double h1_loss =
        (ce(1.0, 0.0) + ce(1.0, 0.0) + ce(1.0, 0.0) + ce(1.0, 0.0)) / 4.0;
    const double h2_loss =
        (ce(0.0, 1.0) + ce(1.0, 0.0) + ce(0.0, 1.0) + ce(1.0, 0.0)) / 4.0;
    const double want = avg_loss + 0.5 * (h1_loss + h2_loss);
    CHECK(total->value[0] == doctest::Approx(want).epsilon(1e-5));
  }

  SUBCASE("all-head weight 0 gradient equals averaged-only gradient") {
    auto h1 = make_leaf(random_tensor<float>({1, 3, 8, 8}, rng), true);
    auto h2 = make_leaf(random_tensor<float>({1, 3, 4, 4}, rng), true);
    Tensor<uint16_t> labels({1, 2, 2}, {2, 0, 1, 1});
    auto total = loss_multiscale({h1, h2}, labels, 4, 8, 8, 1.0f, 0.0f);
    backward(total);
    Tensor<float> g1 = h1->grad, g2 = h2->grad;

    zero_grads<float>({h1, h2});
    auto up2 = ops::upsample_bilinear(Var<float>(h2), 8, 8);
    auto avg = ops::scale(ops::add(Var<float>(h1), up2), 0.5f);
    auto plain =
        ops::softmax_cross_entropy(ops::avgpool2d(avg, 4), labels);
    backward(plain);
    CHECK(max_abs_diff(g1, h1->grad) < 1e-7);
    CHECK(max_abs_diff(g2, h2->grad) < 1e-7);
  }
}

TEST_CASE("NO_DATA pixels contribute exactly zero gradient") {
  auto rng = make_rng(62);
  auto logits = make_leaf(random_tensor<float>({1, 4, 6, 6}, rng), true);
  Tensor<uint16_t> labels({1, 6, 6});
  std::uniform_int_distribution<int> d(0, 3);
  for (int64_t i = 0; i < 36; ++i)
    labels[i] = static_cast<uint16_t>(d(rng));
  labels[7] = kNoDataLabel;
  labels[20] = kNoDataLabel;
  auto loss = ops::softmax_cross_entropy(logits, labels);
  backward(loss);
  for (int c = 0; c < 4; ++c) {
    CHECK(logits->grad[(int64_t)c * 36 + 7] == 0.0f);
    CHECK(logits->grad[(int64_t)c * 36 + 20] == 0.0f);
  }
}

TEST_CASE("training: determinism of the loss trajectory") {
  TrainConfig cfg = small_cfg("det-a");
  cfg.steps_per_epoch = 10;
  TrainOutcome a = train(cfg);
  cfg.checkpoint_dir = temp_dir("det-b").string();
  TrainOutcome b = train(cfg);
  REQUIRE(a.ok);
  REQUIRE(b.ok);
  REQUIRE(a.records.size() == b.records.size());
  for (size_t i = 0; i < a.records.size(); ++i) {
    CHECK(a.records[i].loss == b.records[i].loss);  // bitwise
    CHECK(a.records[i].train_oa == b.records[i].train_oa);
  }
}

TEST_CASE("training: identical seeds give bitwise-identical checkpoints") {
  TrainConfig cfg = small_cfg("ckpt-a");
  cfg.steps_per_epoch = 10;
  TrainOutcome a = train(cfg);
  cfg.checkpoint_dir = temp_dir("ckpt-b").string();
  TrainOutcome b = train(cfg);
  REQUIRE(a.ok);
  REQUIRE(b.ok);
  std::ifstream fa(a.final_checkpoint, std::ios::binary);
  std::ifstream fb(b.final_checkpoint, std::ios::binary);
  std::vector<char> ba((std::istreambuf_iterator<char>(fa)),
                       std::istreambuf_iterator<char>());
  std::vector<char> bb((std::istreambuf_iterator<char>(fb)),
                       std::istreambuf_iterator<char>());
  REQUIRE_FALSE(ba.empty());
  CHECK(ba == bb);
}

TEST_CASE("checkpoint round trip: identical forward output") {
  TrainConfig cfg = small_cfg("round");
  cfg.steps_per_epoch = 3;
  TrainOutcome out = train(cfg);
  REQUIRE(out.ok);

  Model<float> trained = load_model(out.final_checkpoint);
  Model<float> fresh =
      build_preset<float>(cfg.preset, 999, -1, trained.num_classes);
  load_checkpoint(out.final_checkpoint, fresh);

  auto rng = make_rng(63);
  Tensor<float> xt = random_tensor<float>({1, 13, 32, 32}, rng);
  auto ya = trained.forward(make_leaf(Tensor<float>(xt)), false);
  auto yb = fresh.forward(make_leaf(Tensor<float>(xt)), false);
  CHECK(max_abs_diff(ya[0]->value, yb[0]->value) == 0.0);
}

TEST_CASE("checkpoint loader rejects mismatched architectures") {
  TrainConfig cfg = small_cfg("mismatch");
  cfg.steps_per_epoch = 1;
  TrainOutcome out = train(cfg);
  REQUIRE(out.ok);
  Model<float> other = build_preset<float>("dn-e45-g16", 1, -1, 4);
  CHECK_THROWS_AS(load_checkpoint(out.final_checkpoint, other), DataError);
}

TEST_CASE("single-class labels: loss trend decreases") {
  // overwrite the fixture labels with one class
  const fs::path dir = temp_dir("mono");
  SynthParams p;
  p.num_classes = 3;
  p.size_px = 60;
  Manifest man = synthesize_dataset(7, 2, p, dir);
  for (const auto& r : man.scenes) {
    Tensor<uint16_t> lab({4, 4});
    lab.fill(static_cast<uint16_t>(man.classes.code_from_id(1)));
    write_erb1_u16(dir / r.labels_file, lab);
  }
  TrainConfig cfg;
  cfg.preset = "dn-e23-g12";
  cfg.manifest_path = (dir / "manifest.json").string();
  cfg.strategy = "fine";
  cfg.epochs = 1;
  cfg.steps_per_epoch = 15;
  cfg.batch_size = 2;
  cfg.tile_px = 32;
  cfg.seed = 3;
  cfg.checkpoint_dir = temp_dir("mono-ckpt").string();
  TrainOutcome out = train(cfg);
  REQUIRE(out.ok);
  // 5-step moving average strictly decreases in trend
  auto avg5 = [&](size_t i) {
    double s = 0;
    for (size_t k = i; k < i + 5; ++k) s += out.records[k].loss;
    return s / 5;
  };
  CHECK(avg5(10) < avg5(0));
  CHECK(out.records.back().loss < out.records.front().loss);
}

TEST_CASE("one epoch of fine training beats the majority-class predictor") {
  TrainConfig cfg = small_cfg("majority");
  cfg.steps_per_epoch = 0;  // one pass over the tile pool
  cfg.optim.lr = 3e-3;
  cfg.eval_every = 0;
  TrainOutcome out = train(cfg);
  REQUIRE(out.ok);

  Model<float> model = load_model(out.final_checkpoint);
  const Manifest& man = fixture_manifest();
  const double majority = majority_class_oa(man, "train");
  EvalResult res = evaluate(model, man, "train", 0.0, "fine");
  CAPTURE(majority);
  CAPTURE(res.oa());
  CHECK(res.oa() > majority);
}

TEST_CASE("metrics stream is line-delimited JSON with the expected fields") {
  TrainConfig cfg = small_cfg("jsonl");
  cfg.steps_per_epoch = 2;
  std::ostringstream os;
  TrainOutcome out = train(cfg, &os);
  REQUIRE(out.ok);
  std::istringstream is(os.str());
  std::string line;
  int lines = 0;
  while (std::getline(is, line)) {
    CHECK(line.find("\"step\"") != std::string::npos);
    CHECK(line.find("\"loss\"") != std::string::npos);
    CHECK(line.find("\"lr\"") != std::string::npos);
    CHECK(line.find("\"train_oa\"") != std::string::npos);
    CHECK(line.find("\"wall_ms\"") != std::string::npos);
    ++lines;
  }
  CHECK(lines == out.steps);
}

TEST_CASE("strategy/preset pairing is enforced") {
  TrainConfig cfg = small_cfg("pairing");
  cfg.preset = "segnet-13";
  cfg.strategy = "fine";
  CHECK_THROWS_AS((void)train(cfg), ConfigError);
  cfg.preset = "dn-e23-g12";
  cfg.strategy = "coarse";
  CHECK_THROWS_AS((void)train(cfg), ConfigError);
}

TEST_CASE("train config JSON round trip") {
  TrainConfig cfg = small_cfg("cfgio");
  cfg.optim.kind = "sgd";
  cfg.optim.lr = 0.05;
  const fs::path path = temp_dir("cfgio-json") / "cfg.json";
  cfg.save_json(path);
  TrainConfig back = TrainConfig::from_json_file(path);
  CHECK(back.preset == cfg.preset);
  CHECK(back.strategy == cfg.strategy);
  CHECK(back.optim.kind == "sgd");
  CHECK(back.optim.lr == doctest::Approx(0.05));
  CHECK(back.seed == cfg.seed);
  CHECK(back.tile_px == cfg.tile_px);
}
