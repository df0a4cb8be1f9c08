#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "terracer/model_zoo.hpp"
#include "test_support.hpp"

using namespace terracer;
using namespace terracer::testing;

TEST_CASE("dense block channel arithmetic: C0 + L*g") {
  ParamSet<float> ps(1);
  auto block = make_dense_block2d(ps, "b", 48, 3, 12);
  CHECK(block.out_channels() == 48 + 3 * 12);
  auto x = make_leaf(random_tensor<float>({1, 48, 8, 8}, ps.rng));
  auto [full, fresh] = block.forward(x, true);
  CHECK(full->value.dim(1) == 48 + 36);
  CHECK(fresh->value.dim(1) == 36);
}

TEST_CASE("preset table: parameters and scales") {
  struct Row {
    const char* id;
    double params_m;  // reported size in millions, +-20%
    int scales;
  };
  const Row rows[] = {
      {"dn-e23-g12", 0.23, 3},  {"dn-e45-g16", 1.00, 3},
      {"dn-e444-g16", 1.08, 4}, {"dn3d-e45-g16", 0.88, 3},
      {"dn3d-e444-g16", 0.92, 4},
  };
  for (const Row& r : rows) {
    CAPTURE(r.id);
    Model<float> m = build_preset<float>(r.id, 1);
    CHECK(m.num_scales == r.scales);
    const double got = double(m.param_count()) / 1e6;
    CHECK(got > r.params_m * 0.8);
    CHECK(got < r.params_m * 1.2);
  }
  Model<float> seg = build_preset<float>("segnet-13", 1, -1, 24);
  CHECK(seg.num_scales == 5);
  CHECK(seg.param_count() > 27'000'000);
}

TEST_CASE("3D presets shrink parameters by at least 10%") {
  for (const char* id : {"dn3d-e45-g16", "dn3d-e444-g16"}) {
    CAPTURE(id);
    Model<float> m3 = build_preset<float>(id, 1);
    Model<float> m2 = build_preset<float>(*counterpart_2d(id), 1);
    CHECK(double(m3.param_count()) < 0.9 * double(m2.param_count()));
  }
}

TEST_CASE("densenet forward keeps the input resolution") {
  Model<float> m = build_preset<float>("dn-e23-g12", 3);
  auto rng = make_rng(2);
  auto x = make_leaf(random_tensor<float>({1, 13, 64, 64}, rng));
  auto out = m.forward(x, false);
  REQUIRE(out.size() == 1);
  CHECK(out[0]->value.shape() == Shape{1, 23, 64, 64});
}

TEST_CASE("3D densenet: 9-band contract") {
  SUBCASE("accepts 9 bands and keeps resolution") {
    Model<float> m = build_preset<float>("dn3d-e45-g16", 3, -1, 7);
    auto rng = make_rng(3);
    auto x = make_leaf(random_tensor<float>({1, 9, 32, 32}, rng));
    auto out = m.forward(x, false);
    CHECK(out[0]->value.shape() == Shape{1, 7, 32, 32});
  }
  SUBCASE("13-band configuration is rejected") {
    CHECK_THROWS_AS((void)build_preset<float>("dn3d-e45-g16", 1, 13),
                    ConfigError);
  }
  SUBCASE("spectral receptive field of the 4th 3D layer spans all 9 bands") {
    Model<float> m = build_preset<float>("dn3d-e444-g16", 1);
    CHECK(m.spectral_rf == 9);
  }
}

TEST_CASE("segnet: five heads on the stride ladder") {
  Model<float> m = build_preset<float>("segnet-13", 4, -1, 23);
  CHECK(m.head_strides == std::vector<int>{16, 8, 4, 2, 1});
  auto rng = make_rng(5);
  auto x = make_leaf(random_tensor<float>({1, 13, 64, 64}, rng));
  auto out = m.forward(x, false);
  REQUIRE(out.size() == 5);
  const int sizes[] = {4, 8, 16, 32, 64};
  for (int i = 0; i < 5; ++i) {
    CHECK(out[i]->value.dim(2) == sizes[i]);
    CHECK(out[i]->value.dim(3) == sizes[i]);
    CHECK(out[i]->value.dim(1) == 23);
  }
}

TEST_CASE("segnet: decoder reaches below the ground-truth resolution") {
  // 20 m/px input, 300 m/px labels: stride 16 estimates at 320 m/px which
  // is still coarser; stride 8 (160 m/px) is the first finer head.
  const int s = coarsest_stride_finer_than(20.0, 300.0, {16, 8, 4, 2, 1});
  CHECK(s == 8);
  CHECK(20.0 * s < 300.0);
  CHECK(20.0 * 16 >= 300.0);
}

TEST_CASE("segnet rejects extents not divisible by 32") {
  Model<float> m = build_preset<float>("segnet-13", 1);
  auto rng = make_rng(6);
  auto x = make_leaf(random_tensor<float>({1, 13, 48, 48}, rng));
  CHECK_THROWS_AS((void)m.forward(x, false), ConfigError);
}

TEST_CASE("config validation names the broken plan") {
  DenseNetConfig cfg;
  cfg.encoder_blocks = {2, 3};
  cfg.decoder_blocks = {2, 3};  // not the mirror
  cfg.bottleneck_layers = 4;
  try {
    (void)build_densenet_seg<float>(cfg, 1);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("mirror") != std::string::npos);
  }
}

TEST_CASE("determinism: same seed, same init, bitwise-equal forward") {
  Model<float> a = build_preset<float>("dn-e23-g12", 42, -1, 5);
  Model<float> b = build_preset<float>("dn-e23-g12", 42, -1, 5);
  REQUIRE(a.params.size() == b.params.size());
  for (size_t i = 0; i < a.params.size(); ++i)
    CHECK(max_abs_diff(a.params[i].second->value, b.params[i].second->value) ==
          0.0);
  auto rng = make_rng(7);
  Tensor<float> xt = random_tensor<float>({1, 13, 32, 32}, rng);
  auto ya = a.forward(make_leaf(Tensor<float>(xt)), false);
  auto yb = b.forward(make_leaf(Tensor<float>(xt)), false);
  CHECK(max_abs_diff(ya[0]->value, yb[0]->value) == 0.0);
}

TEST_CASE("unknown preset lists the catalogue") {
  try {
    (void)build_preset<float>("resnet-50", 1);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("segnet-13") != std::string::npos);
  }
}

TEST_CASE("single conv parameter count closed form") {
  // 3x3, 2 -> 4 channels with bias: 3*3*2*4 + 4
  ParamSet<float> ps(1);
  (void)make_conv2d(ps, "c", 2, 4, 3, 1);
  int64_t n = 0;
  for (auto& [name, v] : ps.params) n += v->value.numel();
  CHECK(n == 76);
}

TEST_CASE("model finite-difference spot checks (tiny inputs, 64-bit)") {
  auto rng = make_rng(8);
  for (const char* id :
       {"dn-e23-g12", "dn-e45-g16", "dn-e444-g16", "dn3d-e45-g16",
        "dn3d-e444-g16", "segnet-13"}) {
    CAPTURE(std::string(id));
    Model<double> m = build_preset<double>(id, 11, -1, 3);
    // a generic evaluation point: fresh init pins batchnorm outputs to the
    // relu kink on the deepest (1x1) maps
    jitter_params(m.params, rng);
    const int bands = m.input_bands;
    const int side = m.divisibility <= 16 ? 2 * m.divisibility
                                            : m.divisibility;
    auto x = make_leaf(random_tensor<double>({1, bands, side, side}, rng));

    // random but fixed projections make the scalar loss sensitive to
    // every head
    std::vector<Var<double>> projs;
    auto loss = [&]() -> Var<double> {
      auto heads = m.forward(x, true);
      if (projs.empty())
        for (auto& h : heads)
          projs.push_back(
              make_leaf(random_tensor<double>(h->value.shape(), rng)));
      Var<double> acc;
      for (size_t i = 0; i < heads.size(); ++i) {
        auto term = ops::sum(ops::mul(heads[i], projs[i]));
        acc = acc ? ops::add(acc, term) : term;
      }
      return acc;
    };

    std::uniform_int_distribution<size_t> pick(0, m.params.size() - 1);
    std::vector<std::pair<Var<double>, int64_t>> spots;
    for (int i = 0; i < 5; ++i) {
      auto& [name, v] = m.params[pick(rng)];
      std::uniform_int_distribution<int64_t> el(0, v->value.numel() - 1);
      spots.emplace_back(v, el(rng));
    }
    const double err = fd_check_spots(spots, loss, 1e-6, 1e-2);
    CHECK(err < 1e-3);
  }
}
