#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <map>

#include "terracer/raster.hpp"
#include "terracer/ref_kernels.hpp"
#include "test_support.hpp"

using namespace terracer;
using namespace terracer::testing;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* tag) {
  fs::path p = fs::temp_directory_path() /
               (std::string("terracer-test-") + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Tensor<uint16_t> mode_downsample(const Tensor<uint16_t>& labels, int factor) {
  const int oh = labels.dim(0) / factor, ow = labels.dim(1) / factor;
  Tensor<uint16_t> out({oh, ow});
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      std::map<uint16_t, int> hist;
      for (int dy = 0; dy < factor; ++dy)
        for (int dx = 0; dx < factor; ++dx)
          ++hist[labels[(int64_t)(y * factor + dy) * labels.dim(1) +
                        x * factor + dx]];
      int best = -1;
      uint16_t bl = 0;
      for (const auto& [v, c] : hist)
        if (c > best) {
          best = c;
          bl = v;
        }
      out[(int64_t)y * ow + x] = bl;
    }
  return out;
}

}  // namespace

TEST_CASE("class table: bijective code/id maps, 23 or 24 classes") {
  ClassTable t = ClassTable::generic(23, false);
  CHECK(t.size() == 23);
  CHECK_FALSE(t.cloud_class.has_value());
  for (int id = 0; id < t.size(); ++id)
    CHECK(t.id_from_code(t.code_from_id(id)) == id);

  ClassTable tc = ClassTable::generic(23, true);
  CHECK(tc.size() == 24);
  CHECK(tc.cloud_class == 23);
  CHECK(tc.name_of(23) == "Clouds");
}

TEST_CASE("interpolate_labels: replication, NO_DATA, mode round trip") {
  SUBCASE("a constant raster stays constant, 15x larger") {
    Tensor<uint16_t> in = Tensor<uint16_t>::full({2, 2}, 9);
    Tensor<uint16_t> out = interpolate_labels(in, 15);
    CHECK(out.shape() == Shape{30, 30});
    for (int64_t i = 0; i < out.numel(); ++i) CHECK(out[i] == 9);
  }
  SUBCASE("2x2 labels replicate into four constant quadrants") {
    Tensor<uint16_t> in({2, 2}, {1, 2, kNoDataLabel, 4});
    Tensor<uint16_t> out = interpolate_labels(in, 15);
    CHECK(out[0] == 1);
    CHECK(out[29] == 2);
    CHECK(out[(int64_t)29 * 30] == kNoDataLabel);
    CHECK(out[(int64_t)29 * 30 + 29] == 4);
  }
  SUBCASE("factor 1 is the identity") {
    Tensor<uint16_t> in({3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    Tensor<uint16_t> out = interpolate_labels(in, 1);
    for (int64_t i = 0; i < 9; ++i) CHECK(out[i] == in[i]);
  }
  SUBCASE("mode-downsampling the upsampled raster reproduces the original") {
    auto rng = make_rng(31);
    Tensor<uint16_t> in({5, 4});
    std::uniform_int_distribution<int> d(0, 6);
    for (int64_t i = 0; i < in.numel(); ++i)
      in[i] = static_cast<uint16_t>(d(rng));
    Tensor<uint16_t> up = interpolate_labels(in, 15);
    Tensor<uint16_t> back = mode_downsample(up, 15);
    for (int64_t i = 0; i < in.numel(); ++i) CHECK(back[i] == in[i]);
  }
}

TEST_CASE("synthetic scenes: determinism, clouds, signatures") {
  SynthParams p;
  p.seed = 77;
  p.size_px = 120;
  p.num_classes = 4;
  SUBCASE("same seed, identical scene") {
    Scene a = synthesize_scene(p);
    Scene b = synthesize_scene(p);
    CHECK(max_abs_diff(a.bands, b.bands) == 0.0);
    for (int64_t i = 0; i < a.labels.numel(); ++i)
      CHECK(a.labels[i] == b.labels[i]);
  }
  SUBCASE("cloud_fraction 0 yields no cloud pixels") {
    Scene s = synthesize_scene(p);
    for (int64_t i = 0; i < s.labels.numel(); ++i)
      CHECK(s.labels[i] < 4);
    CHECK_FALSE(s.cloud_mask.has_value());
  }
  SUBCASE("cloud blobs carry the cloud class") {
    SynthParams pc = p;
    pc.cloud_fraction = 0.2;
    Scene s = synthesize_scene(pc);
    REQUIRE(s.cloud_mask.has_value());
    int64_t clouds = 0;
    for (int64_t i = 0; i < s.labels.numel(); ++i)
      if (s.labels[i] == 4) {
        ++clouds;
        CHECK((*s.cloud_mask)[i] == 1);
      }
    CHECK(clouds > 0);
  }
  SUBCASE("per-class mean spectrum recovers the generating signature") {
    SynthParams pq = p;
    pq.size_px = 240;
    pq.noise_sigma = 0.03;
    Scene s = synthesize_scene(pq);
    const auto sigs = synth_signatures(mix_seed(pq.seed, 101), 4, 13);
    const int64_t plane = (int64_t)s.height() * s.width();
    for (int cls = 0; cls < 4; ++cls) {
      std::vector<double> mean(13, 0.0);
      int64_t n = 0;
      for (int y = 0; y < s.height(); ++y)
        for (int x = 0; x < s.width(); ++x) {
          if (label_at_band_pixel(s, y, x) != cls) continue;
          for (int b = 0; b < 13; ++b)
            mean[b] += s.bands[b * plane + (int64_t)y * s.width() + x];
          ++n;
        }
      if (n < 500) continue;  // class almost absent from this layout
      // correlated noise: sample mean tolerance is several sigma/sqrt(n)
      const double tol =
          std::max(0.01, 25.0 * pq.noise_sigma / std::sqrt(double(n)));
      for (int b = 0; b < 13; ++b)
        CHECK(std::abs(mean[b] / n - sigs[cls][b]) < tol);
    }
  }
  SUBCASE("exact signatures when noise is disabled") {
    SynthParams pz = p;
    pz.noise_sigma = 0.0;
    Scene s = synthesize_scene(pz);
    const auto sigs = synth_signatures(mix_seed(pz.seed, 101), 4, 13);
    const int64_t plane = (int64_t)s.height() * s.width();
    for (int y = 0; y < s.height(); y += 17)
      for (int x = 0; x < s.width(); x += 13) {
        const int cls = label_at_band_pixel(s, y, x);
        for (int b = 0; b < 13; ++b)
          CHECK(s.bands[b * plane + (int64_t)y * s.width() + x] ==
                doctest::Approx(sigs[cls][b]));
      }
  }
}

TEST_CASE("dataset round trip through ERB1 + manifest") {
  const fs::path dir = temp_dir("dataset");
  SynthParams p;
  p.num_classes = 5;
  p.size_px = 120;
  p.cloud_fraction = 0.1;
  Manifest man = synthesize_dataset(99, 4, p, dir);

  SUBCASE("manifest reload equals the saved structure") {
    Manifest back = Manifest::load(dir / "manifest.json");
    CHECK(back.scenes.size() == man.scenes.size());
    CHECK(back.classes.size() == man.classes.size());
    CHECK(back.normalization.mean == man.normalization.mean);
    CHECK(back.normalization.stddev == man.normalization.stddev);
    for (size_t i = 0; i < man.scenes.size(); ++i) {
      CHECK(back.scenes[i].id == man.scenes[i].id);
      CHECK(back.scenes[i].split == man.scenes[i].split);
    }
  }
  SUBCASE("scenes load with identical payloads") {
    Manifest back = Manifest::load(dir / "manifest.json");
    SynthParams pi = p;
    pi.seed = mix_seed(99, 0);
    pi.signature_seed = mix_seed(99, 101);
    Scene want = synthesize_scene(pi);
    Scene got = load_scene(back, back.scene_ref("synth-000"));
    CHECK(max_abs_diff(got.bands, want.bands) == 0.0);  // bit-identical
    for (int64_t i = 0; i < want.labels.numel(); ++i)
      CHECK(got.labels[i] == want.labels[i]);
  }
  SUBCASE("validate passes on a healthy dataset") {
    Manifest back = Manifest::load(dir / "manifest.json");
    CHECK(validate_manifest(back).empty());
  }
  SUBCASE("a truncated band file is reported") {
    Manifest back = Manifest::load(dir / "manifest.json");
    const fs::path victim = dir / "synth-001" / "B4.erb1";
    fs::resize_file(victim, 100);
    const auto problems = validate_manifest(back);
    CHECK_FALSE(problems.empty());
  }
  SUBCASE("labels outside the class table are a load error") {
    Manifest back = Manifest::load(dir / "manifest.json");
    const auto& ref = back.scene_ref("synth-002");
    Tensor<uint16_t> labels = read_erb1_u16(
        dir / ref.labels_file,
        {8, 8});
    labels[0] = 999;  // not a legend code
    write_erb1_u16(dir / ref.labels_file, labels);
    CHECK_THROWS_AS((void)load_scene(back, ref), DataError);
  }
}

TEST_CASE("band resampling on ingestion") {
  const fs::path dir = temp_dir("resample");
  // hand-build a manifest with one 2-band scene: B2 at 10 m/px, B1 at
  // 60 m/px, target 20 m/px, 12x12
  auto rng = make_rng(41);
  Tensor<float> b2 = random_tensor<float>({24, 24}, rng, 0.0f, 1.0f);
  Tensor<float> b1 = random_tensor<float>({4, 4}, rng, 0.0f, 1.0f);
  Tensor<uint16_t> lab = Tensor<uint16_t>::full({1, 1}, 11);
  write_erb1_f32(dir / "b2.erb1", b2);
  write_erb1_f32(dir / "b1.erb1", b1);
  write_erb1_u16(dir / "labels.erb1", lab);

  Manifest man;
  man.root = dir;
  man.classes = ClassTable::generic(3, false);
  SceneRef r;
  r.id = "mixed";
  r.split = "train";
  r.resolution_m = 20;
  r.width = 12;
  r.height = 12;
  r.bands["B2"] = {"b2.erb1", 10.0};
  r.bands["B1"] = {"b1.erb1", 60.0};
  r.labels_file = "labels.erb1";
  r.label_resolution_m = 300;
  man.scenes.push_back(r);

  Scene s = load_scene(man, man.scenes[0]);
  const int64_t plane = 12 * 12;

  SUBCASE("10 m/px band decimates by an exact 2x2 mean") {
    const int bi = s.band_index("B2");
    for (int y = 0; y < 12; ++y)
      for (int x = 0; x < 12; ++x) {
        const float want =
            (b2[(int64_t)(2 * y) * 24 + 2 * x] +
             b2[(int64_t)(2 * y) * 24 + 2 * x + 1] +
             b2[(int64_t)(2 * y + 1) * 24 + 2 * x] +
             b2[(int64_t)(2 * y + 1) * 24 + 2 * x + 1]) /
            4.0f;
        CHECK(s.bands[bi * plane + (int64_t)y * 12 + x] ==
              doctest::Approx(want).epsilon(1e-6));
      }
  }
  SUBCASE("60 m/px band upsamples x3 bilinearly, matching the oracle") {
    const int bi = s.band_index("B1");
    Tensor<float> plane4({1, 1, 4, 4}, b1.vec());
    Tensor<float> want = ref::bilinear(plane4, 12, 12);
    for (int64_t i = 0; i < plane; ++i)
      CHECK(s.bands[bi * plane + i] ==
            doctest::Approx(want[i]).epsilon(1e-6));
  }
}

TEST_CASE("already-at-resolution bands load bit-identically") {
  const fs::path dir = temp_dir("noop");
  auto rng = make_rng(42);
  Tensor<float> b5 = random_tensor<float>({8, 8}, rng);
  write_erb1_f32(dir / "b5.erb1", b5);
  write_erb1_u16(dir / "labels.erb1", Tensor<uint16_t>::full({1, 1}, 11));
  Manifest man;
  man.root = dir;
  man.classes = ClassTable::generic(2, false);
  SceneRef r;
  r.id = "noop";
  r.split = "train";
  r.resolution_m = 20;
  r.width = 8;
  r.height = 8;
  r.bands["B5"] = {"b5.erb1", 0};
  r.labels_file = "labels.erb1";
  r.label_resolution_m = 300;
  man.scenes.push_back(r);
  Scene s = load_scene(man, man.scenes[0]);
  CHECK(max_abs_diff(Tensor<float>({8, 8}, std::vector<float>(
                                               s.bands.vec())),
                     b5) == 0.0);
}

TEST_CASE("band subsets") {
  SynthParams p;
  p.size_px = 60;
  p.num_classes = 3;
  Scene s = synthesize_scene(p);
  SUBCASE("all13 keeps everything") {
    Scene a = band_subset(s, BandMode::kAll13);
    CHECK(a.band_count() == 13);
  }
  SUBCASE("nine-band mode keeps B1..B8a and drops the rest") {
    Scene n = band_subset(s, BandMode::kNineB1ToB8a);
    CHECK(n.band_count() == 9);
    CHECK(n.band_ids.front() == "B1");
    CHECK(n.band_ids.back() == "B8a");
    CHECK_THROWS_AS((void)n.band_index("B11"), DataError);
    // payload intact
    const int64_t plane = (int64_t)s.height() * s.width();
    for (int b = 0; b < 9; ++b)
      CHECK(n.bands[b * plane] == s.bands[b * plane]);
  }
}

TEST_CASE("tiling: counts, determinism, NO_DATA skipping") {
  SynthParams p;
  p.size_px = 128;
  p.num_classes = 3;
  p.seed = 5;
  Scene s = synthesize_scene(p);

  SUBCASE("64-px tiles with stride 64 over 128 px give 4 tiles") {
    auto tiles = tile_scene(s, 64, 64, 1);
    CHECK(tiles.size() == 4);
  }
  SUBCASE("tile count matches the closed-form floor formula") {
    auto rng = make_rng(51);
    for (int i = 0; i < 10; ++i) {
      std::uniform_int_distribution<int> sz(70, 140), st(16, 48);
      SynthParams q;
      q.size_px = sz(rng);
      q.num_classes = 3;
      q.seed = 60 + i;
      Scene sc = synthesize_scene(q);
      const int tile = 64, stride = st(rng);
      auto tiles = tile_scene(sc, tile, stride, 1);
      const int per_axis = (q.size_px - tile) / stride + 1;
      CHECK(tiles.size() == size_t(per_axis) * size_t(per_axis));
    }
  }
  SUBCASE("fixed seed fixes the order") {
    auto a = tile_scene(s, 32, 32, 9);
    auto b = tile_scene(s, 32, 32, 9);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].y0 == b[i].y0);
      CHECK(a[i].x0 == b[i].x0);
    }
    auto c = tile_scene(s, 32, 32, 10);
    bool same = true;
    for (size_t i = 0; i < a.size(); ++i)
      if (a[i].y0 != c[i].y0 || a[i].x0 != c[i].x0) same = false;
    CHECK_FALSE(same);
  }
  SUBCASE("fully NO_DATA tiles are skipped") {
    Scene nd = s;
    // blank the label cells backing the left tile column (band x < 75)
    for (int y = 0; y < nd.label_height(); ++y)
      for (int x = 0; x < 5; ++x)
        nd.labels[(int64_t)y * nd.label_width() + x] = kNoDataLabel;
    auto tiles = tile_scene(nd, 64, 64, 1);
    CHECK(tiles.size() < 4);
    for (const auto& t : tiles) {
      bool any = false;
      for (int64_t i = 0; i < t.labels_fine.numel(); ++i)
        if (t.labels_fine[i] != kNoDataLabel) any = true;
      CHECK(any);
    }
  }
  SUBCASE("every tile label histogram is a sub-histogram of the scene's") {
    auto tiles = tile_scene(s, 64, 32, 2);
    std::map<uint16_t, int64_t> scene_hist;
    Tensor<uint16_t> up = interpolate_labels(s.labels, 15);
    for (int y = 0; y < s.height(); ++y)
      for (int x = 0; x < s.width(); ++x)
        ++scene_hist[label_at_band_pixel(s, y, x)];
    std::map<uint16_t, int64_t> tile_hist;
    for (const auto& t : tiles) {
      tile_hist.clear();
      for (int64_t i = 0; i < t.labels_fine.numel(); ++i)
        ++tile_hist[t.labels_fine[i]];
      for (const auto& [k, v] : tile_hist) CHECK(v <= scene_hist[k]);
    }
  }
  SUBCASE("aligned offsets are multiples of the resolution ratio") {
    for (const auto& [y, x] : tile_offsets(s, 64, 32, true)) {
      CHECK(y % 15 == 0);
      CHECK(x % 15 == 0);
    }
  }
}

TEST_CASE("co-registration holds for generated scenes") {
  for (int size : {64, 120, 240}) {
    SynthParams p;
    p.size_px = size;
    p.num_classes = 3;
    Scene s = synthesize_scene(p);  // throws on violation
    CHECK(std::abs(s.height() * s.resolution_m -
                   s.label_height() * s.label_resolution_m) <=
          s.label_resolution_m);
  }
}

TEST_CASE("coarse label cells of aligned tiles match the pooled grid") {
  SynthParams p;
  p.size_px = 240;
  p.num_classes = 4;
  Scene s = synthesize_scene(p);
  Tile t = cut_tile(s, 15, 30, 96);
  CHECK(t.aligned);
  CHECK(t.labels_coarse.shape() == Shape{6, 6});
  CHECK(t.ly0 == 1);
  CHECK(t.lx0 == 2);
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 6; ++x)
      CHECK(t.labels_coarse[(int64_t)y * 6 + x] ==
            s.labels[(int64_t)(t.ly0 + y) * s.label_width() + t.lx0 + x]);
}
