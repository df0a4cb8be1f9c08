#include "terracer/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"

namespace terracer {

using nlohmann::json;

// -------------------------------------------------------------- confusion

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (classes == 0) {
    *this = other;
    return;
  }
  if (other.classes != classes)
    throw ConfigError("confusion matrix: class count mismatch in merge");
  for (size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
}

int64_t ConfusionMatrix::total() const {
  int64_t t = 0;
  for (int64_t v : counts) t += v;
  return t;
}

int64_t ConfusionMatrix::support(int ref) const {
  int64_t t = 0;
  for (int p = 0; p < classes; ++p) t += at(ref, p);
  return t;
}

int64_t ConfusionMatrix::predicted(int pred) const {
  int64_t t = 0;
  for (int r = 0; r < classes; ++r) t += at(r, pred);
  return t;
}

double ConfusionMatrix::oa() const {
  const int64_t t = total();
  if (!t) return 0.0;
  int64_t diag = 0;
  for (int c = 0; c < classes; ++c) diag += at(c, c);
  return double(diag) / double(t);
}

double ConfusionMatrix::recall(int id) const {
  const int64_t s = support(id);
  return s ? double(at(id, id)) / double(s) : 0.0;
}

double ConfusionMatrix::precision(int id) const {
  const int64_t s = predicted(id);
  return s ? double(at(id, id)) / double(s) : 0.0;
}

// ---------------------------------------------------------------- erosion

std::vector<std::pair<int, int>> erosion_disk(double radius_m,
                                              double resolution_m) {
  std::vector<std::pair<int, int>> disk;
  if (radius_m <= 0) return disk;
  const int reach = static_cast<int>(radius_m / resolution_m) + 1;
  for (int dy = -reach; dy <= reach; ++dy)
    for (int dx = -reach; dx <= reach; ++dx) {
      if (dy == 0 && dx == 0) continue;
      const double ey = std::max(0.0, std::abs(dy) - 0.5) * resolution_m;
      const double ex = std::max(0.0, std::abs(dx) - 0.5) * resolution_m;
      if (std::sqrt(ey * ey + ex * ex) <= radius_m) disk.emplace_back(dy, dx);
    }
  return disk;
}

Tensor<uint8_t> erode_reference(const Tensor<uint16_t>& labels,
                                double radius_m, double resolution_m) {
  if (labels.rank() != 2)
    throw ConfigError("erode_reference: labels must be a 2D raster");
  if (radius_m < 0) throw ConfigError("erode_reference: negative radius");
  const int h = labels.dim(0), w = labels.dim(1);
  Tensor<uint8_t> mask({h, w});
  const auto disk = erosion_disk(radius_m, resolution_m);
  if (disk.empty()) return mask;

  // Splatting from 8-boundary pixels covers every qualifying pair: the
  // nearest differently-labelled pixel of any pixel is itself adjacent to
  // a differently-labelled pixel.
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const uint16_t me = labels[(int64_t)y * w + x];
      bool boundary = false;
      for (int dy = -1; dy <= 1 && !boundary; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int yy = y + dy, xx = x + dx;
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
          if (labels[(int64_t)yy * w + xx] != me) {
            boundary = true;
            break;
          }
        }
      if (!boundary) continue;
      for (const auto& [dy, dx] : disk) {
        const int yy = y + dy, xx = x + dx;
        if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
        if (labels[(int64_t)yy * w + xx] != me)
          mask[(int64_t)yy * w + xx] = 1;
      }
    }
  return mask;
}

// -------------------------------------------------------------- predict

namespace {

Tensor<uint16_t> argmax_map(const Tensor<float>& logits) {
  const int c = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
  const int64_t plane = (int64_t)h * w;
  Tensor<uint16_t> out({h, w});
  for (int64_t i = 0; i < plane; ++i) {
    int best = 0;
    float bv = logits[i];
    for (int ch = 1; ch < c; ++ch) {
      const float v = logits[(int64_t)ch * plane + i];
      if (v > bv) {  // strict: ties keep the smaller class id
        bv = v;
        best = ch;
      }
    }
    out[i] = static_cast<uint16_t>(best);
  }
  return out;
}

// normalized band stack as a [1,B,H,W] tensor
Tensor<float> prepare_input(const Scene& scene, const Normalization& norm) {
  Tensor<float> bands = scene.bands;
  norm.apply(bands, scene.band_ids);
  return Tensor<float>({1, scene.band_count(), scene.height(), scene.width()},
                       std::move(bands.vec()));
}

Tensor<float> zero_pad_hw(const Tensor<float>& in, int ph, int pw) {
  const int n = in.dim(0), c = in.dim(1), h = in.dim(2), w = in.dim(3);
  if (ph == h && pw == w) return in;
  Tensor<float> out({n, c, ph, pw});
  for (int64_t pl = 0; pl < (int64_t)n * c; ++pl)
    for (int y = 0; y < h; ++y)
      std::copy(in.data() + (pl * h + y) * w, in.data() + (pl * h + y) * w + w,
                out.data() + (pl * ph + y) * pw);
  return out;
}

Tensor<float> crop_hw(const Tensor<float>& in, int h, int w) {
  const int n = in.dim(0), c = in.dim(1), ih = in.dim(2), iw = in.dim(3);
  if (ih == h && iw == w) return in;
  Tensor<float> out({n, c, h, w});
  for (int64_t pl = 0; pl < (int64_t)n * c; ++pl)
    for (int y = 0; y < h; ++y)
      std::copy(in.data() + (pl * ih + y) * iw,
                in.data() + (pl * ih + y) * iw + w,
                out.data() + (pl * h + y) * w);
  return out;
}

int round_up(int v, int m) { return (v + m - 1) / m * m; }

Tensor<float> forward_logits_fine(const Model<float>& model,
                                  const Tensor<float>& input) {
  NoGradGuard ng;
  const int h = input.dim(2), w = input.dim(3);
  const int ph = round_up(h, model.divisibility);
  const int pw = round_up(w, model.divisibility);
  auto x = make_leaf(zero_pad_hw(input, ph, pw));
  auto heads = model.forward(x, false);
  return crop_hw(heads[0]->value, h, w);
}

Tensor<float> forward_pooled_coarse(const Model<float>& model,
                                    const Tensor<float>& input,
                                    int pool_factor) {
  NoGradGuard ng;
  const int h = input.dim(2), w = input.dim(3);
  const int ph = round_up(h, model.divisibility);
  const int pw = round_up(w, model.divisibility);
  auto x = make_leaf(zero_pad_hw(input, ph, pw));
  auto heads = model.forward(x, false);
  Var<float> acc;
  for (const auto& hd : heads) {
    Var<float> up = (hd->value.dim(2) == ph && hd->value.dim(3) == pw)
                        ? hd
                        : ops::upsample_bilinear(hd, ph, pw);
    acc = acc ? ops::add(acc, up) : up;
  }
  Var<float> avg =
      ops::scale(acc, 1.0f / static_cast<float>(heads.size()));
  Tensor<float> cropped = crop_hw(avg->value, h, w);
  auto pooled = ops::avgpool2d(make_leaf(std::move(cropped)), pool_factor);
  return pooled->value;
}

}  // namespace

Tensor<uint16_t> predict_map(const Model<float>& model, const Scene& scene_in,
                             const Normalization& norm,
                             const std::string& strategy, int tile_px,
                             int halo_px) {
  const Scene* scene = &scene_in;
  Scene subset;
  if (model.input_bands == 9 && scene_in.band_count() != 9) {
    subset = band_subset(scene_in, BandMode::kNineB1ToB8a);
    scene = &subset;
  }
  if (scene->band_count() != model.input_bands)
    throw ConfigError("predict: scene provides " +
                      std::to_string(scene->band_count()) +
                      " bands, model expects " +
                      std::to_string(model.input_bands));
  std::string strat = strategy;
  if (strat == "auto") strat = model.family == "segnet" ? "coarse" : "fine";

  const Tensor<float> input = prepare_input(*scene, norm);
  const int h = scene->height(), w = scene->width();

  if (strat == "coarse") {
    const int pf =
        (int)std::lround(scene->label_resolution_m / scene->resolution_m);
    return argmax_map(forward_pooled_coarse(model, input, pf));
  }
  if (strat != "fine")
    throw ConfigError("predict: strategy must be fine|coarse|auto");

  if (tile_px <= 0) return argmax_map(forward_logits_fine(model, input));

  // Windowed prediction: forward each core plus surrounding context, keep
  // the core. The window is clipped to the scene rather than zero-filled,
  // so true scene borders keep the same implicit conv padding as the
  // whole-scene run; with halo >= half the receptive field (and tile,
  // halo, extents multiples of the model divisibility) the stitched map
  // is pixelwise identical.
  Tensor<uint16_t> out({h, w});
  const int b = input.dim(1);
  std::vector<int> ys, xs;
  for (int y = 0;; y += tile_px) {
    if (y + tile_px >= h) {
      ys.push_back(std::max(0, h - tile_px));
      break;
    }
    ys.push_back(y);
  }
  for (int x = 0;; x += tile_px) {
    if (x + tile_px >= w) {
      xs.push_back(std::max(0, w - tile_px));
      break;
    }
    xs.push_back(x);
  }
  for (int y0 : ys)
    for (int x0 : xs) {
      const int wy0 = std::max(0, y0 - halo_px);
      const int wx0 = std::max(0, x0 - halo_px);
      const int wy1 = std::min(h, y0 + tile_px + halo_px);
      const int wx1 = std::min(w, x0 + tile_px + halo_px);
      const int wh = wy1 - wy0, ww = wx1 - wx0;
      Tensor<float> window({1, b, wh, ww});
      for (int bi = 0; bi < b; ++bi)
        for (int y = 0; y < wh; ++y)
          std::copy(input.data() + ((int64_t)bi * h + wy0 + y) * w + wx0,
                    input.data() + ((int64_t)bi * h + wy0 + y) * w + wx1,
                    window.data() + ((int64_t)bi * wh + y) * ww);
      Tensor<float> logits = forward_logits_fine(model, window);
      Tensor<uint16_t> lab = argmax_map(logits);
      const int cy = y0 - wy0, cx = x0 - wx0;
      for (int y = 0; y < tile_px && y0 + y < h; ++y)
        for (int x = 0; x < tile_px && x0 + x < w; ++x)
          out[(int64_t)(y0 + y) * w + x0 + x] =
              lab[(int64_t)(cy + y) * ww + cx + x];
    }
  return out;
}

// --------------------------------------------------------------- evaluate

EvalResult evaluate(const Model<float>& model, const Manifest& manifest,
                    const std::string& split, double erode_m,
                    const std::string& strategy) {
  std::string strat = strategy;
  if (strat == "auto") strat = model.family == "segnet" ? "coarse" : "fine";

  EvalResult res;
  res.erode_m = erode_m;
  res.grid = strat;
  res.confusion = ConfusionMatrix(model.num_classes);

  const auto refs = manifest.split_refs(split);
  if (refs.empty())
    throw DataError("evaluate: split '" + split + "' has no scenes");

  for (const SceneRef* r : refs) {
    Scene scene = load_scene(manifest, *r);
    Tensor<uint16_t> pred =
        predict_map(model, scene, manifest.normalization, strat);

    Tensor<uint16_t> ref;
    double grid_res = 0;
    if (strat == "fine") {
      ref = Tensor<uint16_t>({scene.height(), scene.width()});
      for (int y = 0; y < scene.height(); ++y)
        for (int x = 0; x < scene.width(); ++x)
          ref[(int64_t)y * scene.width() + x] =
              label_at_band_pixel(scene, y, x);
      grid_res = scene.resolution_m;
    } else {
      const int lh = std::min(pred.dim(0), scene.label_height());
      const int lw = std::min(pred.dim(1), scene.label_width());
      ref = Tensor<uint16_t>({lh, lw});
      for (int y = 0; y < lh; ++y)
        for (int x = 0; x < lw; ++x)
          ref[(int64_t)y * lw + x] =
              scene.labels[(int64_t)y * scene.label_width() + x];
      grid_res = scene.label_resolution_m;
    }

    const Tensor<uint8_t> excluded = erode_reference(ref, erode_m, grid_res);
    const int gh = ref.dim(0), gw = ref.dim(1);
    for (int y = 0; y < gh; ++y)
      for (int x = 0; x < gw; ++x) {
        const uint16_t rv = ref[(int64_t)y * gw + x];
        if (rv == kNoDataLabel) continue;
        if (excluded[(int64_t)y * gw + x]) {
          ++res.excluded;
          continue;
        }
        const uint16_t pv = pred[(int64_t)y * pred.dim(1) + x];
        res.confusion.add(rv, pv);
        ++res.evaluated;
      }
  }
  return res;
}

std::string eval_report_json(const EvalResult& result,
                             const ClassTable& classes) {
  json j;
  j["oa"] = result.oa();
  j["erode_m"] = result.erode_m;
  j["grid"] = result.grid;
  j["excluded_fraction"] = result.excluded_fraction();
  j["evaluated_pixels"] = result.evaluated;
  json per = json::array();
  for (int c = 0; c < result.confusion.classes; ++c) {
    std::string name =
        c < classes.size() ? classes.name_of(c) : "class-" + std::to_string(c);
    per.push_back({{"id", c},
                   {"name", name},
                   {"recall", result.confusion.recall(c)},
                   {"precision", result.confusion.precision(c)},
                   {"support", result.confusion.support(c)}});
  }
  j["per_class"] = per;
  json cm = json::array();
  for (int r = 0; r < result.confusion.classes; ++r) {
    json row = json::array();
    for (int p = 0; p < result.confusion.classes; ++p)
      row.push_back(result.confusion.at(r, p));
    cm.push_back(std::move(row));
  }
  j["confusion"] = cm;

  // largest off-diagonal cells: the class pairs the model mixes up most
  std::vector<std::tuple<int64_t, int, int>> off;
  for (int r = 0; r < result.confusion.classes; ++r)
    for (int p = 0; p < result.confusion.classes; ++p)
      if (r != p && result.confusion.at(r, p) > 0)
        off.emplace_back(result.confusion.at(r, p), r, p);
  std::sort(off.rbegin(), off.rend());
  json conf = json::array();
  for (size_t i = 0; i < std::min<size_t>(off.size(), 5); ++i) {
    const auto& [count, r, p] = off[i];
    conf.push_back({{"reference", r},
                    {"predicted", p},
                    {"reference_name",
                     r < classes.size() ? classes.name_of(r) : ""},
                    {"predicted_name",
                     p < classes.size() ? classes.name_of(p) : ""},
                    {"count", count}});
  }
  j["most_confused"] = conf;
  return j.dump(2);
}

// ------------------------------------------------------------------- ppm

void write_label_ppm(const std::filesystem::path& path,
                     const Tensor<uint16_t>& labels) {
  const int h = labels.dim(0), w = labels.dim(1);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("ppm: cannot open " + path.string());
  os << "P6\n" << w << " " << h << "\n255\n";
  auto color = [](int id, unsigned char rgb[3]) {
    // golden-angle hue wheel, fixed saturation/value
    const double hue = std::fmod(id * 0.61803398875, 1.0) * 6.0;
    const double s = 0.65, v = 0.95;
    const int i = static_cast<int>(hue);
    const double f = hue - i;
    const double p = v * (1 - s), q = v * (1 - s * f),
                 t = v * (1 - s * (1 - f));
    double r, g, b;
    switch (i % 6) {
      case 0: r = v; g = t; b = p; break;
      case 1: r = q; g = v; b = p; break;
      case 2: r = p; g = v; b = t; break;
      case 3: r = p; g = q; b = v; break;
      case 4: r = t; g = p; b = v; break;
      default: r = v; g = p; b = q; break;
    }
    rgb[0] = static_cast<unsigned char>(r * 255);
    rgb[1] = static_cast<unsigned char>(g * 255);
    rgb[2] = static_cast<unsigned char>(b * 255);
  };
  std::vector<unsigned char> row(static_cast<size_t>(w) * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const uint16_t v = labels[(int64_t)y * w + x];
      unsigned char* px = &row[static_cast<size_t>(x) * 3];
      if (v == kNoDataLabel) {
        px[0] = px[1] = px[2] = 0;
      } else {
        color(v, px);
      }
    }
    os.write(reinterpret_cast<const char*>(row.data()),
             static_cast<std::streamsize>(row.size()));
  }
}

// -------------------------------------------------------------- baselines

double majority_class_oa(const Manifest& manifest, const std::string& split) {
  std::vector<int64_t> hist(manifest.classes.size(), 0);
  for (const SceneRef* r : manifest.split_refs("train")) {
    Scene s = load_scene(manifest, *r);
    for (int64_t i = 0; i < s.labels.numel(); ++i)
      if (s.labels[i] != kNoDataLabel) ++hist[s.labels[i]];
  }
  int majority = 0;
  for (size_t c = 1; c < hist.size(); ++c)
    if (hist[c] > hist[majority]) majority = static_cast<int>(c);

  int64_t hit = 0, tot = 0;
  for (const SceneRef* r : manifest.split_refs(split)) {
    Scene s = load_scene(manifest, *r);
    for (int64_t i = 0; i < s.labels.numel(); ++i) {
      if (s.labels[i] == kNoDataLabel) continue;
      if (s.labels[i] == majority) ++hit;
      ++tot;
    }
  }
  return tot ? double(hit) / double(tot) : 0.0;
}

double nearest_centroid_oa(const Manifest& manifest, const std::string& split,
                           double erode_m) {
  const int classes = manifest.classes.size();
  // per-class mean spectrum over label cells of the training split
  auto cell_spectrum = [](const Scene& s, int ly, int lx,
                          std::vector<double>& out) {
    const int ratio =
        (int)std::lround(s.label_resolution_m / s.resolution_m);
    out.assign(static_cast<size_t>(s.band_count()), 0.0);
    int cnt = 0;
    for (int y = ly * ratio; y < std::min((ly + 1) * ratio, s.height()); ++y)
      for (int x = lx * ratio; x < std::min((lx + 1) * ratio, s.width());
           ++x) {
        for (int b = 0; b < s.band_count(); ++b)
          out[static_cast<size_t>(b)] +=
              s.bands[((int64_t)b * s.height() + y) * s.width() + x];
        ++cnt;
      }
    if (cnt)
      for (auto& v : out) v /= cnt;
    return cnt > 0;
  };

  std::vector<std::vector<double>> centroid(
      static_cast<size_t>(classes));
  std::vector<int64_t> counts(static_cast<size_t>(classes), 0);
  int bands = 0;
  for (const SceneRef* r : manifest.split_refs("train")) {
    Scene s = load_scene(manifest, *r);
    bands = s.band_count();
    std::vector<double> spec;
    for (int ly = 0; ly < s.label_height(); ++ly)
      for (int lx = 0; lx < s.label_width(); ++lx) {
        const uint16_t lab = s.labels[(int64_t)ly * s.label_width() + lx];
        if (lab == kNoDataLabel) continue;
        if (!cell_spectrum(s, ly, lx, spec)) continue;
        auto& c = centroid[lab];
        if (c.empty()) c.assign(static_cast<size_t>(bands), 0.0);
        for (int b = 0; b < bands; ++b) c[static_cast<size_t>(b)] += spec[static_cast<size_t>(b)];
        ++counts[lab];
      }
  }
  for (int c = 0; c < classes; ++c)
    if (counts[static_cast<size_t>(c)])
      for (auto& v : centroid[static_cast<size_t>(c)])
        v /= double(counts[static_cast<size_t>(c)]);

  ConfusionMatrix cm(classes);
  for (const SceneRef* r : manifest.split_refs(split)) {
    Scene s = load_scene(manifest, *r);
    Tensor<uint8_t> excl = erode_reference(s.labels, erode_m,
                                           s.label_resolution_m);
    std::vector<double> spec;
    for (int ly = 0; ly < s.label_height(); ++ly)
      for (int lx = 0; lx < s.label_width(); ++lx) {
        const uint16_t lab = s.labels[(int64_t)ly * s.label_width() + lx];
        if (lab == kNoDataLabel || excl[(int64_t)ly * s.label_width() + lx])
          continue;
        if (!cell_spectrum(s, ly, lx, spec)) continue;
        int best = -1;
        double bd = 0;
        for (int c = 0; c < classes; ++c) {
          if (centroid[static_cast<size_t>(c)].empty()) continue;
          double d = 0;
          for (int b = 0; b < bands; ++b) {
            const double diff =
                spec[static_cast<size_t>(b)] -
                centroid[static_cast<size_t>(c)][static_cast<size_t>(b)];
            d += diff * diff;
          }
          if (best < 0 || d < bd) {
            bd = d;
            best = c;
          }
        }
        if (best >= 0) cm.add(lab, best);
      }
  }
  return cm.oa();
}

}  // namespace terracer
