#include "terracer/raster.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include "json.hpp"
#include "terracer/kernels.hpp"
#include "terracer/rng.hpp"

namespace terracer {

using nlohmann::json;

// ------------------------------------------------------------ class table

namespace {

struct LegendRow {
  int code;
  const char* name;
};

// GlobCover-style legend used for generated datasets.
const LegendRow kLegend[] = {
    {11, "Post-flooding or irrigated croplands"},
    {14, "Rainfed croplands"},
    {15, "Mosaic cropland / herbaceous cover"},
    {20, "Mosaic cropland / vegetation"},
    {30, "Mosaic vegetation / cropland"},
    {40, "Closed to open broadleaved evergreen forest"},
    {50, "Closed broadleaved deciduous forest"},
    {60, "Open broadleaved deciduous forest"},
    {70, "Closed needleleaved evergreen forest"},
    {90, "Open needleleaved deciduous or evergreen forest"},
    {100, "Closed to open mixed forest"},
    {110, "Mosaic forest or shrubland / grassland"},
    {120, "Mosaic grassland / forest or shrubland"},
    {130, "Closed to open shrubland"},
    {140, "Closed to open grassland"},
    {150, "Sparse vegetation"},
    {160, "Closed to open flooded broadleaved forest"},
    {170, "Closed flooded forest"},
    {180, "Closed to open flooded grassland"},
    {190, "Artificial surfaces"},
    {200, "Bare areas"},
    {210, "Water bodies"},
    {220, "Permanent snow and ice"},
};
constexpr int kLegendSize = static_cast<int>(sizeof(kLegend) / sizeof(kLegend[0]));
constexpr int kCloudCode = 250;

}  // namespace

int ClassTable::id_from_code(int code) const {
  for (const auto& e : entries)
    if (e.globcover_code == code) return e.id;
  throw DataError("class table: unknown land-cover code " +
                  std::to_string(code));
}

int ClassTable::code_from_id(int id) const {
  for (const auto& e : entries)
    if (e.id == id) return e.globcover_code;
  throw DataError("class table: unknown class id " + std::to_string(id));
}

const std::string& ClassTable::name_of(int id) const {
  for (const auto& e : entries)
    if (e.id == id) return e.name;
  throw DataError("class table: unknown class id " + std::to_string(id));
}

void ClassTable::validate() const {
  if (entries.empty()) throw ConfigError("class table: empty");
  std::set<int> ids, codes;
  for (const auto& e : entries) {
    if (!ids.insert(e.id).second)
      throw ConfigError("class table: duplicate id " + std::to_string(e.id));
    if (!codes.insert(e.globcover_code).second)
      throw ConfigError("class table: duplicate code " +
                        std::to_string(e.globcover_code));
  }
  for (int i = 0; i < size(); ++i)
    if (!ids.count(i))
      throw ConfigError("class table: ids are not contiguous 0.." +
                        std::to_string(size() - 1));
  if (cloud_class && (*cloud_class < 0 || *cloud_class >= size()))
    throw ConfigError("class table: cloud class id out of range");
}

ClassTable ClassTable::generic(int num_classes, bool with_clouds) {
  if (num_classes <= 0) throw ConfigError("class table: need >= 1 class");
  ClassTable t;
  for (int i = 0; i < num_classes; ++i) {
    ClassEntry e;
    if (i < kLegendSize) {
      e.globcover_code = kLegend[i].code;
      e.name = kLegend[i].name;
    } else {
      e.globcover_code = 231 + i - kLegendSize;
      e.name = "Land cover class " + std::to_string(i);
    }
    e.id = i;
    t.entries.push_back(std::move(e));
  }
  if (with_clouds) {
    t.entries.push_back({kCloudCode, num_classes, "Clouds"});
    t.cloud_class = num_classes;
  }
  t.validate();
  return t;
}

// ------------------------------------------------------------------ scene

int Scene::band_index(const std::string& name) const {
  for (size_t i = 0; i < band_ids.size(); ++i)
    if (band_ids[i] == name) return static_cast<int>(i);
  throw DataError("scene " + id + ": band " + name + " not present");
}

void Scene::check_coregistration() const {
  const double dh = std::abs(height() * resolution_m -
                             label_height() * label_resolution_m);
  const double dw =
      std::abs(width() * resolution_m - label_width() * label_resolution_m);
  if (dh > label_resolution_m || dw > label_resolution_m)
    throw DataError("scene " + id +
                    ": band and label footprints disagree by more than one "
                    "label pixel");
}

Scene band_subset(const Scene& scene, BandMode mode) {
  if (mode == BandMode::kAll13) return scene;
  const auto& order = sentinel2_band_order();
  std::vector<std::string> wanted(order.begin(), order.begin() + 9);  // ..B8a
  Scene out = scene;
  out.band_ids = wanted;
  out.bands = Tensor<float>({9, scene.height(), scene.width()});
  const int64_t plane = (int64_t)scene.height() * scene.width();
  for (int i = 0; i < 9; ++i) {
    const int src = scene.band_index(wanted[i]);
    std::copy(scene.bands.data() + src * plane,
              scene.bands.data() + (src + 1) * plane,
              out.bands.data() + i * plane);
  }
  return out;
}

// ------------------------------------------------------------- resampling

Tensor<uint16_t> interpolate_labels(const Tensor<uint16_t>& labels,
                                    int factor) {
  if (factor < 1) throw ConfigError("interpolate_labels: factor must be >= 1");
  const int h = labels.dim(0), w = labels.dim(1);
  Tensor<uint16_t> out({h * factor, w * factor});
  for (int y = 0; y < h * factor; ++y)
    for (int x = 0; x < w * factor; ++x)
      out[(int64_t)y * w * factor + x] =
          labels[(int64_t)(y / factor) * w + x / factor];
  return out;
}

uint16_t label_at_band_pixel(const Scene& scene, int y, int x) {
  const double ratio = scene.label_resolution_m / scene.resolution_m;
  int ly = static_cast<int>(std::floor((y + 0.5) / ratio));
  int lx = static_cast<int>(std::floor((x + 0.5) / ratio));
  ly = std::clamp(ly, 0, scene.label_height() - 1);
  lx = std::clamp(lx, 0, scene.label_width() - 1);
  return scene.labels[(int64_t)ly * scene.label_width() + lx];
}

Tensor<float> resample_bilinear_plane(const Tensor<float>& plane, int oh,
                                      int ow) {
  const int h = plane.dim(0), w = plane.dim(1);
  Tensor<float> out({oh, ow});
  kernels::bilinear_forward(plane.data(), out.data(), 1, 1, h, w, oh, ow);
  return out;
}

Tensor<float> box_downsample_plane(const Tensor<float>& plane, int factor) {
  const int h = plane.dim(0), w = plane.dim(1);
  if (factor < 1 || h % factor != 0 || w % factor != 0)
    throw DataError("box_downsample_plane: extents not divisible by factor " +
                    std::to_string(factor));
  const int oh = h / factor, ow = w / factor;
  Tensor<float> out({oh, ow});
  kernels::avgpool_forward(plane.data(), out.data(), 1, 1, h, w, factor, oh,
                           ow);
  return out;
}

// --------------------------------------------------------------- manifest

void Normalization::apply(Tensor<float>& bands,
                          const std::vector<std::string>& band_ids) const {
  if (empty()) return;
  const auto& order = sentinel2_band_order();
  const int64_t plane = (int64_t)bands.dim(1) * bands.dim(2);
  for (int b = 0; b < bands.dim(0); ++b) {
    size_t k = 0;
    while (k < order.size() && order[k] != band_ids[b]) ++k;
    if (k == order.size() || k >= mean.size())
      throw DataError("normalization: no statistics for band " + band_ids[b]);
    const float mu = static_cast<float>(mean[k]);
    const float sd = stddev[k] > 0 ? static_cast<float>(stddev[k]) : 1.0f;
    float* p = bands.data() + b * plane;
    for (int64_t i = 0; i < plane; ++i) p[i] = (p[i] - mu) / sd;
  }
}

namespace {

json class_table_to_json(const ClassTable& t) {
  json arr = json::array();
  for (const auto& e : t.entries)
    arr.push_back({{"code", e.globcover_code}, {"id", e.id}, {"name", e.name}});
  json j;
  j["classes"] = arr;
  if (t.cloud_class) j["cloud_class"] = *t.cloud_class;
  return j;
}

ClassTable class_table_from_json(const json& j) {
  ClassTable t;
  for (const auto& e : j.at("classes"))
    t.entries.push_back({e.at("code").get<int>(), e.at("id").get<int>(),
                         e.at("name").get<std::string>()});
  if (j.contains("cloud_class") && !j["cloud_class"].is_null())
    t.cloud_class = j["cloud_class"].get<int>();
  t.validate();
  return t;
}

}  // namespace

Manifest Manifest::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("manifest: cannot open " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw DataError("manifest: invalid JSON in " + path.string() + ": " +
                    e.what());
  }
  Manifest m;
  m.root = path.parent_path();
  m.version = j.value("version", 1);
  m.classes = class_table_from_json(j.at("class_table"));
  if (j.contains("normalization") && !j["normalization"].is_null()) {
    m.normalization.mean =
        j["normalization"].at("mean").get<std::vector<double>>();
    m.normalization.stddev =
        j["normalization"].at("std").get<std::vector<double>>();
    if (m.normalization.mean.size() != m.normalization.stddev.size())
      throw DataError("manifest: normalization mean/std length mismatch");
  }
  for (const auto& s : j.at("scenes")) {
    SceneRef r;
    r.id = s.at("id").get<std::string>();
    r.split = s.at("split").get<std::string>();
    if (r.split != "train" && r.split != "test")
      throw DataError("manifest: scene " + r.id + ": split must be train|test");
    r.resolution_m = s.at("resolution_m").get<double>();
    r.width = s.at("width").get<int>();
    r.height = s.at("height").get<int>();
    for (const auto& [name, v] : s.at("bands").items()) {
      BandFileRef b;
      if (v.is_string()) {
        b.file = v.get<std::string>();
      } else {
        b.file = v.at("file").get<std::string>();
        b.resolution_m = v.value("resolution_m", 0.0);
      }
      r.bands[name] = std::move(b);
    }
    r.labels_file = s.at("labels_file").get<std::string>();
    r.label_resolution_m = s.at("label_resolution_m").get<double>();
    r.acquired = s.value("acquired", "");
    r.cloud_mask_file = s.value("cloud_mask_file", "");
    m.scenes.push_back(std::move(r));
  }
  return m;
}

void Manifest::save(const std::filesystem::path& path) const {
  json j;
  j["version"] = version;
  j["class_table"] = class_table_to_json(classes);
  if (!normalization.empty())
    j["normalization"] = {{"mean", normalization.mean},
                          {"std", normalization.stddev}};
  json arr = json::array();
  for (const auto& r : scenes) {
    json s;
    s["id"] = r.id;
    s["split"] = r.split;
    s["resolution_m"] = r.resolution_m;
    s["width"] = r.width;
    s["height"] = r.height;
    json bands;
    for (const auto& [name, b] : r.bands) {
      if (b.resolution_m > 0)
        bands[name] = {{"file", b.file}, {"resolution_m", b.resolution_m}};
      else
        bands[name] = b.file;
    }
    s["bands"] = bands;
    s["labels_file"] = r.labels_file;
    s["label_resolution_m"] = r.label_resolution_m;
    s["acquired"] = r.acquired;
    if (!r.cloud_mask_file.empty()) s["cloud_mask_file"] = r.cloud_mask_file;
    arr.push_back(std::move(s));
  }
  j["scenes"] = arr;
  std::ofstream os(path);
  if (!os) throw DataError("manifest: cannot write " + path.string());
  os << j.dump(2) << "\n";
}

const SceneRef& Manifest::scene_ref(const std::string& id) const {
  for (const auto& r : scenes)
    if (r.id == id) return r;
  throw DataError("manifest: no scene with id '" + id + "'");
}

std::vector<const SceneRef*> Manifest::split_refs(
    const std::string& split) const {
  std::vector<const SceneRef*> out;
  for (const auto& r : scenes)
    if (r.split == split) out.push_back(&r);
  return out;
}

// ----------------------------------------------------------------- ERB1 IO

namespace {

void write_raw(const std::filesystem::path& path, const void* data,
               size_t bytes) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("erb1: cannot open for writing: " + path.string());
  os.write(static_cast<const char*>(data),
           static_cast<std::streamsize>(bytes));
  if (!os) throw DataError("erb1: write failed: " + path.string());
}

void read_raw(const std::filesystem::path& path, void* data, size_t bytes) {
  std::ifstream is(path, std::ios::binary | std::ios::ate);
  if (!is) throw DataError("erb1: cannot open: " + path.string());
  const auto size = static_cast<size_t>(is.tellg());
  if (size != bytes)
    throw DataError("erb1: " + path.string() + " holds " +
                    std::to_string(size) + " bytes, expected " +
                    std::to_string(bytes));
  is.seekg(0);
  is.read(static_cast<char*>(data), static_cast<std::streamsize>(bytes));
  if (!is) throw DataError("erb1: read failed: " + path.string());
}

}  // namespace

void write_erb1_f32(const std::filesystem::path& path,
                    const Tensor<float>& t) {
  write_raw(path, t.data(), static_cast<size_t>(t.numel()) * 4);
}

Tensor<float> read_erb1_f32(const std::filesystem::path& path, Shape shape) {
  Tensor<float> t(std::move(shape));
  read_raw(path, t.data(), static_cast<size_t>(t.numel()) * 4);
  return t;
}

void write_erb1_u16(const std::filesystem::path& path,
                    const Tensor<uint16_t>& t) {
  write_raw(path, t.data(), static_cast<size_t>(t.numel()) * 2);
}

Tensor<uint16_t> read_erb1_u16(const std::filesystem::path& path,
                               Shape shape) {
  Tensor<uint16_t> t(std::move(shape));
  read_raw(path, t.data(), static_cast<size_t>(t.numel()) * 2);
  return t;
}

// ------------------------------------------------------------- scene load

namespace {

int label_extent_for(int band_extent, double res, double label_res) {
  return std::max(1, (int)std::lround(band_extent * res / label_res));
}

Tensor<float> load_band_plane(const Manifest& man, const SceneRef& ref,
                              const std::string& name, const BandFileRef& b) {
  const double band_res = b.resolution_m > 0 ? b.resolution_m : ref.resolution_m;
  const auto path = man.root / b.file;
  if (band_res == ref.resolution_m) {
    return read_erb1_f32(path, {ref.height, ref.width});
  }
  if (band_res > ref.resolution_m) {
    // coarser band: bilinear up to the scene grid
    const int bh = std::max(
        1, (int)std::lround(ref.height * ref.resolution_m / band_res));
    const int bw = std::max(
        1, (int)std::lround(ref.width * ref.resolution_m / band_res));
    Tensor<float> raw = read_erb1_f32(path, {bh, bw});
    return resample_bilinear_plane(raw, ref.height, ref.width);
  }
  // finer band: integer box-mean decimation
  const double f = ref.resolution_m / band_res;
  const int factor = (int)std::lround(f);
  if (std::abs(f - factor) > 1e-9)
    throw DataError("scene " + ref.id + ": band " + name + " at " +
                    std::to_string(band_res) +
                    " m/px has a non-integer decimation factor");
  Tensor<float> raw =
      read_erb1_f32(path, {ref.height * factor, ref.width * factor});
  return box_downsample_plane(raw, factor);
}

}  // namespace

Scene load_scene(const Manifest& manifest, const SceneRef& ref) {
  Scene s;
  s.id = ref.id;
  s.split = ref.split;
  s.acquired = ref.acquired;
  s.resolution_m = ref.resolution_m;
  s.label_resolution_m = ref.label_resolution_m;

  const auto& order = sentinel2_band_order();
  for (const auto& [name, b] : ref.bands)
    if (std::find(order.begin(), order.end(), name) == order.end())
      throw DataError("scene " + ref.id + ": unknown band id '" + name + "'");

  std::vector<std::string> present;
  for (const auto& name : order)
    if (ref.bands.count(name)) present.push_back(name);
  if (present.empty())
    throw DataError("scene " + ref.id + ": no bands in manifest entry");

  s.band_ids = present;
  s.bands =
      Tensor<float>({static_cast<int>(present.size()), ref.height, ref.width});
  const int64_t plane = (int64_t)ref.height * ref.width;
  for (size_t i = 0; i < present.size(); ++i) {
    Tensor<float> p =
        load_band_plane(manifest, ref, present[i], ref.bands.at(present[i]));
    std::copy(p.data(), p.data() + plane, s.bands.data() + i * plane);
  }

  const int lh =
      label_extent_for(ref.height, ref.resolution_m, ref.label_resolution_m);
  const int lw =
      label_extent_for(ref.width, ref.resolution_m, ref.label_resolution_m);
  Tensor<uint16_t> codes =
      read_erb1_u16(manifest.root / ref.labels_file, {lh, lw});
  s.labels = Tensor<uint16_t>({lh, lw});
  for (int64_t i = 0; i < codes.numel(); ++i) {
    if (codes[i] == kNoDataLabel) {
      s.labels[i] = kNoDataLabel;
    } else {
      try {
        s.labels[i] = static_cast<uint16_t>(
            manifest.classes.id_from_code(codes[i]));
      } catch (const DataError&) {
        throw DataError("scene " + ref.id + ": label value " +
                        std::to_string(codes[i]) + " outside the class table");
      }
    }
  }

  if (!ref.cloud_mask_file.empty())
    s.cloud_mask = read_erb1_u16(manifest.root / ref.cloud_mask_file, {lh, lw});

  s.check_coregistration();
  return s;
}

std::vector<std::string> validate_manifest(const Manifest& manifest) {
  std::vector<std::string> problems;
  try {
    manifest.classes.validate();
  } catch (const std::exception& e) {
    problems.emplace_back(e.what());
  }
  if (!manifest.normalization.empty() &&
      manifest.normalization.mean.size() != sentinel2_band_order().size())
    problems.push_back("normalization does not cover the 13 sensor bands");
  std::set<std::string> ids;
  for (const auto& r : manifest.scenes) {
    if (!ids.insert(r.id).second)
      problems.push_back("duplicate scene id '" + r.id + "'");
    try {
      Scene s = load_scene(manifest, r);
      (void)s;
    } catch (const std::exception& e) {
      problems.emplace_back(e.what());
    }
  }
  if (manifest.scenes.empty()) problems.emplace_back("manifest lists no scenes");
  return problems;
}

// ------------------------------------------------------------------ tiles

std::vector<std::pair<int, int>> tile_offsets(const Scene& scene, int tile_px,
                                              int stride_px, bool aligned) {
  if (tile_px <= 0 || stride_px <= 0)
    throw ConfigError("tiling: tile and stride must be positive");
  const int ratio =
      (int)std::lround(scene.label_resolution_m / scene.resolution_m);
  std::vector<int> ys, xs;
  for (int y = 0; y + tile_px <= scene.height(); y += stride_px)
    if (!aligned || y % ratio == 0) ys.push_back(y);
  for (int x = 0; x + tile_px <= scene.width(); x += stride_px)
    if (!aligned || x % ratio == 0) xs.push_back(x);
  std::vector<std::pair<int, int>> out;
  for (int y : ys)
    for (int x : xs) out.emplace_back(y, x);
  return out;
}

Tile cut_tile(const Scene& scene, int y0, int x0, int tile_px) {
  if (y0 < 0 || x0 < 0 || y0 + tile_px > scene.height() ||
      x0 + tile_px > scene.width())
    throw ConfigError("tile window leaves the scene");
  Tile t;
  t.y0 = y0;
  t.x0 = x0;
  t.px = tile_px;
  const int b = scene.band_count();
  t.bands = Tensor<float>({b, tile_px, tile_px});
  const int64_t splane = (int64_t)scene.height() * scene.width();
  for (int bi = 0; bi < b; ++bi)
    for (int y = 0; y < tile_px; ++y)
      std::copy(scene.bands.data() + bi * splane +
                    (int64_t)(y0 + y) * scene.width() + x0,
                scene.bands.data() + bi * splane +
                    (int64_t)(y0 + y) * scene.width() + x0 + tile_px,
                t.bands.data() + ((int64_t)bi * tile_px + y) * tile_px);

  t.labels_fine = Tensor<uint16_t>({tile_px, tile_px});
  for (int y = 0; y < tile_px; ++y)
    for (int x = 0; x < tile_px; ++x)
      t.labels_fine[(int64_t)y * tile_px + x] =
          label_at_band_pixel(scene, y0 + y, x0 + x);

  const double ratio = scene.label_resolution_m / scene.resolution_m;
  auto cell_range = [&](int o, int extent, int limit, int& first) {
    first = std::max(0, (int)std::ceil(o / ratio - 0.5));
    int last =
        std::min(limit - 1, (int)std::ceil((o + extent) / ratio - 0.5) - 1);
    return last;
  };
  int ly0 = 0, lx0 = 0;
  const int ly1 = cell_range(y0, tile_px, scene.label_height(), ly0);
  const int lx1 = cell_range(x0, tile_px, scene.label_width(), lx0);
  t.ly0 = ly0;
  t.lx0 = lx0;
  if (ly1 >= ly0 && lx1 >= lx0) {
    t.labels_coarse = Tensor<uint16_t>({ly1 - ly0 + 1, lx1 - lx0 + 1});
    for (int y = ly0; y <= ly1; ++y)
      for (int x = lx0; x <= lx1; ++x)
        t.labels_coarse[(int64_t)(y - ly0) * (lx1 - lx0 + 1) + (x - lx0)] =
            scene.labels[(int64_t)y * scene.label_width() + x];
  } else {
    t.labels_coarse = Tensor<uint16_t>::full({1, 1}, kNoDataLabel);
  }
  const int irat = (int)std::lround(ratio);
  t.aligned = irat > 0 && y0 % irat == 0 && x0 % irat == 0;
  return t;
}

std::vector<Tile> tile_scene(const Scene& scene, int tile_px, int stride_px,
                             uint64_t seed) {
  std::vector<Tile> tiles;
  for (const auto& [y, x] : tile_offsets(scene, tile_px, stride_px, false)) {
    Tile t = cut_tile(scene, y, x, tile_px);
    bool any = false;
    for (int64_t i = 0; i < t.labels_fine.numel(); ++i)
      if (t.labels_fine[i] != kNoDataLabel) {
        any = true;
        break;
      }
    if (any) tiles.push_back(std::move(t));
  }
  auto rng = make_rng(seed);
  std::shuffle(tiles.begin(), tiles.end(), rng);
  return tiles;
}

// -------------------------------------------------------------- synthesis

std::vector<std::vector<float>> synth_signatures(uint64_t signature_seed,
                                                 int num_classes,
                                                 int num_bands) {
  auto rng = make_rng(signature_seed);
  std::uniform_real_distribution<double> u(0.15, 0.85);
  std::vector<std::vector<float>> sigs;
  while (static_cast<int>(sigs.size()) < num_classes) {
    std::vector<float> s(num_bands);
    for (auto& v : s) v = static_cast<float>(u(rng));
    bool ok = true;
    for (const auto& prev : sigs) {
      double d2 = 0;
      for (int i = 0; i < num_bands; ++i)
        d2 += double(s[i] - prev[i]) * (s[i] - prev[i]);
      if (std::sqrt(d2) < 0.5) {
        ok = false;
        break;
      }
    }
    if (ok) sigs.push_back(std::move(s));
  }
  return sigs;
}

namespace {

// 5x5 box blur with shrinking windows at the borders.
Tensor<float> box_blur5(const Tensor<float>& in) {
  const int h = in.dim(0), w = in.dim(1);
  Tensor<float> out({h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0;
      int cnt = 0;
      for (int dy = -2; dy <= 2; ++dy)
        for (int dx = -2; dx <= 2; ++dx) {
          const int yy = y + dy, xx = x + dx;
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
          acc += in[(int64_t)yy * w + xx];
          ++cnt;
        }
      out[(int64_t)y * w + x] = static_cast<float>(acc / cnt);
    }
  return out;
}

}  // namespace

Scene synthesize_scene(const SynthParams& p) {
  if (p.size_px < 16) throw ConfigError("synth: size_px too small");
  if (p.num_classes < 2) throw ConfigError("synth: need >= 2 classes");
  const int h = p.size_px, w = p.size_px;
  const int lh = std::max(1, (int)std::lround(h / 15.0));
  const int lw = std::max(1, (int)std::lround(w / 15.0));
  const uint64_t sig_seed =
      p.signature_seed ? p.signature_seed : mix_seed(p.seed, 101);

  Scene s;
  s.id = "synth";
  s.split = "train";
  s.resolution_m = 20.0;
  s.label_resolution_m = 300.0;
  s.band_ids = sentinel2_band_order();

  // --- labels: Voronoi regions on the 300 m grid, one mode-filter pass
  auto lay_rng = make_rng(mix_seed(p.seed, 11));
  const int num_seeds = std::max(p.num_classes, lh * lw / 20);
  std::vector<std::array<int, 3>> seeds;  // y, x, class
  std::vector<int> class_perm(p.num_classes);
  for (int i = 0; i < p.num_classes; ++i) class_perm[i] = i;
  std::shuffle(class_perm.begin(), class_perm.end(), lay_rng);
  std::uniform_int_distribution<int> ry(0, lh - 1), rx(0, lw - 1),
      rc(0, p.num_classes - 1);
  for (int i = 0; i < num_seeds; ++i) {
    const int cls = i < p.num_classes ? class_perm[i] : rc(lay_rng);
    seeds.push_back({ry(lay_rng), rx(lay_rng), cls});
  }
  Tensor<uint16_t> raw({lh, lw});
  for (int y = 0; y < lh; ++y)
    for (int x = 0; x < lw; ++x) {
      int64_t best = -1;
      int cls = 0;
      for (const auto& sd : seeds) {
        const int64_t d2 = (int64_t)(sd[0] - y) * (sd[0] - y) +
                           (int64_t)(sd[1] - x) * (sd[1] - x);
        if (best < 0 || d2 < best) {
          best = d2;
          cls = sd[2];
        }
      }
      raw[(int64_t)y * lw + x] = static_cast<uint16_t>(cls);
    }
  s.labels = Tensor<uint16_t>({lh, lw});
  for (int y = 0; y < lh; ++y)
    for (int x = 0; x < lw; ++x) {
      int count[64] = {0};
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int yy = y + dy, xx = x + dx;
          if (yy < 0 || yy >= lh || xx < 0 || xx >= lw) continue;
          ++count[raw[(int64_t)yy * lw + xx] % 64];
        }
      int bc = -1, bl = 0;
      for (int c = 0; c < std::min(64, p.num_classes); ++c)
        if (count[c] > bc) {
          bc = count[c];
          bl = c;
        }
      s.labels[(int64_t)y * lw + x] = static_cast<uint16_t>(bl);
    }

  // --- clouds: blobs of whole label cells, labelled with the cloud class
  const int cloud_id = p.num_classes;
  Tensor<uint16_t> cloud({lh, lw});
  if (p.cloud_fraction > 0) {
    auto cl_rng = make_rng(mix_seed(p.seed, 13));
    const int target = static_cast<int>(p.cloud_fraction * lh * lw);
    std::uniform_int_distribution<int> rr(1, 2);
    int covered = 0;
    int guard = 0;
    while (covered < target && ++guard < 10000) {
      const int cy = ry(cl_rng), cx = rx(cl_rng), rad = rr(cl_rng);
      for (int y = std::max(0, cy - rad); y <= std::min(lh - 1, cy + rad); ++y)
        for (int x = std::max(0, cx - rad); x <= std::min(lw - 1, cx + rad);
             ++x) {
          if ((y - cy) * (y - cy) + (x - cx) * (x - cx) > rad * rad) continue;
          if (!cloud[(int64_t)y * lw + x]) {
            cloud[(int64_t)y * lw + x] = 1;
            s.labels[(int64_t)y * lw + x] = static_cast<uint16_t>(cloud_id);
            ++covered;
          }
        }
    }
    s.cloud_mask = cloud;
  }

  // --- bands: class signature + correlated noise; clouds bright and flat
  const auto sigs = synth_signatures(sig_seed, p.num_classes, 13);
  auto noise_rng = make_rng(mix_seed(p.seed, 12));
  s.bands = Tensor<float>({13, h, w});
  const double ratio = s.label_resolution_m / s.resolution_m;
  for (int b = 0; b < 13; ++b) {
    Tensor<float> noise({h, w});
    fill_normal(noise, noise_rng, 0.0f, 1.0f);
    noise = box_blur5(noise);
    float* bp = s.bands.data() + (int64_t)b * h * w;
    for (int y = 0; y < h; ++y) {
      const int ly = std::clamp((int)std::floor((y + 0.5) / ratio), 0, lh - 1);
      for (int x = 0; x < w; ++x) {
        const int lx =
            std::clamp((int)std::floor((x + 0.5) / ratio), 0, lw - 1);
        const uint16_t lab = s.labels[(int64_t)ly * lw + lx];
        // 5x5 box mean shrinks unit noise by ~1/5; rescale to noise_sigma
        const float nv = noise[(int64_t)y * w + x] * 5.0f *
                         static_cast<float>(p.noise_sigma);
        const float base =
            lab == cloud_id ? 0.95f : sigs[lab][static_cast<size_t>(b)];
        bp[(int64_t)y * w + x] = base + nv;
      }
    }
  }

  char tag[32];
  std::snprintf(tag, sizeof(tag), "2016-%02d-%02d",
                1 + int(mix_seed(p.seed, 7) % 12),
                1 + int(mix_seed(p.seed, 8) % 28));
  s.acquired = tag;
  s.check_coregistration();
  return s;
}

Manifest synthesize_dataset(uint64_t seed, int num_scenes,
                            const SynthParams& base,
                            const std::filesystem::path& out_dir) {
  if (num_scenes < 1) throw ConfigError("synth: need >= 1 scene");
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  const bool clouds = base.cloud_fraction > 0;
  Manifest man;
  man.root = out_dir;
  man.classes = ClassTable::generic(base.num_classes, clouds);

  const int test_count = std::max(1, num_scenes / 5);
  std::vector<Scene> train_scenes;
  for (int i = 0; i < num_scenes; ++i) {
    SynthParams p = base;
    p.seed = mix_seed(seed, static_cast<uint64_t>(i));
    p.signature_seed = mix_seed(seed, 101);
    Scene s = synthesize_scene(p);
    char idbuf[32];
    std::snprintf(idbuf, sizeof(idbuf), "synth-%03d", i);
    s.id = idbuf;
    s.split = i >= num_scenes - test_count ? "test" : "train";

    const fs::path sdir = out_dir / s.id;
    fs::create_directories(sdir);
    SceneRef r;
    r.id = s.id;
    r.split = s.split;
    r.resolution_m = s.resolution_m;
    r.width = s.width();
    r.height = s.height();
    r.label_resolution_m = s.label_resolution_m;
    r.acquired = s.acquired;
    const int64_t plane = (int64_t)s.height() * s.width();
    for (int b = 0; b < s.band_count(); ++b) {
      const std::string name = s.band_ids[static_cast<size_t>(b)];
      Tensor<float> pl({s.height(), s.width()});
      std::copy(s.bands.data() + b * plane, s.bands.data() + (b + 1) * plane,
                pl.data());
      const std::string rel = s.id + "/" + name + ".erb1";
      write_erb1_f32(out_dir / rel, pl);
      r.bands[name] = {rel, 0};
    }
    Tensor<uint16_t> codes(s.labels.shape());
    for (int64_t i2 = 0; i2 < s.labels.numel(); ++i2)
      codes[i2] = s.labels[i2] == kNoDataLabel
                      ? kNoDataLabel
                      : static_cast<uint16_t>(
                            man.classes.code_from_id(s.labels[i2]));
    r.labels_file = s.id + "/labels.erb1";
    write_erb1_u16(out_dir / r.labels_file, codes);
    if (s.cloud_mask) {
      r.cloud_mask_file = s.id + "/cloud_mask.erb1";
      write_erb1_u16(out_dir / r.cloud_mask_file, *s.cloud_mask);
    }
    man.scenes.push_back(std::move(r));
    if (s.split == "train") train_scenes.push_back(std::move(s));
  }

  // per-band statistics over the training split
  man.normalization.mean.assign(13, 0.0);
  man.normalization.stddev.assign(13, 1.0);
  for (int b = 0; b < 13; ++b) {
    double sum = 0, sum2 = 0;
    int64_t n = 0;
    for (const auto& s : train_scenes) {
      const int64_t plane = (int64_t)s.height() * s.width();
      const float* p = s.bands.data() + b * plane;
      for (int64_t i = 0; i < plane; ++i) {
        sum += p[i];
        sum2 += double(p[i]) * p[i];
      }
      n += plane;
    }
    const double m = sum / std::max<int64_t>(1, n);
    const double var = std::max(0.0, sum2 / std::max<int64_t>(1, n) - m * m);
    man.normalization.mean[b] = m;
    man.normalization.stddev[b] = std::sqrt(var) > 1e-12 ? std::sqrt(var) : 1.0;
  }

  man.save(out_dir / "manifest.json");
  return man;
}

}  // namespace terracer
