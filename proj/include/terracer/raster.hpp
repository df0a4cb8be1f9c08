#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "terracer/tensor.hpp"

namespace terracer {

// ------------------------------------------------------------ class table

struct ClassEntry {
  int globcover_code = 0;
  int id = 0;  // contiguous, 0..C-1
  std::string name;
};

/// Ordered land-cover legend mapping raster codes to contiguous ids.
/// 23 classes without clouds, 24 when the cloud class is appended.
struct ClassTable {
  std::vector<ClassEntry> entries;
  std::optional<int> cloud_class;

  int size() const { return static_cast<int>(entries.size()); }
  int id_from_code(int code) const;
  int code_from_id(int id) const;
  const std::string& name_of(int id) const;
  void validate() const;

  /// Generic legend: `num_classes` land-cover entries with plausible
  /// GlobCover-style codes, plus an optional trailing cloud class.
  static ClassTable generic(int num_classes, bool with_clouds);
};

// ------------------------------------------------------------------ scene

inline const std::vector<std::string>& sentinel2_band_order() {
  static const std::vector<std::string> order = {
      "B1", "B2", "B3", "B4",  "B5",  "B6", "B7",
      "B8", "B8a", "B9", "B10", "B11", "B12"};
  return order;
}

/// One co-registered sample: band stack at 20 m/px, label raster at
/// 300 m/px. Labels hold contiguous class ids (mapped at load) or NO_DATA.
struct Scene {
  std::string id;
  std::string split;  // "train" | "test"
  std::string acquired;
  double resolution_m = 20.0;
  double label_resolution_m = 300.0;
  std::vector<std::string> band_ids;
  Tensor<float> bands;     // [B,H,W]
  Tensor<uint16_t> labels; // [Hl,Wl]
  std::optional<Tensor<uint16_t>> cloud_mask;  // [Hl,Wl], 1 = cloud

  int band_count() const { return bands.dim(0); }
  int height() const { return bands.dim(1); }
  int width() const { return bands.dim(2); }
  int label_height() const { return labels.dim(0); }
  int label_width() const { return labels.dim(1); }
  int band_index(const std::string& name) const;  // throws if absent

  /// Footprints must agree within one label pixel.
  void check_coregistration() const;
};

enum class BandMode { kAll13, kNineB1ToB8a };

/// kAll13 keeps sensor order; kNineB1ToB8a keeps B1..B8a, the nine bands
/// regularly sampled along the wavelength axis.
Scene band_subset(const Scene& scene, BandMode mode);

// ------------------------------------------------------------- resampling

/// Nearest-neighbour label replication by an integer factor (e.g. x15 from
/// 300 m/px to 20 m/px). NO_DATA propagates. factor 1 is the identity.
Tensor<uint16_t> interpolate_labels(const Tensor<uint16_t>& labels,
                                    int factor);

/// Label of the band pixel (y,x) of a scene: nearest label cell by pixel
/// centers, clamped to the label grid.
uint16_t label_at_band_pixel(const Scene& scene, int y, int x);

/// Single-plane resampling for band ingestion: cell-center bilinear.
Tensor<float> resample_bilinear_plane(const Tensor<float>& plane, int oh,
                                      int ow);
/// Integer-factor box-mean decimation.
Tensor<float> box_downsample_plane(const Tensor<float>& plane, int factor);

// --------------------------------------------------------------- manifest

struct Normalization {
  std::vector<double> mean, stddev;  // per band, sensor order
  bool empty() const { return mean.empty(); }
  void apply(Tensor<float>& bands, const std::vector<std::string>& band_ids)
      const;
};

struct BandFileRef {
  std::string file;
  double resolution_m = 0;  // 0: at scene resolution
};

struct SceneRef {
  std::string id;
  std::string split;
  double resolution_m = 20.0;
  int width = 0, height = 0;
  std::map<std::string, BandFileRef> bands;  // band name -> file
  std::string labels_file;
  double label_resolution_m = 300.0;
  std::string acquired;
  std::string cloud_mask_file;  // optional
};

/// Dataset manifest: class table, per-band normalization computed over the
/// training split, and the scene list. Paths are relative to the manifest.
struct Manifest {
  int version = 1;
  ClassTable classes;
  Normalization normalization;
  std::vector<SceneRef> scenes;
  std::filesystem::path root;

  static Manifest load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
  const SceneRef& scene_ref(const std::string& id) const;
  std::vector<const SceneRef*> split_refs(const std::string& split) const;
};

/// Loads one scene: bands resampled to the scene resolution (bilinear up,
/// box-mean down, no-op when already there), labels mapped to contiguous
/// ids and left at their native grid.
Scene load_scene(const Manifest& manifest, const SceneRef& ref);

/// File-level checks for `dataset validate`: existence, payload sizes,
/// label values, co-registration. Returns human-readable problems.
std::vector<std::string> validate_manifest(const Manifest& manifest);

// ------------------------------------------------------------------ tiles

/// One training sample cut from a scene: raw band window plus the fine
/// (per-pixel nearest) and coarse (native cells whose centers fall inside
/// the window) label views.
struct Tile {
  int y0 = 0, x0 = 0, px = 0;
  int ly0 = 0, lx0 = 0;  // first coarse cell
  Tensor<float> bands;          // [B,t,t]
  Tensor<uint16_t> labels_fine; // [t,t]
  Tensor<uint16_t> labels_coarse;
  bool aligned = false;  // y0,x0 multiples of the resolution ratio
};

/// Deterministic tiling: row-major offsets fully inside the scene,
/// shuffled by seed; tiles whose labels are 100% NO_DATA are skipped.
std::vector<Tile> tile_scene(const Scene& scene, int tile_px, int stride_px,
                             uint64_t seed);

/// Offsets a training sampler may draw from; aligned=true restricts them
/// to multiples of the band/label resolution ratio so coarse pooling
/// windows coincide with label cells.
std::vector<std::pair<int, int>> tile_offsets(const Scene& scene, int tile_px,
                                              int stride_px, bool aligned);

Tile cut_tile(const Scene& scene, int y0, int x0, int tile_px);

// -------------------------------------------------------------- synthesis

struct SynthParams {
  uint64_t seed = 1;
  int size_px = 240;
  int num_classes = 5;
  double cloud_fraction = 0.0;
  double noise_sigma = 0.04;
  // Class spectra are a dataset-level property: scenes of one dataset share
  // them. Defaults to a stream derived from `seed`.
  uint64_t signature_seed = 0;
};

/// Deterministic synthetic scene: smoothed Voronoi label regions on the
/// 300 m grid, per-class spectral signatures plus spatially correlated
/// noise on the 20 m grid, optional cloud blobs labelled with the cloud
/// class (id = num_classes).
Scene synthesize_scene(const SynthParams& params);

std::vector<std::vector<float>> synth_signatures(uint64_t signature_seed,
                                                 int num_classes,
                                                 int num_bands);

/// Writes `num_scenes` synthetic scenes plus a manifest under out_dir.
/// Scene i uses seed mix(seed, i); the last ceil(20%) scenes form the test
/// split. Normalization is computed over the training split.
Manifest synthesize_dataset(uint64_t seed, int num_scenes,
                            const SynthParams& base,
                            const std::filesystem::path& out_dir);

// ----------------------------------------------------------------- ERB1 IO

/// Raw little-endian payloads, extents supplied externally (the manifest).
void write_erb1_f32(const std::filesystem::path& path,
                    const Tensor<float>& t);
Tensor<float> read_erb1_f32(const std::filesystem::path& path, Shape shape);
void write_erb1_u16(const std::filesystem::path& path,
                    const Tensor<uint16_t>& t);
Tensor<uint16_t> read_erb1_u16(const std::filesystem::path& path,
                               Shape shape);

}  // namespace terracer
