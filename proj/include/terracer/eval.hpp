#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "terracer/model_zoo.hpp"
#include "terracer/raster.hpp"

namespace terracer {

/// C x C counts, rows = reference, columns = prediction.
struct ConfusionMatrix {
  int classes = 0;
  std::vector<int64_t> counts;

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(int c) : classes(c), counts((size_t)c * c, 0) {}

  int64_t& at(int ref, int pred) { return counts[(size_t)ref * classes + pred]; }
  int64_t at(int ref, int pred) const {
    return counts[(size_t)ref * classes + pred];
  }
  void add(int ref, int pred, int64_t k = 1) { at(ref, pred) += k; }
  void merge(const ConfusionMatrix& other);
  int64_t total() const;
  int64_t support(int ref) const;      // row sum
  int64_t predicted(int pred) const;   // column sum
  double oa() const;
  double recall(int id) const;
  double precision(int id) const;
};

/// Exclusion mask (1 = excluded) for accuracy-after-boundary-erosion: a
/// pixel is excluded when any differently-labelled pixel (NO_DATA counts
/// as different) has its cell area within radius_m of this pixel's center.
/// Implemented by splatting a precomputed metric disk from 8-boundary
/// pixels; equivalent to the all-pairs rule.
Tensor<uint8_t> erode_reference(const Tensor<uint16_t>& labels,
                                double radius_m, double resolution_m);

/// Offsets (dy,dx) != (0,0) whose cell area intersects the radius around a
/// pixel center. At 300 m/px and 200 m this is exactly the 4-neighborhood.
std::vector<std::pair<int, int>> erosion_disk(double radius_m,
                                              double resolution_m);

/// Argmax label map in eval mode. "fine": full-resolution logits at the
/// band grid. "coarse": heads averaged at full scale then box-pooled to
/// the label grid. Ties resolve to the smaller class id. Inputs whose
/// extents violate the model's divisibility are zero-padded and cropped.
/// tile_px > 0 runs fine prediction in overlapping windows (halo_px of
/// context on each side) stitched from their cores; with a halo at least
/// half the receptive field this is pixelwise identical to the whole-scene
/// run.
Tensor<uint16_t> predict_map(const Model<float>& model, const Scene& scene,
                             const Normalization& norm,
                             const std::string& strategy, int tile_px = 0,
                             int halo_px = 0);

struct EvalResult {
  ConfusionMatrix confusion;
  double erode_m = 0;
  std::string grid;  // "fine" (band grid) or "coarse" (label grid)
  int64_t evaluated = 0, excluded = 0;  // valid pixels kept / eroded away
  double oa() const { return confusion.oa(); }
  double excluded_fraction() const {
    const int64_t v = evaluated + excluded;
    return v ? double(excluded) / double(v) : 0.0;
  }
};

/// Accumulates the confusion matrix over every scene of a split, with
/// eroded and NO_DATA pixels removed.
EvalResult evaluate(const Model<float>& model, const Manifest& manifest,
                    const std::string& split, double erode_m,
                    const std::string& strategy = "auto");

/// Report JSON: oa, per-class recall/precision/support, confusion,
/// excluded_fraction, most-confused pairs, and which grid was scored.
std::string eval_report_json(const EvalResult& result,
                             const ClassTable& classes);

/// P6 preview with one fixed color per class id; NO_DATA is black.
void write_label_ppm(const std::filesystem::path& path,
                     const Tensor<uint16_t>& labels);

/// Majority-class and nearest-centroid reference predictors used to sanity
/// check learned models on synthetic data.
double majority_class_oa(const Manifest& manifest, const std::string& split);
double nearest_centroid_oa(const Manifest& manifest, const std::string& split,
                           double erode_m);

}  // namespace terracer
