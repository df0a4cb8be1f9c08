#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "terracer/model_zoo.hpp"
#include "terracer/raster.hpp"

namespace terracer {

struct OptimConfig {
  std::string kind = "adam";  // "adam" | "sgd"
  double lr = 1e-3;
  double momentum = 0.9;  // sgd
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;  // adam
};

/// Declarative training run. strategy "fine" optimizes full-resolution
/// logits against nearest-upsampled labels (dense nets); "coarse" averages
/// the multiscale heads, pools to the ground-truth grid and adds the
/// deeply supervised per-head terms (SegNet).
struct TrainConfig {
  std::string preset;
  std::string manifest_path;
  std::string strategy = "fine";
  std::string checkpoint_dir = "checkpoints";
  int epochs = 1;
  int batch_size = 2;
  int tile_px = 64;
  int steps_per_epoch = 0;  // 0: one pass over the tile pool
  int bands = -1, classes = -1;  // -1: preset / class-table defaults
  uint64_t seed = 1;
  OptimConfig optim;
  double average_weight = 1.0;  // weight of the averaged-heads term
  double head_weight = 0.25;    // weight of each auxiliary head term
  bool flips = true;
  std::string resume_checkpoint;
  // Early stop: when > 0, training-pool OA is measured every eval_every
  // steps and the run ends once it reaches target_train_oa.
  double target_train_oa = -1;
  int eval_every = 0;

  static TrainConfig from_json_file(const std::filesystem::path& path);
  void save_json(const std::filesystem::path& path) const;
};

struct StepRecord {
  int step = 0;
  double loss = 0, lr = 0, train_oa = 0;
  int64_t wall_ms = 0;
};

struct TrainOutcome {
  bool ok = false;
  std::string error;
  int steps = 0;
  double final_loss = 0;
  double best_eval_oa = -1;   // training-pool OA from periodic evaluation
  int steps_to_target = -1;   // first step where target_train_oa was met
  std::string final_checkpoint;
  std::vector<StepRecord> records;
};

/// The multiscale deep-supervision loss: every head is bilinearly
/// interpolated to the full (th, tw) grid; the average is box-pooled by
/// pool_factor and scored against the native labels, and each head adds
/// the same pooled cross-entropy weighted by head_weight.
struct MultiscaleLoss {
  Var<float> total;
  Var<float> pooled_average;  // [N,C,lt,lt], pre-argmax
};

MultiscaleLoss compute_multiscale_loss(const std::vector<Var<float>>& heads,
                                       const Tensor<uint16_t>& labels_coarse,
                                       int pool_factor, int th, int tw,
                                       float average_weight,
                                       float head_weight);

Var<float> loss_multiscale(const std::vector<Var<float>>& heads,
                           const Tensor<uint16_t>& labels_coarse,
                           int pool_factor, int th, int tw,
                           float average_weight, float head_weight);

/// Runs one training strategy end to end. metrics, when given, receives one
/// JSON line per step: {"step","loss","lr","train_oa","wall_ms"}.
/// A non-finite loss aborts the run; checkpoints already on disk stay.
TrainOutcome train(const TrainConfig& cfg, std::ostream* metrics = nullptr);
TrainOutcome train_fine(const TrainConfig& cfg, std::ostream* metrics = nullptr);
TrainOutcome train_coarse(const TrainConfig& cfg,
                          std::ostream* metrics = nullptr);

}  // namespace terracer
