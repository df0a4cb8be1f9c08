#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "terracer/model_zoo.hpp"

namespace terracer {

/// One record of the "TCKPT1" parameter file: name, extents, f32 payload.
struct CheckpointRecord {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

/// Raw record I/O. Layout: magic "TCKPT1", then per record
///   u32 name length | name bytes | u32 rank | u32 extents... |
///   little-endian f32 payload, row-major.
void write_checkpoint_records(const std::filesystem::path& path,
                              const std::vector<CheckpointRecord>& records);
std::vector<CheckpointRecord> read_checkpoint_records(
    const std::filesystem::path& path);

/// Serializes parameters then buffers, in registration order.
void save_checkpoint(const std::filesystem::path& path,
                     const Model<float>& model);

/// Fills an already-built model by record name. Missing or extra names and
/// shape mismatches are integrity errors.
void load_checkpoint(const std::filesystem::path& path, Model<float>& model);

/// Sidecar metadata written next to each checkpoint so eval/predict can
/// rebuild the architecture: {"preset","bands","classes","strategy","seed"}.
struct CheckpointMeta {
  std::string preset;
  int bands = 0;
  int classes = 0;
  std::string strategy;
  uint64_t seed = 0;
};

void write_checkpoint_meta(const std::filesystem::path& ckpt_path,
                           const CheckpointMeta& meta);
CheckpointMeta read_checkpoint_meta(const std::filesystem::path& ckpt_path);

/// Convenience: rebuild the model a checkpoint was trained with and load
/// its weights.
Model<float> load_model(const std::filesystem::path& ckpt_path);

}  // namespace terracer
