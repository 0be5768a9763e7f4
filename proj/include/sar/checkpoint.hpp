#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "sar/train.hpp"

namespace sar {

// Binary layout (little-endian):
//
//   "SARCKPT1"            8 bytes
//   version               u32 (currently 1)
//   scalar size           u32 (4 or 8)
//   metadata length       u64
//   metadata              JSON text: {"config": ..., "epoch": n, "step": n}
//   blob count            u32
//   per blob:
//     name length u32, name bytes, element count u64, raw scalars
//
// Blobs are the model parameters by layout name plus "adam.m" and "adam.v".

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  TrainConfig config;
  Precision precision = Precision::Float32;
  long step = 0;
  int epoch = 0;
  /// Values widened to double; narrowing back to float is exact.
  std::map<std::string, std::vector<double>> blobs;
};

template <class T>
void save_checkpoint(const std::filesystem::path& path, const Trainer<T>& trainer);

/// Throws MissingFile or CheckpointFormat.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copy a checkpoint's parameters into a model with a matching config.
template <class T>
void load_parameters(const Checkpoint& ck, VisionTransformer<T>& model);

/// Restore model and optimizer state.
template <class T>
void restore_trainer(const Checkpoint& ck, Trainer<T>& trainer);

}  // namespace sar
