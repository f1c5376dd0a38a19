#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hypercut/scenes/scene.hpp"

namespace hypercut::scenes {

struct Sample {
  BlurryObservation blurry;
  FrameSequence sequence;
};

enum class Split { kTrain, kTest };

struct Manifest {
  int count = 0;
  int frames = 0;
  int height = 0;
  int width = 0;
  int channels = 0;
  std::uint64_t seed = 0;
  double train_fraction = 0.8;
  std::vector<Split> split;

  /// Exact byte size of one sample file.
  std::size_t sample_bytes() const;
};

struct Dataset {
  Manifest manifest;
  std::vector<Sample> samples;

  std::vector<std::size_t> indices(Split which) const;
  std::vector<const Sample*> subset(Split which) const;
};

struct DatasetConfig {
  int count = 2000;
  SceneDistribution scenes;
  /// Fraction of samples assigned to the training split, in [0, 1].
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
};

/// Samples are generated independently from per-index child seeds, so the
/// result depends only on the config.
Dataset generate_dataset(const DatasetConfig& config);

/// Writes `manifest.json` and one `sample_%06d.b2v` per sample.
void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir);

std::string sample_file_name(std::size_t index);

// B2V layout: "B2V1", u32 frame count (N+1), u32 H, u32 W, u32 C, then the
// blurry image followed by frames 0..N, each as f32 [row][col][channel].
void write_b2v(const std::filesystem::path& path, const Image& blurry, const std::vector<Image>& frames);
Sample read_b2v(const std::filesystem::path& path);

}  // namespace hypercut::scenes
