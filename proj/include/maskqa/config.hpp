#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "maskqa/corrupt.hpp"
#include "maskqa/nets.hpp"
#include "maskqa/phantom.hpp"
#include "maskqa/voxelgrid.hpp"

namespace maskqa {

struct TrainConfig {
  int batch_size = 2;
  int max_epochs = 200;
  int patience = 50;   // stop after this many epochs without improvement (min 1)
  double lr = 1e-3;
  std::uint64_t seed = 1;
  bool augment_flip = false;    // mid-sagittal flip with left/right swap
  bool augment_rotate = false;  // +-10 degrees about one random axis
  bool operator==(const TrainConfig&) const = default;
};

/// Everything the pipeline needs for one anatomical site. Per-organ lists
/// follow `organs`, which is also the channel order.
struct UseCaseConfig {
  std::string name;
  std::vector<std::string> organs;
  Spacing spacing;
  Dims size;
  std::optional<Dims> crop;
  std::vector<NoiseSpec> noise;
  std::vector<double> thresholds;
  std::vector<std::pair<int, int>> mirror_pairs;
  NetworkSpec dae;
  NetworkSpec vae_single;
  NetworkSpec vae_multi;
  TrainConfig train;

  void validate() const;
  int organ_index(const std::string& organ) const;  // -1 when absent
  int channels() const { return static_cast<int>(organs.size()); }
  /// Dims the networks see: crop if set, else size.
  Dims model_dims() const { return crop ? *crop : size; }
  const NetworkSpec& network(NetworkKind kind) const;
  bool operator==(const UseCaseConfig&) const = default;
};

struct PhantomConfig {
  AnatomySpec anatomy;
  int train_cases = 16;
  int val_cases = 4;
  int test_cases = 100;
  std::uint64_t seed = 2024;
  DegradationMix test_mix;
  bool operator==(const PhantomConfig&) const = default;
};

struct EvalConfig {
  int bootstrap_resamples = 1000;
  double confidence = 0.95;
  std::uint64_t seed = 0;
  bool operator==(const EvalConfig&) const = default;
};

struct ExperimentConfig {
  UseCaseConfig use_case;
  PhantomConfig phantom;
  EvalConfig eval;
  std::vector<std::string> methods;
  std::string out_dir = "out";
  int threads = 0;

  void validate() const;
  bool operator==(const ExperimentConfig&) const = default;
};

ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Canonical JSON form; parse_config(dump_config(c)) == c.
std::string dump_config(const ExperimentConfig& cfg);

std::string center_sampling_name(CenterSampling s);

}  // namespace maskqa
