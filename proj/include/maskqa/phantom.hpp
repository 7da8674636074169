#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "maskqa/corrupt.hpp"
#include "maskqa/voxelgrid.hpp"

namespace maskqa {

enum class Layout { PelvisLike7, KidneyLike2 };

const char* layout_name(Layout layout);
Layout parse_layout(const std::string& text);
/// Channel order emitted by generate_anatomy.
std::vector<std::string> layout_organs(Layout layout);
/// Left/right channel pairs, for mid-sagittal flips.
std::vector<std::pair<int, int>> layout_mirror_pairs(Layout layout);

/// Shapes are laid out on a nominal 32^3 grid and scaled to `dims`.
/// Jitters are in nominal voxels; radius_jitter is relative.
struct AnatomySpec {
  Layout layout = Layout::PelvisLike7;
  Dims dims{32, 32, 32};
  Spacing spacing{1.0, 1.0, 1.0};
  double global_jitter = 1.5;
  double organ_jitter = 0.75;
  double radius_jitter = 0.1;
  std::uint64_t seed = 0;
  bool operator==(const AnatomySpec&) const = default;
};

MultiChannelVolume generate_anatomy(const AnatomySpec& spec);

enum class DegradationKind { Identity, Erode, Dilate, TruncatePlane, CutGap, PatchNoise };

const char* degradation_kind_name(DegradationKind kind);

struct DegradationSpec {
  DegradationKind kind = DegradationKind::Identity;
  int k = 0;                 // Erode / Dilate iterations
  Axis axis = Axis::Z;       // TruncatePlane
  double fraction = 0.0;     // TruncatePlane, of the bounding-box extent
  bool from_high = false;    // TruncatePlane removes from the high end instead
  int thickness = 1;         // CutGap
  NoiseSpec noise;           // PatchNoise
  std::uint64_t seed = 0;    // PatchNoise

  void validate() const;
  /// Short tag such as "erode(2)" or "truncate(z,0.45,low)"; the manifest's
  /// degradation column starts with degradation_kind_name.
  std::string describe() const;
};

struct Degraded {
  VoxelMask mask;
  double true_dice = 1.0;
};

/// 6-connected morphology; voxels outside the grid count as background.
VoxelMask dilate(const VoxelMask& mask, int k);
VoxelMask erode(const VoxelMask& mask, int k);

Degraded degrade(const VoxelMask& gt, const DegradationSpec& spec);

/// Weights over degradation kinds plus the parameter ranges they draw from.
struct DegradationMix {
  double identity = 0.7;
  double erode = 0.06;
  double dilate = 0.06;
  double truncate = 0.08;
  double gap = 0.05;
  double patch = 0.05;
  int morph_max_k = 2;
  double truncate_min = 0.25;
  double truncate_max = 0.75;
  int gap_min = 2;
  int gap_max = 5;
  NoiseSpec patch_noise{3, 3, 8, CenterSampling::Foreground};

  void validate() const;
  bool operator==(const DegradationMix&) const = default;
};

DegradationSpec draw_degradation(const DegradationMix& mix, std::uint64_t seed);

struct ManifestRow {
  std::string case_id;
  std::string organ;
  double true_dice = 1.0;
  std::string degradation;
};

struct DatasetSpec {
  AnatomySpec anatomy;
  int cases = 20;
  DegradationMix mix;
  /// Per-organ accuracy thresholds (layout order); when non-empty, every
  /// organ must end up with both labels.
  std::vector<double> thresholds;
  int max_redraws = 64;
  std::uint64_t seed = 0;
};

struct Dataset {
  std::vector<std::string> case_ids;
  std::vector<MultiChannelVolume> ground_truth;
  std::vector<MultiChannelVolume> auto_seg;
  std::vector<ManifestRow> manifest;
};

std::string case_id_for(int index);
std::uint64_t anatomy_seed(std::uint64_t master, int case_index);

/// Deterministic in `spec.seed`; `threads` only changes the schedule.
Dataset build_dataset(const DatasetSpec& spec, int threads = 1);
/// Writes gt/<id>.omv, auto/<id>.omv and manifest.csv under `dir`.
void write_dataset(const Dataset& data, const std::filesystem::path& dir);

void write_manifest(const std::vector<ManifestRow>& rows, const std::filesystem::path& path);
std::vector<ManifestRow> read_manifest(const std::filesystem::path& path);

}  // namespace maskqa
