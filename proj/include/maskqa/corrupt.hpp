#pragma once

#include <cstdint>
#include <vector>

#include "maskqa/voxelgrid.hpp"

namespace maskqa {

enum class CenterSampling { Foreground, BoundingBox };

/// Per-organ corruption knobs.
struct NoiseSpec {
  int max_patches = 1;
  int min_patch = 1;  // cuboid side, voxels
  int max_patch = 1;
  CenterSampling center_sampling = CenterSampling::BoundingBox;

  void validate() const;
  bool operator==(const NoiseSpec&) const = default;
};

struct RngSeed {
  std::uint64_t value = 0;
};

/// One drawn patch. `lo`/`hi` are the unclipped inclusive corners.
struct Patch {
  bool add = false;
  std::array<int, 3> lo{};
  std::array<int, 3> hi{};
};

/// The patches `corrupt_mask` applies for this seed, in application order.
///
/// Draw order from mt19937_64(seed): n = U{1..max_patches}; then per patch:
/// add = U{0,1}, side_x, side_y, side_z = U{min..max}, then the centre
/// (Foreground: one index into the x-fastest list of target voxels;
/// BoundingBox: cx, cy, cz over the tight box). Patch corner lo = c - side/2.
/// An empty target samples centres from the whole grid.
std::vector<Patch> draw_patches(const VoxelMask& target, const NoiseSpec& spec, RngSeed seed);

/// Adds or removes random cuboid patches on a copy of `target`.
VoxelMask corrupt_mask(const VoxelMask& target, const NoiseSpec& spec, RngSeed seed);

/// Applies already drawn patches (clipped to the grid) to a copy of `target`.
VoxelMask apply_patches(const VoxelMask& target, const std::vector<Patch>& patches);

/// sgn(|I|-|T|) * 2|I∩T| / (|I|+|T|), with sgn(0) = +1 and both-empty = +1.
double signed_dice(const VoxelMask& input, const VoxelMask& target);

struct SignedDiceHistogram {
  std::vector<std::int64_t> counts;  // equal-width bins over [-1, 1]
  std::int64_t total = 0;
  double min_value = 0.0;
  double max_value = 0.0;

  double fraction(std::size_t bin) const {
    return total ? static_cast<double>(counts[bin]) / static_cast<double>(total) : 0.0;
  }
};

/// Bin index of `value` among `bins` equal-width bins over [-1, 1]; +1 goes
/// into the last bin.
std::size_t signed_dice_bin(double value, std::size_t bins);

/// Seed used for sample `s` of target `t` inside `calibration_histogram`.
RngSeed calibration_seed(std::uint64_t seed, std::size_t target, std::size_t sample);

SignedDiceHistogram calibration_histogram(const std::vector<VoxelMask>& targets,
                                          const NoiseSpec& spec, int samples_per_target,
                                          std::size_t bins, std::uint64_t seed);

}  // namespace maskqa
