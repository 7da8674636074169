#include "maskqa/corrupt.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "maskqa/error.hpp"
#include "maskqa/rng.hpp"

namespace maskqa {

void NoiseSpec::validate() const {
  require(max_patches >= 1, ErrorKind::InvalidArgument, "noise: max_patches must be >= 1");
  require(min_patch >= 1, ErrorKind::InvalidArgument, "noise: min_patch must be >= 1");
  require(max_patch >= min_patch, ErrorKind::InvalidArgument,
          "noise: max_patch must be >= min_patch");
}

std::vector<Patch> draw_patches(const VoxelMask& target, const NoiseSpec& spec, RngSeed seed) {
  spec.validate();
  const Dims& d = target.dims();

  std::vector<std::int64_t> foreground;
  BoundingBox box{{0, 0, 0}, {d.x - 1, d.y - 1, d.z - 1}};
  const bool empty = target.empty_foreground();
  if (!empty) {
    if (spec.center_sampling == CenterSampling::Foreground) {
      const auto& data = target.data();
      for (std::int64_t v = 0; v < static_cast<std::int64_t>(data.size()); ++v)
        if (data[v]) foreground.push_back(v);
    } else {
      box = tight_bounding_box(target);
    }
  }
  const bool use_foreground = !empty && spec.center_sampling == CenterSampling::Foreground;

  Rng rng(seed.value);
  const int n = static_cast<int>(uniform_int(rng, 1, spec.max_patches));
  std::vector<Patch> patches;
  patches.reserve(n);
  for (int p = 0; p < n; ++p) {
    Patch patch;
    patch.add = uniform_int(rng, 0, 1) == 1;
    std::array<int, 3> side{};
    for (int a = 0; a < 3; ++a)
      side[a] = static_cast<int>(uniform_int(rng, spec.min_patch, spec.max_patch));
    std::array<int, 3> c{};
    if (use_foreground) {
      const auto idx = foreground[uniform_int(rng, 0, static_cast<std::int64_t>(foreground.size()) - 1)];
      c[0] = static_cast<int>(idx % d.x);
      c[1] = static_cast<int>((idx / d.x) % d.y);
      c[2] = static_cast<int>(idx / (static_cast<std::int64_t>(d.x) * d.y));
    } else {
      for (int a = 0; a < 3; ++a) c[a] = static_cast<int>(uniform_int(rng, box.lo[a], box.hi[a]));
    }
    for (int a = 0; a < 3; ++a) {
      patch.lo[a] = c[a] - side[a] / 2;
      patch.hi[a] = patch.lo[a] + side[a] - 1;
    }
    patches.push_back(patch);
  }
  return patches;
}

VoxelMask apply_patches(const VoxelMask& target, const std::vector<Patch>& patches) {
  VoxelMask out = target;
  const Dims& d = target.dims();
  for (const Patch& p : patches) {
    const std::uint8_t value = p.add ? 1 : 0;
    const int x0 = std::max(p.lo[0], 0), x1 = std::min(p.hi[0], d.x - 1);
    const int y0 = std::max(p.lo[1], 0), y1 = std::min(p.hi[1], d.y - 1);
    const int z0 = std::max(p.lo[2], 0), z1 = std::min(p.hi[2], d.z - 1);
    for (int k = z0; k <= z1; ++k)
      for (int j = y0; j <= y1; ++j)
        for (int i = x0; i <= x1; ++i) out.set(i, j, k, value);
  }
  return out;
}

VoxelMask corrupt_mask(const VoxelMask& target, const NoiseSpec& spec, RngSeed seed) {
  return apply_patches(target, draw_patches(target, spec, seed));
}

double signed_dice(const VoxelMask& input, const VoxelMask& target) {
  require(input.dims() == target.dims(), ErrorKind::DimensionMismatch,
          "signed_dice: dimension mismatch");
  std::int64_t a = 0, b = 0, both = 0;
  const auto& x = input.data();
  const auto& y = target.data();
  for (std::size_t v = 0; v < x.size(); ++v) {
    a += x[v];
    b += y[v];
    both += x[v] & y[v];
  }
  if (a + b == 0) return 1.0;
  const double dice = 2.0 * static_cast<double>(both) / static_cast<double>(a + b);
  return a >= b ? dice : -dice;
}

std::size_t signed_dice_bin(double value, std::size_t bins) {
  const double t = (value + 1.0) / 2.0 * static_cast<double>(bins);
  const auto b = static_cast<std::int64_t>(std::floor(t));
  return static_cast<std::size_t>(std::clamp<std::int64_t>(b, 0, static_cast<std::int64_t>(bins) - 1));
}

RngSeed calibration_seed(std::uint64_t seed, std::size_t target, std::size_t sample) {
  return {derive_seed(seed, {0xCA11B8A7ULL, target, sample})};
}

SignedDiceHistogram calibration_histogram(const std::vector<VoxelMask>& targets,
                                          const NoiseSpec& spec, int samples_per_target,
                                          std::size_t bins, std::uint64_t seed) {
  require(bins >= 2, ErrorKind::InvalidArgument, "calibration: need at least two bins");
  require(!targets.empty(), ErrorKind::InvalidArgument, "calibration: no targets");
  require(samples_per_target >= 0, ErrorKind::InvalidArgument,
          "calibration: negative sample count");
  spec.validate();
  SignedDiceHistogram h;
  h.counts.assign(bins, 0);
  h.min_value = std::numeric_limits<double>::infinity();
  h.max_value = -std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < targets.size(); ++t) {
    for (int s = 0; s < samples_per_target; ++s) {
      const VoxelMask noisy = corrupt_mask(targets[t], spec, calibration_seed(seed, t, s));
      const double sd = signed_dice(noisy, targets[t]);
      ++h.counts[signed_dice_bin(sd, bins)];
      ++h.total;
      h.min_value = std::min(h.min_value, sd);
      h.max_value = std::max(h.max_value, sd);
    }
  }
  if (h.total == 0) h.min_value = h.max_value = 0.0;
  return h;
}

}  // namespace maskqa
