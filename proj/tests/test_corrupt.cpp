#include <doctest.h>

#include <array>
#include <cmath>

#include "maskqa/corrupt.hpp"
#include "maskqa/error.hpp"
#include "oracles.hpp"

using namespace maskqa;

namespace {

// Second sampler written from the documented draw order: n, then per patch
// add, three sides and the centre; painted voxel by voxel.
VoxelMask reference_corrupt(const VoxelMask& t, const NoiseSpec& s, std::uint64_t seed) {
  const Dims d = t.dims();
  std::vector<std::array<int, 3>> fg;
  std::array<int, 3> lo{d.x, d.y, d.z}, hi{-1, -1, -1};
  for (int k = 0; k < d.z; ++k)
    for (int j = 0; j < d.y; ++j)
      for (int i = 0; i < d.x; ++i)
        if (t.at(i, j, k)) {
          fg.push_back({i, j, k});
          lo = {std::min(lo[0], i), std::min(lo[1], j), std::min(lo[2], k)};
          hi = {std::max(hi[0], i), std::max(hi[1], j), std::max(hi[2], k)};
        }
  if (fg.empty()) {
    lo = {0, 0, 0};
    hi = {d.x - 1, d.y - 1, d.z - 1};
  }
  Rng rng(seed);
  VoxelMask out = t;
  const auto n = uniform_int(rng, 1, s.max_patches);
  for (int p = 0; p < n; ++p) {
    const bool add = uniform_int(rng, 0, 1) == 1;
    int side[3];
    for (int& v : side) v = static_cast<int>(uniform_int(rng, s.min_patch, s.max_patch));
    std::array<int, 3> c{};
    if (!fg.empty() && s.center_sampling == CenterSampling::Foreground)
      c = fg[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(fg.size()) - 1))];
    else
      for (int a = 0; a < 3; ++a) c[a] = static_cast<int>(uniform_int(rng, lo[a], hi[a]));
    for (int k = 0; k < d.z; ++k)
      for (int j = 0; j < d.y; ++j)
        for (int i = 0; i < d.x; ++i) {
          const int q[3] = {i, j, k};
          bool inside = true;
          for (int a = 0; a < 3; ++a) {
            const int first = c[a] - side[a] / 2;
            inside = inside && q[a] >= first && q[a] < first + side[a];
          }
          if (inside) out.set(i, j, k, add ? 1 : 0);
        }
  }
  return out;
}

VoxelMask full_cube(int n) {
  VoxelMask m(Dims{n, n, n}, {1, 1, 1});
  for (auto& v : m.data()) v = 1;
  return m;
}

}  // namespace

TEST_CASE("corrupt_mask is deterministic per seed") {
  const VoxelMask t = oracle::ball({24, 24, 24}, 12, 12, 12, 5);
  const NoiseSpec s{3, 1, 2, CenterSampling::Foreground};
  CHECK(corrupt_mask(t, s, {42}) == corrupt_mask(t, s, {42}));
  int differ = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) differ += corrupt_mask(t, s, {seed}) != corrupt_mask(t, s, {seed + 100});
  CHECK(differ >= 18);
}

TEST_CASE("corrupt_mask matches an independent sampler") {
  const VoxelMask ball = oracle::ball({32, 32, 32}, 15.5, 15.5, 15.5, 6);
  const NoiseSpec spec{4, 3, 7, CenterSampling::Foreground};
  std::vector<std::int64_t> mine(10, 0), ref(10, 0);
  int identical = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const VoxelMask a = corrupt_mask(ball, spec, {seed});
    const VoxelMask b = reference_corrupt(ball, spec, seed);
    identical += a == b;
    ++mine[signed_dice_bin(signed_dice(a, ball), 10)];
    const double sd = oracle::signed_dice(b, ball);
    ++ref[std::min<std::size_t>(9, static_cast<std::size_t>((sd + 1.0) * 5.0))];
  }
  CHECK(identical == 1000);
  CHECK(mine == ref);

  Rng rng(3);
  const VoxelMask blob = oracle::random_mask(rng, {12, 10, 8}, 0.1);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    CHECK(corrupt_mask(blob, {3, 1, 5, CenterSampling::BoundingBox}, {seed}) ==
          reference_corrupt(blob, {3, 1, 5, CenterSampling::BoundingBox}, seed));
    const VoxelMask empty(Dims{6, 6, 6}, {1, 1, 1});
    CHECK(corrupt_mask(empty, {2, 1, 3, CenterSampling::Foreground}, {seed}) ==
          reference_corrupt(empty, {2, 1, 3, CenterSampling::Foreground}, seed));
  }
}

TEST_CASE("removal-only corruption never grows the mask") {
  const VoxelMask cube = full_cube(16);
  const NoiseSpec spec{3, 2, 6, CenterSampling::Foreground};
  int tested = 0;
  for (std::uint64_t seed = 0; tested < 50 && seed < 10000; ++seed) {
    const auto patches = draw_patches(cube, spec, {seed});
    bool remove_only = true;
    for (const auto& p : patches) remove_only = remove_only && !p.add;
    if (!remove_only) continue;
    ++tested;
    const VoxelMask out = corrupt_mask(cube, spec, {seed});
    CHECK(signed_dice(out, cube) <= 0.0);
    CHECK(oracle::count(out) <= oracle::count(cube));
  }
  CHECK(tested == 50);
}

TEST_CASE("add-only corruption is a superset") {
  const VoxelMask b = oracle::ball({20, 20, 20}, 10, 10, 10, 4);
  const NoiseSpec spec{3, 2, 6, CenterSampling::BoundingBox};
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    const auto patches = draw_patches(b, spec, {seed});
    bool add_only = true;
    for (const auto& p : patches) add_only = add_only && p.add;
    if (!add_only) continue;
    const VoxelMask out = apply_patches(b, patches);
    CHECK(oracle::overlap(out, b) == oracle::count(b));
  }
}

TEST_CASE("signed_dice") {
  const VoxelMask t = oracle::ball({16, 16, 16}, 8, 8, 8, 4);
  CHECK(signed_dice(t, t) == 1.0);
  const VoxelMask empty(Dims{16, 16, 16}, {1, 1, 1});
  CHECK(signed_dice(empty, empty) == 1.0);

  // T plus an attached block of |T| voxels: 2|T| / 3|T|.
  VoxelMask plus = t;
  std::int64_t need = oracle::count(t);
  for (int k = 0; k < 16 && need > 0; ++k)
    for (int j = 0; j < 16 && need > 0; ++j)
      for (int i = 0; i < 16 && need > 0; ++i)
        if (!plus.at(i, j, k)) {
          plus.set(i, j, k, 1);
          --need;
        }
  CHECK(signed_dice(plus, t) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));

  // I subset of T with half the voxels: -2/3.
  VoxelMask cube(Dims{4, 4, 4}, {1, 1, 1});
  for (auto& v : cube.data()) v = 1;
  VoxelMask half = cube;
  for (int k = 2; k < 4; ++k)
    for (int j = 0; j < 4; ++j)
      for (int i = 0; i < 4; ++i) half.set(i, j, k, 0);
  CHECK(signed_dice(half, cube) == doctest::Approx(-2.0 / 3.0).epsilon(1e-15));

  Rng rng(11);
  for (int r = 0; r < 200; ++r) {
    const VoxelMask a = oracle::random_mask(rng, {5, 4, 3}, uniform01(rng));
    const VoxelMask b = oracle::random_mask(rng, {5, 4, 3}, uniform01(rng));
    const double s = signed_dice(a, b);
    CHECK(s == oracle::signed_dice(a, b));
    CHECK(std::abs(s) == doctest::Approx(oracle::dice(a, b)).epsilon(1e-15));
    CHECK(s >= -1.0);
    CHECK(s <= 1.0);
  }
  CHECK_THROWS_AS(signed_dice(t, VoxelMask(Dims{2, 2, 2}, {1, 1, 1})), Error);
}

TEST_CASE("calibration_histogram") {
  const std::vector<VoxelMask> targets{oracle::ball({16, 16, 16}, 8, 8, 8, 5)};
  const auto none = calibration_histogram(targets, {2, 1, 3, CenterSampling::Foreground}, 0, 10, 1);
  CHECK(none.total == 0);
  for (auto c : none.counts) CHECK(c == 0);

  // Single-voxel patches barely move the mask: all mass next to +-1.
  const auto tiny = calibration_histogram(targets, {1, 1, 1, CenterSampling::Foreground}, 200, 10, 2);
  CHECK(tiny.counts[0] + tiny.counts[9] == 200);
  CHECK(tiny.min_value >= -1.0);
  CHECK(tiny.max_value <= 1.0);

  CHECK(signed_dice_bin(1.0, 10) == 9);
  CHECK(signed_dice_bin(-1.0, 10) == 0);
  CHECK(signed_dice_bin(0.0, 10) == 5);
  CHECK(signed_dice_bin(-0.2, 10) == 4);
  CHECK_THROWS_AS(calibration_histogram(targets, {1, 1, 1, CenterSampling::Foreground}, 1, 1, 0), Error);
  CHECK_THROWS_AS(calibration_histogram({}, {1, 1, 1, CenterSampling::Foreground}, 1, 10, 0), Error);
}

TEST_CASE("invalid specs are rejected") {
  const VoxelMask t = oracle::ball({8, 8, 8}, 4, 4, 4, 2);
  CHECK_THROWS_AS(corrupt_mask(t, {0, 1, 1, CenterSampling::Foreground}, {0}), Error);
  CHECK_THROWS_AS(corrupt_mask(t, {1, 0, 1, CenterSampling::Foreground}, {0}), Error);
  CHECK_THROWS_AS(corrupt_mask(t, {1, 3, 2, CenterSampling::Foreground}, {0}), Error);
}
