#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "maskqa/error.hpp"
#include "maskqa/voxelgrid.hpp"
#include "oracles.hpp"

using namespace maskqa;

namespace {

VoxelMask cube(Dims d, Spacing s, std::array<int, 3> lo, std::array<int, 3> hi) {
  VoxelMask m(d, s);
  for (int k = lo[2]; k <= hi[2]; ++k)
    for (int j = lo[1]; j <= hi[1]; ++j)
      for (int i = lo[0]; i <= hi[0]; ++i) m.set(i, j, k, 1);
  return m;
}

std::filesystem::path temp_file(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "maskqa_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

void write_bytes(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << bytes;
}

}  // namespace

TEST_CASE("resample_nearest identity and integer ratio") {
  Rng rng(1);
  const VoxelMask m = oracle::random_mask(rng, {10, 10, 10}, 0.3);
  CHECK(resample_nearest(m, {1, 1, 1}) == m);

  const VoxelMask c = cube({10, 10, 10}, {2, 2, 2}, {0, 0, 0}, {9, 9, 9});
  const VoxelMask up = resample_nearest(c, {1, 1, 1});
  CHECK(up.dims() == Dims{20, 20, 20});
  CHECK(oracle::count(up) * 1.0 == doctest::Approx(oracle::count(c) * 8.0));
}

TEST_CASE("resample_nearest matches a brute-force nearest-centre lookup") {
  Rng rng(2);
  VoxelMask m(Dims{16, 16, 16}, {1.5, 1.5, 1.5});
  for (auto& v : m.data()) v = uniform01(rng) < 0.4;
  const VoxelMask r = resample_nearest(m, {1, 1, 1});
  REQUIRE(r.dims() == Dims{24, 24, 24});
  auto nearest = [](int o, double s_out, double s_in, int n) {
    const double p = (o + 0.5) * s_out;
    int best = 0;
    double bd = 1e300;
    for (int i = 0; i < n; ++i) {
      const double d = std::abs((i + 0.5) * s_in - p);
      if (d <= bd) {  // ties go to the higher index
        bd = d;
        best = i;
      }
    }
    return best;
  };
  int mismatches = 0;
  for (int k = 0; k < 24; ++k)
    for (int j = 0; j < 24; ++j)
      for (int i = 0; i < 24; ++i)
        mismatches += r.at(i, j, k) != m.at(nearest(i, 1, 1.5, 16), nearest(j, 1, 1.5, 16), nearest(k, 1, 1.5, 16));
  CHECK(mismatches == 0);
}

TEST_CASE("pad_or_crop_center") {
  VoxelMask one(Dims{3, 3, 3}, {1, 1, 1});
  one.set(1, 1, 1, 1);
  const VoxelMask p = pad_or_crop_center(one, {5, 5, 5});
  CHECK(p.at(2, 2, 2) == 1);
  CHECK(oracle::count(p) == 1);

  Rng rng(3);
  const VoxelMask four = oracle::random_mask(rng, {4, 4, 4}, 0.5);
  CHECK(pad_or_crop_center(four, {4, 4, 4}) == four);

  const VoxelMask seven = oracle::random_mask(rng, {7, 7, 7}, 0.5);
  const VoxelMask back = pad_or_crop_center(pad_or_crop_center(seven, {5, 5, 5}), {7, 7, 7});
  VoxelMask expect = seven;
  for (int k = 0; k < 7; ++k)
    for (int j = 0; j < 7; ++j)
      for (int i = 0; i < 7; ++i)
        if (i == 0 || j == 0 || k == 0 || i == 6 || j == 6 || k == 6) expect.set(i, j, k, 0);
  CHECK(back == expect);

  // Odd excess goes to the high side: 2 -> 5 pads 1 low, 2 high.
  VoxelMask two(Dims{2, 1, 1}, {1, 1, 1});
  two.set(0, 0, 0, 1);
  CHECK(pad_or_crop_center(two, {5, 1, 1}).at(1, 0, 0) == 1);
}

TEST_CASE("pad then crop back is the identity") {
  Rng rng(4);
  for (int t = 0; t < 20; ++t) {
    const Dims d{1 + static_cast<int>(uniform_int(rng, 0, 8)), 1 + static_cast<int>(uniform_int(rng, 0, 8)),
                 1 + static_cast<int>(uniform_int(rng, 0, 8))};
    const VoxelMask m = oracle::random_mask(rng, d, 0.5);
    const Dims big{d.x + static_cast<int>(uniform_int(rng, 0, 5)), d.y + static_cast<int>(uniform_int(rng, 0, 5)),
                   d.z + static_cast<int>(uniform_int(rng, 0, 5))};
    CHECK(pad_or_crop_center(pad_or_crop_center(m, big), d) == m);
  }
}

TEST_CASE("crop_about_foreground_com") {
  VoxelMask m(Dims{32, 32, 32}, {1, 1, 1});
  m.set(10, 10, 10, 1);
  const auto vol = MultiChannelVolume::stack({"a"}, {m});
  CHECK(com_crop_origin(vol, {8, 8, 8}) == std::array<int, 3>{6, 6, 6});
  const auto crop = crop_about_foreground_com(vol, {8, 8, 8});
  CHECK(crop.dims() == Dims{8, 8, 8});
  CHECK(crop.channel(0).at(4, 4, 4) == 1);

  // Clamped at the edge instead of padding.
  VoxelMask edge(Dims{32, 32, 32}, {1, 1, 1});
  edge.set(1, 30, 16, 1);
  CHECK(com_crop_origin(MultiChannelVolume::stack({"a"}, {edge}), {8, 8, 8}) == std::array<int, 3>{0, 24, 12});

  const auto empty = MultiChannelVolume::stack({"a"}, {VoxelMask(Dims{8, 8, 8}, {1, 1, 1})});
  CHECK_THROWS_AS(crop_about_foreground_com(empty, {4, 4, 4}), Error);
}

TEST_CASE("flip_axis") {
  Rng rng(5);
  const VoxelMask a = oracle::random_mask(rng, {5, 4, 3}, 0.4);
  const VoxelMask f = flip_axis(a, Axis::X);
  for (int k = 0; k < 3; ++k)
    for (int j = 0; j < 4; ++j)
      for (int i = 0; i < 5; ++i) CHECK(f.at(4 - i, j, k) == a.at(i, j, k));
  CHECK(flip_axis(f, Axis::X) == a);

  // Mirror-symmetric pair: swapping channels after the flip restores the volume.
  VoxelMask left = cube({12, 6, 6}, {1, 1, 1}, {1, 1, 1}, {3, 4, 2});
  const VoxelMask right = flip_axis(left, Axis::X);
  const auto vol = MultiChannelVolume::stack({"l", "r"}, {left, right});
  CHECK(flip_axis(vol, Axis::X, {{0, 1}}) == vol);
  CHECK(flip_axis(flip_axis(vol, Axis::Y, {{0, 1}}), Axis::Y, {{0, 1}}) == vol);
  CHECK_THROWS_AS(flip_axis(vol, Axis::X, {{0, 2}}), Error);
}

TEST_CASE("rotate_mask") {
  Rng rng(6);
  const VoxelMask a = oracle::random_mask(rng, {9, 9, 9}, 0.3);
  CHECK(rotate_mask(a, Axis::Z, 0.0) == a);

  // 90 degrees about z on an isotropic even grid maps the cuboid onto its transpose.
  const VoxelMask box = cube({16, 16, 16}, {1, 1, 1}, {4, 6, 2}, {11, 9, 12});
  const VoxelMask rot = rotate_mask(box, Axis::Z, 90.0);
  CHECK(oracle::count(rot) == oracle::count(box));
  const BoundingBox bb = tight_bounding_box(rot);
  CHECK(bb.extent(0) == 4);
  CHECK(bb.extent(1) == 8);
  CHECK(bb.extent(2) == 11);

  const VoxelMask b = oracle::ball({32, 32, 32}, 15.5, 15.5, 15.5, 8);
  for (double deg : {10.0, -10.0})
    for (Axis ax : {Axis::X, Axis::Y, Axis::Z}) {
      const double ratio = static_cast<double>(oracle::count(rotate_mask(b, ax, deg))) / oracle::count(b);
      CHECK(std::abs(ratio - 1.0) < 0.05);
    }
}

TEST_CASE("center_of_mass and tight_bounding_box") {
  VoxelMask one(Dims{8, 8, 8}, {1, 1, 1});
  one.set(3, 4, 5, 1);
  CHECK(center_of_mass(one) == Point3{3.5, 4.5, 5.5});

  const VoxelMask block = cube({8, 8, 8}, {1, 1, 1}, {0, 0, 0}, {1, 1, 1});
  CHECK(center_of_mass(block) == Point3{1, 1, 1});
  CHECK(tight_bounding_box(block) == BoundingBox{{0, 0, 0}, {1, 1, 1}});

  Rng rng(7);
  VoxelMask sparse(Dims{11, 7, 9}, {0.5, 1.25, 2.0});
  for (auto& v : sparse.data()) v = uniform01(rng) < 0.05;
  sparse.set(0, 0, 0, 1);
  double sx = 0, sy = 0, sz = 0, n = 0;
  std::array<int, 3> lo{99, 99, 99}, hi{-1, -1, -1};
  for (int k = 0; k < 9; ++k)
    for (int j = 0; j < 7; ++j)
      for (int i = 0; i < 11; ++i)
        if (sparse.at(i, j, k)) {
          sx += (i + 0.5) * 0.5;
          sy += (j + 0.5) * 1.25;
          sz += (k + 0.5) * 2.0;
          n += 1;
          lo = {std::min(lo[0], i), std::min(lo[1], j), std::min(lo[2], k)};
          hi = {std::max(hi[0], i), std::max(hi[1], j), std::max(hi[2], k)};
        }
  const Point3 c = center_of_mass(sparse);
  CHECK(c[0] == doctest::Approx(sx / n).epsilon(1e-12));
  CHECK(c[1] == doctest::Approx(sy / n).epsilon(1e-12));
  CHECK(c[2] == doctest::Approx(sz / n).epsilon(1e-12));
  CHECK(tight_bounding_box(sparse) == BoundingBox{lo, hi});

  CHECK_THROWS_AS(center_of_mass(VoxelMask(Dims{2, 2, 2}, {1, 1, 1})), Error);
  CHECK_THROWS_AS(tight_bounding_box(VoxelMask(Dims{2, 2, 2}, {1, 1, 1})), Error);
}

TEST_CASE("OMV round trip is bit exact") {
  Rng rng(8);
  const auto a = oracle::random_mask(rng, {6, 5, 4}, 0.5);
  const auto b = oracle::random_mask(rng, {6, 5, 4}, 0.2);
  VoxelMask a2(a.dims(), {1.5, 0.75, 3.0}, a.data()), b2(b.dims(), {1.5, 0.75, 3.0}, b.data());
  const auto vol = MultiChannelVolume::stack({"bladder", "rectum"}, {a2, b2});
  const auto path = temp_file("round.omv");
  write_omv(vol, path);
  CHECK(read_omv(path) == vol);
  const auto image = read_omv_image(path);
  CHECK(encode_omv(image) == encode_omv(to_omv_image(vol)));

  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  CHECK(bytes.rfind("OMV1 6 5 4 2\nspacing 1.5 0.75 3\nchannels bladder,rectum\nencoding u8\n\n", 0) == 0);
  CHECK(bytes.size() == bytes.find("\n\n") + 2 + 6 * 5 * 4 * 2);

  MultiChannelVolume soft({"p"}, {2, 2, 1}, {1, 1, 1});
  soft.set_soft(true);
  soft.values() = {0.0f, 1.0f, 128.0f / 255.0f, 3.0f / 255.0f};
  write_omv(soft, temp_file("soft.omv"));
  CHECK(read_omv(temp_file("soft.omv")) == soft);
}

TEST_CASE("OMV errors are distinct") {
  auto kind_of = [](const std::filesystem::path& p) {
    try {
      read_omv(p);
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::Logic;
  };
  const auto bad_magic = temp_file("magic.omv");
  write_bytes(bad_magic, "OMV2 1 1 1 1\nspacing 1 1 1\nchannels a\nencoding u8\n\n\x01");
  CHECK(kind_of(bad_magic) == ErrorKind::MagicMismatch);

  const auto truncated = temp_file("trunc.omv");
  write_bytes(truncated, "OMV1 2 2 2 1\nspacing 1 1 1\nchannels a\nencoding u8\n\n\x01\x00\x01");
  CHECK(kind_of(truncated) == ErrorKind::Truncated);

  const auto huge = temp_file("huge.omv");
  write_bytes(huge, "OMV1 2000000000 2000000000 2000000000 9\nspacing 1 1 1\nchannels a\nencoding u8\n\n");
  CHECK(kind_of(huge) == ErrorKind::DimensionOverflow);

  CHECK(kind_of(temp_file("does_not_exist.omv")) == ErrorKind::MissingFile);
}

TEST_CASE("binary ops keep the value set") {
  Rng rng(9);
  const VoxelMask m = oracle::random_mask(rng, {9, 8, 7}, 0.5);
  for (const VoxelMask& r : {resample_nearest(m, {0.7, 1.3, 2.0}), pad_or_crop_center(m, {12, 5, 9}),
                             rotate_mask(m, Axis::Y, 10.0), flip_axis(m, Axis::Z)})
    for (auto v : r.data()) CHECK(v <= 1);
}
