#include <doctest.h>

#include <cstdlib>
#include <filesystem>

#include "maskqa/metrics.hpp"
#include "maskqa/phantom.hpp"
#include "oracles.hpp"

using namespace maskqa;

namespace {

// Within L1 distance k of the foreground (the k-fold 6-neighbour dilation).
VoxelMask l1_dilate(const VoxelMask& m, int k) {
  const Dims d = m.dims();
  VoxelMask out(d, m.spacing());
  for (int z = 0; z < d.z; ++z)
    for (int y = 0; y < d.y; ++y)
      for (int x = 0; x < d.x; ++x) {
        bool hit = false;
        for (int c = std::max(0, z - k); c <= std::min(d.z - 1, z + k) && !hit; ++c)
          for (int b = std::max(0, y - k); b <= std::min(d.y - 1, y + k) && !hit; ++b)
            for (int a = std::max(0, x - k); a <= std::min(d.x - 1, x + k) && !hit; ++a)
              hit = std::abs(a - x) + std::abs(b - y) + std::abs(c - z) <= k && m.at(a, b, c);
        out.set(x, y, z, hit ? 1 : 0);
      }
  return out;
}

// Kept when the whole L1 ball of radius k lies inside the grid and the mask.
VoxelMask l1_erode(const VoxelMask& m, int k) {
  const Dims d = m.dims();
  VoxelMask out(d, m.spacing());
  for (int z = 0; z < d.z; ++z)
    for (int y = 0; y < d.y; ++y)
      for (int x = 0; x < d.x; ++x) {
        bool keep = true;
        for (int c = z - k; c <= z + k && keep; ++c)
          for (int b = y - k; b <= y + k && keep; ++b)
            for (int a = x - k; a <= x + k && keep; ++a)
              if (std::abs(a - x) + std::abs(b - y) + std::abs(c - z) <= k) keep = m.in_bounds(a, b, c) && m.at(a, b, c);
        out.set(x, y, z, keep ? 1 : 0);
      }
  return out;
}

bool subset(const VoxelMask& a, const VoxelMask& b) { return oracle::overlap(a, b) == oracle::count(a); }

}  // namespace

TEST_CASE("anatomy is deterministic and mirror symmetric without jitter") {
  AnatomySpec a;
  a.seed = 17;
  CHECK(generate_anatomy(a) == generate_anatomy(a));
  AnatomySpec b = a;
  b.seed = 18;
  CHECK_FALSE(generate_anatomy(a) == generate_anatomy(b));

  AnatomySpec still;
  still.global_jitter = still.organ_jitter = still.radius_jitter = 0;
  const auto v = generate_anatomy(still);
  for (auto [l, r] : layout_mirror_pairs(Layout::PelvisLike7))
    CHECK(flip_axis(v.channel(l), Axis::X) == v.channel(r));
  still.layout = Layout::KidneyLike2;
  const auto k = generate_anatomy(still);
  CHECK(k.channels() == 2);
  CHECK(flip_axis(k.channel(0), Axis::X) == k.channel(1));
}

TEST_CASE("200 anatomies: channels nonempty and pairwise disjoint") {
  for (Layout layout : {Layout::PelvisLike7, Layout::KidneyLike2}) {
    int bad = 0;
    for (int i = 0; i < 200; ++i) {
      AnatomySpec a;
      a.layout = layout;
      a.seed = anatomy_seed(99, i);
      const auto v = generate_anatomy(a);
      CHECK(v.names() == layout_organs(layout));
      for (std::int64_t vox = 0; vox < v.voxels(); ++vox) {
        int on = 0;
        for (int c = 0; c < v.channels(); ++c) on += v.value(c, vox) != 0.f;
        bad += on > 1;
      }
      for (int c = 0; c < v.channels(); ++c) bad += oracle::count(v.channel(c)) == 0;
    }
    CHECK(bad == 0);
  }
}

TEST_CASE("anatomy scales to other grids") {
  AnatomySpec a;
  a.dims = Dims{48, 40, 24};
  a.spacing = {1.0, 1.0, 2.0};
  const auto v = generate_anatomy(a);
  CHECK(v.dims() == a.dims);
  CHECK(v.spacing() == a.spacing);
  for (int c = 0; c < v.channels(); ++c) CHECK(oracle::count(v.channel(c)) > 0);
}

TEST_CASE("morphology against L1-ball oracles") {
  const VoxelMask ball = oracle::ball({24, 24, 24}, 11.5, 12, 11, 8);
  for (int k = 0; k <= 3; ++k) {
    CHECK(dilate(ball, k) == l1_dilate(ball, k));
    CHECK(erode(ball, k) == l1_erode(ball, k));
  }
  Rng rng(3);
  const VoxelMask noise = oracle::random_mask(rng, {9, 8, 7}, 0.6);
  CHECK(dilate(noise, 2) == l1_dilate(noise, 2));
  CHECK(erode(noise, 1) == l1_erode(noise, 1));

  DegradationSpec s;
  s.kind = DegradationKind::Dilate;
  s.k = 2;
  const auto dd = degrade(ball, s);
  CHECK(dd.true_dice == oracle::dice(l1_dilate(ball, 2), ball));

  double prev = 1.0;
  for (int k = 0; k <= 4; ++k) {
    const auto e = erode(ball, k), d = dilate(ball, k);
    CHECK(subset(e, ball));
    CHECK(subset(ball, d));
    const double dc = dice(e, ball);
    CHECK(dc <= prev);
    prev = dc;
  }
}

TEST_CASE("degradation examples") {
  const VoxelMask ball = oracle::ball({20, 20, 20}, 10, 10, 10, 6);
  DegradationSpec e;
  e.kind = DegradationKind::Erode;
  e.k = 0;
  const auto same = degrade(ball, e);
  CHECK(same.mask == ball);
  CHECK(same.true_dice == 1.0);

  // 6x6x8 box: truncating half of the z extent removes half the voxels.
  VoxelMask box(Dims{10, 10, 12}, {1, 1, 1});
  for (int z = 2; z < 10; ++z)
    for (int y = 2; y < 8; ++y)
      for (int x = 2; x < 8; ++x) box.set(x, y, z, 1);
  DegradationSpec t;
  t.kind = DegradationKind::TruncatePlane;
  t.axis = Axis::Z;
  t.fraction = 0.5;
  for (bool high : {false, true}) {
    t.from_high = high;
    const auto r = degrade(box, t);
    CHECK(r.true_dice == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(oracle::count(r.mask) == oracle::count(box) / 2);
    CHECK(r.mask.at(4, 4, high ? 2 : 9) == 1);
  }

  // Gap of 2 across the longest (z) axis at the centre of mass.
  DegradationSpec g;
  g.kind = DegradationKind::CutGap;
  g.thickness = 2;
  const auto cut = degrade(box, g);
  CHECK(oracle::count(cut.mask) == 36 * 6);
  CHECK(cut.mask.at(4, 4, 5) == 0);
  CHECK(cut.mask.at(4, 4, 6) == 0);
  CHECK(cut.mask.at(4, 4, 4) == 1);

  DegradationSpec p;
  p.kind = DegradationKind::PatchNoise;
  p.noise = {2, 2, 4, CenterSampling::Foreground};
  p.seed = 8;
  CHECK(degrade(ball, p).mask == corrupt_mask(ball, p.noise, {8}));

  DegradationSpec bad;
  bad.fraction = 2;
  CHECK(oracle::raised([&] { bad.validate(); }) == ErrorKind::InvalidArgument);
}

TEST_CASE("identity mix gives perfect cases") {
  DatasetSpec ds;
  ds.cases = 6;
  ds.seed = 4;
  ds.mix = DegradationMix{};
  ds.mix.identity = 1;
  ds.mix.erode = ds.mix.dilate = ds.mix.truncate = ds.mix.gap = ds.mix.patch = 0;
  const auto data = build_dataset(ds, 2);
  CHECK(data.case_ids.size() == 6);
  CHECK(data.manifest.size() == 6 * 7);
  for (const auto& r : data.manifest) {
    CHECK(r.true_dice == 1.0);
    CHECK(r.degradation == "identity");
  }
  for (std::size_t i = 0; i < 6; ++i) CHECK(data.auto_seg[i] == data.ground_truth[i]);
}

TEST_CASE("gross mix covers both labels and is reproducible") {
  DatasetSpec ds;
  ds.cases = 30;
  ds.seed = 12;
  ds.mix.identity = 0.7;
  ds.thresholds = {0.86, 0.92, 0.92, 0.51, 0.70, 0.78, 0.28};
  const auto a = build_dataset(ds, 1);
  const auto b = build_dataset(ds, 4);
  CHECK(a.auto_seg == b.auto_seg);
  const auto organs = layout_organs(Layout::PelvisLike7);
  for (std::size_t o = 0; o < organs.size(); ++o) {
    int pos = 0, neg = 0;
    for (const auto& r : a.manifest)
      if (r.organ == organs[o]) (r.true_dice < ds.thresholds[o] ? pos : neg) += 1;
    CHECK(pos > 0);
    CHECK(neg > 0);
  }

  const auto dir = std::filesystem::temp_directory_path() / "maskqa_phantom_ds";
  std::filesystem::remove_all(dir);
  write_dataset(a, dir);
  const auto rows = read_manifest(dir / "manifest.csv");
  REQUIRE(rows.size() == a.manifest.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].case_id == a.manifest[i].case_id);
    CHECK(rows[i].true_dice == a.manifest[i].true_dice);
    CHECK(rows[i].degradation == a.manifest[i].degradation);
  }
  CHECK(read_omv(dir / "auto" / (a.case_ids[3] + ".omv")) == a.auto_seg[3]);
  std::filesystem::remove_all(dir);
}
