#include <doctest.h>

#include <cmath>

#include "maskqa/geomstats.hpp"
#include "oracles.hpp"

using namespace maskqa;

namespace {

constexpr double kPi = 3.14159265358979323846;

MultiChannelVolume one_channel(const VoxelMask& m) { return MultiChannelVolume::stack({"o"}, {m}); }

// Exposed faces counted as 0/1 transitions along each axis line, with the
// grid padded by background.
std::array<std::int64_t, 3> transitions(const VoxelMask& m) {
  const Dims d = m.dims();
  auto v = [&](int i, int j, int k) { return m.in_bounds(i, j, k) ? m.at(i, j, k) : 0; };
  std::array<std::int64_t, 3> t{0, 0, 0};
  for (int k = -1; k < d.z; ++k)
    for (int j = -1; j < d.y; ++j)
      for (int i = -1; i < d.x; ++i) {
        t[0] += j >= 0 && k >= 0 && v(i, j, k) != v(i + 1, j, k);
        t[1] += i >= 0 && k >= 0 && v(i, j, k) != v(i, j + 1, k);
        t[2] += i >= 0 && j >= 0 && v(i, j, k) != v(i, j, k + 1);
      }
  return t;
}

FeatureVector random_features(Rng& rng) {
  FeatureVector f;
  f.volume = uniform_real(rng, 100, 200);
  f.surface_area = uniform_real(rng, 50, 90);
  f.sav_ratio = uniform_real(rng, 0.2, 0.9);
  f.elongation = uniform_real(rng, 1, 3);
  f.roundness = uniform_real(rng, 0.4, 1);
  f.centroid_offset = uniform_real(rng, 0, 40);
  return f;
}

}  // namespace

TEST_CASE("features of one voxel") {
  VoxelMask m(Dims{3, 3, 3}, {1, 1, 1});
  m.set(1, 1, 1, 1);
  const auto f = extract_features(one_channel(m), 0);
  CHECK(f.volume == 1.0);
  CHECK(f.surface_area == 6.0);
  CHECK(f.sav_ratio == 6.0);
  CHECK(f.elongation == 1.0);
  CHECK(f.roundness == doctest::Approx(std::cbrt(36.0 * kPi) / 6.0).epsilon(1e-12));
  CHECK(f.centroid_offset == 0.0);

  VoxelMask a(Dims{1, 1, 1}, {2, 1, 1}, {1});
  const auto fa = extract_features(one_channel(a), 0);
  CHECK(fa.volume == 2.0);
  CHECK(fa.surface_area == 10.0);
  CHECK(fa.elongation == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("features of a 2x1x1 bar") {
  VoxelMask m(Dims{4, 3, 3}, {1, 1, 1});
  m.set(1, 1, 1, 1);
  m.set(2, 1, 1, 1);
  const auto f = extract_features(one_channel(m), 0);
  CHECK(f.volume == 2.0);
  CHECK(f.surface_area == 10.0);
  CHECK(f.sav_ratio == 5.0);
  // second moments: x 1/4 + 1/12 = 1/3, y = z = 1/12
  CHECK(f.elongation == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("ball features against independent counts") {
  const Spacing sp{1.5, 1.0, 2.0};
  VoxelMask b = oracle::ball({30, 30, 20}, 14.5, 14.5, 9.5, 8);
  b = VoxelMask(b.dims(), sp, b.data());
  const auto f = extract_features(one_channel(b), 0);
  const auto n = oracle::count(b);
  const auto t = transitions(b);
  const double area = t[0] * sp.y * sp.z + t[1] * sp.x * sp.z + t[2] * sp.x * sp.y;
  CHECK(std::abs(f.volume - n * 3.0) <= 1e-12 * f.volume);
  CHECK(std::abs(f.surface_area - area) <= 1e-12 * area);
  CHECK(f.roundness == doctest::Approx(std::cbrt(kPi) * std::pow(6.0 * n * 3.0, 2.0 / 3.0) / area).epsilon(1e-12));

  // two-pass principal moments
  Eigen::Vector3d c = Eigen::Vector3d::Zero();
  std::vector<Eigen::Vector3d> pts;
  for (int k = 0; k < 20; ++k)
    for (int j = 0; j < 30; ++j)
      for (int i = 0; i < 30; ++i)
        if (b.at(i, j, k)) pts.emplace_back((i + 0.5) * sp.x, (j + 0.5) * sp.y, (k + 0.5) * sp.z);
  for (const auto& p : pts) c += p;
  c /= static_cast<double>(pts.size());
  Eigen::Matrix3d m = Eigen::Matrix3d::Zero();
  for (const auto& p : pts) m += (p - c) * (p - c).transpose();
  m /= static_cast<double>(pts.size());
  m.diagonal() += Eigen::Vector3d(sp.x * sp.x, sp.y * sp.y, sp.z * sp.z) / 12.0;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(m);
  CHECK(f.elongation == doctest::Approx(std::sqrt(eig.eigenvalues()(2) / eig.eigenvalues()(1))).epsilon(1e-9));
}

TEST_CASE("centroid offset") {
  VoxelMask a(Dims{8, 8, 1}, {1, 1, 1}), b = a, c = a;
  a.set(0, 0, 0, 1);
  b.set(3, 4, 0, 1);
  const auto vol = MultiChannelVolume::stack({"a", "b", "c"}, {a, b, c});
  CHECK(extract_features(vol, 0).centroid_offset == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(oracle::raised([&] { extract_features(vol, 2); }) == ErrorKind::EmptyForeground);
  CHECK(oracle::raised([&] { extract_features(vol, 3); }) == ErrorKind::InvalidArgument);
}

TEST_CASE("fit_gaussian") {
  Rng rng(21);
  std::vector<FeatureVector> fs;
  for (int i = 0; i < 6; ++i) fs.push_back(random_features(rng));
  CHECK(oracle::raised([&] { fit_gaussian(fs, "o"); }) == ErrorKind::InvalidArgument);
  for (int i = 0; i < 24; ++i) fs.push_back(random_features(rng));
  const auto g = fit_gaussian(fs, "o");
  CHECK(g.samples == 30);
  CHECK(g.ridge == 0.0);
  for (int a = 0; a < 6; ++a) {
    double mu = 0;
    for (const auto& f : fs) mu += f.as_vector()(a);
    mu /= 30;
    CHECK(std::abs(g.mean(a) - mu) <= 1e-12 * (1 + std::abs(mu)));
    for (int b = 0; b < 6; ++b) {
      double mb = 0;
      for (const auto& f : fs) mb += f.as_vector()(b);
      mb /= 30;
      double s = 0;
      for (const auto& f : fs) s += (f.as_vector()(a) - mu) * (f.as_vector()(b) - mb);
      s /= 29;
      CHECK(std::abs(g.covariance(a, b) - s) <= 1e-9 * (1 + std::abs(s)));
    }
  }

  // identical samples: zero covariance, ridge eps on the diagonal
  std::vector<FeatureVector> same(8, fs[0]);
  const auto z = fit_gaussian(same, "z");
  CHECK(z.ridge == kCovarianceEpsilon);
  CHECK(z.covariance(0, 0) == kCovarianceEpsilon);
  CHECK(mahalanobis_score(z, fs[0]) == 0.0);
}

TEST_CASE("mahalanobis against an explicit inverse") {
  Rng rng(8);
  for (int r = 0; r < 1000; ++r) {
    Eigen::Matrix<double, 6, 6> a;
    for (int i = 0; i < 36; ++i) a(i) = uniform_real(rng, -1, 1);
    GaussianModel g;
    g.covariance = a * a.transpose() + 0.5 * Eigen::Matrix<double, 6, 6>::Identity();
    for (int i = 0; i < 6; ++i) g.mean(i) = uniform_real(rng, -2, 2);
    const FeatureVector x = random_features(rng);
    const Eigen::Matrix<double, 6, 1> dv = x.as_vector() - g.mean;
    const double expect = std::sqrt(dv.dot(g.covariance.inverse() * dv));
    CHECK(std::abs(mahalanobis_score(g, x) - expect) <= 1e-9 * std::max(1.0, expect));
  }

  GaussianModel d;
  d.covariance = 4.0 * Eigen::Matrix<double, 6, 6>::Identity();
  FeatureVector x{};
  x.volume = 4.0;
  x.elongation = 0.0;
  x.roundness = 0.0;
  CHECK(mahalanobis_score(d, x) == 2.0);

  d.covariance(0, 0) = -1.0;
  CHECK(oracle::raised([&] { mahalanobis_score(d, x); }) == ErrorKind::NotPositiveDefinite);
}

TEST_CASE("model text round trip") {
  Rng rng(2);
  std::vector<FeatureVector> fs;
  for (int i = 0; i < 10; ++i) fs.push_back(random_features(rng));
  const auto g = fit_gaussian(fs, "rectum");
  const auto back = parse_model(serialize_model(g));
  CHECK(back.organ == "rectum");
  CHECK(back.mean == g.mean);
  CHECK(back.covariance == g.covariance);
  CHECK(oracle::raised([] { parse_model("organ x\nmean 1 2 3"); }) == ErrorKind::SchemaMismatch);
  CHECK(oracle::raised([] { parse_model("mean 1"); }) == ErrorKind::SchemaMismatch);
}
