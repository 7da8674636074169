#include "maskqa/geomstats.hpp"

#include <cmath>
#include <sstream>

#include "maskqa/error.hpp"
#include "maskqa/metrics.hpp"

namespace maskqa {

Eigen::Matrix<double, 6, 1> FeatureVector::as_vector() const {
  Eigen::Matrix<double, 6, 1> v;
  v << volume, surface_area, sav_ratio, elongation, roundness, centroid_offset;
  return v;
}

FeatureVector extract_features(const MultiChannelVolume& vol, int organ_index) {
  require(organ_index >= 0 && organ_index < vol.channels(), ErrorKind::InvalidArgument,
          "extract_features: organ index out of range");
  const VoxelMask mask = vol.channel(organ_index);
  const Dims& d = mask.dims();
  const Spacing& s = mask.spacing();

  std::int64_t n = 0;
  std::int64_t faces[3] = {0, 0, 0};
  Eigen::Vector3d sum = Eigen::Vector3d::Zero();
  Eigen::Matrix3d sum_sq = Eigen::Matrix3d::Zero();
  for (int k = 0; k < d.z; ++k)
    for (int j = 0; j < d.y; ++j)
      for (int i = 0; i < d.x; ++i) {
        if (!mask.at(i, j, k)) continue;
        ++n;
        const Eigen::Vector3d p((i + 0.5) * s.x, (j + 0.5) * s.y, (k + 0.5) * s.z);
        sum += p;
        sum_sq += p * p.transpose();
        const int idx[3] = {i, j, k};
        for (int a = 0; a < 3; ++a) {
          for (int step : {-1, 1}) {
            int q[3] = {idx[0], idx[1], idx[2]};
            q[a] += step;
            if (!mask.in_bounds(q[0], q[1], q[2]) || !mask.at(q[0], q[1], q[2])) ++faces[a];
          }
        }
      }
  require(n > 0, ErrorKind::EmptyForeground, "extract_features: organ channel is empty");

  FeatureVector f;
  f.volume = static_cast<double>(n) * s.voxel_volume();
  f.surface_area = static_cast<double>(faces[0]) * s.y * s.z +
                   static_cast<double>(faces[1]) * s.x * s.z +
                   static_cast<double>(faces[2]) * s.x * s.y;
  f.sav_ratio = f.surface_area / f.volume;

  const Eigen::Vector3d centroid = sum / static_cast<double>(n);
  Eigen::Matrix3d cov = sum_sq / static_cast<double>(n) - centroid * centroid.transpose();
  cov(0, 0) += s.x * s.x / 12.0;
  cov(1, 1) += s.y * s.y / 12.0;
  cov(2, 2) += s.z * s.z / 12.0;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov, Eigen::EigenvaluesOnly);
  const Eigen::Vector3d lambda = eig.eigenvalues();  // ascending
  f.elongation = std::sqrt(lambda(2) / lambda(1));
  if (!(f.elongation >= 1.0)) f.elongation = 1.0;  // rounding on exact ties

  constexpr double pi = 3.14159265358979323846;
  const double sphere_area = std::cbrt(pi) * std::pow(6.0 * f.volume, 2.0 / 3.0);
  f.roundness = sphere_area / f.surface_area;

  Eigen::Vector3d others = Eigen::Vector3d::Zero();
  int n_others = 0;
  for (int c = 0; c < vol.channels(); ++c) {
    if (c == organ_index) continue;
    const VoxelMask other = vol.channel(c);
    if (other.empty_foreground()) continue;
    const Point3 com = center_of_mass(other);
    others += Eigen::Vector3d(com[0], com[1], com[2]);
    ++n_others;
  }
  if (n_others > 0) f.centroid_offset = (centroid - others / n_others).norm();
  return f;
}

GaussianModel fit_gaussian(const std::vector<FeatureVector>& features, const std::string& organ) {
  const int n = static_cast<int>(features.size());
  require(n >= FeatureVector::kSize + 1, ErrorKind::InvalidArgument,
          "fit_gaussian: need at least 7 samples, got " + std::to_string(n));
  GaussianModel model;
  model.organ = organ;
  model.samples = n;
  // Shifted by the first sample so identical inputs give that sample exactly.
  const Eigen::Matrix<double, 6, 1> ref = features.front().as_vector();
  Eigen::Matrix<double, 6, 1> shift = Eigen::Matrix<double, 6, 1>::Zero();
  for (const auto& f : features) shift += f.as_vector() - ref;
  model.mean = ref + shift / n;
  Eigen::Matrix<double, 6, 6> cov = Eigen::Matrix<double, 6, 6>::Zero();
  for (const auto& f : features) {
    const Eigen::Matrix<double, 6, 1> dv = f.as_vector() - model.mean;
    cov += dv * dv.transpose();
  }
  cov /= (n - 1);
  const double trace = cov.trace();
  const double floor = trace > 0.0 ? kCovarianceEpsilon * trace / 6.0 : kCovarianceEpsilon;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 6, 6>> eig(cov, Eigen::EigenvaluesOnly);
  if (eig.eigenvalues()(0) < floor) {
    cov.diagonal().array() += floor;
    model.ridge = floor;
  }
  model.covariance = cov;
  return model;
}

double mahalanobis_score(const GaussianModel& model, const FeatureVector& x) {
  Eigen::LLT<Eigen::Matrix<double, 6, 6>> llt(model.covariance);
  require(llt.info() == Eigen::Success, ErrorKind::NotPositiveDefinite,
          "mahalanobis: covariance is not positive definite");
  const Eigen::Matrix<double, 6, 1> dv = x.as_vector() - model.mean;
  const Eigen::Matrix<double, 6, 1> w = llt.matrixL().solve(dv);
  return std::sqrt(w.squaredNorm());
}

std::string serialize_model(const GaussianModel& model) {
  std::ostringstream out;
  out << "organ " << model.organ << "\nmean";
  for (int i = 0; i < 6; ++i) out << ' ' << format_real(model.mean(i));
  out << "\ncovariance";
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j <= i; ++j) out << ' ' << format_real(model.covariance(i, j));
  out << '\n';
  return out.str();
}

GaussianModel parse_model(const std::string& text) {
  std::istringstream in(text);
  std::string key;
  GaussianModel model;
  require(static_cast<bool>(in >> key) && key == "organ", ErrorKind::SchemaMismatch,
          "model block must start with 'organ'");
  in >> model.organ;
  require(static_cast<bool>(in >> key) && key == "mean", ErrorKind::SchemaMismatch,
          "model block lacks 'mean'");
  std::string tok;
  for (int i = 0; i < 6; ++i) {
    require(static_cast<bool>(in >> tok), ErrorKind::SchemaMismatch, "model mean is short");
    model.mean(i) = parse_real(tok);
  }
  require(static_cast<bool>(in >> key) && key == "covariance", ErrorKind::SchemaMismatch,
          "model block lacks 'covariance'");
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j <= i; ++j) {
      require(static_cast<bool>(in >> tok), ErrorKind::SchemaMismatch, "model covariance is short");
      model.covariance(i, j) = model.covariance(j, i) = parse_real(tok);
    }
  return model;
}

}  // namespace maskqa
