#pragma once

#include <array>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "maskqa/voxelgrid.hpp"

namespace maskqa {

/// Modality-independent shape features of one organ mask.
struct FeatureVector {
  double volume = 0.0;           // mm^3
  double surface_area = 0.0;     // mm^2
  double sav_ratio = 0.0;        // 1/mm
  double elongation = 1.0;       // >= 1
  double roundness = 1.0;        // (0, 1]
  double centroid_offset = 0.0;  // mm

  static constexpr int kSize = 6;
  Eigen::Matrix<double, 6, 1> as_vector() const;
};

/// Shape statistics for channel `organ_index`.
///
/// Surface area counts exposed 6-neighbour faces (grid border faces
/// included), weighted by the per-axis face area. Elongation is
/// sqrt(l1 / l2) for the two largest principal second moments of the voxel
/// solid (centre scatter plus s^2/12 per axis for each voxel's own extent).
/// Roundness is the equal-volume sphere's area over the measured area.
/// Centroid offset is the distance to the mean centroid of the other
/// non-empty channels, 0 when there are none.
FeatureVector extract_features(const MultiChannelVolume& vol, int organ_index);

/// Mean and covariance of feature vectors for one organ.
struct GaussianModel {
  std::string organ;
  Eigen::Matrix<double, 6, 1> mean = Eigen::Matrix<double, 6, 1>::Zero();
  Eigen::Matrix<double, 6, 6> covariance = Eigen::Matrix<double, 6, 6>::Identity();
  double ridge = 0.0;  // diagonal regulariser that was added, if any
  int samples = 0;
};

inline constexpr double kCovarianceEpsilon = 1e-6;

/// Sample mean and unbiased covariance. When the smallest eigenvalue falls
/// below eps * trace / 6 that amount is added to the diagonal (eps alone for
/// a zero trace). Needs at least 7 samples.
GaussianModel fit_gaussian(const std::vector<FeatureVector>& features, const std::string& organ);

/// sqrt((x-mu)^T Sigma^-1 (x-mu)) via a Cholesky solve.
double mahalanobis_score(const GaussianModel& model, const FeatureVector& x);

/// Text block: `organ <name>`, `mean` with 6 values, `covariance` with the 21
/// lower-triangle entries in row order.
std::string serialize_model(const GaussianModel& model);
GaussianModel parse_model(const std::string& text);

}  // namespace maskqa
