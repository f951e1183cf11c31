#pragma once

#include <compare>
#include <cstdint>
#include <utility>
#include <vector>

#include "egonn/common.hpp"

namespace egonn::geom {

/// Unordered set of 3D points in the sensor frame, Cartesian meters.
struct PointCloud {
  std::vector<Vec3> points;

  size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

/// Rigid transform mapping sensor-frame points into the world frame:
/// p_world = rotation * p_sensor + translation.
struct PoseSE3 {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static PoseSE3 identity() { return {}; }
  static PoseSE3 from_yaw(double yaw, const Vec3& t = Vec3::Zero());

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  bool is_valid(double tol = 1e-9) const;
  /// Projects a near-orthonormal rotation back onto SO(3).
  void orthonormalize();
};

PoseSE3 se3_inverse(const PoseSE3& T);
/// Composition: (a * b).apply(p) == a.apply(b.apply(p)).
PoseSE3 se3_compose(const PoseSE3& a, const PoseSE3& b);
/// Relative pose Ta^-1 * Tb (frame b expressed in frame a).
PoseSE3 se3_relative(const PoseSE3& Ta, const PoseSE3& Tb);
PointCloud se3_apply(const PoseSE3& T, const PointCloud& cloud);

struct CylPoint {
  double rho;    // meters, >= 0
  double theta;  // radians in [0, 2*pi)
  double z;      // meters
};

/// Points with rho < 1e-9 get theta = 0 by convention.
CylPoint cart_to_cyl(const Vec3& p);
Vec3 cyl_to_cart(const CylPoint& c);

/// Cylindrical voxelization steps. theta_step must evenly divide the full
/// circle so the angular axis forms a closed ring of bins.
struct QuantizationSpec {
  double rho_step = 0.3;
  double theta_step = deg_to_rad(1.0);
  double z_step = 0.2;

  int theta_bins() const;
  void validate() const;  // throws DataError on bad steps
};

/// One occupied voxel, at some (per-axis) stride level of the base lattice.
struct VoxelCoord {
  int32_t batch = 0;
  int32_t i_rho = 0;
  int32_t i_theta = 0;
  int32_t i_z = 0;

  friend auto operator<=>(const VoxelCoord&, const VoxelCoord&) = default;
};

/// Voxelizes a cloud on the cylindrical lattice; result is sorted and
/// duplicate-free, batch index 0. Occupancy is the only feature (value 1),
/// carried implicitly.
std::vector<VoxelCoord> quantize(const PointCloud& cloud, const QuantizationSpec& q);

/// Keeps points strictly above z_min.
PointCloud remove_ground(const PointCloud& cloud, double z_min);

// -- Training augmentations ---------------------------------------------------

PointCloud rotate_z(const PointCloud& cloud, double angle);
PointCloud jitter(const PointCloud& cloud, double sigma, Rng& rng);
/// Removes points inside a random axis-aligned cuboid. Center is uniform over
/// the cloud's bounding box, each side uniform in [side_min, side_max].
PointCloud remove_random_cuboid(const PointCloud& cloud, double side_min, double side_max,
                                Rng& rng);

struct GlobalAugment {
  double cuboid_side_min = 2.0;
  double cuboid_side_max = 10.0;
  double jitter_sigma = 0.1;
  bool random_rotation = true;
};

/// Cuboid removal, then jitter, then random z-rotation (in that order).
PointCloud augment_global(const PointCloud& cloud, const GlobalAugment& params, Rng& rng);

/// Random z-rotation plus random x-y translation with norm <= max_translation.
/// Returns the augmented cloud and the exact transform that was applied, so
/// ground-truth correspondence between augmented pairs stays exact.
std::pair<PointCloud, PoseSE3> augment_local(const PointCloud& cloud, double max_translation,
                                             Rng& rng);

/// Greedy scan keeping a pose only if its translation moved at least min_disp
/// from the last kept pose. First pose is always kept.
std::vector<int> decimate_trajectory(const std::vector<PoseSE3>& poses, double min_disp);

/// Uniformly distributed random rotation (for pose perturbations in tests and
/// synthetic data).
Mat3 random_rotation(Rng& rng);

}  // namespace egonn::geom
