#include "egonn/geometry.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <limits>

namespace egonn::geom {

PoseSE3 PoseSE3::from_yaw(double yaw, const Vec3& t) {
  PoseSE3 T;
  const double c = std::cos(yaw), s = std::sin(yaw);
  T.rotation << c, -s, 0, s, c, 0, 0, 0, 1;
  T.translation = t;
  return T;
}

bool PoseSE3::is_valid(double tol) const {
  if (!rotation.allFinite() || !translation.allFinite()) return false;
  const double ortho = (rotation.transpose() * rotation - Mat3::Identity()).norm();
  return ortho <= tol && std::abs(rotation.determinant() - 1.0) <= tol;
}

void PoseSE3::orthonormalize() {
  Eigen::JacobiSVD<Mat3> svd(rotation, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 R = svd.matrixU() * svd.matrixV().transpose();
  if (R.determinant() < 0) {
    Mat3 flip = Mat3::Identity();
    flip(2, 2) = -1;
    R = svd.matrixU() * flip * svd.matrixV().transpose();
  }
  rotation = R;
}

PoseSE3 se3_inverse(const PoseSE3& T) {
  PoseSE3 inv;
  inv.rotation = T.rotation.transpose();
  inv.translation = -(inv.rotation * T.translation);
  return inv;
}

PoseSE3 se3_compose(const PoseSE3& a, const PoseSE3& b) {
  PoseSE3 c;
  c.rotation = a.rotation * b.rotation;
  c.translation = a.rotation * b.translation + a.translation;
  return c;
}

PoseSE3 se3_relative(const PoseSE3& Ta, const PoseSE3& Tb) {
  return se3_compose(se3_inverse(Ta), Tb);
}

PointCloud se3_apply(const PoseSE3& T, const PointCloud& cloud) {
  PointCloud out;
  out.points.reserve(cloud.size());
  for (const auto& p : cloud.points) out.points.push_back(T.apply(p));
  return out;
}

CylPoint cart_to_cyl(const Vec3& p) {
  CylPoint c;
  c.rho = std::hypot(p.x(), p.y());
  if (c.rho < 1e-9) {
    c.theta = 0.0;
  } else {
    c.theta = std::atan2(p.y(), p.x());
    if (c.theta < 0.0) c.theta += kTwoPi;
    if (c.theta >= kTwoPi) c.theta = 0.0;
  }
  c.z = p.z();
  return c;
}

Vec3 cyl_to_cart(const CylPoint& c) {
  return {c.rho * std::cos(c.theta), c.rho * std::sin(c.theta), c.z};
}

int QuantizationSpec::theta_bins() const {
  return static_cast<int>(std::llround(kTwoPi / theta_step));
}

void QuantizationSpec::validate() const {
  if (!(rho_step > 0) || !(theta_step > 0) || !(z_step > 0))
    throw DataError("quantization steps must be positive");
  const double bins = kTwoPi / theta_step;
  if (std::abs(bins - std::llround(bins)) > 1e-9)
    throw DataError("theta_step must evenly divide the full circle");
}

std::vector<VoxelCoord> quantize(const PointCloud& cloud, const QuantizationSpec& q) {
  q.validate();
  const int bins = q.theta_bins();
  std::vector<VoxelCoord> out;
  out.reserve(cloud.size());
  for (const auto& p : cloud.points) {
    const CylPoint c = cart_to_cyl(p);
    VoxelCoord v;
    v.i_rho = static_cast<int32_t>(std::floor(c.rho / q.rho_step));
    int32_t it = static_cast<int32_t>(std::floor(c.theta / q.theta_step));
    v.i_theta = std::clamp(it, 0, bins - 1);  // fp guard at the 2*pi seam
    v.i_z = static_cast<int32_t>(std::floor(c.z / q.z_step));
    out.push_back(v);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

PointCloud remove_ground(const PointCloud& cloud, double z_min) {
  PointCloud out;
  out.points.reserve(cloud.size());
  for (const auto& p : cloud.points)
    if (p.z() > z_min) out.points.push_back(p);
  return out;
}

PointCloud rotate_z(const PointCloud& cloud, double angle) {
  return se3_apply(PoseSE3::from_yaw(angle), cloud);
}

PointCloud jitter(const PointCloud& cloud, double sigma, Rng& rng) {
  PointCloud out = cloud;
  if (sigma <= 0) return out;
  std::normal_distribution<double> n(0.0, sigma);
  for (auto& p : out.points) {
    p.x() += n(rng);
    p.y() += n(rng);
    p.z() += n(rng);
  }
  return out;
}

PointCloud remove_random_cuboid(const PointCloud& cloud, double side_min, double side_max,
                                Rng& rng) {
  if (cloud.empty()) return cloud;
  Vec3 lo = cloud.points.front(), hi = cloud.points.front();
  for (const auto& p : cloud.points) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Vec3 center, half;
  for (int a = 0; a < 3; ++a) {
    center[a] = lo[a] + u(rng) * (hi[a] - lo[a]);
    half[a] = 0.5 * (side_min + u(rng) * (side_max - side_min));
  }
  PointCloud out;
  out.points.reserve(cloud.size());
  for (const auto& p : cloud.points) {
    const bool inside = std::abs(p.x() - center.x()) < half.x() &&
                        std::abs(p.y() - center.y()) < half.y() &&
                        std::abs(p.z() - center.z()) < half.z();
    if (!inside) out.points.push_back(p);
  }
  return out;
}

PointCloud augment_global(const PointCloud& cloud, const GlobalAugment& params, Rng& rng) {
  PointCloud out = remove_random_cuboid(cloud, params.cuboid_side_min, params.cuboid_side_max, rng);
  out = jitter(out, params.jitter_sigma, rng);
  if (params.random_rotation) {
    std::uniform_real_distribution<double> u(0.0, kTwoPi);
    out = rotate_z(out, u(rng));
  }
  return out;
}

std::pair<PointCloud, PoseSE3> augment_local(const PointCloud& cloud, double max_translation,
                                             Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double angle = u(rng) * kTwoPi;
  const double r = max_translation * std::sqrt(u(rng));
  const double dir = u(rng) * kTwoPi;
  PoseSE3 T = PoseSE3::from_yaw(angle, {r * std::cos(dir), r * std::sin(dir), 0.0});
  return {se3_apply(T, cloud), T};
}

std::vector<int> decimate_trajectory(const std::vector<PoseSE3>& poses, double min_disp) {
  std::vector<int> kept;
  if (poses.empty()) return kept;
  kept.push_back(0);
  for (int i = 1; i < static_cast<int>(poses.size()); ++i) {
    if ((poses[i].translation - poses[kept.back()].translation).norm() >= min_disp)
      kept.push_back(i);
  }
  return kept;
}

Mat3 random_rotation(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  while (q.norm() < 1e-6) q = Eigen::Quaterniond(n(rng), n(rng), n(rng), n(rng));
  q.normalize();
  return q.toRotationMatrix();
}

}  // namespace egonn::geom
