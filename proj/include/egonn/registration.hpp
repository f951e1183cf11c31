#pragma once

#include <optional>
#include <vector>

#include "egonn/geometry.hpp"
#include "egonn/nn_grid.hpp"

namespace egonn::reg {

struct Match {
  int a;
  int b;
  double score;  // cosine similarity
};
using MatchSet = std::vector<Match>;

/// Greedy cosine matching of unit descriptor rows: each row of Da is paired
/// with its best row of Db; mutual mode keeps only reciprocal best pairs.
/// Ties break to the lowest index.
MatchSet match_descriptors(const Mat& da, const Mat& db, bool mutual);

/// Least-squares rigid fit T minimizing sum ||T*a_i - b_i||^2 over >= 3
/// correspondences (SVD of the cross-covariance with determinant-sign
/// correction). Returns nullopt for degenerate (collinear) samples.
std::optional<geom::PoseSE3> kabsch(const std::vector<Vec3>& a, const std::vector<Vec3>& b);

struct RansacConfig {
  int max_iters = 2000;
  double inlier_radius = 0.5;
  int min_inliers = 6;
  double confidence = 0.999;
  uint64_t seed = 0;
};

struct RansacResult {
  bool success = false;
  geom::PoseSE3 pose;  // maps a-frame points onto b-frame points
  std::vector<int> inliers;
  int iterations = 0;
};

/// Robust rigid estimation from putative matches: 3-point minimal samples,
/// consensus counting at inlier_radius, adaptive iteration bound from the
/// best inlier ratio, final refit on the best consensus set. Per-iteration
/// RNG streams are derived from the seed, so the result is deterministic
/// regardless of the adaptive stop. Failure (best consensus < min_inliers)
/// is reported in the result, not thrown.
RansacResult ransac_register(const MatchSet& matches, const Mat& qa, const Mat& qb,
                             const RansacConfig& cfg);

/// Point-to-point ICP: nearest-neighbor association against `target` plus a
/// rigid refit, until the mean residual change drops below tol. Returns the
/// best pose found (lowest mean residual).
geom::PoseSE3 icp_p2p(const geom::PointCloud& source, const geom::PointCloud& target,
                      const geom::PoseSE3& init, int max_iters = 50, double tol = 1e-6);

struct PoseErrors {
  double rte = 0.0;      // meters
  double rre = 0.0;      // degrees
  bool success = false;  // rte <= 2 m and rre <= 5 deg
};

/// Relative translation/rotation error of an estimate against ground truth,
/// with the (2 m, 5 deg) success rule.
PoseErrors pose_errors(const geom::PoseSE3& estimate, const geom::PoseSE3& ground_truth);

}  // namespace egonn::reg
