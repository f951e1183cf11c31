#include "egonn/registration.hpp"

#include <Eigen/LU>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>

namespace egonn::reg {

PointGrid::PointGrid(const std::vector<Vec3>& points, double cell)
    : points_(points), cell_(cell) {
  if (points_.empty()) throw DataError("PointGrid requires a non-empty point set");
  for (int a = 0; a < 3; ++a) {
    lo_[a] = std::numeric_limits<int64_t>::max();
    hi_[a] = std::numeric_limits<int64_t>::min();
  }
  for (size_t i = 0; i < points_.size(); ++i) {
    const int64_t cx = cell_of(points_[i].x());
    const int64_t cy = cell_of(points_[i].y());
    const int64_t cz = cell_of(points_[i].z());
    buckets_[hash_key(cx, cy, cz)].push_back(static_cast<int>(i));
    const int64_t c[3] = {cx, cy, cz};
    for (int a = 0; a < 3; ++a) {
      lo_[a] = std::min(lo_[a], c[a]);
      hi_[a] = std::max(hi_[a], c[a]);
    }
  }
}

PointGrid::Hit PointGrid::nearest(const Vec3& q) const {
  const int64_t qc[3] = {cell_of(q.x()), cell_of(q.y()), cell_of(q.z())};
  int64_t max_ring = 0;
  for (int a = 0; a < 3; ++a)
    max_ring = std::max({max_ring, std::abs(qc[a] - lo_[a]), std::abs(hi_[a] - qc[a])});

  Hit best;
  auto scan_cell = [&](int64_t x, int64_t y, int64_t z) {
    auto it = buckets_.find(hash_key(x, y, z));
    if (it == buckets_.end()) return;
    for (int idx : it->second) {
      const double d = (points_[static_cast<size_t>(idx)] - q).norm();
      if (d < best.distance || (d == best.distance && idx < best.index)) {
        best.distance = d;
        best.index = idx;
      }
    }
  };

  for (int64_t r = 0; r <= max_ring; ++r) {
    if (r == 0) {
      scan_cell(qc[0], qc[1], qc[2]);
    } else {
      for (int64_t dx = -r; dx <= r; ++dx) {
        for (int64_t dy = -r; dy <= r; ++dy) {
          for (int64_t dz = -r; dz <= r; ++dz) {
            if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != r) continue;
            scan_cell(qc[0] + dx, qc[1] + dy, qc[2] + dz);
          }
        }
      }
    }
    // After finishing ring r, any point in a farther ring is at least r*cell
    // away (q sits somewhere inside its own cell).
    if (best.index >= 0 && best.distance <= static_cast<double>(r) * cell_) break;
  }
  return best;
}

MatchSet match_descriptors(const Mat& da, const Mat& db, bool mutual) {
  MatchSet out;
  if (da.rows() == 0 || db.rows() == 0) return out;
  const Mat sims = da * db.transpose();
  std::vector<int> best_b(static_cast<size_t>(da.rows()));
  for (Eigen::Index i = 0; i < da.rows(); ++i) {
    Eigen::Index j;
    sims.row(i).maxCoeff(&j);
    best_b[static_cast<size_t>(i)] = static_cast<int>(j);
  }
  std::vector<int> best_a;
  if (mutual) {
    best_a.resize(static_cast<size_t>(db.rows()));
    for (Eigen::Index j = 0; j < db.rows(); ++j) {
      Eigen::Index i;
      sims.col(j).maxCoeff(&i);
      best_a[static_cast<size_t>(j)] = static_cast<int>(i);
    }
  }
  for (Eigen::Index i = 0; i < da.rows(); ++i) {
    const int j = best_b[static_cast<size_t>(i)];
    if (mutual && best_a[static_cast<size_t>(j)] != static_cast<int>(i)) continue;
    out.push_back({static_cast<int>(i), j, sims(i, j)});
  }
  return out;
}

std::optional<geom::PoseSE3> kabsch(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  if (a.size() != b.size() || a.size() < 3) return std::nullopt;
  const double n = static_cast<double>(a.size());
  Vec3 ca = Vec3::Zero(), cb = Vec3::Zero();
  for (size_t i = 0; i < a.size(); ++i) {
    ca += a[i];
    cb += b[i];
  }
  ca /= n;
  cb /= n;
  Mat3 h = Mat3::Zero();
  for (size_t i = 0; i < a.size(); ++i) h += (a[i] - ca) * (b[i] - cb).transpose();
  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sv = svd.singularValues();
  // Collinear or coincident samples leave the rotation underdetermined.
  if (sv(0) < 1e-12 || sv(1) < 1e-9 * sv(0)) return std::nullopt;
  Mat3 d = Mat3::Identity();
  if ((svd.matrixV() * svd.matrixU().transpose()).determinant() < 0) d(2, 2) = -1.0;
  geom::PoseSE3 T;
  T.rotation = svd.matrixV() * d * svd.matrixU().transpose();
  T.translation = cb - T.rotation * ca;
  return T;
}

RansacResult ransac_register(const MatchSet& matches, const Mat& qa, const Mat& qb,
                             const RansacConfig& cfg) {
  RansacResult result;
  const int m = static_cast<int>(matches.size());
  if (m < 3) return result;

  std::vector<Vec3> pa(static_cast<size_t>(m)), pb(static_cast<size_t>(m));
  for (int i = 0; i < m; ++i) {
    pa[static_cast<size_t>(i)] = qa.row(matches[static_cast<size_t>(i)].a).transpose();
    pb[static_cast<size_t>(i)] = qb.row(matches[static_cast<size_t>(i)].b).transpose();
  }

  auto count_inliers = [&](const geom::PoseSE3& T, std::vector<int>* out) {
    int count = 0;
    for (int i = 0; i < m; ++i) {
      if ((T.apply(pa[static_cast<size_t>(i)]) - pb[static_cast<size_t>(i)]).norm() <=
          cfg.inlier_radius) {
        ++count;
        if (out != nullptr) out->push_back(i);
      }
    }
    return count;
  };

  int best_count = 0;
  geom::PoseSE3 best_pose;
  double adaptive_limit = cfg.max_iters;
  int iter = 0;
  for (; iter < cfg.max_iters && iter < adaptive_limit; ++iter) {
    Rng rng(mix_seed(cfg.seed, 0x5a4c, static_cast<uint64_t>(iter)));
    std::uniform_int_distribution<int> pick(0, m - 1);
    int i0 = pick(rng), i1 = pick(rng), i2 = pick(rng);
    if (i0 == i1 || i0 == i2 || i1 == i2) continue;
    auto T = kabsch({pa[static_cast<size_t>(i0)], pa[static_cast<size_t>(i1)],
                     pa[static_cast<size_t>(i2)]},
                    {pb[static_cast<size_t>(i0)], pb[static_cast<size_t>(i1)],
                     pb[static_cast<size_t>(i2)]});
    if (!T) continue;
    const int count = count_inliers(*T, nullptr);
    if (count > best_count) {
      best_count = count;
      best_pose = *T;
      const double w = static_cast<double>(count) / static_cast<double>(m);
      const double denom = std::log(1.0 - std::min(w * w * w, 1.0 - 1e-12));
      if (denom < 0)
        adaptive_limit = std::min(adaptive_limit,
                                  std::ceil(std::log(1.0 - cfg.confidence) / denom));
    }
  }
  result.iterations = iter;
  if (best_count < std::max(cfg.min_inliers, 3)) return result;

  std::vector<int> inliers;
  count_inliers(best_pose, &inliers);
  std::vector<Vec3> ia, ib;
  for (int i : inliers) {
    ia.push_back(pa[static_cast<size_t>(i)]);
    ib.push_back(pb[static_cast<size_t>(i)]);
  }
  if (auto refined = kabsch(ia, ib)) {
    if (count_inliers(*refined, nullptr) >= best_count) best_pose = *refined;
  }
  result.inliers.clear();
  count_inliers(best_pose, &result.inliers);
  result.pose = best_pose;
  result.success = static_cast<int>(result.inliers.size()) >= cfg.min_inliers;
  return result;
}

geom::PoseSE3 icp_p2p(const geom::PointCloud& source, const geom::PointCloud& target,
                      const geom::PoseSE3& init, int max_iters, double tol) {
  if (source.empty() || target.empty())
    throw DataError("icp_p2p requires non-empty clouds");
  const PointGrid grid(target.points);
  geom::PoseSE3 T = init;
  geom::PoseSE3 best = init;
  double best_residual = std::numeric_limits<double>::infinity();
  double prev_residual = std::numeric_limits<double>::infinity();
  for (int it = 0; it < max_iters; ++it) {
    std::vector<Vec3> matched(source.size());
    double residual = 0.0;
    for (size_t i = 0; i < source.size(); ++i) {
      const Vec3 p = T.apply(source.points[i]);
      const auto hit = grid.nearest(p);
      matched[i] = target.points[static_cast<size_t>(hit.index)];
      residual += hit.distance;
    }
    residual /= static_cast<double>(source.size());
    if (residual < best_residual) {
      best_residual = residual;
      best = T;
    }
    if (std::abs(prev_residual - residual) < tol) break;
    prev_residual = residual;
    auto refit = kabsch(source.points, matched);
    if (!refit) break;
    T = *refit;
  }
  return best;
}

PoseErrors pose_errors(const geom::PoseSE3& estimate, const geom::PoseSE3& ground_truth) {
  const geom::PoseSE3 delta = geom::se3_compose(geom::se3_inverse(ground_truth), estimate);
  PoseErrors e;
  e.rte = delta.translation.norm();
  const double c = std::clamp((delta.rotation.trace() - 1.0) / 2.0, -1.0, 1.0);
  e.rre = rad_to_deg(std::acos(c));
  e.success = e.rte <= 2.0 && e.rre <= 5.0;
  return e;
}

}  // namespace egonn::reg
