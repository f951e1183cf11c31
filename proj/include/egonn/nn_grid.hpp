#pragma once

#include <unordered_map>
#include <vector>

#include "egonn/geometry.hpp"

namespace egonn::reg {

/// Exact nearest-neighbor search over a fixed point set via a uniform grid
/// hash with expanding-ring queries. Desk-scale replacement for a kd-tree.
class PointGrid {
 public:
  explicit PointGrid(const std::vector<Vec3>& points, double cell = 2.0);

  struct Hit {
    int index = -1;
    double distance = std::numeric_limits<double>::infinity();
  };

  /// Nearest point to q; the point set must be non-empty.
  Hit nearest(const Vec3& q) const;

  const std::vector<Vec3>& points() const { return points_; }

 private:
  struct CellKey {
    int64_t x, y, z;
  };
  static uint64_t hash_key(int64_t x, int64_t y, int64_t z) {
    return splitmix64(static_cast<uint64_t>(x) * 0x9e3779b97f4a7c15ULL ^
                      splitmix64(static_cast<uint64_t>(y)) ^
                      splitmix64(static_cast<uint64_t>(z) * 0xc2b2ae3d27d4eb4fULL));
  }
  int64_t cell_of(double v) const { return static_cast<int64_t>(std::floor(v / cell_)); }

  std::vector<Vec3> points_;
  double cell_;
  std::unordered_map<uint64_t, std::vector<int>> buckets_;
  int64_t lo_[3] = {0, 0, 0}, hi_[3] = {0, 0, 0};
};

}  // namespace egonn::reg
