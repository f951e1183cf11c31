#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "egonn/geometry.hpp"
#include "egonn/tape.hpp"

namespace egonn::ad {

/// Packs a voxel coordinate into one u64 for hashing. Ranges are generous
/// for desk-scale scenes: batch < 2^10, |i_z| < 2^15, i_rho < 2^20,
/// i_theta < 2^18.
inline uint64_t pack_coord(const geom::VoxelCoord& v) {
  return (static_cast<uint64_t>(static_cast<uint32_t>(v.batch)) << 54) |
         (static_cast<uint64_t>(static_cast<uint32_t>(v.i_rho)) << 34) |
         (static_cast<uint64_t>(static_cast<uint32_t>(v.i_theta)) << 16) |
         static_cast<uint64_t>(static_cast<uint16_t>(v.i_z + (1 << 15)));
}

/// Open-addressing map from packed voxel coordinate to feature row index.
/// Build once per layer call; lookups dominate the gather setup so this is
/// kept minimal (power-of-two table, linear probing, no deletion).
class CoordMap {
 public:
  explicit CoordMap(const std::vector<geom::VoxelCoord>& coords);

  /// Returns the row for a coordinate or -1.
  int32_t find(const geom::VoxelCoord& v) const {
    const uint64_t key = pack_coord(v);
    size_t i = static_cast<size_t>(splitmix64(key)) & mask_;
    while (true) {
      const Slot& s = table_[i];
      if (s.row < 0) return -1;
      if (s.key == key) return s.row;
      i = (i + 1) & mask_;
    }
  }

 private:
  struct Slot {
    uint64_t key = 0;
    int32_t row = -1;
  };
  std::vector<Slot> table_;
  size_t mask_ = 0;
};

/// Batch of voxel-coordinate -> feature-row maps participating in the
/// autodiff graph. Coordinates are expressed at their own stride level
/// (index i on an axis with stride s covers base bins [i*s, (i+1)*s)) and
/// are always kept sorted by (batch, i_rho, i_theta, i_z).
///
/// The theta axis is a closed ring of theta_bins cells at this level. It
/// only downsamples while its bin count is even, which keeps every level an
/// exact cyclic group and makes wrap-around convolution exactly equivariant
/// to rotations that are whole bins at the deepest theta stride.
struct SparseTensor {
  std::vector<geom::VoxelCoord> coords;
  std::array<int, 3> stride = {1, 1, 1};  // rho, theta, z
  int theta_bins = 0;                     // ring size at this stride level
  int batch_size = 0;
  Tape::NodeId node = -1;

  Eigen::Index num_voxels() const { return static_cast<Eigen::Index>(coords.size()); }
  int channels(const Tape& tape) const { return static_cast<int>(tape.val(node).cols()); }

  /// Half-open row ranges per batch element (coords are sorted by batch).
  std::vector<std::pair<int, int>> batch_spans() const;
};

/// Assembles a batched single-channel occupancy tensor from clouds.
/// Throws NumericalError if any cloud quantizes to zero voxels.
SparseTensor make_input_tensor(Tape& tape, const std::vector<geom::PointCloud>& clouds,
                               const geom::QuantizationSpec& q);

}  // namespace egonn::ad
