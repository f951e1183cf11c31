#include "egonn/sparse_tensor.hpp"

#include <bit>

namespace egonn::ad {

CoordMap::CoordMap(const std::vector<geom::VoxelCoord>& coords) {
  size_t cap = std::bit_ceil(coords.size() * 2 + 2);
  table_.assign(cap, Slot{});
  mask_ = cap - 1;
  for (size_t r = 0; r < coords.size(); ++r) {
    const uint64_t key = pack_coord(coords[r]);
    size_t i = static_cast<size_t>(splitmix64(key)) & mask_;
    while (table_[i].row >= 0) i = (i + 1) & mask_;
    table_[i] = {key, static_cast<int32_t>(r)};
  }
}

std::vector<std::pair<int, int>> SparseTensor::batch_spans() const {
  std::vector<std::pair<int, int>> spans(static_cast<size_t>(batch_size), {0, 0});
  int begin = 0;
  for (int i = 0; i <= static_cast<int>(coords.size()); ++i) {
    if (i == static_cast<int>(coords.size()) || (i > 0 && coords[i].batch != coords[i - 1].batch)) {
      if (begin < i) spans[static_cast<size_t>(coords[begin].batch)] = {begin, i};
      begin = i;
    }
  }
  return spans;
}

SparseTensor make_input_tensor(Tape& tape, const std::vector<geom::PointCloud>& clouds,
                               const geom::QuantizationSpec& q) {
  SparseTensor t;
  t.batch_size = static_cast<int>(clouds.size());
  t.theta_bins = q.theta_bins();
  for (int b = 0; b < t.batch_size; ++b) {
    auto coords = geom::quantize(clouds[static_cast<size_t>(b)], q);
    if (coords.empty())
      throw NumericalError("input too small for network depth (batch element " +
                           std::to_string(b) + " quantizes to zero voxels)");
    for (auto& c : coords) {
      c.batch = b;
      t.coords.push_back(c);
    }
  }
  t.node = tape.new_node(Mat::Ones(t.num_voxels(), 1));
  return t;
}

}  // namespace egonn::ad
