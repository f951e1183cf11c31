#pragma once

#include <optional>
#include <string>
#include <vector>

#include "egonn/ops.hpp"

namespace egonn::net {

/// Architecture scale and voxelization. scale divides every channel width;
/// scale 1 with 1-degree bins is the full-size preset, the default is a
/// desk-scale configuration (widths divided by 4, 4-degree bins).
struct NetConfig {
  int scale = 4;
  bool theta_wrap = true;
  geom::QuantizationSpec quant{0.3, deg_to_rad(4.0), 0.2};

  static NetConfig toy() { return {}; }
  static NetConfig paper() {
    NetConfig c;
    c.scale = 1;
    c.quant.theta_step = deg_to_rad(1.0);
    return c;
  }

  int width(int base) const { return std::max(1, base / scale); }
  int descriptor_dim() const { return width(256); }
  int local_descriptor_dim() const { return width(128); }
};

/// Supervoxel extents in cylindrical units (meters, radians, meters). These
/// are the local feature map's cell sizes: per axis, stride times the base
/// quantization step.
struct SupervoxelGrid {
  double s_rho = 2.4;
  double s_theta = deg_to_rad(8.0);
  double s_z = 1.6;
};

/// Per-cloud keypoint output: positions decoded to Cartesian sensor-frame
/// meters, raw offsets in (-1,1)^3, positive saliency uncertainties (lower
/// is more reliable), unit-norm descriptors, and the cylindrical supervoxel
/// centers the positions were decoded from.
struct KeypointSet {
  Mat positions;     // M x 3
  Mat raw;           // M x 3
  Vec saliency;      // M
  Mat descriptors;   // M x D, unit rows
  Mat centers_cyl;   // M x 3 (rho, theta, z)

  int size() const { return static_cast<int>(positions.rows()); }
};

enum class ForwardMode { Global, Local, Both };

/// Tape handles produced by a (batched) forward pass, for training.
struct ForwardNodes {
  // Global branch: (batch x descriptor_dim) node, -1 when the branch is off.
  ad::Tape::NodeId global_desc = -1;
  // Local branch, batched over all clouds' supervoxels; -1 when off.
  ad::Tape::NodeId raw = -1;
  ad::Tape::NodeId saliency = -1;
  ad::Tape::NodeId descriptors = -1;
  ad::Tape::NodeId positions = -1;  // decoded Cartesian keypoints
  std::vector<std::pair<int, int>> local_spans;  // rows per batch element
  Mat centers_cyl;
  SupervoxelGrid grid;
};

/// Sparse-convolutional trunk with a global-descriptor branch (GeM-pooled)
/// and a local branch regressing per-supervoxel keypoints, saliency
/// uncertainties and descriptors.
class EgoNN {
 public:
  EgoNN(const NetConfig& cfg, uint64_t seed);

  /// Clouds must be preprocessed (ground removed). Throws NumericalError if
  /// any cloud quantizes to zero voxels. Pure function of (weights, input,
  /// config) in eval mode.
  ForwardNodes forward(ad::Tape& tape, const std::vector<geom::PointCloud>& clouds,
                       ForwardMode mode, bool train);

  struct CloudResult {
    std::optional<Vec> global_desc;
    std::optional<KeypointSet> keypoints;
  };

  /// Eval-mode convenience wrapper returning plain per-cloud values.
  std::vector<CloudResult> extract(const std::vector<geom::PointCloud>& clouds,
                                   ForwardMode mode);

  /// Sets batch-norm running statistics from one forward pass over the given
  /// clouds (momentum 1). Training maintains the stats itself; this is for
  /// using a network in eval mode before or without training.
  void calibrate_batchnorm(const std::vector<geom::PointCloud>& clouds);

  ad::ParameterStore& params() { return params_; }
  const NetConfig& config() const { return cfg_; }
  SupervoxelGrid supervoxel_grid() const;

  std::vector<ad::Parameter*> trunk_params() const;
  std::vector<ad::Parameter*> global_params() const;
  std::vector<ad::Parameter*> local_params() const;

 private:
  struct ConvUnit {
    ad::Parameter* w = nullptr;
    ad::BatchNorm bn;
  };
  struct TrunkBlock {
    ConvUnit down;  // 2x2x2 stride 2 (absent for block 0)
    ConvUnit c1, c2;
    ad::Parameter* eca = nullptr;
  };

  ad::SparseTensor conv_bn_relu(ad::Tape& tape, const ad::SparseTensor& x, ConvUnit& u,
                                int kernel, int stride, bool train);
  ConvUnit make_conv_unit(const std::string& name, int k, int c_in, int c_out);
  ad::Mlp make_mlp(const std::string& name, const std::vector<int>& dims);

  NetConfig cfg_;
  ad::ParameterStore params_;
  ConvUnit trunk0_;
  std::vector<TrunkBlock> blocks_;  // levels 1..7
  ad::Parameter* g_tconv7_ = nullptr;
  ad::Parameter* g_lat6_ = nullptr;
  ad::Parameter* g_tconv6_ = nullptr;
  ad::Parameter* g_lat5_ = nullptr;
  ad::Mlp g_mlp_;
  ad::Parameter* gem_p_ = nullptr;
  ad::Parameter* l_tconv5_ = nullptr;
  ad::Parameter* l_lat4_ = nullptr;
  ad::Parameter* l_tconv4_ = nullptr;
  ad::Parameter* l_lat3_ = nullptr;
  ad::Mlp head_pos_, head_sal_, head_desc_;
};

/// Decodes normalized per-supervoxel offsets into Cartesian keypoints:
/// cylindrical coordinate = offset * extent / 2 + supervoxel center, then
/// cylindrical to Cartesian. Every decoded keypoint lies inside its
/// supervoxel by construction.
Mat decode_keypoints(const Mat& raw, const SupervoxelGrid& grid, const Mat& centers_cyl);

/// Differentiable version used in the local training substep.
ad::Tape::NodeId decode_keypoints_node(ad::Tape& tape, ad::Tape::NodeId raw,
                                       const SupervoxelGrid& grid, const Mat& centers_cyl);

/// The k keypoints with smallest saliency uncertainty; ties broken by row
/// (supervoxel) index ascending. Returns all of them when k >= M.
KeypointSet select_keypoints(const KeypointSet& ks, int k);

/// Fraction of a's keypoints that have a keypoint of b within `radius` after
/// b is brought into a's frame by T^-1 (T maps a-frame points into b-frame,
/// the ground-truth relative pose convention). Only keypoints of a within
/// `sensor_range` of both sensor origins are counted. Empty sets give 0 with
/// a warning on stderr.
double repeatability(const KeypointSet& ks_a, const KeypointSet& ks_b, const geom::PoseSE3& T,
                     double radius = 0.5,
                     double sensor_range = std::numeric_limits<double>::infinity());

}  // namespace egonn::net
