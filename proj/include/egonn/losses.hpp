#pragma once

#include <optional>
#include <vector>

#include "egonn/geometry.hpp"
#include "egonn/nn_grid.hpp"
#include "egonn/ops.hpp"

namespace egonn::loss {

struct LossConfig {
  double margin = 0.2;
  double tau = 0.02;
  double lambda_chamfer = 1.0;
  double lambda_p2p = 1.0;
  double lambda_desc = 1.0;
  double positive_dist = 2.0;   // meters between scan centers
  double negative_dist = 10.0;  // meters between scan centers
  double corr_radius = 0.5;     // ground-truth correspondence radius (2.0 at full scale)
};

struct TripletIndex {
  int anchor;
  int positive;
  int negative;
};

using BoolMat = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Builds the positive/negative masks from scan-center positions using the
/// pose-distance rules (<= positive_dist similar, > negative_dist
/// dissimilar). The diagonal is excluded.
std::pair<BoolMat, BoolMat> pose_distance_masks(const std::vector<Vec3>& centers,
                                                double positive_dist, double negative_dist);

/// Batch-hard mining on raw embeddings with the Euclidean metric: per anchor
/// with at least one positive and one negative, picks the farthest positive
/// and the nearest negative. Ties break to the lowest index; anchors lacking
/// either side are skipped.
std::vector<TripletIndex> mine_batch_hard(const Mat& embeddings, const BoolMat& pos_mask,
                                          const BoolMat& neg_mask);

/// Hinged triplet margin loss max(||a-p|| - ||a-n|| + m, 0) averaged over
/// triplets. Rows of the three matrices are corresponding triplets.
double triplet_loss(const Mat& anchors, const Mat& positives, const Mat& negatives, double margin);

ad::Tape::NodeId triplet_loss_node(ad::Tape& tape, ad::Tape::NodeId embeddings,
                                   const std::vector<TripletIndex>& triplets, double margin);

/// Probabilistic Chamfer loss over two keypoint sets in a common frame.
/// For each keypoint, the distance to its nearest neighbor in the other set
/// is weighted by the mean saliency uncertainty s of the matched pair as
/// ln(s) + d/s, summed over both directions.
double chamfer_prob_loss(const Mat& qa, const Mat& qb_in_a, const Vec& sigma_a,
                         const Vec& sigma_b);

ad::Tape::NodeId chamfer_prob_loss_node(ad::Tape& tape, ad::Tape::NodeId qa,
                                        ad::Tape::NodeId qb_in_a, ad::Tape::NodeId sigma_a,
                                        ad::Tape::NodeId sigma_b);

/// Sum of distances from each keypoint to its nearest input-cloud point,
/// over both (keypoints, cloud) pairs.
double p2p_loss(const Mat& qa, const geom::PointCloud& cloud_a, const Mat& qb,
                const geom::PointCloud& cloud_b);

/// One direction of the point-to-point loss; grid must index `cloud`.
ad::Tape::NodeId p2p_loss_node(ad::Tape& tape, ad::Tape::NodeId q, const reg::PointGrid& grid);

/// Ground-truth correspondences for the descriptor loss: rows of a whose
/// nearest b-keypoint (after bringing b into a's frame by T^-1) is within
/// `radius`, with that neighbor's index. T maps a-frame points into b-frame.
struct Correspondences {
  std::vector<int> rows;  // indices into a
  std::vector<int> nn;    // matched indices into b
};
Correspondences gt_correspondences(const Mat& qa, const Mat& qb, const geom::PoseSE3& T,
                                   double radius);

/// Cosine-similarity correspondence matrix between filtered descriptors of
/// the first cloud and all descriptors of the second, with per-row
/// ground-truth column indices.
struct CorrespondenceMatrix {
  Mat C;                  // N' x M
  std::vector<int> gt;    // per-row target column
};

/// Cross-entropy over similarity rows at temperature tau, computed with
/// max-subtraction.
double descriptor_loss(const CorrespondenceMatrix& corr, double tau);

ad::Tape::NodeId descriptor_loss_node(ad::Tape& tape, ad::Tape::NodeId desc_a,
                                      ad::Tape::NodeId desc_b, const Correspondences& corr,
                                      double tau);

/// lambda_C * L_C + lambda_P2P * L_P2P + lambda_D * L_D. A missing component
/// (e.g. no ground-truth correspondences) contributes nothing.
double total_local_loss(std::optional<double> l_c, std::optional<double> l_p2p,
                        std::optional<double> l_d, const LossConfig& cfg);

}  // namespace egonn::loss
