#include "egonn/losses.hpp"

#include <cmath>
#include <memory>

namespace egonn::loss {

std::pair<BoolMat, BoolMat> pose_distance_masks(const std::vector<Vec3>& centers,
                                                double positive_dist, double negative_dist) {
  const int n = static_cast<int>(centers.size());
  BoolMat pos(n, n), neg(n, n);
  pos.setConstant(false);
  neg.setConstant(false);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      const double d = (centers[static_cast<size_t>(i)] - centers[static_cast<size_t>(j)]).norm();
      if (d <= positive_dist) pos(i, j) = true;
      if (d > negative_dist) neg(i, j) = true;
    }
  }
  return {pos, neg};
}

std::vector<TripletIndex> mine_batch_hard(const Mat& embeddings, const BoolMat& pos_mask,
                                          const BoolMat& neg_mask) {
  const int n = static_cast<int>(embeddings.rows());
  std::vector<TripletIndex> triplets;
  for (int a = 0; a < n; ++a) {
    int best_pos = -1, best_neg = -1;
    double pos_d = -1.0, neg_d = std::numeric_limits<double>::infinity();
    for (int j = 0; j < n; ++j) {
      if (j == a) continue;
      const double d = (embeddings.row(a) - embeddings.row(j)).norm();
      if (pos_mask(a, j) && d > pos_d) {
        pos_d = d;
        best_pos = j;
      }
      if (neg_mask(a, j) && d < neg_d) {
        neg_d = d;
        best_neg = j;
      }
    }
    if (best_pos >= 0 && best_neg >= 0) triplets.push_back({a, best_pos, best_neg});
  }
  return triplets;
}

double triplet_loss(const Mat& anchors, const Mat& positives, const Mat& negatives,
                    double margin) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < anchors.rows(); ++i) {
    const double dap = (anchors.row(i) - positives.row(i)).norm();
    const double dan = (anchors.row(i) - negatives.row(i)).norm();
    total += std::max(dap - dan + margin, 0.0);
  }
  return anchors.rows() > 0 ? total / static_cast<double>(anchors.rows()) : 0.0;
}

ad::Tape::NodeId triplet_loss_node(ad::Tape& tape, ad::Tape::NodeId embeddings,
                                   const std::vector<TripletIndex>& triplets, double margin) {
  const Mat& emb = tape.val(embeddings);
  ad::Tape::NodeId out = tape.new_node(1, 1);
  double total = 0.0;
  for (const auto& tr : triplets) {
    const double dap = (emb.row(tr.anchor) - emb.row(tr.positive)).norm();
    const double dan = (emb.row(tr.anchor) - emb.row(tr.negative)).norm();
    total += std::max(dap - dan + margin, 0.0);
  }
  const double inv_n = triplets.empty() ? 0.0 : 1.0 / static_cast<double>(triplets.size());
  tape.val(out)(0, 0) = total * inv_n;

  auto saved = std::make_shared<std::vector<TripletIndex>>(triplets);
  tape.record([embeddings, out, saved, margin, inv_n](ad::Tape& t) {
    const double g = t.grad(out)(0, 0) * inv_n;
    const Mat& emb = t.val(embeddings);
    Mat& gin = t.grad(embeddings);
    for (const auto& tr : *saved) {
      const Eigen::RowVectorXd ap = emb.row(tr.anchor) - emb.row(tr.positive);
      const Eigen::RowVectorXd an = emb.row(tr.anchor) - emb.row(tr.negative);
      const double dap = ap.norm(), dan = an.norm();
      if (dap - dan + margin <= 0.0) continue;
      if (dap > 1e-12) {
        gin.row(tr.anchor) += g * ap / dap;
        gin.row(tr.positive) -= g * ap / dap;
      }
      if (dan > 1e-12) {
        gin.row(tr.anchor) -= g * an / dan;
        gin.row(tr.negative) += g * an / dan;
      }
    }
  });
  return out;
}

namespace {

std::vector<int> nearest_indices(const Mat& from, const Mat& to) {
  std::vector<int> nn(static_cast<size_t>(from.rows()), 0);
  for (Eigen::Index i = 0; i < from.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < to.rows(); ++j) {
      const double d = (from.row(i) - to.row(j)).squaredNorm();
      if (d < best) {
        best = d;
        nn[static_cast<size_t>(i)] = static_cast<int>(j);
      }
    }
  }
  return nn;
}

}  // namespace

double chamfer_prob_loss(const Mat& qa, const Mat& qb_in_a, const Vec& sigma_a,
                         const Vec& sigma_b) {
  ad::Tape tape;
  auto na = tape.new_node(qa), nb = tape.new_node(qb_in_a);
  auto sa = tape.new_node(Mat(sigma_a)), sb = tape.new_node(Mat(sigma_b));
  return tape.val(chamfer_prob_loss_node(tape, na, nb, sa, sb))(0, 0);
}

ad::Tape::NodeId chamfer_prob_loss_node(ad::Tape& tape, ad::Tape::NodeId qa,
                                        ad::Tape::NodeId qb_in_a, ad::Tape::NodeId sigma_a,
                                        ad::Tape::NodeId sigma_b) {
  const Mat& a = tape.val(qa);
  const Mat& b = tape.val(qb_in_a);
  if (a.rows() == 0 || b.rows() == 0)
    throw NumericalError("chamfer_prob_loss requires non-empty keypoint sets");
  auto nn_ab = std::make_shared<std::vector<int>>(nearest_indices(a, b));
  auto nn_ba = std::make_shared<std::vector<int>>(nearest_indices(b, a));

  const Vec& sa = tape.val(sigma_a).col(0);
  const Vec& sb = tape.val(sigma_b).col(0);
  double total = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const int j = (*nn_ab)[static_cast<size_t>(i)];
    const double d = (a.row(i) - b.row(j)).norm();
    const double s = 0.5 * (sa(i) + sb(j));
    total += std::log(s) + d / s;
  }
  for (Eigen::Index j = 0; j < b.rows(); ++j) {
    const int i = (*nn_ba)[static_cast<size_t>(j)];
    const double d = (b.row(j) - a.row(i)).norm();
    const double s = 0.5 * (sb(j) + sa(i));
    total += std::log(s) + d / s;
  }
  ad::Tape::NodeId out = tape.new_node(1, 1);
  tape.val(out)(0, 0) = total;

  tape.record([qa, qb_in_a, sigma_a, sigma_b, out, nn_ab, nn_ba](ad::Tape& t) {
    const double g = t.grad(out)(0, 0);
    const Mat& a = t.val(qa);
    const Mat& b = t.val(qb_in_a);
    const Vec sa = t.val(sigma_a).col(0);
    const Vec sb = t.val(sigma_b).col(0);
    auto accumulate = [&](Eigen::Index i, int j, bool a_to_b) {
      // One term ln(s) + d/s with s = (sa_i + sb_j)/2.
      const Eigen::RowVector3d diff = a_to_b ? (a.row(i) - b.row(j)).eval()
                                             : (b.row(j) - a.row(i)).eval();
      const double d = diff.norm();
      const double s = 0.5 * (sa(i) + sb(j));
      if (d > 1e-12) {
        const Eigen::RowVector3d dd = g * diff / (d * s);
        if (a_to_b) {
          t.grad(qa).row(i) += dd;
          t.grad(qb_in_a).row(j) -= dd;
        } else {
          t.grad(qb_in_a).row(j) += dd;
          t.grad(qa).row(i) -= dd;
        }
      }
      const double ds = g * (1.0 / s - d / (s * s)) * 0.5;
      t.grad(sigma_a)(i, 0) += ds;
      t.grad(sigma_b)(j, 0) += ds;
    };
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      accumulate(i, (*nn_ab)[static_cast<size_t>(i)], true);
    for (Eigen::Index j = 0; j < b.rows(); ++j)
      accumulate((*nn_ba)[static_cast<size_t>(j)], static_cast<int>(j), false);
  });
  return out;
}

double p2p_loss(const Mat& qa, const geom::PointCloud& cloud_a, const Mat& qb,
                const geom::PointCloud& cloud_b) {
  if (cloud_a.empty() || cloud_b.empty()) throw NumericalError("p2p_loss over empty cloud");
  reg::PointGrid ga(cloud_a.points), gb(cloud_b.points);
  ad::Tape tape;
  auto na = tape.new_node(qa), nb = tape.new_node(qb);
  const double la = tape.val(p2p_loss_node(tape, na, ga))(0, 0);
  const double lb = tape.val(p2p_loss_node(tape, nb, gb))(0, 0);
  return la + lb;
}

ad::Tape::NodeId p2p_loss_node(ad::Tape& tape, ad::Tape::NodeId q, const reg::PointGrid& grid) {
  const Mat& pts = tape.val(q);
  auto nn = std::make_shared<std::vector<int>>(static_cast<size_t>(pts.rows()));
  double total = 0.0;
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    const auto hit = grid.nearest(pts.row(i).transpose());
    (*nn)[static_cast<size_t>(i)] = hit.index;
    total += hit.distance;
  }
  ad::Tape::NodeId out = tape.new_node(1, 1);
  tape.val(out)(0, 0) = total;
  auto targets = std::make_shared<std::vector<Vec3>>();
  targets->reserve(nn->size());
  for (int idx : *nn) targets->push_back(grid.points()[static_cast<size_t>(idx)]);
  tape.record([q, out, targets](ad::Tape& t) {
    const double g = t.grad(out)(0, 0);
    const Mat& pts = t.val(q);
    for (Eigen::Index i = 0; i < pts.rows(); ++i) {
      const Eigen::RowVector3d diff =
          pts.row(i) - (*targets)[static_cast<size_t>(i)].transpose();
      const double d = diff.norm();
      if (d > 1e-12) t.grad(q).row(i) += g * diff / d;
    }
  });
  return out;
}

Correspondences gt_correspondences(const Mat& qa, const Mat& qb, const geom::PoseSE3& T,
                                   double radius) {
  if (radius <= 0) throw DataError("gt_correspondences requires radius > 0");
  const geom::PoseSE3 b_to_a = geom::se3_inverse(T);
  Mat b_in_a(qb.rows(), 3);
  for (Eigen::Index j = 0; j < qb.rows(); ++j)
    b_in_a.row(j) = b_to_a.apply(qb.row(j).transpose()).transpose();
  Correspondences corr;
  for (Eigen::Index i = 0; i < qa.rows(); ++i) {
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < b_in_a.rows(); ++j) {
      const double d = (qa.row(i) - b_in_a.row(j)).norm();
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(j);
      }
    }
    if (best >= 0 && best_d <= radius) {
      corr.rows.push_back(static_cast<int>(i));
      corr.nn.push_back(best);
    }
  }
  return corr;
}

double descriptor_loss(const CorrespondenceMatrix& corr, double tau) {
  const Eigen::Index n = corr.C.rows();
  if (n < 1) throw NumericalError("descriptor_loss requires at least one row");
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto logits = (corr.C.row(i) / tau).eval();
    const double mx = logits.maxCoeff();
    const double lse = mx + std::log((logits.array() - mx).exp().sum());
    total += lse - logits(corr.gt[static_cast<size_t>(i)]);
  }
  return total / static_cast<double>(n);
}

ad::Tape::NodeId descriptor_loss_node(ad::Tape& tape, ad::Tape::NodeId desc_a,
                                      ad::Tape::NodeId desc_b, const Correspondences& corr,
                                      double tau) {
  const Mat& da = tape.val(desc_a);
  const Mat& db = tape.val(desc_b);
  const Eigen::Index n = static_cast<Eigen::Index>(corr.rows.size());
  if (n < 1) throw NumericalError("descriptor_loss requires at least one correspondence");

  Mat a_rows(n, da.cols());
  for (Eigen::Index i = 0; i < n; ++i) a_rows.row(i) = da.row(corr.rows[static_cast<size_t>(i)]);
  CorrespondenceMatrix cm;
  cm.C = a_rows * db.transpose();
  cm.gt = corr.nn;
  const double value = descriptor_loss(cm, tau);

  // Softmax rows cached for the backward pass.
  auto probs = std::make_shared<Mat>(cm.C.rows(), cm.C.cols());
  for (Eigen::Index i = 0; i < cm.C.rows(); ++i) {
    const auto logits = (cm.C.row(i) / tau).eval();
    const double mx = logits.maxCoeff();
    Eigen::RowVectorXd e = (logits.array() - mx).exp();
    probs->row(i) = e / e.sum();
  }

  ad::Tape::NodeId out = tape.new_node(1, 1);
  tape.val(out)(0, 0) = value;
  auto saved = std::make_shared<Correspondences>(corr);
  tape.record([desc_a, desc_b, out, probs, saved, tau, n](ad::Tape& t) {
    const double g = t.grad(out)(0, 0);
    const Mat& da = t.val(desc_a);
    const Mat& db = t.val(desc_b);
    Mat dC = *probs;
    for (Eigen::Index i = 0; i < n; ++i)
      dC(i, saved->nn[static_cast<size_t>(i)]) -= 1.0;
    dC *= g / (tau * static_cast<double>(n));
    Mat a_rows(n, da.cols());
    for (Eigen::Index i = 0; i < n; ++i)
      a_rows.row(i) = da.row(saved->rows[static_cast<size_t>(i)]);
    Mat ga = dC * db;              // n x d
    t.grad(desc_b).noalias() += dC.transpose() * a_rows;
    for (Eigen::Index i = 0; i < n; ++i)
      t.grad(desc_a).row(saved->rows[static_cast<size_t>(i)]) += ga.row(i);
  });
  return out;
}

double total_local_loss(std::optional<double> l_c, std::optional<double> l_p2p,
                        std::optional<double> l_d, const LossConfig& cfg) {
  double total = 0.0;
  if (l_c) total += cfg.lambda_chamfer * *l_c;
  if (l_p2p) total += cfg.lambda_p2p * *l_p2p;
  if (l_d) total += cfg.lambda_desc * *l_d;
  return total;
}

}  // namespace egonn::loss
