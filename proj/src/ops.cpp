#include "egonn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace egonn::ad {

namespace {

struct Offset {
  int dr, dt, dz;
};

std::vector<Offset> centered_offsets(int k) {
  const int h = (k - 1) / 2;
  std::vector<Offset> out;
  out.reserve(static_cast<size_t>(k) * k * k);
  for (int dr = -h; dr <= h; ++dr)
    for (int dt = -h; dt <= h; ++dt)
      for (int dz = -h; dz <= h; ++dz) out.push_back({dr, dt, dz});
  return out;
}

std::vector<Offset> child_offsets() {
  std::vector<Offset> out;
  for (int dr = 0; dr <= 1; ++dr)
    for (int dt = 0; dt <= 1; ++dt)
      for (int dz = 0; dz <= 1; ++dz) out.push_back({dr, dt, dz});
  return out;
}

int wrap_theta(int t, int bins, bool wrap) {
  if (wrap) {
    t %= bins;
    if (t < 0) t += bins;
    return t;
  }
  return (t >= 0 && t < bins) ? t : -1;
}

using PairList = std::vector<std::pair<int32_t, int32_t>>;  // (out_row, in_row)

Mat gather_first(const Mat& src, const PairList& pairs) {
  Mat out(static_cast<Eigen::Index>(pairs.size()), src.cols());
  for (size_t i = 0; i < pairs.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = src.row(pairs[i].first);
  return out;
}

Mat gather_second(const Mat& src, const PairList& pairs) {
  Mat out(static_cast<Eigen::Index>(pairs.size()), src.cols());
  for (size_t i = 0; i < pairs.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = src.row(pairs[i].second);
  return out;
}

/// Shared forward/backward for any sparse gather-GEMM op: given per-offset
/// (out_row, in_row) pair lists, computes out[o_row] += in[i_row] * W_o and
/// records the matching adjoint.
Tape::NodeId gathered_conv(Tape& tape, Tape::NodeId in_node, Eigen::Index out_rows,
                           Parameter& kernel, std::shared_ptr<std::vector<PairList>> pairs,
                           int c_in, int c_out) {
  const Mat& in = tape.val(in_node);
  Tape::NodeId out_node = tape.new_node(out_rows, c_out);
  Mat& out = tape.val(out_node);
  const size_t n_off = pairs->size();
  for (size_t o = 0; o < n_off; ++o) {
    const PairList& pl = (*pairs)[o];
    if (pl.empty()) continue;
    const auto W = kernel.values.block(static_cast<Eigen::Index>(o) * c_in, 0, c_in, c_out);
    Mat contrib = gather_second(in, pl) * W;
    for (size_t i = 0; i < pl.size(); ++i)
      out.row(pl[i].first) += contrib.row(static_cast<Eigen::Index>(i));
  }
  Parameter* kp = &kernel;
  tape.record([in_node, out_node, kp, pairs, c_in, c_out](Tape& t) {
    const Mat& gout = t.grad(out_node);
    const Mat& in_vals = t.val(in_node);
    Mat& gin = t.grad(in_node);
    for (size_t o = 0; o < pairs->size(); ++o) {
      const PairList& pl = (*pairs)[o];
      if (pl.empty()) continue;
      const auto W = kp->values.block(static_cast<Eigen::Index>(o) * c_in, 0, c_in, c_out);
      Mat g = gather_first(gout, pl);           // rows of dL/dout
      Mat gx = g * W.transpose();               // dL/din rows
      for (size_t i = 0; i < pl.size(); ++i)
        gin.row(pl[i].second) += gx.row(static_cast<Eigen::Index>(i));
      Mat x = gather_second(in_vals, pl);
      kp->grad.block(static_cast<Eigen::Index>(o) * c_in, 0, c_in, c_out).noalias() +=
          x.transpose() * g;
    }
  });
  return out_node;
}

}  // namespace

Tape::NodeId input_from_param(Tape& tape, Parameter& p) {
  Tape::NodeId node = tape.new_node(p.values);
  Parameter* pp = &p;
  tape.record([node, pp](Tape& t) { pp->grad += t.grad(node); });
  return node;
}

SparseTensor sparse_conv(Tape& tape, const SparseTensor& x, Parameter& kernel, int stride,
                         bool theta_wrap) {
  if (kernel.shape.size() != 3) throw DataError("conv kernel must have rank 3");
  const int c_in = static_cast<int>(kernel.shape[1]);
  const int c_out = static_cast<int>(kernel.shape[2]);
  const int taps = static_cast<int>(kernel.shape[0]);
  const int k = static_cast<int>(std::llround(std::cbrt(static_cast<double>(taps))));
  if (k * k * k != taps) throw DataError("conv kernel tap count must be k^3");
  if (x.channels(tape) != c_in) throw DataError("conv channel mismatch");

  SparseTensor out;
  out.batch_size = x.batch_size;
  auto pairs = std::make_shared<std::vector<PairList>>(static_cast<size_t>(taps));

  if (stride == 1) {
    if (k % 2 == 0) throw DataError("stride-1 conv requires odd kernel");
    out.coords = x.coords;
    out.stride = x.stride;
    out.theta_bins = x.theta_bins;
    const CoordMap map(x.coords);
    const auto offs = centered_offsets(k);
    for (size_t o = 0; o < offs.size(); ++o) {
      PairList& pl = (*pairs)[o];
      for (size_t i = 0; i < x.coords.size(); ++i) {
        geom::VoxelCoord n = x.coords[i];
        n.i_rho += offs[o].dr;
        n.i_z += offs[o].dz;
        const int t = wrap_theta(n.i_theta + offs[o].dt, x.theta_bins, theta_wrap);
        if (t < 0 || n.i_rho < 0) continue;
        n.i_theta = t;
        const int32_t row = map.find(n);
        if (row >= 0) pl.push_back({static_cast<int32_t>(i), row});
      }
    }
  } else if (stride == 2) {
    if (k != 2) throw DataError("stride-2 conv requires 2x2x2 kernel");
    const bool theta_down = (x.theta_bins % 2 == 0);
    out.stride = {x.stride[0] * 2, theta_down ? x.stride[1] * 2 : x.stride[1], x.stride[2] * 2};
    out.theta_bins = theta_down ? x.theta_bins / 2 : x.theta_bins;
    out.coords.reserve(x.coords.size());
    for (const auto& c : x.coords) {
      geom::VoxelCoord v = c;
      v.i_rho >>= 1;
      v.i_z = static_cast<int32_t>(std::floor(static_cast<double>(c.i_z) / 2.0));
      if (theta_down) v.i_theta >>= 1;
      out.coords.push_back(v);
    }
    std::sort(out.coords.begin(), out.coords.end());
    out.coords.erase(std::unique(out.coords.begin(), out.coords.end()), out.coords.end());

    const CoordMap map(x.coords);
    const auto offs = child_offsets();
    for (size_t o = 0; o < offs.size(); ++o) {
      PairList& pl = (*pairs)[o];
      for (size_t i = 0; i < out.coords.size(); ++i) {
        const auto& v = out.coords[i];
        geom::VoxelCoord n;
        n.batch = v.batch;
        n.i_rho = v.i_rho * 2 + offs[o].dr;
        n.i_z = v.i_z * 2 + offs[o].dz;
        const int t = theta_down ? v.i_theta * 2 + offs[o].dt
                                 : wrap_theta(v.i_theta + offs[o].dt, x.theta_bins, theta_wrap);
        if (t < 0) continue;
        n.i_theta = t;
        const int32_t row = map.find(n);
        if (row >= 0) pl.push_back({static_cast<int32_t>(i), row});
      }
    }
  } else {
    throw DataError("conv stride must be 1 or 2");
  }

  out.node = gathered_conv(tape, x.node, out.num_voxels(), kernel, std::move(pairs), c_in, c_out);
  return out;
}

SparseTensor sparse_tconv(Tape& tape, const SparseTensor& x, Parameter& kernel,
                          const SparseTensor& target, bool theta_wrap) {
  if (kernel.shape.size() != 3 || kernel.shape[0] != 8)
    throw DataError("tconv kernel must be (8, C_in, C_out)");
  const int c_in = static_cast<int>(kernel.shape[1]);
  const int c_out = static_cast<int>(kernel.shape[2]);
  if (x.channels(tape) != c_in) throw DataError("tconv channel mismatch");
  const bool theta_down = (x.stride[1] != target.stride[1]);

  SparseTensor out;
  out.batch_size = target.batch_size;
  out.coords = target.coords;
  out.stride = target.stride;
  out.theta_bins = target.theta_bins;

  auto pairs = std::make_shared<std::vector<PairList>>(8);
  const CoordMap map(x.coords);
  const auto offs = child_offsets();
  for (size_t o = 0; o < offs.size(); ++o) {
    PairList& pl = (*pairs)[o];
    for (size_t i = 0; i < target.coords.size(); ++i) {
      const auto& u = target.coords[i];
      // Invert child_o(parent) == u per axis; rho/z match exactly one parity.
      if (((u.i_rho - offs[o].dr) & 1) != 0) continue;
      const int32_t zr = u.i_z - offs[o].dz;
      if ((zr & 1) != 0) continue;
      geom::VoxelCoord v;
      v.batch = u.batch;
      v.i_rho = (u.i_rho - offs[o].dr) >> 1;
      v.i_z = zr >> 1;
      if (v.i_rho < 0) continue;
      if (theta_down) {
        if (((u.i_theta - offs[o].dt) & 1) != 0) continue;
        v.i_theta = (u.i_theta - offs[o].dt) >> 1;
        if (v.i_theta < 0) continue;
      } else {
        const int t = wrap_theta(u.i_theta - offs[o].dt, target.theta_bins, theta_wrap);
        if (t < 0) continue;
        v.i_theta = t;
      }
      const int32_t row = map.find(v);
      if (row >= 0) pl.push_back({static_cast<int32_t>(i), row});
    }
  }

  out.node = gathered_conv(tape, x.node, out.num_voxels(), kernel, std::move(pairs), c_in, c_out);
  return out;
}

SparseTensor batch_norm(Tape& tape, const SparseTensor& x, BatchNorm& bn, bool train) {
  const Mat& in = tape.val(x.node);
  const Eigen::Index n = in.rows(), c = in.cols();
  Tape::NodeId out_node = tape.new_node(n, c);
  if (n == 0) return with_node(x, out_node);

  Eigen::RowVectorXd mean(c), var(c);
  if (train) {
    mean = in.colwise().mean();
    var = (in.rowwise() - mean).array().square().colwise().mean();
    bn.running_mean->values.row(0) =
        (1.0 - bn.momentum) * bn.running_mean->values.row(0) + bn.momentum * mean;
    bn.running_var->values.row(0) =
        (1.0 - bn.momentum) * bn.running_var->values.row(0) + bn.momentum * var;
  } else {
    mean = bn.running_mean->values.row(0);
    var = bn.running_var->values.row(0);
  }
  Eigen::RowVectorXd inv_std = (var.array() + bn.eps).rsqrt();
  auto xhat = std::make_shared<Mat>((in.rowwise() - mean).array().rowwise() * inv_std.array());
  tape.val(out_node) =
      (xhat->array().rowwise() * bn.gamma->values.row(0).array()).rowwise() +
      bn.beta->values.row(0).array();

  Parameter* gamma = bn.gamma;
  Parameter* beta = bn.beta;
  auto inv = std::make_shared<Eigen::RowVectorXd>(std::move(inv_std));
  Tape::NodeId in_node = x.node;
  tape.record([in_node, out_node, gamma, beta, xhat, inv, train, n](Tape& t) {
    const Mat& gout = t.grad(out_node);
    gamma->grad.row(0) += (gout.array() * xhat->array()).colwise().sum().matrix();
    beta->grad.row(0) += gout.colwise().sum();
    Mat gxhat = gout.array().rowwise() * gamma->values.row(0).array();
    if (train) {
      // Backward through batch statistics (biased variance).
      Eigen::RowVectorXd mean_g = gxhat.colwise().mean();
      Eigen::RowVectorXd mean_gx = (gxhat.array() * xhat->array()).colwise().mean();
      t.grad(in_node).array() +=
          ((gxhat.array().rowwise() - mean_g.array()) -
           xhat->array().rowwise() * mean_gx.array())
              .rowwise() *
          inv->array();
      (void)n;
    } else {
      t.grad(in_node).array() += gxhat.array().rowwise() * inv->array();
    }
  });
  return with_node(x, out_node);
}

SparseTensor eca(Tape& tape, const SparseTensor& x, Parameter& kernel1d) {
  const Mat& in = tape.val(x.node);
  const Eigen::Index c = in.cols();
  if (c < 3) throw DataError("eca requires at least 3 channels");
  auto spans = std::make_shared<std::vector<std::pair<int, int>>>(x.batch_spans());
  Tape::NodeId out_node = tape.new_node(in.rows(), c);
  Mat& out = tape.val(out_node);

  auto means = std::make_shared<Mat>(Mat::Zero(x.batch_size, c));
  auto gates = std::make_shared<Mat>(Mat::Zero(x.batch_size, c));
  const Eigen::RowVector3d k = kernel1d.values.row(0);
  for (int b = 0; b < x.batch_size; ++b) {
    auto [s, e] = (*spans)[static_cast<size_t>(b)];
    if (s == e) continue;
    means->row(b) = in.middleRows(s, e - s).colwise().mean();
    for (Eigen::Index ch = 0; ch < c; ++ch) {
      double pre = 0.0;
      for (int j = -1; j <= 1; ++j) {
        const Eigen::Index src = ch + j;
        if (src < 0 || src >= c) continue;
        pre += k(j + 1) * (*means)(b, src);
      }
      (*gates)(b, ch) = 1.0 / (1.0 + std::exp(-pre));
    }
    out.middleRows(s, e - s) =
        in.middleRows(s, e - s).array().rowwise() * gates->row(b).array();
  }

  Parameter* kp = &kernel1d;
  Tape::NodeId in_node = x.node;
  tape.record([in_node, out_node, kp, spans, means, gates, c](Tape& t) {
    const Mat& gout = t.grad(out_node);
    const Mat& in_vals = t.val(in_node);
    Mat& gin = t.grad(in_node);
    const Eigen::RowVector3d k = kp->values.row(0);
    for (int b = 0; b < static_cast<int>(spans->size()); ++b) {
      auto [s, e] = (*spans)[static_cast<size_t>(b)];
      if (s == e) continue;
      const auto g = gates->row(b);
      gin.middleRows(s, e - s).array() +=
          gout.middleRows(s, e - s).array().rowwise() * g.array();
      Eigen::RowVectorXd dgate =
          (gout.middleRows(s, e - s).array() * in_vals.middleRows(s, e - s).array())
              .colwise()
              .sum();
      Eigen::RowVectorXd dpre =
          dgate.array() * g.array() * (1.0 - g.array());
      Eigen::RowVectorXd dmean = Eigen::RowVectorXd::Zero(c);
      for (Eigen::Index ch = 0; ch < c; ++ch) {
        for (int j = -1; j <= 1; ++j) {
          const Eigen::Index src = ch + j;
          if (src < 0 || src >= c) continue;
          kp->grad(0, j + 1) += dpre(ch) * (*means)(b, src);
          dmean(src) += dpre(ch) * k(j + 1);
        }
      }
      gin.middleRows(s, e - s).array().rowwise() +=
          dmean.array() / static_cast<double>(e - s);
    }
  });
  return with_node(x, out_node);
}

Tape::NodeId linear(Tape& tape, Tape::NodeId x, Parameter& W, Parameter* b) {
  const Mat& in = tape.val(x);
  if (in.cols() != W.values.rows()) throw DataError("linear dimension mismatch");
  Tape::NodeId out = tape.new_node(in.rows(), W.values.cols());
  tape.val(out).noalias() = in * W.values;
  if (b != nullptr) tape.val(out).rowwise() += b->values.row(0);
  Parameter* wp = &W;
  Parameter* bp = b;
  tape.record([x, out, wp, bp](Tape& t) {
    const Mat& gout = t.grad(out);
    wp->grad.noalias() += t.val(x).transpose() * gout;
    if (bp != nullptr) bp->grad.row(0) += gout.colwise().sum();
    t.grad(x).noalias() += gout * wp->values.transpose();
  });
  return out;
}

Tape::NodeId activation(Tape& tape, Tape::NodeId x, Activation kind) {
  const Mat& in = tape.val(x);
  Tape::NodeId out = tape.new_node(in.rows(), in.cols());
  Mat& y = tape.val(out);
  switch (kind) {
    case Activation::Relu:
      y = in.cwiseMax(0.0);
      tape.record([x, out](Tape& t) {
        t.grad(x).array() +=
            t.grad(out).array() * (t.val(x).array() > 0.0).cast<double>();
      });
      break;
    case Activation::Tanh:
      y = in.array().tanh();
      tape.record([x, out](Tape& t) {
        t.grad(x).array() += t.grad(out).array() * (1.0 - t.val(out).array().square());
      });
      break;
    case Activation::Softplus:
      y = in.unaryExpr([](double v) {
        if (v > 30.0) return v;
        if (v < -30.0) return std::exp(v);
        return std::log1p(std::exp(v));
      });
      tape.record([x, out](Tape& t) {
        t.grad(x).array() +=
            t.grad(out).array() * t.val(x).unaryExpr([](double v) {
                                      return 1.0 / (1.0 + std::exp(-v));
                                    }).array();
      });
      break;
    case Activation::Sigmoid:
      y = in.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
      tape.record([x, out](Tape& t) {
        const auto& o = t.val(out).array();
        t.grad(x).array() += t.grad(out).array() * o * (1.0 - o);
      });
      break;
    case Activation::L2NormRows: {
      auto norms = std::make_shared<Vec>(in.rows());
      for (Eigen::Index i = 0; i < in.rows(); ++i)
        (*norms)(i) = std::max(in.row(i).norm(), 1e-12);
      y = in.array().colwise() / norms->array();
      tape.record([x, out, norms](Tape& t) {
        const Mat& gout = t.grad(out);
        const Mat& yv = t.val(out);
        for (Eigen::Index i = 0; i < gout.rows(); ++i) {
          const double dot = gout.row(i).dot(yv.row(i));
          t.grad(x).row(i) += (gout.row(i) - dot * yv.row(i)) / (*norms)(i);
        }
      });
      break;
    }
  }
  return out;
}

Tape::NodeId Mlp::apply(Tape& tape, Tape::NodeId x) const {
  Tape::NodeId h = x;
  for (size_t i = 0; i < layers.size(); ++i) {
    h = linear(tape, h, *layers[i].W, layers[i].b);
    if (i + 1 < layers.size()) h = activation(tape, h, Activation::Relu);
  }
  return h;
}

Tape::NodeId gem_pool(Tape& tape, const SparseTensor& x, Parameter& p) {
  constexpr double kClamp = 1e-6;
  const Mat& in = tape.val(x.node);
  const Eigen::Index c = in.cols();
  auto spans = std::make_shared<std::vector<std::pair<int, int>>>(x.batch_spans());
  for (int b = 0; b < x.batch_size; ++b)
    if ((*spans)[static_cast<size_t>(b)].first == (*spans)[static_cast<size_t>(b)].second)
      throw NumericalError("gem_pool: batch element " + std::to_string(b) + " has no voxels");

  const double pv = p.values(0, 0);
  Tape::NodeId out = tape.new_node(x.batch_size, c);
  Mat& y = tape.val(out);
  auto clamped = std::make_shared<Mat>(in.cwiseMax(kClamp));
  auto powed = std::make_shared<Mat>(clamped->array().pow(pv));
  auto mean_pow = std::make_shared<Mat>(Mat::Zero(x.batch_size, c));
  for (int b = 0; b < x.batch_size; ++b) {
    auto [s, e] = (*spans)[static_cast<size_t>(b)];
    mean_pow->row(b) = powed->middleRows(s, e - s).colwise().mean();
    y.row(b) = mean_pow->row(b).array().pow(1.0 / pv);
  }

  Parameter* pp = &p;
  Tape::NodeId in_node = x.node;
  tape.record([in_node, out, pp, spans, clamped, powed, mean_pow, kClamp](Tape& t) {
    const Mat& gout = t.grad(out);
    const Mat& yv = t.val(out);
    const Mat& in_vals = t.val(in_node);
    Mat& gin = t.grad(in_node);
    const double pv = pp->values(0, 0);
    for (int b = 0; b < static_cast<int>(spans->size()); ++b) {
      auto [s, e] = (*spans)[static_cast<size_t>(b)];
      const double inv_n = 1.0 / static_cast<double>(e - s);
      for (Eigen::Index ch = 0; ch < gout.cols(); ++ch) {
        const double g = gout(b, ch);
        if (g == 0.0) continue;
        const double yb = yv(b, ch);
        const double m = (*mean_pow)(b, ch);
        // d y / d f_v = y^(1-p) * f_v^(p-1) / K   (only where f > clamp)
        const double scale = g * std::pow(yb, 1.0 - pv) * inv_n;
        double sum_pow_log = 0.0;
        for (int v = s; v < e; ++v) {
          const double cl = (*clamped)(v, ch);
          sum_pow_log += (*powed)(v, ch) * std::log(cl);
          if (in_vals(v, ch) > kClamp)
            gin(v, ch) += scale * std::pow(cl, pv - 1.0);
        }
        // d y / d p = y * (-ln(m)/p^2 + (sum f^p ln f)/(p * sum f^p))
        const double n = static_cast<double>(e - s);
        pp->grad(0, 0) +=
            g * yb * (-std::log(m) / (pv * pv) + sum_pow_log / (pv * m * n));
      }
    }
  });
  return out;
}

SparseTensor add(Tape& tape, const SparseTensor& a, const SparseTensor& b) {
  if (a.coords != b.coords) throw DataError("sparse add requires identical coordinate sets");
  Tape::NodeId out = tape.new_node(tape.val(a.node) + tape.val(b.node));
  Tape::NodeId an = a.node, bn = b.node;
  tape.record([an, bn, out](Tape& t) {
    t.grad(an) += t.grad(out);
    t.grad(bn) += t.grad(out);
  });
  return with_node(a, out);
}

Tape::NodeId sum_all(Tape& tape, Tape::NodeId x) {
  Tape::NodeId out = tape.new_node(1, 1);
  tape.val(out)(0, 0) = tape.val(x).sum();
  tape.record([x, out](Tape& t) { t.grad(x).array() += t.grad(out)(0, 0); });
  return out;
}

Tape::NodeId add_scaled(Tape& tape, const std::vector<std::pair<Tape::NodeId, double>>& terms) {
  Tape::NodeId out = tape.new_node(1, 1);
  double v = 0.0;
  for (const auto& [node, w] : terms) v += w * tape.val(node)(0, 0);
  tape.val(out)(0, 0) = v;
  auto saved = terms;
  tape.record([saved, out](Tape& t) {
    const double g = t.grad(out)(0, 0);
    for (const auto& [node, w] : saved) t.grad(node)(0, 0) += g * w;
  });
  return out;
}

Tape::NodeId se3_apply_points(Tape& tape, Tape::NodeId pts, const geom::PoseSE3& T) {
  const Mat& in = tape.val(pts);
  Tape::NodeId out = tape.new_node(in.rows(), 3);
  tape.val(out) = (in * T.rotation.transpose()).rowwise() + T.translation.transpose();
  const Mat3 R = T.rotation;
  tape.record([pts, out, R](Tape& t) { t.grad(pts).noalias() += t.grad(out) * R; });
  return out;
}

Tape::NodeId slice_rows(Tape& tape, Tape::NodeId x, int begin, int len) {
  Tape::NodeId out = tape.new_node(tape.val(x).middleRows(begin, len));
  tape.record([x, out, begin, len](Tape& t) {
    t.grad(x).middleRows(begin, len) += t.grad(out);
  });
  return out;
}

Tape::NodeId add_constant(Tape& tape, Tape::NodeId x, double c) {
  Tape::NodeId out = tape.new_node(tape.val(x).array() + c);
  tape.record([x, out](Tape& t) { t.grad(x) += t.grad(out); });
  return out;
}

Tape::NodeId mul_elem(Tape& tape, Tape::NodeId a, Tape::NodeId b) {
  Tape::NodeId out = tape.new_node(tape.val(a).cwiseProduct(tape.val(b)));
  tape.record([a, b, out](Tape& t) {
    t.grad(a).array() += t.grad(out).array() * t.val(b).array();
    t.grad(b).array() += t.grad(out).array() * t.val(a).array();
  });
  return out;
}

}  // namespace egonn::ad
