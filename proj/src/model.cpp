#include "egonn/model.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

namespace egonn::net {

namespace {

constexpr int kTrunkWidths[8] = {32, 32, 64, 64, 128, 128, 128, 128};
constexpr double kSaliencyFloor = 0.05;

void he_init(Mat& m, double fan_in, Rng& rng) {
  std::normal_distribution<double> n(0.0, std::sqrt(2.0 / fan_in));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
}

}  // namespace

EgoNN::ConvUnit EgoNN::make_conv_unit(const std::string& name, int k, int c_in, int c_out) {
  ConvUnit u;
  u.w = params_.create(name + ".w",
                       {static_cast<uint64_t>(k * k * k), static_cast<uint64_t>(c_in),
                        static_cast<uint64_t>(c_out)});
  u.bn.gamma = params_.create(name + ".bn.gamma", {static_cast<uint64_t>(c_out)});
  u.bn.beta = params_.create(name + ".bn.beta", {static_cast<uint64_t>(c_out)});
  u.bn.running_mean =
      params_.create(name + ".bn.running_mean", {static_cast<uint64_t>(c_out)}, false);
  u.bn.running_var =
      params_.create(name + ".bn.running_var", {static_cast<uint64_t>(c_out)}, false);
  u.bn.gamma->values.setOnes();
  u.bn.running_var->values.setOnes();
  return u;
}

ad::Mlp EgoNN::make_mlp(const std::string& name, const std::vector<int>& dims) {
  ad::Mlp mlp;
  for (size_t i = 0; i + 1 < dims.size(); ++i) {
    auto* w = params_.create(name + "." + std::to_string(i) + ".w",
                             {static_cast<uint64_t>(dims[i]), static_cast<uint64_t>(dims[i + 1])});
    auto* b = params_.create(name + "." + std::to_string(i) + ".b",
                             {static_cast<uint64_t>(dims[i + 1])});
    mlp.layers.push_back({w, b});
  }
  return mlp;
}

EgoNN::EgoNN(const NetConfig& cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.quant.validate();
  const auto w = [&](int base) { return cfg_.width(base); };

  trunk0_ = make_conv_unit("trunk0", 5, 1, w(kTrunkWidths[0]));
  for (int k = 1; k <= 7; ++k) {
    TrunkBlock b;
    const std::string base = "trunk" + std::to_string(k);
    const int ci = w(kTrunkWidths[k - 1]);
    const int co = w(kTrunkWidths[k]);
    b.down = make_conv_unit(base + ".down", 2, ci, co);
    b.c1 = make_conv_unit(base + ".c1", 3, co, co);
    b.c2 = make_conv_unit(base + ".c2", 3, co, co);
    b.eca = params_.create(base + ".eca.k", {3});
    blocks_.push_back(b);
  }

  const int gw = w(128);
  g_tconv7_ = params_.create("global.tconv7.w", {8, static_cast<uint64_t>(w(kTrunkWidths[7])),
                                                 static_cast<uint64_t>(gw)});
  g_lat6_ = params_.create("global.lat6.w", {static_cast<uint64_t>(w(kTrunkWidths[6])),
                                             static_cast<uint64_t>(gw)});
  g_tconv6_ =
      params_.create("global.tconv6.w", {8, static_cast<uint64_t>(gw), static_cast<uint64_t>(gw)});
  g_lat5_ = params_.create("global.lat5.w", {static_cast<uint64_t>(w(kTrunkWidths[5])),
                                             static_cast<uint64_t>(gw)});
  g_mlp_ = make_mlp("global.mlp", {gw, w(192), w(256)});
  gem_p_ = params_.create("global.gem.p", {1});
  gem_p_->values(0, 0) = 3.0;

  const int lw = w(64);
  l_tconv5_ = params_.create("local.tconv5.w", {8, static_cast<uint64_t>(w(kTrunkWidths[5])),
                                                static_cast<uint64_t>(lw)});
  l_lat4_ = params_.create("local.lat4.w", {static_cast<uint64_t>(w(kTrunkWidths[4])),
                                            static_cast<uint64_t>(lw)});
  l_tconv4_ =
      params_.create("local.tconv4.w", {8, static_cast<uint64_t>(lw), static_cast<uint64_t>(lw)});
  l_lat3_ = params_.create("local.lat3.w", {static_cast<uint64_t>(w(kTrunkWidths[3])),
                                            static_cast<uint64_t>(lw)});
  head_pos_ = make_mlp("local.pos", {lw, w(32), 3});
  head_sal_ = make_mlp("local.sal", {lw, w(32), 1});
  head_desc_ = make_mlp("local.desc", {lw, w(96), w(128)});

  Rng rng(mix_seed(seed, 0x1417));
  for (const auto& p : params_.all()) {
    if (!p->trainable || p->shape.size() == 1) continue;  // keep bias/bn/eca at defaults
    const double fan_in = static_cast<double>(p->values.rows());
    he_init(p->values, fan_in, rng);
  }
}

ad::SparseTensor EgoNN::conv_bn_relu(ad::Tape& tape, const ad::SparseTensor& x, ConvUnit& u,
                                     int kernel, int stride, bool train) {
  (void)kernel;
  auto y = ad::sparse_conv(tape, x, *u.w, stride, cfg_.theta_wrap);
  y = ad::batch_norm(tape, y, u.bn, train);
  return ad::with_node(y, ad::activation(tape, y.node, ad::Activation::Relu));
}

ForwardNodes EgoNN::forward(ad::Tape& tape, const std::vector<geom::PointCloud>& clouds,
                            ForwardMode mode, bool train) {
  ForwardNodes out;
  auto x = ad::make_input_tensor(tape, clouds, cfg_.quant);

  const int deepest = (mode == ForwardMode::Local) ? 5 : 7;
  std::vector<ad::SparseTensor> levels;
  levels.reserve(static_cast<size_t>(deepest) + 1);
  levels.push_back(conv_bn_relu(tape, x, trunk0_, 5, 1, train));
  for (int k = 1; k <= deepest; ++k) {
    TrunkBlock& b = blocks_[static_cast<size_t>(k - 1)];
    auto h = conv_bn_relu(tape, levels.back(), b.down, 2, 2, train);
    h = conv_bn_relu(tape, h, b.c1, 3, 1, train);
    h = conv_bn_relu(tape, h, b.c2, 3, 1, train);
    h = ad::eca(tape, h, *b.eca);
    levels.push_back(h);
  }

  if (mode != ForwardMode::Local) {
    auto g = ad::sparse_tconv(tape, levels[7], *g_tconv7_, levels[6], cfg_.theta_wrap);
    auto lat6 = ad::with_node(levels[6], ad::linear(tape, levels[6].node, *g_lat6_, nullptr));
    g = ad::add(tape, g, lat6);
    g = ad::sparse_tconv(tape, g, *g_tconv6_, levels[5], cfg_.theta_wrap);
    auto lat5 = ad::with_node(levels[5], ad::linear(tape, levels[5].node, *g_lat5_, nullptr));
    g = ad::add(tape, g, lat5);
    auto decoded = g_mlp_.apply(tape, g.node);
    out.global_desc = ad::gem_pool(tape, ad::with_node(g, decoded), *gem_p_);
  }

  if (mode != ForwardMode::Global) {
    auto l = ad::sparse_tconv(tape, levels[5], *l_tconv5_, levels[4], cfg_.theta_wrap);
    auto lat4 = ad::with_node(levels[4], ad::linear(tape, levels[4].node, *l_lat4_, nullptr));
    l = ad::add(tape, l, lat4);
    l = ad::sparse_tconv(tape, l, *l_tconv4_, levels[3], cfg_.theta_wrap);
    auto lat3 = ad::with_node(levels[3], ad::linear(tape, levels[3].node, *l_lat3_, nullptr));
    l = ad::add(tape, l, lat3);

    out.raw = ad::activation(tape, head_pos_.apply(tape, l.node), ad::Activation::Tanh);
    // Softplus keeps saliency positive; the floor bounds ln(sigma) in the
    // keypoint loss and caps its 1/sigma gradients once pairs co-locate.
    auto sal_raw = ad::activation(tape, head_sal_.apply(tape, l.node), ad::Activation::Softplus);
    out.saliency = ad::add_constant(tape, sal_raw, kSaliencyFloor);
    out.descriptors =
        ad::activation(tape, head_desc_.apply(tape, l.node), ad::Activation::L2NormRows);
    out.local_spans = l.batch_spans();

    out.grid.s_rho = l.stride[0] * cfg_.quant.rho_step;
    out.grid.s_theta = l.stride[1] * cfg_.quant.theta_step;
    out.grid.s_z = l.stride[2] * cfg_.quant.z_step;
    out.centers_cyl.resize(l.num_voxels(), 3);
    for (Eigen::Index i = 0; i < l.num_voxels(); ++i) {
      const auto& c = l.coords[static_cast<size_t>(i)];
      out.centers_cyl(i, 0) = (c.i_rho + 0.5) * out.grid.s_rho;
      out.centers_cyl(i, 1) = (c.i_theta + 0.5) * out.grid.s_theta;
      out.centers_cyl(i, 2) = (c.i_z + 0.5) * out.grid.s_z;
    }
    out.positions = decode_keypoints_node(tape, out.raw, out.grid, out.centers_cyl);
  }
  return out;
}

std::vector<EgoNN::CloudResult> EgoNN::extract(const std::vector<geom::PointCloud>& clouds,
                                               ForwardMode mode) {
  ad::Tape tape;
  auto nodes = forward(tape, clouds, mode, /*train=*/false);
  std::vector<CloudResult> results(clouds.size());
  for (size_t b = 0; b < clouds.size(); ++b) {
    if (nodes.global_desc >= 0)
      results[b].global_desc = tape.val(nodes.global_desc).row(static_cast<Eigen::Index>(b));
    if (nodes.positions >= 0) {
      auto [s, e] = nodes.local_spans[b];
      KeypointSet ks;
      ks.positions = tape.val(nodes.positions).middleRows(s, e - s);
      ks.raw = tape.val(nodes.raw).middleRows(s, e - s);
      ks.saliency = tape.val(nodes.saliency).middleRows(s, e - s).col(0);
      ks.descriptors = tape.val(nodes.descriptors).middleRows(s, e - s);
      ks.centers_cyl = nodes.centers_cyl.middleRows(s, e - s);
      results[b].keypoints = std::move(ks);
    }
  }
  return results;
}

void EgoNN::calibrate_batchnorm(const std::vector<geom::PointCloud>& clouds) {
  std::vector<ad::BatchNorm*> norms = {&trunk0_.bn};
  for (auto& b : blocks_) {
    norms.push_back(&b.down.bn);
    norms.push_back(&b.c1.bn);
    norms.push_back(&b.c2.bn);
  }
  for (auto* bn : norms) bn->momentum = 1.0;
  ad::Tape tape;
  forward(tape, clouds, ForwardMode::Both, /*train=*/true);
  for (auto* bn : norms) bn->momentum = 0.1;
}

SupervoxelGrid EgoNN::supervoxel_grid() const {
  // The local feature map sits at stride 8 on rho/z; the theta axis halves
  // only while its ring stays even.
  SupervoxelGrid g;
  g.s_rho = 8 * cfg_.quant.rho_step;
  g.s_z = 8 * cfg_.quant.z_step;
  int bins = cfg_.quant.theta_bins();
  int stride = 1;
  for (int level = 0; level < 3; ++level) {
    if (bins % 2 == 0) {
      bins /= 2;
      stride *= 2;
    }
  }
  g.s_theta = stride * cfg_.quant.theta_step;
  return g;
}

std::vector<ad::Parameter*> EgoNN::trunk_params() const {
  std::vector<ad::Parameter*> out;
  for (const auto& p : params_.all())
    if (p->trainable && p->name.rfind("trunk", 0) == 0) out.push_back(p.get());
  return out;
}

std::vector<ad::Parameter*> EgoNN::global_params() const {
  std::vector<ad::Parameter*> out;
  for (const auto& p : params_.all())
    if (p->trainable && p->name.rfind("global", 0) == 0) out.push_back(p.get());
  return out;
}

std::vector<ad::Parameter*> EgoNN::local_params() const {
  std::vector<ad::Parameter*> out;
  for (const auto& p : params_.all())
    if (p->trainable && p->name.rfind("local", 0) == 0) out.push_back(p.get());
  return out;
}

Mat decode_keypoints(const Mat& raw, const SupervoxelGrid& grid, const Mat& centers_cyl) {
  Mat out(raw.rows(), 3);
  for (Eigen::Index i = 0; i < raw.rows(); ++i) {
    const double rho = raw(i, 0) * grid.s_rho / 2.0 + centers_cyl(i, 0);
    const double theta = raw(i, 1) * grid.s_theta / 2.0 + centers_cyl(i, 1);
    const double z = raw(i, 2) * grid.s_z / 2.0 + centers_cyl(i, 2);
    out(i, 0) = rho * std::cos(theta);
    out(i, 1) = rho * std::sin(theta);
    out(i, 2) = z;
  }
  return out;
}

ad::Tape::NodeId decode_keypoints_node(ad::Tape& tape, ad::Tape::NodeId raw,
                                       const SupervoxelGrid& grid, const Mat& centers_cyl) {
  const Mat& r = tape.val(raw);
  ad::Tape::NodeId out = tape.new_node(decode_keypoints(r, grid, centers_cyl));
  auto centers = std::make_shared<Mat>(centers_cyl);
  const SupervoxelGrid g = grid;
  tape.record([raw, out, centers, g](ad::Tape& t) {
    const Mat& gout = t.grad(out);
    const Mat& r = t.val(raw);
    Mat& gin = t.grad(raw);
    for (Eigen::Index i = 0; i < r.rows(); ++i) {
      const double rho = r(i, 0) * g.s_rho / 2.0 + (*centers)(i, 0);
      const double theta = r(i, 1) * g.s_theta / 2.0 + (*centers)(i, 1);
      const double ct = std::cos(theta), st = std::sin(theta);
      const double gx = gout(i, 0), gy = gout(i, 1), gz = gout(i, 2);
      gin(i, 0) += (gx * ct + gy * st) * g.s_rho / 2.0;
      gin(i, 1) += (gx * (-rho * st) + gy * (rho * ct)) * g.s_theta / 2.0;
      gin(i, 2) += gz * g.s_z / 2.0;
    }
  });
  return out;
}

KeypointSet select_keypoints(const KeypointSet& ks, int k) {
  const int m = ks.size();
  std::vector<int> order(static_cast<size_t>(m));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (ks.saliency(a) != ks.saliency(b)) return ks.saliency(a) < ks.saliency(b);
    return a < b;
  });
  const int n = std::min(k, m);
  KeypointSet out;
  out.positions.resize(n, 3);
  out.raw.resize(n, 3);
  out.saliency.resize(n);
  out.descriptors.resize(n, ks.descriptors.cols());
  out.centers_cyl.resize(n, 3);
  for (int i = 0; i < n; ++i) {
    const int src = order[static_cast<size_t>(i)];
    out.positions.row(i) = ks.positions.row(src);
    out.raw.row(i) = ks.raw.row(src);
    out.saliency(i) = ks.saliency(src);
    out.descriptors.row(i) = ks.descriptors.row(src);
    out.centers_cyl.row(i) = ks.centers_cyl.row(src);
  }
  return out;
}

double repeatability(const KeypointSet& ks_a, const KeypointSet& ks_b, const geom::PoseSE3& T,
                     double radius, double sensor_range) {
  if (ks_a.size() == 0 || ks_b.size() == 0) {
    std::cerr << "warning: repeatability over empty keypoint set\n";
    return 0.0;
  }
  const geom::PoseSE3 b_to_a = geom::se3_inverse(T);
  Mat b_in_a(ks_b.size(), 3);
  for (int j = 0; j < ks_b.size(); ++j)
    b_in_a.row(j) = b_to_a.apply(ks_b.positions.row(j).transpose()).transpose();

  int considered = 0, hit = 0;
  for (int i = 0; i < ks_a.size(); ++i) {
    const Vec3 q = ks_a.positions.row(i).transpose();
    if (q.norm() > sensor_range || T.apply(q).norm() > sensor_range) continue;
    ++considered;
    double best = std::numeric_limits<double>::infinity();
    for (int j = 0; j < ks_b.size(); ++j)
      best = std::min(best, (b_in_a.row(j).transpose() - q).norm());
    if (best <= radius) ++hit;
  }
  if (considered == 0) {
    std::cerr << "warning: repeatability with empty overlap region\n";
    return 0.0;
  }
  return static_cast<double>(hit) / static_cast<double>(considered);
}

}  // namespace egonn::net
