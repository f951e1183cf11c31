#include "egonn/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <sstream>

namespace egonn::train {

Adam::Adam(double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

ad::Parameter* Adam::slot(const std::string& prefix, const ad::Parameter& p) {
  const std::string name = prefix + p.name;
  if (auto* existing = state_.find(name)) return existing;
  return state_.create(name, p.shape, /*trainable=*/false);
}

void Adam::step(const std::vector<ad::Parameter*>& params) {
  for (ad::Parameter* p : params) {
    ad::Parameter* m = slot("adam.m.", *p);
    ad::Parameter* v = slot("adam.v.", *p);
    ad::Parameter* t = state_.find("adam.t." + p->name);
    if (t == nullptr) t = state_.create("adam.t." + p->name, {1}, false);
    t->values(0, 0) += 1.0;
    const double tc = t->values(0, 0);
    m->values = beta1_ * m->values + (1.0 - beta1_) * p->grad;
    v->values = beta2_ * v->values.array().matrix() +
                (1.0 - beta2_) * p->grad.array().square().matrix();
    const double bc1 = 1.0 - std::pow(beta1_, tc);
    const double bc2 = 1.0 - std::pow(beta2_, tc);
    p->values.array() -=
        lr_ * (m->values.array() / bc1) / ((v->values.array() / bc2).sqrt() + eps_);
    if (!p->values.allFinite())
      throw NumericalError("optimizer produced non-finite values in " + p->name);
  }
}

std::string TrainLog::to_csv() const {
  std::ostringstream os;
  os << "step,global_loss,active_triplets,l_chamfer,l_p2p,l_desc\n";
  char buf[128];
  for (const auto& s : steps) {
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%d,%.9g,%.9g,%.9g\n", s.step, s.global_loss,
                  s.active_triplets, s.l_chamfer, s.l_p2p, s.l_desc);
    os << buf;
  }
  return os.str();
}

Trainer::Trainer(net::EgoNN& model, const TrainConfig& cfg, const data::Traversal& scans,
                 const data::PairPools& pools)
    : model_(model), cfg_(cfg), scans_(scans), pools_(pools), opt_(cfg.lr) {
  if (pools_.positives.empty()) throw DataError("trainer requires positive pairs");
  run_state_.create("train.step", {1}, false);
}

std::vector<std::pair<int, int>> Trainer::sample_batch_pairs(int step, int count, uint64_t tag) {
  Rng rng(mix_seed(cfg_.seed, static_cast<uint64_t>(step), tag));
  std::uniform_int_distribution<size_t> pick(0, pools_.positives.size() - 1);
  std::vector<std::pair<int, int>> out;
  out.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) out.push_back(pools_.positives[pick(rng)]);
  return out;
}

GlobalSubstepResult Trainer::global_substep(int step) {
  const auto pairs = sample_batch_pairs(step, cfg_.global_batch_pairs, 1);
  std::vector<geom::PointCloud> clouds;
  std::vector<Vec3> centers;
  Rng aug_rng(mix_seed(cfg_.seed, static_cast<uint64_t>(step), 2));
  for (const auto& [i, j] : pairs) {
    for (int idx : {i, j}) {
      const auto& scan = scans_[static_cast<size_t>(idx)];
      clouds.push_back(geom::augment_global(scan.cloud, cfg_.global_aug, aug_rng));
      centers.push_back(scan.pose.translation);
    }
  }

  ad::Tape tape;
  auto nodes = model_.forward(tape, clouds, net::ForwardMode::Global, /*train=*/true);
  auto [pos_mask, neg_mask] =
      loss::pose_distance_masks(centers, cfg_.loss.positive_dist, cfg_.loss.negative_dist);
  const auto triplets = loss::mine_batch_hard(tape.val(nodes.global_desc), pos_mask, neg_mask);

  GlobalSubstepResult result;
  result.active_triplets = static_cast<int>(triplets.size());
  if (triplets.empty()) {
    std::cerr << "step " << step << ": no valid triplet in batch, global substep skipped\n";
    return result;
  }
  auto loss_node = loss::triplet_loss_node(tape, nodes.global_desc, triplets, cfg_.loss.margin);
  result.loss = tape.val(loss_node)(0, 0);

  model_.params().zero_grads();
  tape.backward(loss_node);
  auto group = model_.trunk_params();
  for (auto* p : model_.global_params()) group.push_back(p);
  opt_.step(group);
  return result;
}

LocalSubstepResult Trainer::local_substep(int step) {
  LocalSubstepResult result;
  std::optional<double> l_c, l_p2p, l_d;
  for (int rep = 0; rep < cfg_.local_pairs; ++rep) {
    const auto pair = sample_batch_pairs(step, 1, 0x10c + static_cast<uint64_t>(rep))[0];
    const auto& scan_a = scans_[static_cast<size_t>(pair.first)];
    const auto& scan_b = scans_[static_cast<size_t>(pair.second)];

    Rng aug_rng(mix_seed(cfg_.seed, static_cast<uint64_t>(step), 3 + static_cast<uint64_t>(rep)));
    auto [cloud_a, aug_a] = geom::augment_local(scan_a.cloud, cfg_.local_max_translation, aug_rng);
    auto [cloud_b, aug_b] = geom::augment_local(scan_b.cloud, cfg_.local_max_translation, aug_rng);

    // b' -> a' transform: p_a = Ta^-1 Tb p_b, then both augmentations.
    const geom::PoseSE3 rel = geom::se3_relative(scan_a.pose, scan_b.pose);
    const geom::PoseSE3 b_to_a =
        geom::se3_compose(aug_a, geom::se3_compose(rel, geom::se3_inverse(aug_b)));

    ad::Tape tape;
    auto nodes = model_.forward(tape, {cloud_a, cloud_b}, net::ForwardMode::Local, /*train=*/true);
    auto [sa_begin, sa_end] = nodes.local_spans[0];
    auto [sb_begin, sb_end] = nodes.local_spans[1];
    auto qa = ad::slice_rows(tape, nodes.positions, sa_begin, sa_end - sa_begin);
    auto qb = ad::slice_rows(tape, nodes.positions, sb_begin, sb_end - sb_begin);
    auto sal_a = ad::slice_rows(tape, nodes.saliency, sa_begin, sa_end - sa_begin);
    auto sal_b = ad::slice_rows(tape, nodes.saliency, sb_begin, sb_end - sb_begin);
    auto desc_a = ad::slice_rows(tape, nodes.descriptors, sa_begin, sa_end - sa_begin);
    auto desc_b = ad::slice_rows(tape, nodes.descriptors, sb_begin, sb_end - sb_begin);

    auto qb_in_a = ad::se3_apply_points(tape, qb, b_to_a);
    auto chamfer = loss::chamfer_prob_loss_node(tape, qa, qb_in_a, sal_a, sal_b);

    reg::PointGrid grid_a(cloud_a.points), grid_b(cloud_b.points);
    auto p2p = ad::add_scaled(tape, {{loss::p2p_loss_node(tape, qa, grid_a), 1.0},
                                     {loss::p2p_loss_node(tape, qb, grid_b), 1.0}});

    // Correspondences from geometry after ground-truth alignment; the
    // gt_correspondences convention takes T mapping a into b.
    const auto corr = loss::gt_correspondences(tape.val(qa), tape.val(qb),
                                               geom::se3_inverse(b_to_a), cfg_.loss.corr_radius);
    std::vector<std::pair<ad::Tape::NodeId, double>> terms = {
        {chamfer, cfg_.loss.lambda_chamfer}, {p2p, cfg_.loss.lambda_p2p}};
    std::optional<double> desc_value;
    if (!corr.rows.empty()) {
      auto desc = loss::descriptor_loss_node(tape, desc_a, desc_b, corr, cfg_.loss.tau);
      desc_value = tape.val(desc)(0, 0);
      terms.push_back({desc, cfg_.loss.lambda_desc});
    } else {
      std::cerr << "step " << step << ": no ground-truth correspondences, descriptor term skipped\n";
    }
    auto total = ad::add_scaled(tape, terms);

    model_.params().zero_grads();
    tape.backward(total);
    auto group = model_.trunk_params();
    for (auto* p : model_.local_params()) group.push_back(p);
    opt_.step(group);

    l_c = l_c.value_or(0.0) + tape.val(chamfer)(0, 0);
    l_p2p = l_p2p.value_or(0.0) + tape.val(p2p)(0, 0);
    if (desc_value) l_d = l_d.value_or(0.0) + *desc_value;
  }
  result.l_chamfer = l_c.value_or(0.0);
  result.l_p2p = l_p2p.value_or(0.0);
  result.l_desc = l_d;
  return result;
}

void Trainer::save_state(const std::string& path) {
  run_state_.find("train.step")->values(0, 0) = static_cast<double>(step_);
  // Checkpoints are exact snapshots: the live state is rounded to the f32
  // precision that lands on disk, so a resumed run and an uninterrupted one
  // share bit-identical trajectories.
  ad::quantize_to_f32(model_.params());
  ad::quantize_to_f32(opt_.state());
  ad::save_checkpoint_multi({&model_.params(), &opt_.state(), &run_state_}, path);
}

TrainLog Trainer::run(const std::string& checkpoint_path) {
  TrainLog log;
  const int target = cfg_.steps;
  while (step_ < target) {
    const auto t0 = std::chrono::steady_clock::now();
    StepLog entry;
    entry.step = step_;
    auto g = global_substep(step_);
    entry.global_loss = g.loss.value_or(0.0);
    entry.active_triplets = g.active_triplets;
    auto l = local_substep(step_);
    entry.l_chamfer = l.l_chamfer;
    entry.l_p2p = l.l_p2p;
    entry.l_desc = l.l_desc.value_or(0.0);
    if (!std::isfinite(entry.global_loss) || !std::isfinite(entry.l_chamfer) ||
        !std::isfinite(entry.l_p2p) || !std::isfinite(entry.l_desc))
      throw NumericalError("non-finite loss at step " + std::to_string(step_));
    log.steps.push_back(entry);
    ++step_;
    if (cfg_.checkpoint_every > 0 && step_ % cfg_.checkpoint_every == 0)
      save_state(checkpoint_path);
    log.wall_ms.push_back(
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  save_state(checkpoint_path);
  return log;
}

TrainLog Trainer::resume(const std::string& checkpoint_path) {
  std::map<std::string, std::pair<std::vector<uint64_t>, std::vector<float>>> extra;
  ad::load_checkpoint(model_.params(), checkpoint_path, &extra);
  // Rebuild optimizer state and step counter from the leftover records.
  for (const auto& [name, rec] : extra) {
    if (name == "train.step") {
      step_ = static_cast<int>(rec.second.at(0));
      continue;
    }
    ad::Parameter* p = opt_.state().find(name);
    if (p == nullptr) p = opt_.state().create(name, rec.first, false);
    double* data = p->values.data();
    for (size_t i = 0; i < rec.second.size(); ++i) data[i] = static_cast<double>(rec.second[i]);
  }
  return run(checkpoint_path);
}

}  // namespace egonn::train
