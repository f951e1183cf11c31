#include <doctest.h>

#include <filesystem>

#include "egonn/trainer.hpp"

using namespace egonn;
using namespace egonn::train;

namespace fs = std::filesystem;

namespace {

/// Small two-cluster dataset: positives within clusters, negatives across.
data::Traversal make_dataset(uint64_t seed, int per_cluster = 3) {
  data::WorldSpec ws;
  ws.extent = 90.0;
  ws.num_poles = 40;
  ws.num_boxes = 10;
  ws.num_scatter = 20;
  ws.seed = seed;
  auto world = data::generate_world(ws);

  data::ScanSpec scan;
  scan.max_range = 30.0;
  scan.rings = 12;
  scan.azimuth_res_deg = 3.0;
  scan.noise_sigma = 0.01;

  data::Traversal out;
  Rng rng(seed);
  int idx = 0;
  for (const Vec3 base : {Vec3(-20.0, 0.0, 1.6), Vec3(20.0, 5.0, 1.6)}) {
    for (int i = 0; i < per_cluster; ++i) {
      data::Scan s;
      s.pose = geom::PoseSE3::from_yaw(0.3 * i, base + Vec3(0.5 * i, 0.3 * i, 0.0));
      Rng scan_rng(mix_seed(seed, 0x5ca2, static_cast<uint64_t>(idx)));
      s.cloud = data::scan_world(world, s.pose, scan, scan_rng);
      s.timestamp = idx * 0.1;
      out.push_back(std::move(s));
      ++idx;
    }
  }
  return out;
}

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.steps = 3;
  cfg.global_batch_pairs = 3;
  cfg.local_pairs = 1;
  cfg.checkpoint_every = 0;
  cfg.net = net::NetConfig::toy();
  cfg.net.scale = 8;
  // Fixed inputs: the overfit and determinism tests want a pure
  // optimization signal.
  cfg.global_aug.cuboid_side_min = cfg.global_aug.cuboid_side_max = 0.0;
  cfg.global_aug.jitter_sigma = 0.0;
  cfg.global_aug.random_rotation = false;
  cfg.local_max_translation = 0.0;
  return cfg;
}

}  // namespace

TEST_CASE("zero learning rate leaves parameters bit-identical") {
  auto dataset = make_dataset(21);
  auto pools = data::sample_pairs({dataset}, 2.0, 10.0);
  TrainConfig cfg = small_config();
  cfg.lr = 0.0;
  net::EgoNN model(cfg.net, 5);

  std::vector<Mat> before;
  for (const auto& p : model.params().all()) before.push_back(p->values);

  Trainer trainer(model, cfg, dataset, pools);
  trainer.global_substep(0);
  trainer.local_substep(0);

  size_t i = 0;
  for (const auto& p : model.params().all()) {
    if (p->name.find("running") != std::string::npos) {
      ++i;  // batch-norm running stats move in train mode by design
      continue;
    }
    CHECK((p->values - before[i]).norm() == 0.0);
    ++i;
  }
}

TEST_CASE("gradients reach the trunk in both substeps") {
  auto dataset = make_dataset(22);
  auto pools = data::sample_pairs({dataset}, 2.0, 10.0);
  TrainConfig cfg = small_config();
  net::EgoNN model(cfg.net, 6);
  Trainer trainer(model, cfg, dataset, pools);

  auto g = trainer.global_substep(0);
  REQUIRE(g.loss.has_value());
  CHECK(model.params().find("trunk0.w")->grad.norm() > 0.0);

  auto l = trainer.local_substep(0);
  CHECK(model.params().find("trunk0.w")->grad.norm() > 0.0);
  CHECK(std::isfinite(l.l_chamfer));
  CHECK(std::isfinite(l.l_p2p));
}

TEST_CASE("repeated global substeps overfit a fixed batch") {
  auto dataset = make_dataset(23, 2);
  auto pools = data::sample_pairs({dataset}, 2.0, 10.0);
  TrainConfig cfg = small_config();
  cfg.global_batch_pairs = 2;
  net::EgoNN model(cfg.net, 7);
  Trainer trainer(model, cfg, dataset, pools);

  // Fixed step index -> fixed batch; only parameters change between calls.
  double initial = 0.0;
  double last = 0.0;
  for (int i = 0; i < 200; ++i) {
    auto r = trainer.global_substep(0);
    REQUIRE(r.loss.has_value());
    if (i == 0) initial = *r.loss;
    last = *r.loss;
  }
  CHECK(initial > 0.0);
  CHECK(last < 0.1 * initial);
}

TEST_CASE("run produces a finite deterministic log and checkpoint") {
  auto dataset = make_dataset(24);
  auto pools = data::sample_pairs({dataset}, 2.0, 10.0);
  const auto ckpt = (fs::temp_directory_path() / "egonn_trainer_test.ckpt").string();

  TrainConfig cfg = small_config();
  cfg.seed = 77;

  net::EgoNN model_a(cfg.net, 9);
  Trainer trainer_a(model_a, cfg, dataset, pools);
  auto log_a = trainer_a.run(ckpt);

  net::EgoNN model_b(cfg.net, 9);
  Trainer trainer_b(model_b, cfg, dataset, pools);
  auto log_b = trainer_b.run(ckpt);

  CHECK(log_a.to_csv() == log_b.to_csv());
  REQUIRE(log_a.steps.size() == 3);
  for (const auto& s : log_a.steps) {
    CHECK(std::isfinite(s.global_loss));
    CHECK(std::isfinite(s.l_chamfer));
  }
  CHECK(fs::exists(ckpt));
  fs::remove(ckpt);
}

TEST_CASE("resume reproduces the uninterrupted run") {
  auto dataset = make_dataset(25);
  auto pools = data::sample_pairs({dataset}, 2.0, 10.0);
  const auto dir = fs::temp_directory_path() / "egonn_resume_test";
  fs::create_directories(dir);
  const auto full_ckpt = (dir / "full.ckpt").string();
  const auto half_ckpt = (dir / "half.ckpt").string();

  TrainConfig cfg = small_config();
  cfg.steps = 4;
  cfg.checkpoint_every = 2;
  cfg.seed = 101;

  // Uninterrupted run (checkpoints at 2 and 4).
  net::EgoNN model_a(cfg.net, 13);
  Trainer trainer_a(model_a, cfg, dataset, pools);
  auto log_a = trainer_a.run(full_ckpt);

  // Interrupted run: stop after 2 steps, then resume in a fresh model.
  TrainConfig half = cfg;
  half.steps = 2;
  net::EgoNN model_b(cfg.net, 13);
  Trainer trainer_b(model_b, half, dataset, pools);
  trainer_b.run(half_ckpt);

  net::EgoNN model_c(cfg.net, 999);  // weights come from the checkpoint
  Trainer trainer_c(model_c, cfg, dataset, pools);
  auto log_c = trainer_c.resume(half_ckpt);

  REQUIRE(log_c.steps.size() == 2);
  CHECK(log_c.steps[0].step == 2);
  // Steps 2..3 of the uninterrupted run match the resumed run exactly.
  for (size_t i = 0; i < 2; ++i) {
    CHECK(log_a.steps[i + 2].global_loss == log_c.steps[i].global_loss);
    CHECK(log_a.steps[i + 2].l_chamfer == log_c.steps[i].l_chamfer);
    CHECK(log_a.steps[i + 2].l_p2p == log_c.steps[i].l_p2p);
  }

  // Final parameters agree bit-exactly.
  for (const auto& p : model_a.params().all()) {
    const auto* q = model_c.params().find(p->name);
    REQUIRE(q != nullptr);
    CHECK((p->values - q->values).norm() == 0.0);
  }
  fs::remove_all(dir);
}

TEST_CASE("local overfit improves keypoint repeatability on the trained pair") {
  auto dataset = make_dataset(26, 2);
  auto pools = data::sample_pairs({dataset}, 2.0, 10.0);
  TrainConfig cfg = small_config();
  cfg.net.scale = 8;
  net::EgoNN model(cfg.net, 15);
  Trainer trainer(model, cfg, dataset, pools);

  const auto& pair = pools.positives[0];
  const auto& scan_a = dataset[static_cast<size_t>(pair.first)];
  const auto& scan_b = dataset[static_cast<size_t>(pair.second)];
  const auto rel_ab = geom::se3_relative(scan_b.pose, scan_a.pose);  // a -> b convention

  auto measure = [&]() {
    auto res = model.extract({scan_a.cloud, scan_b.cloud}, net::ForwardMode::Local);
    auto ka = net::select_keypoints(*res[0].keypoints, 64);
    auto kb = net::select_keypoints(*res[1].keypoints, 64);
    return net::repeatability(ka, kb, rel_ab, 0.5);
  };

  for (int i = 0; i < 200; ++i) trainer.local_substep(0);
  const double after = measure();
  CHECK(after >= 0.8);
}
