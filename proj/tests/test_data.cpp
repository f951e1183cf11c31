#include <doctest.h>

#include <filesystem>
#include <set>
#include <fstream>

#include "egonn/data.hpp"

using namespace egonn;
using namespace egonn::data;

namespace fs = std::filesystem;

TEST_CASE("world and traversal generation is deterministic") {
  WorldSpec ws;
  ws.seed = 42;
  auto w1 = generate_world(ws);
  auto w2 = generate_world(ws);
  REQUIRE(w1.poles.size() == w2.poles.size());
  for (size_t i = 0; i < w1.poles.size(); ++i) {
    CHECK(w1.poles[i].cx == w2.poles[i].cx);
    CHECK(w1.poles[i].radius == w2.poles[i].radius);
  }

  TrajectorySpec traj;
  traj.num_poses = 5;
  ScanSpec scan;
  scan.rings = 8;
  scan.azimuth_res_deg = 3.0;
  auto t1 = generate_traversal(w1, traj, scan, 7);
  auto t2 = generate_traversal(w1, traj, scan, 7);
  REQUIRE(t1.size() == t2.size());
  for (size_t i = 0; i < t1.size(); ++i) {
    REQUIRE(t1[i].cloud.size() == t2[i].cloud.size());
    for (size_t j = 0; j < t1[i].cloud.size(); ++j)
      CHECK((t1[i].cloud.points[j] - t2[i].cloud.points[j]).norm() == 0.0);
  }
}

TEST_CASE("scan of a single pole hits its surface") {
  World world;
  world.extent = 100.0;
  world.poles.push_back({10.0, 5.0, 0.3, 6.0});
  ScanSpec spec;
  spec.rings = 16;
  spec.azimuth_res_deg = 1.0;
  spec.noise_sigma = 0.01;
  const auto pose = geom::PoseSE3::from_yaw(0.4, {2.0, -1.0, 1.5});
  Rng rng(3);
  auto cloud = scan_world(world, pose, spec, rng);
  REQUIRE(cloud.size() > 0);
  CHECK(cloud.size() <= static_cast<size_t>(spec.rings) * 360);

  for (const auto& p : cloud.points) {
    const Vec3 w = pose.apply(p);
    const double dist_axis = std::hypot(w.x() - 10.0, w.y() - 5.0);
    CHECK(dist_axis == doctest::Approx(0.3).epsilon(0.5));  // within noise of the surface
    CHECK(w.z() >= -0.1);
    CHECK(w.z() <= 6.1);
    CHECK(p.norm() <= spec.max_range + 0.5);
  }
}

TEST_CASE("perturbed second traversal stays within bounds") {
  WorldSpec ws;
  ws.seed = 1;
  auto world = generate_world(ws);
  TrajectorySpec traj;
  traj.num_poses = 12;
  ScanSpec scan;
  scan.rings = 4;
  scan.azimuth_res_deg = 6.0;
  auto base = generate_traversal(world, traj, scan, 5);
  Perturbation pert;
  pert.max_xy = 1.0;
  pert.max_yaw_deg = 10.0;
  auto second = generate_traversal(world, traj, scan, 6, &pert);
  REQUIRE(base.size() == second.size());
  for (size_t i = 0; i < base.size(); ++i) {
    const double d = (base[i].pose.translation - second[i].pose.translation).norm();
    CHECK(d <= std::sqrt(2.0) * pert.max_xy + 1e-9);
  }
}

TEST_CASE("trajectory outside the world is rejected") {
  WorldSpec ws;
  ws.extent = 20.0;
  auto world = generate_world(ws);
  TrajectorySpec traj;
  traj.radius = 38.0;
  ScanSpec scan;
  CHECK_THROWS_AS(generate_traversal(world, traj, scan, 1), DataError);
}

TEST_CASE("cloud file round trip and layouts") {
  const auto dir = fs::temp_directory_path() / "egonn_data_test";
  fs::create_directories(dir);
  const auto path = (dir / "cloud.bin").string();

  Rng rng(5);
  std::uniform_real_distribution<double> u(-40.0, 40.0);
  geom::PointCloud cloud;
  for (int i = 0; i < 257; ++i) cloud.points.push_back({u(rng), u(rng), u(rng)});

  save_cloud(cloud, path);
  auto loaded = load_cloud(path, CloudLayout::XYZ);
  REQUIRE(loaded.size() == cloud.size());
  // Values went through f32 once; saving the loaded cloud is bit-stable.
  const auto path2 = (dir / "cloud2.bin").string();
  save_cloud(loaded, path2);
  auto loaded2 = load_cloud(path2, CloudLayout::XYZ);
  for (size_t i = 0; i < loaded.size(); ++i)
    CHECK((loaded.points[i] - loaded2.points[i]).norm() == 0.0);

  // Empty file -> empty cloud.
  const auto empty_path = (dir / "empty.bin").string();
  std::ofstream(empty_path, std::ios::binary).close();
  CHECK(load_cloud(empty_path, CloudLayout::XYZ).empty());

  // XYZI: intensity read and discarded.
  const auto xyzi_path = (dir / "cloud_i.bin").string();
  std::ofstream os(xyzi_path, std::ios::binary);
  const float rec[8] = {1.f, 2.f, 3.f, 0.9f, 4.f, 5.f, 6.f, 0.1f};
  os.write(reinterpret_cast<const char*>(rec), sizeof(rec));
  os.close();
  auto xyzi = load_cloud(xyzi_path, CloudLayout::XYZI);
  REQUIRE(xyzi.size() == 2);
  CHECK((xyzi.points[0] - Vec3(1, 2, 3)).norm() == 0.0);
  CHECK((xyzi.points[1] - Vec3(4, 5, 6)).norm() == 0.0);

  // Malformed size reports the byte offset of the partial record.
  const auto bad_path = (dir / "bad.bin").string();
  std::ofstream bs(bad_path, std::ios::binary);
  bs.write(reinterpret_cast<const char*>(rec), 14);
  bs.close();
  CHECK_THROWS_WITH_AS(load_cloud(bad_path, CloudLayout::XYZ),
                       doctest::Contains("byte offset 12"), DataError);
  fs::remove_all(dir);
}

TEST_CASE("pose file round trip and validation") {
  const auto dir = fs::temp_directory_path() / "egonn_pose_test";
  fs::create_directories(dir);
  const auto path = (dir / "poses.txt").string();

  {
    std::ofstream os(path);
    os << "1 0 0 0 0 1 0 0 0 0 1 0\n";
  }
  auto poses = load_poses(path);
  REQUIRE(poses.size() == 1);
  CHECK((poses[0].rotation - Mat3::Identity()).norm() < 1e-12);
  CHECK(poses[0].translation.norm() == 0.0);

  // Garbage line reports its number.
  {
    std::ofstream os(path);
    os << "1 0 0 0 0 1 0 0 0 0 1 0\n";
    os << "not a pose line\n";
  }
  CHECK_THROWS_WITH_AS(load_poses(path), doctest::Contains("line 2"), DataError);

  // Non-orthonormal beyond 1e-3 is rejected.
  {
    std::ofstream os(path);
    os << "1 0.5 0 1 0 1 0 2 0 0 1 3\n";
  }
  CHECK_THROWS_AS(load_poses(path), DataError);

  // Round trip through save_poses.
  Rng rng(9);
  std::vector<geom::PoseSE3> orig;
  for (int i = 0; i < 10; ++i) {
    geom::PoseSE3 T;
    T.rotation = geom::random_rotation(rng);
    T.translation = Vec3::Random() * 20.0;
    orig.push_back(T);
  }
  save_poses(orig, path);
  auto back = load_poses(path);
  REQUIRE(back.size() == orig.size());
  for (size_t i = 0; i < orig.size(); ++i) {
    CHECK((back[i].rotation - orig[i].rotation).norm() < 1e-9);
    CHECK((back[i].translation - orig[i].translation).norm() < 1e-9);
  }
  fs::remove_all(dir);
}

TEST_CASE("traversal manifest round trip") {
  const auto dir = (fs::temp_directory_path() / "egonn_traversal_test").string();
  WorldSpec ws;
  ws.seed = 3;
  auto world = generate_world(ws);
  TrajectorySpec traj;
  traj.num_poses = 4;
  ScanSpec scan;
  scan.rings = 4;
  scan.azimuth_res_deg = 6.0;
  auto t = generate_traversal(world, traj, scan, 11);

  save_traversal(t, dir);
  auto loaded = load_traversal((fs::path(dir) / "manifest.csv").string());
  REQUIRE(loaded.size() == t.size());
  for (size_t i = 0; i < t.size(); ++i) {
    CHECK(loaded[i].cloud.size() == t[i].cloud.size());
    CHECK((loaded[i].pose.translation - t[i].pose.translation).norm() < 1e-9);
    CHECK((loaded[i].pose.rotation - t[i].pose.rotation).norm() < 1e-9);
  }
  fs::remove_all(dir);
}

TEST_CASE("sample_pairs thresholds and oracle") {
  Traversal tr;
  for (int i = 0; i < 3; ++i) {
    Scan s;
    s.pose.translation = Vec3(i == 0 ? 0.0 : (i == 1 ? 1.0 : 12.0), 0, 0);
    tr.push_back(s);
  }
  auto pools = sample_pairs({tr}, 2.0, 10.0);
  REQUIRE(pools.positives.size() == 1);
  CHECK(pools.positives[0] == std::make_pair(0, 1));

  // Exhaustive distance-matrix check on a larger random set.
  Rng rng(13);
  std::uniform_real_distribution<double> u(0.0, 40.0);
  Traversal big;
  for (int i = 0; i < 50; ++i) {
    Scan s;
    s.pose.translation = Vec3(u(rng), u(rng), 0.0);
    big.push_back(s);
  }
  auto big_pools = sample_pairs({big}, 2.0, 10.0);
  std::set<std::pair<int, int>> expected;
  for (int i = 0; i < 50; ++i)
    for (int j = i + 1; j < 50; ++j)
      if ((big[static_cast<size_t>(i)].pose.translation -
           big[static_cast<size_t>(j)].pose.translation)
              .norm() <= 2.0)
        expected.insert({i, j});
  CHECK(std::set<std::pair<int, int>>(big_pools.positives.begin(), big_pools.positives.end()) ==
        expected);

  // No positives at all is an error.
  Traversal sparse;
  for (int i = 0; i < 3; ++i) {
    Scan s;
    s.pose.translation = Vec3(i * 100.0, 0, 0);
    sparse.push_back(s);
  }
  CHECK_THROWS_AS(sample_pairs({sparse}, 2.0, 10.0), DataError);
}
