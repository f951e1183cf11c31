#include <doctest.h>

#include <cmath>
#include <set>

#include "egonn/geometry.hpp"

using namespace egonn;
using namespace egonn::geom;

TEST_CASE("cart_to_cyl basic conversions") {
  auto c = cart_to_cyl({3, 4, 2});
  CHECK(c.rho == doctest::Approx(5.0));
  CHECK(c.theta == doctest::Approx(std::atan2(4.0, 3.0)));
  CHECK(c.z == doctest::Approx(2.0));

  c = cart_to_cyl({1, 0, 7});
  CHECK(c.rho == doctest::Approx(1.0));
  CHECK(c.theta == doctest::Approx(0.0));
  CHECK(c.z == doctest::Approx(7.0));

  c = cart_to_cyl({0, 1, 0});
  CHECK(c.rho == doctest::Approx(1.0));
  CHECK(c.theta == doctest::Approx(std::numbers::pi / 2));

  // Degenerate axis point: theta defined as 0.
  c = cart_to_cyl({0, 0, 3});
  CHECK(c.theta == 0.0);
  CHECK(c.rho == 0.0);
}

TEST_CASE("cyl_to_cart basic conversions") {
  Vec3 p = cyl_to_cart({1, 0, 0});
  CHECK((p - Vec3(1, 0, 0)).norm() < 1e-12);
  p = cyl_to_cart({5, std::numbers::pi, 2});
  CHECK((p - Vec3(-5, 0, 2)).norm() < 1e-12);
  p = cyl_to_cart({2, std::numbers::pi / 2, -1});
  CHECK((p - Vec3(0, 2, -1)).norm() < 1e-12);
}

TEST_CASE("cart/cyl round trip") {
  Rng rng(7);
  std::uniform_real_distribution<double> u(-50.0, 50.0);
  for (int i = 0; i < 1000; ++i) {
    Vec3 p(u(rng), u(rng), u(rng));
    if (std::hypot(p.x(), p.y()) < 1e-9) continue;
    const Vec3 q = cyl_to_cart(cart_to_cyl(p));
    CHECK((p - q).norm() < 1e-12 * std::max(1.0, p.norm()));
    const auto c = cart_to_cyl(p);
    CHECK(c.theta >= 0.0);
    CHECK(c.theta < kTwoPi);
  }
}

TEST_CASE("remove_ground") {
  PointCloud cloud;
  cloud.points = {{0, 0, -1.0}, {0, 0, 0.5}};
  auto kept = remove_ground(cloud, -0.9);
  REQUIRE(kept.size() == 1);
  CHECK(kept.points[0].z() == doctest::Approx(0.5));

  auto all = remove_ground(cloud, -std::numeric_limits<double>::infinity());
  CHECK(all.size() == 2);

  auto none = remove_ground(cloud, 10.0);
  CHECK(none.empty());
}

TEST_CASE("quantize indices and dedup") {
  QuantizationSpec q;  // defaults 0.3 m / 1 deg / 0.2 m
  PointCloud cloud;
  cloud.points = {cyl_to_cart({0.65, 0.0, 0.0})};
  auto v = quantize(cloud, q);
  REQUIRE(v.size() == 1);
  CHECK(v[0].i_rho == 2);
  CHECK(v[0].i_theta == 0);
  CHECK(v[0].i_z == 0);

  // Two points in the same voxel collapse.
  cloud.points.push_back(cyl_to_cart({0.66, deg_to_rad(0.5), 0.05}));
  CHECK(quantize(cloud, q).size() == 1);

  // Negative z floors downward.
  PointCloud below;
  below.points = {{1.0, 0.0, -0.1}};
  CHECK(quantize(below, q)[0].i_z == -1);
}

TEST_CASE("quantize order independence") {
  QuantizationSpec q;
  Rng rng(3);
  std::uniform_real_distribution<double> u(-30.0, 30.0);
  PointCloud a;
  for (int i = 0; i < 200; ++i) a.points.push_back({u(rng), u(rng), u(rng)});
  PointCloud b = a;
  std::shuffle(b.points.begin(), b.points.end(), rng);
  b.points.insert(b.points.end(), a.points.begin(), a.points.begin() + 50);  // duplicates
  CHECK(quantize(a, q) == quantize(b, q));
}

TEST_CASE("quantize rotation by whole bins is a cyclic shift") {
  QuantizationSpec q;
  q.theta_step = deg_to_rad(4.0);
  const int bins = q.theta_bins();
  REQUIRE(bins == 90);
  Rng rng(11);
  std::uniform_real_distribution<double> u(-30.0, 30.0);
  PointCloud cloud;
  for (int i = 0; i < 300; ++i) cloud.points.push_back({u(rng), u(rng), u(rng)});

  const int k = 7;
  const auto rotated = rotate_z(cloud, k * q.theta_step);
  const auto va = quantize(cloud, q);
  const auto vb = quantize(rotated, q);
  std::set<std::tuple<int, int, int>> shifted, actual;
  for (const auto& v : va) shifted.insert({v.i_rho, (v.i_theta + k) % bins, v.i_z});
  for (const auto& v : vb) actual.insert({v.i_rho, v.i_theta, v.i_z});
  CHECK(shifted == actual);
}

TEST_CASE("quantization spec validation") {
  QuantizationSpec q;
  q.theta_step = deg_to_rad(7.0);  // 360/7 is not an integer
  CHECK_THROWS_AS(q.validate(), DataError);
  q.theta_step = deg_to_rad(4.0);
  CHECK_NOTHROW(q.validate());
  q.rho_step = 0.0;
  CHECK_THROWS_AS(q.validate(), DataError);
}

TEST_CASE("se3 basics") {
  PointCloud cloud;
  cloud.points = {{1, 0, 0}, {0, 2, -1}};
  auto same = se3_apply(PoseSE3::identity(), cloud);
  CHECK((same.points[0] - cloud.points[0]).norm() == 0.0);

  const auto yaw90 = PoseSE3::from_yaw(std::numbers::pi / 2);
  CHECK((yaw90.apply({1, 0, 0}) - Vec3(0, 1, 0)).norm() < 1e-12);

  Rng rng(5);
  for (int i = 0; i < 50; ++i) {
    PoseSE3 T;
    T.rotation = random_rotation(rng);
    T.translation = Vec3::Random();
    const auto rel = se3_relative(T, T);
    CHECK((rel.rotation - Mat3::Identity()).norm() < 1e-9);
    CHECK(rel.translation.norm() < 1e-9);

    const Vec3 p = Vec3::Random() * 10.0;
    CHECK((se3_inverse(T).apply(T.apply(p)) - p).norm() < 1e-9);
  }
}

TEST_CASE("se3 group laws") {
  Rng rng(17);
  for (int i = 0; i < 30; ++i) {
    PoseSE3 a, b, c;
    for (PoseSE3* t : {&a, &b, &c}) {
      t->rotation = random_rotation(rng);
      t->translation = Vec3::Random() * 5.0;
    }
    const Vec3 p = Vec3::Random() * 3.0;
    const auto ab_c = se3_compose(se3_compose(a, b), c);
    const auto a_bc = se3_compose(a, se3_compose(b, c));
    CHECK((ab_c.apply(p) - a_bc.apply(p)).norm() < 1e-9);
    CHECK(se3_compose(a, se3_inverse(a)).is_valid(1e-9));
    CHECK((se3_compose(a, se3_inverse(a)).translation).norm() < 1e-9);
  }
}

TEST_CASE("augment_global pieces") {
  Rng rng(23);
  PointCloud cloud;
  std::uniform_real_distribution<double> u(-10.0, 10.0);
  for (int i = 0; i < 100; ++i) cloud.points.push_back({u(rng), u(rng), u(rng)});

  GlobalAugment none;
  none.cuboid_side_min = none.cuboid_side_max = 0.0;
  none.jitter_sigma = 0.0;
  none.random_rotation = false;
  Rng r1(9);
  auto out = augment_global(cloud, none, r1);
  REQUIRE(out.size() == cloud.size());
  for (size_t i = 0; i < cloud.size(); ++i)
    CHECK((out.points[i] - cloud.points[i]).norm() == 0.0);

  // Rotation by pi negates x and y.
  auto flipped = rotate_z(cloud, std::numbers::pi);
  for (size_t i = 0; i < cloud.size(); ++i) {
    CHECK(flipped.points[i].x() == doctest::Approx(-cloud.points[i].x()).epsilon(1e-12));
    CHECK(flipped.points[i].y() == doctest::Approx(-cloud.points[i].y()).epsilon(1e-12));
    CHECK(flipped.points[i].z() == doctest::Approx(cloud.points[i].z()));
  }

  // Determinism under a fixed seed.
  GlobalAugment full;
  Rng ra(42), rb(42);
  auto a = augment_global(cloud, full, ra);
  auto b = augment_global(cloud, full, rb);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) CHECK((a.points[i] - b.points[i]).norm() == 0.0);

  // Cuboid removal drops some but not all points for mid-size cuboids.
  Rng rc(4);
  auto cut = remove_random_cuboid(cloud, 8.0, 12.0, rc);
  CHECK(cut.size() < cloud.size());
  CHECK(cut.size() > 0);
}

TEST_CASE("augment_local returns the exact applied transform") {
  Rng rng(31);
  PointCloud cloud;
  std::uniform_real_distribution<double> u(-10.0, 10.0);
  for (int i = 0; i < 50; ++i) cloud.points.push_back({u(rng), u(rng), u(rng)});

  for (int trial = 0; trial < 20; ++trial) {
    auto [aug, T] = augment_local(cloud, 5.0, rng);
    const auto restored = se3_apply(se3_inverse(T), aug);
    for (size_t i = 0; i < cloud.size(); ++i)
      CHECK((restored.points[i] - cloud.points[i]).norm() < 1e-9);
  }

  // Translation stays inside the 5 m disk over many draws.
  double max_norm = 0.0;
  for (int trial = 0; trial < 10000; ++trial) {
    auto [aug, T] = augment_local(cloud, 5.0, rng);
    max_norm = std::max(max_norm, T.translation.norm());
    CHECK(T.translation.z() == 0.0);
  }
  CHECK(max_norm <= 5.0);
  CHECK(max_norm > 4.0);  // the bound is actually approached
}

TEST_CASE("decimate_trajectory") {
  std::vector<PoseSE3> poses(5);
  auto kept = decimate_trajectory(poses, 0.2);
  CHECK(kept == std::vector<int>{0});

  kept = decimate_trajectory(poses, 0.0);
  CHECK(kept.size() == 5);

  std::vector<PoseSE3> line(4);
  line[0].translation = {0.0, 0, 0};
  line[1].translation = {0.1, 0, 0};
  line[2].translation = {0.25, 0, 0};
  line[3].translation = {0.5, 0, 0};
  kept = decimate_trajectory(line, 0.2);
  CHECK(kept == std::vector<int>{0, 2, 3});

  CHECK(decimate_trajectory({}, 0.2).empty());
}
