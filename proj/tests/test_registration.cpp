#include <doctest.h>

#include "egonn/registration.hpp"

using namespace egonn;
using namespace egonn::reg;

namespace {

std::vector<Vec3> random_points(int n, double extent, Rng& rng) {
  std::uniform_real_distribution<double> u(-extent, extent);
  std::vector<Vec3> out;
  for (int i = 0; i < n; ++i) out.push_back({u(rng), u(rng), u(rng)});
  return out;
}

}  // namespace

TEST_CASE("PointGrid matches brute force") {
  Rng rng(3);
  for (double cell : {0.5, 2.0, 10.0}) {
    auto pts = random_points(400, 30.0, rng);
    // Add a tight cluster to stress ring expansion.
    for (int i = 0; i < 50; ++i) pts.push_back(Vec3(5, 5, 5) + Vec3::Random() * 0.1);
    PointGrid grid(pts, cell);
    for (int t = 0; t < 200; ++t) {
      Vec3 q = Vec3::Random() * 40.0;
      auto hit = grid.nearest(q);
      int want = -1;
      double wd = 1e300;
      for (size_t i = 0; i < pts.size(); ++i) {
        const double d = (pts[i] - q).norm();
        if (d < wd) {
          wd = d;
          want = static_cast<int>(i);
        }
      }
      CHECK(hit.index == want);
      CHECK(hit.distance == doctest::Approx(wd));
    }
  }
}

TEST_CASE("match_descriptors") {
  Mat eye = Mat::Identity(4, 4);
  auto matches = match_descriptors(eye, eye, false);
  REQUIRE(matches.size() == 4);
  for (const auto& m : matches) {
    CHECK(m.a == m.b);
    CHECK(m.score == doctest::Approx(1.0));
  }

  // Non-reciprocal best pairs are dropped in mutual mode.
  Mat da(2, 2), db(2, 2);
  da << 1, 0, 0.9, 0.1;
  db << 1, 0, 0.8, 0.6;
  da.rowwise().normalize();
  db.rowwise().normalize();
  auto all = match_descriptors(da, db, false);
  auto mutual = match_descriptors(da, db, true);
  CHECK(mutual.size() <= all.size());

  // Random matrices against exhaustive argmax.
  Rng rng(5);
  Mat ra = Mat::Random(50, 128), rb = Mat::Random(60, 128);
  ra.rowwise().normalize();
  rb.rowwise().normalize();
  auto out = match_descriptors(ra, rb, false);
  REQUIRE(out.size() == 50);
  const Mat sims = ra * rb.transpose();
  for (const auto& m : out) {
    Eigen::Index j;
    sims.row(m.a).maxCoeff(&j);
    CHECK(m.b == static_cast<int>(j));
  }
}

TEST_CASE("kabsch recovers exact transforms") {
  Rng rng(7);
  auto a = random_points(10, 5.0, rng);

  auto id = kabsch(a, a);
  REQUIRE(id.has_value());
  CHECK((id->rotation - Mat3::Identity()).norm() < 1e-10);
  CHECK(id->translation.norm() < 1e-10);

  const auto T = geom::PoseSE3::from_yaw(deg_to_rad(30.0), {2.0, 1.0, 0.0});
  std::vector<Vec3> b;
  for (const auto& p : a) b.push_back(T.apply(p));
  auto rec = kabsch(a, b);
  REQUIRE(rec.has_value());
  CHECK((rec->rotation - T.rotation).norm() < 1e-9);
  CHECK((rec->translation - T.translation).norm() < 1e-9);

  // Noisy correspondences: residual RMS stays within 3 sigma.
  const double sigma = 0.01;
  std::normal_distribution<double> noise(0.0, sigma);
  std::vector<Vec3> nb;
  for (const auto& p : a) nb.push_back(T.apply(p) + Vec3(noise(rng), noise(rng), noise(rng)));
  auto fit = kabsch(a, nb);
  REQUIRE(fit.has_value());
  double rms = 0.0;
  for (size_t i = 0; i < a.size(); ++i) rms += (fit->apply(a[i]) - nb[i]).squaredNorm();
  rms = std::sqrt(rms / static_cast<double>(a.size()));
  CHECK(rms <= 3.0 * sigma * std::sqrt(3.0));

  // Collinear points are rejected.
  std::vector<Vec3> line = {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {3, 0, 0}};
  CHECK_FALSE(kabsch(line, line).has_value());
}

TEST_CASE("ransac on outlier-free matches") {
  Rng rng(9);
  auto pts = random_points(40, 20.0, rng);
  const auto T = geom::PoseSE3::from_yaw(deg_to_rad(45.0), {1.0, -3.0, 0.5});
  Mat qa(40, 3), qb(40, 3);
  MatchSet matches;
  for (int i = 0; i < 40; ++i) {
    qa.row(i) = pts[static_cast<size_t>(i)].transpose();
    qb.row(i) = T.apply(pts[static_cast<size_t>(i)]).transpose();
    matches.push_back({i, i, 1.0});
  }
  RansacConfig cfg;
  auto result = ransac_register(matches, qa, qb, cfg);
  REQUIRE(result.success);
  CHECK(result.inliers.size() == 40);
  const auto err = pose_errors(result.pose, T);
  CHECK(err.rte < 1e-6);
  CHECK(err.rre < 1e-4);
}

TEST_CASE("ransac under 40% outliers recovers the transform across seeds") {
  Rng rng(11);
  const auto T = geom::PoseSE3::from_yaw(deg_to_rad(30.0), {2.0, 1.0, 0.0});
  int good = 0;
  const int trials = 50;
  for (int trial = 0; trial < trials; ++trial) {
    auto pts = random_points(60, 25.0, rng);
    Mat qa(100, 3), qb(100, 3);
    MatchSet matches;
    for (int i = 0; i < 60; ++i) {
      qa.row(i) = pts[static_cast<size_t>(i)].transpose();
      qb.row(i) = T.apply(pts[static_cast<size_t>(i)]).transpose();
      matches.push_back({i, i, 1.0});
    }
    std::uniform_real_distribution<double> u(-25.0, 25.0);
    for (int i = 60; i < 100; ++i) {  // 40 wrong correspondences
      qa.row(i) << u(rng), u(rng), u(rng);
      qb.row(i) << u(rng), u(rng), u(rng);
      matches.push_back({i, i, 1.0});
    }
    RansacConfig cfg;
    cfg.seed = static_cast<uint64_t>(trial);
    auto result = ransac_register(matches, qa, qb, cfg);
    if (!result.success) continue;
    const auto err = pose_errors(result.pose, T);
    if (err.rte < 0.02 && err.rre < 0.1) ++good;
  }
  CHECK(good >= static_cast<int>(0.99 * trials));
}

TEST_CASE("ransac failure paths") {
  Mat qa = Mat::Random(2, 3), qb = Mat::Random(2, 3);
  MatchSet two = {{0, 0, 1.0}, {1, 1, 1.0}};
  auto r = ransac_register(two, qa, qb, RansacConfig{});
  CHECK_FALSE(r.success);

  // Determinism: same seed, same input -> identical pose bits.
  Rng rng(13);
  auto pts = random_points(30, 10.0, rng);
  const auto T = geom::PoseSE3::from_yaw(0.4, {1, 2, 0});
  Mat a(30, 3), b(30, 3);
  MatchSet m;
  for (int i = 0; i < 30; ++i) {
    a.row(i) = pts[static_cast<size_t>(i)].transpose();
    b.row(i) = T.apply(pts[static_cast<size_t>(i)]).transpose();
    m.push_back({i, i, 1.0});
  }
  RansacConfig cfg;
  cfg.seed = 99;
  auto r1 = ransac_register(m, a, b, cfg);
  auto r2 = ransac_register(m, a, b, cfg);
  CHECK((r1.pose.rotation - r2.pose.rotation).norm() == 0.0);
  CHECK((r1.pose.translation - r2.pose.translation).norm() == 0.0);
}

TEST_CASE("icp converges from small perturbations") {
  Rng rng(15);
  geom::PointCloud target;
  target.points = random_points(600, 15.0, rng);
  const auto T = geom::PoseSE3::from_yaw(deg_to_rad(5.0), {0.5, 0.0, 0.0});
  geom::PointCloud source;
  // source points expressed so that T maps source onto target
  const auto inv = geom::se3_inverse(T);
  for (const auto& p : target.points) source.points.push_back(inv.apply(p));

  // Starting at the ground truth stays put.
  auto stay = icp_p2p(source, target, T, 30, 1e-9);
  CHECK(pose_errors(stay, T).rte < 1e-9);

  // Identity start with a 5 deg / 0.5 m offset recovers.
  auto rec = icp_p2p(source, target, geom::PoseSE3::identity(), 50, 1e-9);
  const auto err = pose_errors(rec, T);
  CHECK(err.rte < 0.05);
  CHECK(err.rre < 0.5);
}

TEST_CASE("pose_errors") {
  const auto T = geom::PoseSE3::from_yaw(0.7, {1, 2, 3});
  auto e = pose_errors(T, T);
  CHECK(e.rte == doctest::Approx(0.0));
  CHECK(e.rre == doctest::Approx(0.0));
  CHECK(e.success);

  const auto yaw30 = geom::PoseSE3::from_yaw(deg_to_rad(30.0));
  e = pose_errors(geom::se3_compose(T, yaw30), T);
  CHECK(e.rre == doctest::Approx(30.0));
  CHECK_FALSE(e.success);

  geom::PoseSE3 shifted = T;
  shifted.translation += Vec3(1, 1, 0);
  e = pose_errors(shifted, T);
  CHECK(e.rte == doctest::Approx(std::sqrt(2.0)));
  CHECK(e.rre == doctest::Approx(0.0));
  CHECK(e.success);

  // rre is symmetric in its arguments.
  Rng rng(17);
  for (int i = 0; i < 20; ++i) {
    geom::PoseSE3 a, b;
    a.rotation = geom::random_rotation(rng);
    b.rotation = geom::random_rotation(rng);
    a.translation = Vec3::Random() * 5.0;
    b.translation = Vec3::Random() * 5.0;
    CHECK(pose_errors(a, b).rre == doctest::Approx(pose_errors(b, a).rre));
  }
}
