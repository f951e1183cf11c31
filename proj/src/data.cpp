#include "egonn/data.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace egonn::data {

namespace fs = std::filesystem;

World generate_world(const WorldSpec& spec) {
  if (spec.extent <= 0) throw DataError("world extent must be positive");
  World w;
  w.extent = spec.extent;
  Rng rng(mix_seed(spec.seed, 0x77d));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double half = spec.extent / 2.0;
  auto coord = [&]() { return (u(rng) * 2.0 - 1.0) * half; };

  for (int i = 0; i < spec.num_poles; ++i) {
    World::Pole p;
    p.cx = coord();
    p.cy = coord();
    p.radius = spec.pole_radius_min + u(rng) * (spec.pole_radius_max - spec.pole_radius_min);
    p.height = spec.pole_height_min + u(rng) * (spec.pole_height_max - spec.pole_height_min);
    w.poles.push_back(p);
  }
  for (int i = 0; i < spec.num_boxes; ++i) {
    World::Box b;
    const double cx = coord(), cy = coord();
    const double sx = spec.box_side_min + u(rng) * (spec.box_side_max - spec.box_side_min);
    const double sy = spec.box_side_min + u(rng) * (spec.box_side_max - spec.box_side_min);
    const double h = spec.box_height_min + u(rng) * (spec.box_height_max - spec.box_height_min);
    b.lo = {cx - sx / 2.0, cy - sy / 2.0, 0.0};
    b.hi = {cx + sx / 2.0, cy + sy / 2.0, h};
    w.boxes.push_back(b);
  }
  for (int i = 0; i < spec.num_scatter; ++i) {
    World::Pole p;
    p.cx = coord();
    p.cy = coord();
    p.radius = 0.04 + u(rng) * 0.05;
    p.height = 0.4 + u(rng) * 0.8;
    w.poles.push_back(p);
  }
  return w;
}

namespace {

/// Nearest ray hit against a vertical cylinder spanning z in [0, height].
double ray_pole(const Vec3& origin, const Vec3& dir, const World::Pole& p, double max_t) {
  const double ox = origin.x() - p.cx, oy = origin.y() - p.cy;
  const double a = dir.x() * dir.x() + dir.y() * dir.y();
  if (a < 1e-12) return -1.0;
  const double b = 2.0 * (ox * dir.x() + oy * dir.y());
  const double c = ox * ox + oy * oy - p.radius * p.radius;
  const double disc = b * b - 4.0 * a * c;
  if (disc < 0) return -1.0;
  const double sq = std::sqrt(disc);
  for (double t : {(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)}) {
    if (t <= 1e-6 || t > max_t) continue;
    const double z = origin.z() + t * dir.z();
    if (z >= 0.0 && z <= p.height) return t;
  }
  return -1.0;
}

double ray_box(const Vec3& origin, const Vec3& dir, const World::Box& box, double max_t) {
  double t_enter = 0.0, t_exit = max_t;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(dir(a)) < 1e-12) {
      if (origin(a) < box.lo(a) || origin(a) > box.hi(a)) return -1.0;
      continue;
    }
    double t0 = (box.lo(a) - origin(a)) / dir(a);
    double t1 = (box.hi(a) - origin(a)) / dir(a);
    if (t0 > t1) std::swap(t0, t1);
    t_enter = std::max(t_enter, t0);
    t_exit = std::min(t_exit, t1);
    if (t_enter > t_exit) return -1.0;
  }
  return t_enter > 1e-6 ? t_enter : -1.0;
}

}  // namespace

geom::PointCloud scan_world(const World& world, const geom::PoseSE3& pose, const ScanSpec& spec,
                            Rng& rng) {
  geom::PointCloud cloud;
  const int az_bins = static_cast<int>(std::llround(360.0 / spec.azimuth_res_deg));
  std::normal_distribution<double> noise(0.0, spec.noise_sigma);
  const geom::PoseSE3 world_to_sensor = geom::se3_inverse(pose);
  for (int ring = 0; ring < spec.rings; ++ring) {
    const double frac = spec.rings > 1 ? static_cast<double>(ring) / (spec.rings - 1) : 0.5;
    const double elev =
        deg_to_rad(spec.elevation_min_deg + frac * (spec.elevation_max_deg - spec.elevation_min_deg));
    for (int az = 0; az < az_bins; ++az) {
      const double azimuth = az * deg_to_rad(spec.azimuth_res_deg);
      const Vec3 dir_sensor(std::cos(elev) * std::cos(azimuth), std::cos(elev) * std::sin(azimuth),
                            std::sin(elev));
      const Vec3 dir = pose.rotation * dir_sensor;
      double best = spec.max_range + 1.0;
      for (const auto& p : world.poles) {
        const double t = ray_pole(pose.translation, dir, p, spec.max_range);
        if (t > 0 && t < best) best = t;
      }
      for (const auto& b : world.boxes) {
        const double t = ray_box(pose.translation, dir, b, spec.max_range);
        if (t > 0 && t < best) best = t;
      }
      if (best > spec.max_range) continue;
      Vec3 p_world = pose.translation + best * dir;
      Vec3 p_sensor = world_to_sensor.apply(p_world);
      if (spec.noise_sigma > 0)
        p_sensor += Vec3(noise(rng), noise(rng), noise(rng));
      cloud.points.push_back(p_sensor);
    }
  }
  return cloud;
}

Traversal generate_traversal(const World& world, const TrajectorySpec& traj, const ScanSpec& scan,
                             uint64_t seed, const Perturbation* perturb) {
  Traversal out;
  Rng path_rng(mix_seed(seed, 0xa11));
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < traj.num_poses; ++i) {
    const double s = static_cast<double>(i) / traj.num_poses * kTwoPi;
    const double r = traj.radius + traj.wobble * std::sin(3.0 * s);
    Vec3 t(r * std::cos(s), r * std::sin(s), traj.sensor_z);
    double yaw = s + std::numbers::pi / 2.0;  // tangent heading
    if (perturb != nullptr) {
      t.x() += u(path_rng) * perturb->max_xy;
      t.y() += u(path_rng) * perturb->max_xy;
      yaw += u(path_rng) * deg_to_rad(perturb->max_yaw_deg);
    }
    if (std::abs(t.x()) > world.extent / 2.0 || std::abs(t.y()) > world.extent / 2.0)
      throw DataError("trajectory outside world extent");
    Scan sc;
    sc.pose = geom::PoseSE3::from_yaw(yaw, t);
    Rng scan_rng(mix_seed(seed, 0x5ca2, static_cast<uint64_t>(i)));
    sc.cloud = scan_world(world, sc.pose, scan, scan_rng);
    sc.timestamp = static_cast<double>(i) * 0.1;
    out.push_back(std::move(sc));
  }
  return out;
}

geom::PointCloud load_cloud(const std::string& path, CloudLayout layout) {
  std::ifstream is(path, std::ios::binary | std::ios::ate);
  if (!is) throw DataError("cannot open cloud file: " + path);
  const auto size = static_cast<uint64_t>(is.tellg());
  const uint64_t record = layout == CloudLayout::XYZ ? 12 : 16;
  if (size % record != 0)
    throw DataError("malformed cloud file " + path + ": partial record at byte offset " +
                    std::to_string(size - size % record));
  is.seekg(0);
  const uint64_t n = size / record;
  geom::PointCloud cloud;
  cloud.points.reserve(n);
  std::vector<float> buf(record / 4);
  for (uint64_t i = 0; i < n; ++i) {
    is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(record));
    if (!is) throw DataError("cloud read failed: " + path);
    cloud.points.emplace_back(buf[0], buf[1], buf[2]);
  }
  return cloud;
}

void save_cloud(const geom::PointCloud& cloud, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open cloud file for writing: " + path);
  for (const auto& p : cloud.points) {
    const float xyz[3] = {static_cast<float>(p.x()), static_cast<float>(p.y()),
                          static_cast<float>(p.z())};
    os.write(reinterpret_cast<const char*>(xyz), 12);
  }
  if (!os) throw DataError("cloud write failed: " + path);
}

std::vector<geom::PoseSE3> load_poses(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open pose file: " + path);
  std::vector<geom::PoseSE3> poses;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    double v[12];
    for (int i = 0; i < 12; ++i) {
      if (!(ls >> v[i]))
        throw DataError("pose file " + path + ": malformed line " + std::to_string(line_no));
    }
    geom::PoseSE3 T;
    T.rotation << v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10];
    T.translation << v[3], v[7], v[11];
    if (!T.rotation.allFinite())
      throw DataError("pose file " + path + ": non-finite line " + std::to_string(line_no));
    const double ortho = (T.rotation.transpose() * T.rotation - Mat3::Identity()).norm();
    if (ortho > 1e-3 || T.rotation.determinant() < 0)
      throw DataError("pose file " + path + ": non-orthonormal rotation at line " +
                      std::to_string(line_no));
    T.orthonormalize();
    poses.push_back(T);
  }
  return poses;
}

void save_poses(const std::vector<geom::PoseSE3>& poses, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open pose file for writing: " + path);
  for (const auto& T : poses) {
    char buf[64];
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) {
        std::snprintf(buf, sizeof(buf), "%.17g ", T.rotation(r, c));
        os << buf;
      }
      std::snprintf(buf, sizeof(buf), "%.17g", T.translation(r));
      os << buf << (r < 2 ? " " : "");
    }
    os << "\n";
  }
}

void save_traversal(const Traversal& traversal, const std::string& dir,
                    const std::string& manifest_name) {
  fs::create_directories(dir);
  std::ofstream os(fs::path(dir) / manifest_name);
  if (!os) throw DataError("cannot write manifest in " + dir);
  os << "index,cloud_path,timestamp,r00,r01,r02,tx,r10,r11,r12,ty,r20,r21,r22,tz\n";
  char buf[64];
  for (size_t i = 0; i < traversal.size(); ++i) {
    const auto& sc = traversal[i];
    const std::string cloud_name = "cloud_" + std::to_string(i) + ".bin";
    save_cloud(sc.cloud, (fs::path(dir) / cloud_name).string());
    os << i << "," << cloud_name << ",";
    std::snprintf(buf, sizeof(buf), "%.6f", sc.timestamp);
    os << buf;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) {
        std::snprintf(buf, sizeof(buf), ",%.17g", sc.pose.rotation(r, c));
        os << buf;
      }
      std::snprintf(buf, sizeof(buf), ",%.17g", sc.pose.translation(r));
      os << buf;
    }
    os << "\n";
  }
}

Traversal load_traversal(const std::string& manifest_path) {
  std::ifstream is(manifest_path);
  if (!is) throw DataError("cannot open manifest: " + manifest_path);
  const fs::path dir = fs::path(manifest_path).parent_path();
  Traversal out;
  std::string line;
  std::getline(is, line);  // header
  int line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != 15)
      throw DataError("manifest " + manifest_path + ": malformed line " +
                      std::to_string(line_no));
    Scan sc;
    sc.timestamp = std::stod(cells[2]);
    double v[12];
    for (int i = 0; i < 12; ++i) v[i] = std::stod(cells[static_cast<size_t>(3 + i)]);
    sc.pose.rotation << v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10];
    sc.pose.translation << v[3], v[7], v[11];
    sc.pose.orthonormalize();
    sc.cloud = load_cloud((dir / cells[1]).string(), CloudLayout::XYZ);
    out.push_back(std::move(sc));
  }
  return out;
}

PairPools sample_pairs(const std::vector<Traversal>& traversals, double positive_dist,
                       double negative_dist) {
  if (positive_dist >= negative_dist)
    throw DataError("positive_dist must be below negative_dist");
  std::vector<Vec3> centers;
  for (const auto& tr : traversals)
    for (const auto& sc : tr) centers.push_back(sc.pose.translation);
  PairPools pools;
  const int n = static_cast<int>(centers.size());
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if ((centers[static_cast<size_t>(i)] - centers[static_cast<size_t>(j)]).norm() <=
          positive_dist)
        pools.positives.emplace_back(i, j);
  if (pools.positives.empty()) throw DataError("no positive pairs in dataset");
  return pools;
}

}  // namespace egonn::data
