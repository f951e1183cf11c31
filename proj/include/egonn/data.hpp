#pragma once

#include <string>
#include <vector>

#include "egonn/geometry.hpp"

namespace egonn::data {

/// Synthetic outdoor world: vertical poles (trunk-like), axis-aligned boxes
/// (building-like) and small scatter posts, placed uniformly inside a square
/// extent centered on the origin. Ground points are never generated.
struct WorldSpec {
  double extent = 120.0;  // side length, meters
  int num_poles = 90;
  double pole_radius_min = 0.12, pole_radius_max = 0.5;
  double pole_height_min = 2.0, pole_height_max = 8.0;
  int num_boxes = 25;
  double box_side_min = 2.0, box_side_max = 12.0;
  double box_height_min = 2.5, box_height_max = 9.0;
  int num_scatter = 80;  // small posts, radius ~0.06 m, height ~0.8 m
  uint64_t seed = 0;
};

struct World {
  struct Pole {
    double cx, cy, radius, height;
  };
  struct Box {
    Vec3 lo, hi;
  };
  double extent = 0.0;
  std::vector<Pole> poles;
  std::vector<Box> boxes;
};

/// Rotating-scanner model: rings evenly spaced in elevation, azimuth steps
/// around the full circle, nearest surface hit within max_range, Gaussian
/// range noise in the sensor frame. Scan size is bounded by rings * azimuth
/// bins.
struct ScanSpec {
  double max_range = 80.0;
  double azimuth_res_deg = 1.0;
  int rings = 32;
  double elevation_min_deg = -22.0;
  double elevation_max_deg = 8.0;
  double noise_sigma = 0.02;
};

/// Closed-loop trajectory around the world center at `radius`, with a small
/// sinusoidal wobble; heading follows the tangent.
struct TrajectorySpec {
  int num_poses = 200;
  double radius = 38.0;
  double wobble = 3.0;
  double sensor_z = 1.6;
};

/// Per-index pose perturbation bounds for a second traversal over the same
/// path (query-vs-database evaluation).
struct Perturbation {
  double max_xy = 1.0;
  double max_yaw_deg = 10.0;
};

struct Scan {
  geom::PointCloud cloud;  // sensor frame
  geom::PoseSE3 pose;      // sensor-to-world
  double timestamp = 0.0;
};
using Traversal = std::vector<Scan>;

World generate_world(const WorldSpec& spec);

/// Scans the world from each trajectory pose. Throws DataError if the
/// trajectory leaves the world extent. Deterministic under the seed.
Traversal generate_traversal(const World& world, const TrajectorySpec& traj,
                             const ScanSpec& scan, uint64_t seed,
                             const Perturbation* perturb = nullptr);

/// Single scan from an arbitrary pose (used by tests and paired-scene
/// construction).
geom::PointCloud scan_world(const World& world, const geom::PoseSE3& pose, const ScanSpec& spec,
                            Rng& rng);

enum class CloudLayout { XYZ, XYZI };

/// Raw little-endian f32 records; intensity (XYZI) is read and discarded.
/// A size not divisible by the record size is rejected with the offset of
/// the partial record.
geom::PointCloud load_cloud(const std::string& path, CloudLayout layout);
void save_cloud(const geom::PointCloud& cloud, const std::string& path);

/// Text pose files, one 3x4 row-major matrix (12 reals) per line. Rotations
/// within 1e-3 of orthonormal are re-orthonormalized; worse ones are
/// rejected with their line number.
std::vector<geom::PoseSE3> load_poses(const std::string& path);
void save_poses(const std::vector<geom::PoseSE3>& poses, const std::string& path);

/// Traversal manifest CSV: index, cloud_path, timestamp, then the 12 pose
/// values (row-major 3x4). Clouds are written next to the manifest.
void save_traversal(const Traversal& traversal, const std::string& dir,
                    const std::string& manifest_name = "manifest.csv");
Traversal load_traversal(const std::string& manifest_path);

/// Positive training pairs (center distance <= positive_dist) over the
/// concatenation of all traversals. Throws DataError when no positive pair
/// exists. Negatives are derived from poses at mining time.
struct PairPools {
  std::vector<std::pair<int, int>> positives;  // indices into the concatenation
};
PairPools sample_pairs(const std::vector<Traversal>& traversals, double positive_dist,
                       double negative_dist);

}  // namespace egonn::data
