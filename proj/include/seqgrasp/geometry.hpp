#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <vector>

#include "seqgrasp/rng.hpp"

namespace seqgrasp::geometry {

using Vec3 = Eigen::Vector3d;
using Pose = Eigen::Isometry3d;

struct TriMesh {
  std::vector<Vec3> vertices;  // m
  std::vector<std::array<int, 3>> triangles;
  bool watertight = false;

  bool empty() const { return triangles.empty(); }
  Eigen::AlignedBox3d bounds() const;
};

/// Drops degenerate triangles (repeated index or zero area) with a warning,
/// removes unreferenced vertices, and sets the watertight flag (every edge
/// shared by exactly two consistently oriented triangles).
TriMesh clean_mesh(TriMesh mesh);

/// ASCII OBJ or binary STL, chosen by extension. Throws GeometryError.
TriMesh load_mesh(const std::filesystem::path& path);
void save_obj(const TriMesh& mesh, const std::filesystem::path& path);

TriMesh make_icosphere(double radius, int subdivisions);
TriMesh make_box(const Vec3& half_extents);
TriMesh make_cylinder(double radius, double half_height, int segments);

double mesh_volume(const TriMesh& mesh);
/// Volume centroid for closed meshes with nonzero volume; area-weighted
/// surface centroid otherwise.
Vec3 mesh_centroid(const TriMesh& mesh);
double max_edge_length(const TriMesh& mesh);

TriMesh transformed(const TriMesh& mesh, const Pose& T);

/// Uniform scale so the longest AABB edge equals a draw from U[lo, hi],
/// recentered so the centroid sits at the origin. `applied_scale` receives
/// the factor. Throws GeometryError on zero extent or lo > hi.
TriMesh scale_to_bbox(const TriMesh& mesh, double lo, double hi, Rng& rng,
                      double* applied_scale = nullptr);

/// Recenters at the centroid and applies a uniform scale.
TriMesh recenter_and_scale(const TriMesh& mesh, double scale);

// ---------------------------------------------------------------------------
// Distance queries

struct ClosestPoint {
  double distance = 0.0;
  Vec3 point = Vec3::Zero();
  int triangle = -1;
};

Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

/// Exact minimum over all triangles, no acceleration.
ClosestPoint point_mesh_distance_brute(const Vec3& x, const TriMesh& mesh);

/// AABB tree over triangles for exact closest-point and ray-parity queries.
class MeshBvh {
 public:
  explicit MeshBvh(const TriMesh& mesh);
  ClosestPoint closest(const Vec3& x) const;
  const TriMesh& mesh() const { return *mesh_; }

 private:
  struct Node {
    Eigen::AlignedBox3d box;
    int left = -1, right = -1;
    int begin = 0, end = 0;  // leaf triangle range in order_
  };
  int build(int begin, int end);
  const TriMesh* mesh_;
  std::vector<Node> nodes_;
  std::vector<int> order_;
  std::vector<Eigen::AlignedBox3d> tri_boxes_;
  std::vector<Vec3> tri_centers_;
};

/// Accelerated exact unsigned distance and closest point.
ClosestPoint point_mesh_distance(const Vec3& x, const TriMesh& mesh);

/// Generalized winding number (≈1 inside a closed mesh, ≈0 outside).
double winding_number(const Vec3& x, const TriMesh& mesh);

// ---------------------------------------------------------------------------
// Signed distance grid

struct SdfSample {
  double value = 0.0;  // m, negative inside
  Vec3 gradient = Vec3::Zero();
};

/// Axis-aligned node grid of signed distances stored as 32-bit floats.
/// Queries use trilinear interpolation inside the grid; outside, the value is
/// taken at the clamped point plus the distance to it, so it keeps growing.
class SdfGrid {
 public:
  SdfGrid() = default;
  SdfGrid(Vec3 origin, double cell, std::array<int, 3> dims, std::vector<float> values);

  SdfSample query(const Vec3& x) const;
  double value(const Vec3& x) const { return query(x).value; }

  const Vec3& origin() const { return origin_; }
  double cell_size() const { return cell_; }
  const std::array<int, 3>& dims() const { return dims_; }
  const std::vector<float>& values() const { return values_; }
  float node(int i, int j, int k) const {
    return values_[(static_cast<std::size_t>(k) * dims_[1] + j) * dims_[0] + i];
  }
  Vec3 node_position(int i, int j, int k) const {
    return origin_ + cell_ * Vec3(i, j, k);
  }
  Eigen::AlignedBox3d bounds() const;
  /// Same field for the mesh scaled by s about the origin.
  SdfGrid scaled(double s) const;

  std::uint64_t source_hash = 0;

 private:
  Vec3 origin_ = Vec3::Zero();
  double cell_ = 1.0;
  std::array<int, 3> dims_{0, 0, 0};
  std::vector<float> values_;
};

struct SdfOptions {
  int resolution = 64;          // nodes per axis along the longest extent
  double margin_fraction = 0.25;  // padding around the bbox, fraction of max extent
};

/// Signed distance grid. Watertight meshes take their sign from x-ray parity
/// (one sorted intersection list per grid row); others fall back to the
/// generalized winding number, with a warning.
SdfGrid build_sdf(const TriMesh& mesh, const SdfOptions& options = {});

SdfSample sdf_query(const SdfGrid& grid, const Vec3& x);

/// Binary cache: magic "SQSDF001", u32 version, u32 dims[3], f64 origin[3],
/// f64 cell, u64 source hash, then float32 little-endian values (x fastest).
void save_sdf(const SdfGrid& grid, const std::filesystem::path& path);
SdfGrid load_sdf(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Convex hull

struct ConvexHull {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> faces;  // outward CCW
  Vec3 centroid = Vec3::Zero();
  /// Angle-weighted vertex normals.
  std::vector<Vec3> vertex_normals;
};

/// Incremental 3D hull. Throws GeometryError for coplanar or degenerate input.
ConvexHull convex_hull(const std::vector<Vec3>& points);

struct HullSample {
  Vec3 position;
  Vec3 inward;  // unit, toward the hull centroid
};

/// Area-uniform sample on the hull inflated by `offset` along vertex normals.
HullSample expanded_hull_sample(const ConvexHull& hull, double offset, Rng& rng);
HullSample expanded_hull_sample(const TriMesh& mesh, double offset, Rng& rng);

// ---------------------------------------------------------------------------
// Point sets

using PointCloud = Eigen::Matrix3Xd;

/// Area-uniform random surface samples.
PointCloud sample_surface(const TriMesh& mesh, std::size_t n, Rng& rng);

/// Farthest point sampling from a dense area-uniform pre-sample
/// (max(10000, 8n) points). The first pick is drawn from `rng`.
PointCloud fps_sample(const TriMesh& mesh, std::size_t n, Rng& rng);
/// FPS over an explicit candidate set.
PointCloud fps_select(const PointCloud& candidates, std::size_t n, Rng& rng);

/// Small static kd-tree for exact nearest-neighbour distances.
class KdTree {
 public:
  explicit KdTree(const PointCloud& points);
  /// Squared distance to the nearest stored point.
  double nearest_sq(const Vec3& q) const;

 private:
  struct Node {
    int point = -1;
    int axis = 0;
    int left = -1, right = -1;
  };
  int build(std::vector<int>& idx, int begin, int end, int depth);
  void search(int node, const Vec3& q, double& best) const;
  PointCloud points_;
  std::vector<Node> nodes_;
};

struct BpsBasis {
  PointCloud points;  // 3 × B
  double radius = 0.15;
  std::uint64_t seed = 0;
};

/// B points uniform in a ball of `radius`, from a fixed seed.
BpsBasis make_bps_basis(std::size_t count = 512, double radius = 0.15,
                        std::uint64_t seed = 0x5E9B95ULL);

/// feature[b] = distance from basis point b to the nearest cloud point.
Eigen::VectorXd bps_encode(const PointCloud& cloud, const BpsBasis& basis);
Eigen::VectorXd bps_encode_brute(const PointCloud& cloud, const BpsBasis& basis);

struct Penetration {
  std::vector<int> indices;
  std::vector<double> depths;  // m, positive
};

/// Points with negative signed distance, with depth = −value.
Penetration penetration_set(const PointCloud& points, const SdfGrid& sdf);
/// Exact variant: winding-number inside test, depth from the BVH distance.
Penetration penetration_set(const PointCloud& points, const TriMesh& mesh);

}  // namespace seqgrasp::geometry
