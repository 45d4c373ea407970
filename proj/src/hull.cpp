#include <algorithm>
#include <cmath>
#include <set>
#include <utility>

#include "seqgrasp/error.hpp"
#include "seqgrasp/geometry.hpp"

namespace seqgrasp::geometry {

namespace {

struct Face {
  std::array<int, 3> v;
  Vec3 normal;
  double offset;  // normal · x = offset on the plane
  bool alive = true;
};

Face make_face(const std::vector<Vec3>& pts, int a, int b, int c) {
  Face f;
  f.v = {a, b, c};
  f.normal = (pts[b] - pts[a]).cross(pts[c] - pts[a]);
  const double n = f.normal.norm();
  f.normal = n > 0 ? Vec3(f.normal / n) : Vec3::Zero();
  f.offset = f.normal.dot(pts[a]);
  return f;
}

}  // namespace

ConvexHull convex_hull(const std::vector<Vec3>& points) {
  if (points.size() < 4) throw GeometryError("convex hull needs at least 4 points");
  Eigen::AlignedBox3d box;
  for (const auto& p : points) box.extend(p);
  const double scale = box.sizes().maxCoeff();
  if (!(scale > 0)) throw GeometryError("convex hull: all points coincide");
  const double eps = 1e-10 * scale;

  // Initial tetrahedron from extreme points.
  int i0 = 0, i1 = 0;
  for (int i = 1; i < static_cast<int>(points.size()); ++i) {
    if (points[i].x() < points[i0].x()) i0 = i;
    if (points[i].x() > points[i1].x()) i1 = i;
  }
  if ((points[i1] - points[i0]).norm() <= eps) {
    double best = -1;
    for (int i = 0; i < static_cast<int>(points.size()); ++i) {
      const double d = (points[i] - points[i0]).norm();
      if (d > best) best = d, i1 = i;
    }
  }
  const Vec3 dir = (points[i1] - points[i0]).normalized();
  int i2 = -1;
  double best = eps;
  for (int i = 0; i < static_cast<int>(points.size()); ++i) {
    const double d = (points[i] - points[i0]).cross(dir).norm();
    if (d > best) best = d, i2 = i;
  }
  if (i2 < 0) throw GeometryError("convex hull: points are collinear");
  const Vec3 n012 = (points[i1] - points[i0]).cross(points[i2] - points[i0]).normalized();
  int i3 = -1;
  best = eps;
  for (int i = 0; i < static_cast<int>(points.size()); ++i) {
    const double d = std::abs((points[i] - points[i0]).dot(n012));
    if (d > best) best = d, i3 = i;
  }
  if (i3 < 0) throw GeometryError("convex hull: points are coplanar");

  std::vector<Face> faces;
  if ((points[i3] - points[i0]).dot(n012) > 0) std::swap(i1, i2);
  faces.push_back(make_face(points, i0, i1, i2));
  faces.push_back(make_face(points, i0, i3, i1));
  faces.push_back(make_face(points, i1, i3, i2));
  faces.push_back(make_face(points, i2, i3, i0));

  for (int p = 0; p < static_cast<int>(points.size()); ++p) {
    if (p == i0 || p == i1 || p == i2 || p == i3) continue;
    std::set<std::pair<int, int>> visible_edges;
    std::vector<int> visible;
    for (int f = 0; f < static_cast<int>(faces.size()); ++f) {
      if (!faces[f].alive) continue;
      if (faces[f].normal.dot(points[p]) - faces[f].offset > eps) visible.push_back(f);
    }
    if (visible.empty()) continue;
    for (int f : visible) {
      const auto& v = faces[f].v;
      for (int e = 0; e < 3; ++e) visible_edges.emplace(v[e], v[(e + 1) % 3]);
      faces[f].alive = false;
    }
    for (const auto& [a, b] : visible_edges)
      if (!visible_edges.count({b, a})) faces.push_back(make_face(points, a, b, p));
  }

  ConvexHull hull;
  std::vector<int> remap(points.size(), -1);
  for (const auto& f : faces) {
    if (!f.alive) continue;
    std::array<int, 3> t{};
    for (int e = 0; e < 3; ++e) {
      int& r = remap[f.v[e]];
      if (r < 0) {
        r = static_cast<int>(hull.vertices.size());
        hull.vertices.push_back(points[f.v[e]]);
      }
      t[e] = r;
    }
    hull.faces.push_back(t);
  }

  // Volume centroid by tetrahedra against an interior reference point.
  Vec3 ref = Vec3::Zero();
  for (const auto& v : hull.vertices) ref += v;
  ref /= static_cast<double>(hull.vertices.size());
  double vol = 0;
  Vec3 acc = Vec3::Zero();
  for (const auto& t : hull.faces) {
    const Vec3 &a = hull.vertices[t[0]], &b = hull.vertices[t[1]], &c = hull.vertices[t[2]];
    const double v = (a - ref).dot((b - ref).cross(c - ref)) / 6.0;
    vol += v;
    acc += v * (a + b + c + ref) / 4.0;
  }
  hull.centroid = vol > 0 ? Vec3(acc / vol) : ref;

  hull.vertex_normals.assign(hull.vertices.size(), Vec3::Zero());
  for (const auto& t : hull.faces) {
    const Vec3 n = (hull.vertices[t[1]] - hull.vertices[t[0]])
                       .cross(hull.vertices[t[2]] - hull.vertices[t[0]])
                       .normalized();
    for (int e = 0; e < 3; ++e) {
      const Vec3 u = (hull.vertices[t[(e + 1) % 3]] - hull.vertices[t[e]]).normalized();
      const Vec3 w = (hull.vertices[t[(e + 2) % 3]] - hull.vertices[t[e]]).normalized();
      const double angle = std::acos(std::clamp(u.dot(w), -1.0, 1.0));
      hull.vertex_normals[t[e]] += angle * n;
    }
  }
  for (auto& n : hull.vertex_normals) n.normalize();
  return hull;
}

HullSample expanded_hull_sample(const ConvexHull& hull, double offset, Rng& rng) {
  if (!(offset >= 0)) throw GeometryError("expanded_hull_sample: offset must be nonnegative");
  if (hull.faces.empty()) throw GeometryError("expanded_hull_sample: empty hull");
  std::vector<Vec3> inflated(hull.vertices.size());
  for (std::size_t i = 0; i < inflated.size(); ++i)
    inflated[i] = hull.vertices[i] + offset * hull.vertex_normals[i];

  std::vector<double> cdf(hull.faces.size());
  double total = 0;
  for (std::size_t f = 0; f < hull.faces.size(); ++f) {
    const auto& t = hull.faces[f];
    total += 0.5 * (inflated[t[1]] - inflated[t[0]]).cross(inflated[t[2]] - inflated[t[0]]).norm();
    cdf[f] = total;
  }
  const double u = rng.uniform() * total;
  const std::size_t f = std::min<std::size_t>(
      std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin(), cdf.size() - 1);
  double s = std::sqrt(rng.uniform());
  double t = rng.uniform();
  const auto& tri = hull.faces[f];
  HullSample out;
  out.position = (1 - s) * inflated[tri[0]] + s * (1 - t) * inflated[tri[1]] + s * t * inflated[tri[2]];
  out.inward = (hull.centroid - out.position).normalized();
  return out;
}

HullSample expanded_hull_sample(const TriMesh& mesh, double offset, Rng& rng) {
  return expanded_hull_sample(convex_hull(mesh.vertices), offset, rng);
}

}  // namespace seqgrasp::geometry
