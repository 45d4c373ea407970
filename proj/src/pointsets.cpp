#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "seqgrasp/error.hpp"
#include "seqgrasp/geometry.hpp"

namespace seqgrasp::geometry {

PointCloud sample_surface(const TriMesh& mesh, std::size_t n, Rng& rng) {
  if (mesh.empty()) throw GeometryError("sample_surface: empty mesh");
  std::vector<double> cdf(mesh.triangles.size());
  double total = 0;
  for (std::size_t f = 0; f < mesh.triangles.size(); ++f) {
    const auto& t = mesh.triangles[f];
    const Vec3 &a = mesh.vertices[t[0]], &b = mesh.vertices[t[1]], &c = mesh.vertices[t[2]];
    total += 0.5 * (b - a).cross(c - a).norm();
    cdf[f] = total;
  }
  PointCloud out(3, static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng.uniform() * total;
    const std::size_t f = std::min<std::size_t>(
        std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin(), cdf.size() - 1);
    const auto& t = mesh.triangles[f];
    const double s = std::sqrt(rng.uniform());
    const double w = rng.uniform();
    out.col(static_cast<Eigen::Index>(i)) = (1 - s) * mesh.vertices[t[0]] +
                                            s * (1 - w) * mesh.vertices[t[1]] +
                                            s * w * mesh.vertices[t[2]];
  }
  return out;
}

PointCloud fps_select(const PointCloud& candidates, std::size_t n, Rng& rng) {
  const auto m = static_cast<std::size_t>(candidates.cols());
  if (n == 0) throw GeometryError("fps: n must be >= 1");
  if (m == 0) throw GeometryError("fps: empty candidate set");
  n = std::min(n, m);
  PointCloud out(3, static_cast<Eigen::Index>(n));
  std::vector<double> dmin(m, std::numeric_limits<double>::infinity());
  std::size_t pick = rng.index(m);
  for (std::size_t k = 0; k < n; ++k) {
    out.col(static_cast<Eigen::Index>(k)) = candidates.col(static_cast<Eigen::Index>(pick));
    const Vec3 c = candidates.col(static_cast<Eigen::Index>(pick));
    std::size_t next = 0;
    double far = -1;
    for (std::size_t i = 0; i < m; ++i) {
      const double d = (candidates.col(static_cast<Eigen::Index>(i)) - c).squaredNorm();
      if (d < dmin[i]) dmin[i] = d;
      if (dmin[i] > far) far = dmin[i], next = i;
    }
    pick = next;
  }
  return out;
}

PointCloud fps_sample(const TriMesh& mesh, std::size_t n, Rng& rng) {
  if (n == 0) throw GeometryError("fps_sample: n must be >= 1");
  const PointCloud dense = sample_surface(mesh, std::max<std::size_t>(10000, 8 * n), rng);
  return fps_select(dense, n, rng);
}

// ---------------------------------------------------------------------------

KdTree::KdTree(const PointCloud& points) : points_(points) {
  if (points_.cols() == 0) throw GeometryError("KdTree: empty point set");
  std::vector<int> idx(static_cast<std::size_t>(points_.cols()));
  std::iota(idx.begin(), idx.end(), 0);
  nodes_.reserve(idx.size());
  build(idx, 0, static_cast<int>(idx.size()), 0);
}

int KdTree::build(std::vector<int>& idx, int begin, int end, int depth) {
  if (begin >= end) return -1;
  // Split on the widest axis of this subset.
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
  for (int i = begin; i < end; ++i) {
    lo = lo.cwiseMin(points_.col(idx[i]));
    hi = hi.cwiseMax(points_.col(idx[i]));
  }
  int axis;
  (hi - lo).maxCoeff(&axis);
  const int mid = (begin + end) / 2;
  std::nth_element(idx.begin() + begin, idx.begin() + mid, idx.begin() + end,
                   [&](int a, int b) { return points_(axis, a) < points_(axis, b); });
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back({idx[mid], axis, -1, -1});
  const int left = build(idx, begin, mid, depth + 1);
  const int right = build(idx, mid + 1, end, depth + 1);
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

void KdTree::search(int node, const Vec3& q, double& best) const {
  if (node < 0) return;
  const Node& n = nodes_[node];
  const double d = (points_.col(n.point) - q).squaredNorm();
  if (d < best) best = d;
  const double diff = q[n.axis] - points_(n.axis, n.point);
  const int near = diff < 0 ? n.left : n.right;
  const int far = diff < 0 ? n.right : n.left;
  search(near, q, best);
  if (diff * diff < best) search(far, q, best);
}

double KdTree::nearest_sq(const Vec3& q) const {
  double best = std::numeric_limits<double>::infinity();
  search(0, q, best);
  return best;
}

// ---------------------------------------------------------------------------

BpsBasis make_bps_basis(std::size_t count, double radius, std::uint64_t seed) {
  if (count == 0 || !(radius > 0)) throw GeometryError("make_bps_basis: bad parameters");
  BpsBasis basis;
  basis.radius = radius;
  basis.seed = seed;
  basis.points.resize(3, static_cast<Eigen::Index>(count));
  Rng rng(seed);
  for (std::size_t i = 0; i < count; ++i) {
    Vec3 v;
    do {
      v = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    } while (v.squaredNorm() > 1.0);
    basis.points.col(static_cast<Eigen::Index>(i)) = radius * v;
  }
  return basis;
}

Eigen::VectorXd bps_encode(const PointCloud& cloud, const BpsBasis& basis) {
  if (cloud.cols() == 0) throw GeometryError("bps_encode: empty cloud");
  const KdTree tree(cloud);
  Eigen::VectorXd f(basis.points.cols());
  for (Eigen::Index b = 0; b < basis.points.cols(); ++b)
    f[b] = std::sqrt(tree.nearest_sq(basis.points.col(b)));
  return f;
}

Eigen::VectorXd bps_encode_brute(const PointCloud& cloud, const BpsBasis& basis) {
  if (cloud.cols() == 0) throw GeometryError("bps_encode: empty cloud");
  Eigen::VectorXd f(basis.points.cols());
  for (Eigen::Index b = 0; b < basis.points.cols(); ++b) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < cloud.cols(); ++i)
      best = std::min(best, (cloud.col(i) - basis.points.col(b)).squaredNorm());
    f[b] = std::sqrt(best);
  }
  return f;
}

// ---------------------------------------------------------------------------

Penetration penetration_set(const PointCloud& points, const SdfGrid& sdf) {
  Penetration out;
  for (Eigen::Index i = 0; i < points.cols(); ++i) {
    const double v = sdf.value(points.col(i));
    if (v < 0) {
      out.indices.push_back(static_cast<int>(i));
      out.depths.push_back(-v);
    }
  }
  return out;
}

Penetration penetration_set(const PointCloud& points, const TriMesh& mesh) {
  Penetration out;
  const MeshBvh bvh(mesh);
  for (Eigen::Index i = 0; i < points.cols(); ++i) {
    const Vec3 x = points.col(i);
    if (winding_number(x, mesh) <= 0.5) continue;
    out.indices.push_back(static_cast<int>(i));
    out.depths.push_back(bvh.closest(x).distance);
  }
  return out;
}

}  // namespace seqgrasp::geometry
