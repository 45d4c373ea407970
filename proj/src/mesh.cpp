#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <unordered_map>

#include "seqgrasp/error.hpp"
#include "seqgrasp/geometry.hpp"

namespace seqgrasp::geometry {

Eigen::AlignedBox3d TriMesh::bounds() const {
  Eigen::AlignedBox3d box;
  for (const Vec3& v : vertices) box.extend(v);
  return box;
}

namespace {

double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c) {
  return 0.5 * (b - a).cross(c - a).norm();
}

bool check_watertight(const TriMesh& mesh) {
  if (mesh.triangles.empty()) return false;
  std::map<std::pair<int, int>, int> directed;
  for (const auto& t : mesh.triangles)
    for (int e = 0; e < 3; ++e) ++directed[{t[e], t[(e + 1) % 3]}];
  for (const auto& [edge, count] : directed) {
    if (count != 1) return false;
    auto rev = directed.find({edge.second, edge.first});
    if (rev == directed.end() || rev->second != 1) return false;
  }
  return true;
}

}  // namespace

TriMesh clean_mesh(TriMesh mesh) {
  const double scale = std::max(mesh.bounds().diagonal().norm(), 1e-300);
  const double min_area = 1e-14 * scale * scale;
  std::vector<std::array<int, 3>> kept;
  kept.reserve(mesh.triangles.size());
  std::size_t dropped = 0;
  const int nv = static_cast<int>(mesh.vertices.size());
  for (const auto& t : mesh.triangles) {
    for (int i : t)
      if (i < 0 || i >= nv)
        throw GeometryError("mesh: triangle index " + std::to_string(i) + " out of range");
    if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2] ||
        triangle_area(mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]) <= min_area) {
      ++dropped;
      continue;
    }
    kept.push_back(t);
  }
  if (dropped > 0)
    warn("mesh: dropped " + std::to_string(dropped) + " degenerate (zero-area) triangle(s)");

  std::vector<int> remap(mesh.vertices.size(), -1);
  std::vector<Vec3> verts;
  for (auto& t : kept)
    for (int& i : t) {
      if (remap[i] < 0) {
        remap[i] = static_cast<int>(verts.size());
        verts.push_back(mesh.vertices[i]);
      }
      i = remap[i];
    }
  TriMesh out;
  out.vertices = std::move(verts);
  out.triangles = std::move(kept);
  out.watertight = check_watertight(out);
  return out;
}

namespace {

int parse_obj_index(const std::string& token, int nverts, int line_no) {
  const std::string head = token.substr(0, token.find('/'));
  int idx = 0;
  try {
    std::size_t pos = 0;
    idx = std::stoi(head, &pos);
    if (pos != head.size()) throw std::invalid_argument(head);
  } catch (const std::exception&) {
    throw GeometryError("OBJ line " + std::to_string(line_no) + ": bad face index '" + token + "'");
  }
  if (idx < 0) idx = nverts + idx;
  else idx -= 1;
  if (idx < 0 || idx >= nverts)
    throw GeometryError("OBJ line " + std::to_string(line_no) + ": face index out of range");
  return idx;
}

TriMesh load_obj(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw GeometryError("cannot open mesh '" + path.string() + "'");
  TriMesh mesh;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      Vec3 v;
      if (!(ls >> v.x() >> v.y() >> v.z()) || !v.allFinite())
        throw GeometryError("OBJ line " + std::to_string(line_no) + ": malformed vertex");
      mesh.vertices.push_back(v);
    } else if (tag == "f") {
      std::vector<int> poly;
      std::string tok;
      while (ls >> tok)
        poly.push_back(parse_obj_index(tok, static_cast<int>(mesh.vertices.size()), line_no));
      if (poly.size() < 3)
        throw GeometryError("OBJ line " + std::to_string(line_no) + ": face with fewer than 3 vertices");
      for (std::size_t i = 1; i + 1 < poly.size(); ++i)
        mesh.triangles.push_back({poly[0], poly[i], poly[i + 1]});
    }
  }
  if (mesh.triangles.empty()) throw GeometryError("'" + path.string() + "' contains no triangles");
  return mesh;
}

template <typename T>
T read_le(const char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    auto* b = reinterpret_cast<unsigned char*>(&v);
    std::reverse(b, b + sizeof(T));
  }
  return v;
}

TriMesh load_stl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw GeometryError("cannot open mesh '" + path.string() + "'");
  std::vector<char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (data.size() < 84) throw GeometryError("'" + path.string() + "' is not a binary STL");
  const auto count = read_le<std::uint32_t>(data.data() + 80);
  if (data.size() != 84 + 50ull * count)
    throw GeometryError("'" + path.string() + "': size does not match a binary STL with " +
                        std::to_string(count) + " triangles (ASCII STL is not supported)");
  TriMesh mesh;
  std::map<std::array<float, 3>, int> weld;
  for (std::uint32_t t = 0; t < count; ++t) {
    const char* rec = data.data() + 84 + 50ull * t + 12;
    std::array<int, 3> tri{};
    for (int k = 0; k < 3; ++k) {
      std::array<float, 3> f{read_le<float>(rec + 12 * k), read_le<float>(rec + 12 * k + 4),
                             read_le<float>(rec + 12 * k + 8)};
      if (!std::isfinite(f[0]) || !std::isfinite(f[1]) || !std::isfinite(f[2]))
        throw GeometryError("'" + path.string() + "': non-finite vertex");
      auto [it, inserted] = weld.try_emplace(f, static_cast<int>(mesh.vertices.size()));
      if (inserted) mesh.vertices.emplace_back(f[0], f[1], f[2]);
      tri[k] = it->second;
    }
    mesh.triangles.push_back(tri);
  }
  if (mesh.triangles.empty()) throw GeometryError("'" + path.string() + "' contains no triangles");
  return mesh;
}

}  // namespace

TriMesh load_mesh(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  TriMesh raw;
  if (ext == ".obj") raw = load_obj(path);
  else if (ext == ".stl") raw = load_stl(path);
  else throw GeometryError("unsupported mesh format '" + ext + "' (expected .obj or .stl)");
  TriMesh mesh = clean_mesh(std::move(raw));
  if (mesh.empty()) throw GeometryError("'" + path.string() + "' has no valid triangles");
  return mesh;
}

void save_obj(const TriMesh& mesh, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw GeometryError("cannot write '" + path.string() + "'");
  out.precision(17);
  for (const Vec3& v : mesh.vertices) out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (const auto& t : mesh.triangles)
    out << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
}

// ---------------------------------------------------------------------------
// Primitives

TriMesh make_icosphere(double radius, int subdivisions) {
  const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> v = {{-1, phi, 0}, {1, phi, 0},  {-1, -phi, 0}, {1, -phi, 0},
                         {0, -1, phi}, {0, 1, phi},  {0, -1, -phi}, {0, 1, -phi},
                         {phi, 0, -1}, {phi, 0, 1},  {-phi, 0, -1}, {-phi, 0, 1}};
  std::vector<std::array<int, 3>> f = {
      {0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
      {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
      {3, 8, 9},  {4, 9, 5},  {2, 4, 11},  {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  for (Vec3& p : v) p.normalize();
  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<int, int>, int> mid;
    auto midpoint = [&](int a, int b) {
      auto key = std::minmax(a, b);
      auto it = mid.find(key);
      if (it != mid.end()) return it->second;
      v.push_back((v[a] + v[b]).normalized());
      const int id = static_cast<int>(v.size()) - 1;
      mid.emplace(key, id);
      return id;
    };
    std::vector<std::array<int, 3>> nf;
    for (const auto& t : f) {
      const int a = midpoint(t[0], t[1]), b = midpoint(t[1], t[2]), c = midpoint(t[2], t[0]);
      nf.push_back({t[0], a, c});
      nf.push_back({t[1], b, a});
      nf.push_back({t[2], c, b});
      nf.push_back({a, b, c});
    }
    f = std::move(nf);
  }
  TriMesh mesh;
  for (const Vec3& p : v) mesh.vertices.push_back(radius * p);
  mesh.triangles = std::move(f);
  mesh.watertight = true;
  return mesh;
}

TriMesh make_box(const Vec3& h) {
  TriMesh mesh;
  for (int i = 0; i < 8; ++i)
    mesh.vertices.emplace_back((i & 1) ? h.x() : -h.x(), (i & 2) ? h.y() : -h.y(),
                               (i & 4) ? h.z() : -h.z());
  mesh.triangles = {{0, 2, 3}, {0, 3, 1},   // -z
                    {4, 5, 7}, {4, 7, 6},   // +z
                    {0, 1, 5}, {0, 5, 4},   // -y
                    {2, 6, 7}, {2, 7, 3},   // +y
                    {0, 4, 6}, {0, 6, 2},   // -x
                    {1, 3, 7}, {1, 7, 5}};  // +x
  mesh.watertight = true;
  return mesh;
}

TriMesh make_cylinder(double radius, double half_height, int segments) {
  TriMesh mesh;
  for (int i = 0; i < segments; ++i) {
    const double a = 2.0 * std::numbers::pi * i / segments;
    mesh.vertices.emplace_back(radius * std::cos(a), radius * std::sin(a), -half_height);
    mesh.vertices.emplace_back(radius * std::cos(a), radius * std::sin(a), half_height);
  }
  const int bottom = static_cast<int>(mesh.vertices.size());
  mesh.vertices.emplace_back(0, 0, -half_height);
  mesh.vertices.emplace_back(0, 0, half_height);
  const int top = bottom + 1;
  for (int i = 0; i < segments; ++i) {
    const int j = (i + 1) % segments;
    const int b0 = 2 * i, t0 = 2 * i + 1, b1 = 2 * j, t1 = 2 * j + 1;
    mesh.triangles.push_back({b0, b1, t1});
    mesh.triangles.push_back({b0, t1, t0});
    mesh.triangles.push_back({bottom, b1, b0});
    mesh.triangles.push_back({top, t0, t1});
  }
  mesh.watertight = true;
  return mesh;
}

// ---------------------------------------------------------------------------
// Mass properties and transforms

double mesh_volume(const TriMesh& mesh) {
  double v = 0.0;
  for (const auto& t : mesh.triangles)
    v += mesh.vertices[t[0]].dot(mesh.vertices[t[1]].cross(mesh.vertices[t[2]]));
  return v / 6.0;
}

Vec3 mesh_centroid(const TriMesh& mesh) {
  if (mesh.empty()) throw GeometryError("centroid of an empty mesh");
  const double vol = mesh_volume(mesh);
  const double scale = mesh.bounds().diagonal().norm();
  if (mesh.watertight && std::abs(vol) > 1e-9 * scale * scale * scale) {
    Vec3 c = Vec3::Zero();
    for (const auto& t : mesh.triangles) {
      const Vec3 &a = mesh.vertices[t[0]], &b = mesh.vertices[t[1]], &d = mesh.vertices[t[2]];
      c += a.dot(b.cross(d)) / 6.0 * (a + b + d) / 4.0;
    }
    return c / vol;
  }
  Vec3 c = Vec3::Zero();
  double area = 0.0;
  for (const auto& t : mesh.triangles) {
    const Vec3 &a = mesh.vertices[t[0]], &b = mesh.vertices[t[1]], &d = mesh.vertices[t[2]];
    const double w = triangle_area(a, b, d);
    c += w * (a + b + d) / 3.0;
    area += w;
  }
  return c / area;
}

double max_edge_length(const TriMesh& mesh) {
  double m = 0.0;
  for (const auto& t : mesh.triangles)
    for (int e = 0; e < 3; ++e)
      m = std::max(m, (mesh.vertices[t[e]] - mesh.vertices[t[(e + 1) % 3]]).norm());
  return m;
}

TriMesh transformed(const TriMesh& mesh, const Pose& T) {
  TriMesh out = mesh;
  for (Vec3& v : out.vertices) v = T * v;
  return out;
}

TriMesh recenter_and_scale(const TriMesh& mesh, double scale) {
  const Vec3 c = mesh_centroid(mesh);
  TriMesh out = mesh;
  for (Vec3& v : out.vertices) v = scale * (v - c);
  return out;
}

TriMesh scale_to_bbox(const TriMesh& mesh, double lo, double hi, Rng& rng, double* applied_scale) {
  if (!(lo <= hi) || lo <= 0) throw GeometryError("scale_to_bbox: need 0 < lo <= hi");
  if (mesh.empty()) throw GeometryError("scale_to_bbox: empty mesh");
  const double extent = mesh.bounds().sizes().maxCoeff();
  if (!(extent > 0)) throw GeometryError("scale_to_bbox: mesh has zero extent");
  const double target = lo == hi ? lo : rng.uniform(lo, hi);
  const double s = target / extent;
  if (applied_scale) *applied_scale = s;
  return recenter_and_scale(mesh, s);
}

// ---------------------------------------------------------------------------
// Distances

Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  // Voronoi-region walk (Ericson, Real-Time Collision Detection 5.1.5).
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0 && d2 <= 0) return a;
  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0 && d4 <= d3) return b;
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) return a + (d1 / (d1 - d3)) * ab;
  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0 && d5 <= d6) return c;
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) return a + (d2 / (d2 - d6)) * ac;
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0)
    return b + ((d4 - d3) / ((d4 - d3) + (d5 - d6))) * (c - b);
  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

ClosestPoint point_mesh_distance_brute(const Vec3& x, const TriMesh& mesh) {
  ClosestPoint best;
  best.distance = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    const auto& tri = mesh.triangles[t];
    const Vec3 q = closest_point_on_triangle(x, mesh.vertices[tri[0]], mesh.vertices[tri[1]],
                                             mesh.vertices[tri[2]]);
    const double d = (x - q).norm();
    if (d < best.distance) best = {d, q, static_cast<int>(t)};
  }
  return best;
}

MeshBvh::MeshBvh(const TriMesh& mesh) : mesh_(&mesh) {
  if (mesh.empty()) throw GeometryError("BVH over an empty mesh");
  const int n = static_cast<int>(mesh.triangles.size());
  order_.resize(n);
  tri_boxes_.resize(n);
  tri_centers_.resize(n);
  for (int t = 0; t < n; ++t) {
    order_[t] = t;
    Eigen::AlignedBox3d box;
    for (int k : mesh.triangles[t]) box.extend(mesh.vertices[k]);
    tri_boxes_[t] = box;
    tri_centers_[t] = box.center();
  }
  nodes_.reserve(2 * n);
  build(0, n);
}

int MeshBvh::build(int begin, int end) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back({});
  Eigen::AlignedBox3d box, cbox;
  for (int i = begin; i < end; ++i) {
    box.extend(tri_boxes_[order_[i]]);
    cbox.extend(tri_centers_[order_[i]]);
  }
  nodes_[id].box = box;
  if (end - begin <= 4) {
    nodes_[id].begin = begin;
    nodes_[id].end = end;
    return id;
  }
  int axis;
  cbox.sizes().maxCoeff(&axis);
  const int mid = (begin + end) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](int a, int b) { return tri_centers_[a][axis] < tri_centers_[b][axis]; });
  const int l = build(begin, mid);
  const int r = build(mid, end);
  nodes_[id].left = l;
  nodes_[id].right = r;
  return id;
}

ClosestPoint MeshBvh::closest(const Vec3& x) const {
  ClosestPoint best;
  best.distance = std::numeric_limits<double>::infinity();
  double best_sq = best.distance;
  int stack[128];
  int top = 0;
  stack[top++] = 0;
  while (top > 0) {
    const Node& node = nodes_[stack[--top]];
    if (node.box.squaredExteriorDistance(x) > best_sq) continue;
    if (node.left < 0) {
      for (int i = node.begin; i < node.end; ++i) {
        const int t = order_[i];
        const auto& tri = mesh_->triangles[t];
        const Vec3 q = closest_point_on_triangle(x, mesh_->vertices[tri[0]],
                                                 mesh_->vertices[tri[1]], mesh_->vertices[tri[2]]);
        const double d = (x - q).norm();
        // Same tie-break as the brute-force scan: lowest triangle index wins.
        if (d < best.distance || (d == best.distance && t < best.triangle)) {
          best = {d, q, t};
          best_sq = d * d;
        }
      }
      continue;
    }
    const double dl = nodes_[node.left].box.squaredExteriorDistance(x);
    const double dr = nodes_[node.right].box.squaredExteriorDistance(x);
    if (dl < dr) {
      stack[top++] = node.right;
      stack[top++] = node.left;
    } else {
      stack[top++] = node.left;
      stack[top++] = node.right;
    }
  }
  return best;
}

ClosestPoint point_mesh_distance(const Vec3& x, const TriMesh& mesh) {
  return MeshBvh(mesh).closest(x);
}

double winding_number(const Vec3& x, const TriMesh& mesh) {
  double total = 0.0;
  for (const auto& t : mesh.triangles) {
    const Vec3 a = mesh.vertices[t[0]] - x, b = mesh.vertices[t[1]] - x, c = mesh.vertices[t[2]] - x;
    const double la = a.norm(), lb = b.norm(), lc = c.norm();
    const double num = a.dot(b.cross(c));
    const double den = la * lb * lc + a.dot(b) * lc + b.dot(c) * la + c.dot(a) * lb;
    total += 2.0 * std::atan2(num, den);
  }
  return total / (4.0 * std::numbers::pi);
}

}  // namespace seqgrasp::geometry
