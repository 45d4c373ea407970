#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "seqgrasp/error.hpp"
#include "seqgrasp/geometry.hpp"

namespace seqgrasp::geometry {

SdfGrid::SdfGrid(Vec3 origin, double cell, std::array<int, 3> dims, std::vector<float> values)
    : origin_(std::move(origin)), cell_(cell), dims_(dims), values_(std::move(values)) {
  if (dims_[0] < 2 || dims_[1] < 2 || dims_[2] < 2) throw GeometryError("SDF grid needs >= 2 nodes per axis");
  if (values_.size() != static_cast<std::size_t>(dims_[0]) * dims_[1] * dims_[2])
    throw GeometryError("SDF grid value count does not match dims");
  if (!(cell_ > 0)) throw GeometryError("SDF cell size must be positive");
}

Eigen::AlignedBox3d SdfGrid::bounds() const {
  return {origin_, origin_ + cell_ * Vec3(dims_[0] - 1, dims_[1] - 1, dims_[2] - 1)};
}

SdfGrid SdfGrid::scaled(double s) const {
  std::vector<float> v(values_.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(s * values_[i]);
  SdfGrid out(s * origin_, s * cell_, dims_, std::move(v));
  out.source_hash = source_hash;
  return out;
}

SdfSample SdfGrid::query(const Vec3& x) const {
  const Eigen::AlignedBox3d box = bounds();
  Vec3 c = x.cwiseMax(box.min()).cwiseMin(box.max());
  int idx[3];
  double t[3];
  bool clamped[3];
  for (int a = 0; a < 3; ++a) {
    clamped[a] = c[a] != x[a];
    const double u = (c[a] - origin_[a]) / cell_;
    int i = static_cast<int>(std::floor(u));
    i = std::clamp(i, 0, dims_[a] - 2);
    idx[a] = i;
    t[a] = u - i;
  }
  double v[2][2][2];
  for (int dk = 0; dk < 2; ++dk)
    for (int dj = 0; dj < 2; ++dj)
      for (int di = 0; di < 2; ++di) v[dk][dj][di] = node(idx[0] + di, idx[1] + dj, idx[2] + dk);

  const double tx = t[0], ty = t[1], tz = t[2];
  // Interpolate along x, then y, then z; keep the partials of each stage.
  const double c00 = v[0][0][0] + tx * (v[0][0][1] - v[0][0][0]);
  const double c10 = v[0][1][0] + tx * (v[0][1][1] - v[0][1][0]);
  const double c01 = v[1][0][0] + tx * (v[1][0][1] - v[1][0][0]);
  const double c11 = v[1][1][0] + tx * (v[1][1][1] - v[1][1][0]);
  const double c0 = c00 + ty * (c10 - c00);
  const double c1 = c01 + ty * (c11 - c01);

  SdfSample out;
  out.value = c0 + tz * (c1 - c0);

  const double dx00 = v[0][0][1] - v[0][0][0], dx10 = v[0][1][1] - v[0][1][0];
  const double dx01 = v[1][0][1] - v[1][0][0], dx11 = v[1][1][1] - v[1][1][0];
  const double dx0 = dx00 + ty * (dx10 - dx00), dx1 = dx01 + ty * (dx11 - dx01);
  const double gx = dx0 + tz * (dx1 - dx0);
  const double gy = (c10 - c00) + tz * ((c11 - c01) - (c10 - c00));
  const double gz = c1 - c0;
  out.gradient = Vec3(clamped[0] ? 0.0 : gx, clamped[1] ? 0.0 : gy, clamped[2] ? 0.0 : gz) / cell_;

  const Vec3 off = x - c;
  const double d = off.norm();
  if (d > 0) {
    out.value += d;
    out.gradient += off / d;
  }
  return out;
}

SdfSample sdf_query(const SdfGrid& grid, const Vec3& x) { return grid.query(x); }

namespace {

// Sorted x-coordinates where the row line (y, z) crosses the mesh.
std::vector<double> row_crossings(const TriMesh& mesh, double y, double z) {
  std::vector<double> xs;
  for (const auto& t : mesh.triangles) {
    const Vec3 &a = mesh.vertices[t[0]], &b = mesh.vertices[t[1]], &c = mesh.vertices[t[2]];
    if ((y < a.y() && y < b.y() && y < c.y()) || (y > a.y() && y > b.y() && y > c.y())) continue;
    if ((z < a.z() && z < b.z() && z < c.z()) || (z > a.z() && z > b.z() && z > c.z())) continue;
    // Barycentric coordinates in the yz projection.
    const double det = (b.y() - a.y()) * (c.z() - a.z()) - (c.y() - a.y()) * (b.z() - a.z());
    if (det == 0.0) continue;
    const double l1 = ((y - a.y()) * (c.z() - a.z()) - (c.y() - a.y()) * (z - a.z())) / det;
    const double l2 = ((b.y() - a.y()) * (z - a.z()) - (y - a.y()) * (b.z() - a.z())) / det;
    if (l1 < 0 || l2 < 0 || l1 + l2 > 1) continue;
    xs.push_back(a.x() + l1 * (b.x() - a.x()) + l2 * (c.x() - a.x()));
  }
  std::sort(xs.begin(), xs.end());
  return xs;
}

}  // namespace

SdfGrid build_sdf(const TriMesh& mesh, const SdfOptions& options) {
  if (mesh.empty()) throw GeometryError("build_sdf: empty mesh");
  if (options.resolution < 8) throw GeometryError("build_sdf: resolution must be >= 8");
  const Eigen::AlignedBox3d box = mesh.bounds();
  const double extent = box.sizes().maxCoeff();
  if (!(extent > 0)) throw GeometryError("build_sdf: mesh has zero extent");

  const int res = options.resolution;
  double pad = options.margin_fraction * extent;
  double h = (extent + 2.0 * pad) / (res - 1);
  if (pad < 2.0 * h) {
    h = extent / (res - 5);
    pad = 2.0 * h;
  }
  std::array<int, 3> dims{};
  Vec3 origin;
  for (int a = 0; a < 3; ++a) {
    const double span = box.sizes()[a] + 2.0 * pad;
    dims[a] = std::max(2, static_cast<int>(std::ceil(span / h - 1e-9)) + 1);
    const double covered = h * (dims[a] - 1);
    origin[a] = box.min()[a] - pad - 0.5 * (covered - span);
  }

  const bool use_parity = mesh.watertight;
  if (!use_parity) warn("build_sdf: mesh is not watertight; using winding-number sign");

  const MeshBvh bvh(mesh);
  std::vector<float> values(static_cast<std::size_t>(dims[0]) * dims[1] * dims[2]);
  // Rows are nudged off the node lattice so they never graze edges or vertices.
  const double jy = h * 1.2345678e-6, jz = h * 2.3456789e-6;
  for (int k = 0; k < dims[2]; ++k)
    for (int j = 0; j < dims[1]; ++j) {
      const double y = origin.y() + h * j, z = origin.z() + h * k;
      std::vector<double> xs;
      if (use_parity) xs = row_crossings(mesh, y + jy, z + jz);
      std::size_t passed = 0;
      for (int i = 0; i < dims[0]; ++i) {
        const Vec3 p(origin.x() + h * i, y, z);
        const double d = bvh.closest(p).distance;
        bool inside;
        if (use_parity) {
          while (passed < xs.size() && xs[passed] < p.x()) ++passed;
          inside = (passed % 2) == 1;
        } else {
          inside = winding_number(p, mesh) > 0.5;
        }
        values[(static_cast<std::size_t>(k) * dims[1] + j) * dims[0] + i] =
            static_cast<float>(inside ? -d : d);
      }
    }
  return SdfGrid(origin, h, dims, std::move(values));
}

// ---------------------------------------------------------------------------
// Cache file

namespace {

constexpr char kMagic[8] = {'S', 'Q', 'S', 'D', 'F', '0', '0', '1'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put_le(std::string& buf, T v) {
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  buf.append(b, sizeof(T));
}

template <typename T>
T get_le(const std::string& buf, std::size_t& off) {
  if (off + sizeof(T) > buf.size()) throw GeometryError("SDF cache truncated");
  char b[sizeof(T)];
  std::memcpy(b, buf.data() + off, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  off += sizeof(T);
  T v;
  std::memcpy(&v, b, sizeof(T));
  return v;
}

}  // namespace

void save_sdf(const SdfGrid& grid, const std::filesystem::path& path) {
  std::string buf(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(buf, kVersion);
  for (int d : grid.dims()) put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(d));
  for (int a = 0; a < 3; ++a) put_le<double>(buf, grid.origin()[a]);
  put_le<double>(buf, grid.cell_size());
  put_le<std::uint64_t>(buf, grid.source_hash);
  for (float v : grid.values()) put_le<float>(buf, v);

  const std::filesystem::path tmp = path.string() + ".tmp";
  const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  if (fd < 0) throw GeometryError("cannot write '" + tmp.string() + "'");
  std::size_t written = 0;
  while (written < buf.size()) {
    const ssize_t n = ::write(fd, buf.data() + written, buf.size() - written);
    if (n <= 0) {
      ::close(fd);
      throw GeometryError("write failed for '" + tmp.string() + "'");
    }
    written += static_cast<std::size_t>(n);
  }
  if (::fsync(fd) != 0) {
    ::close(fd);
    throw GeometryError("fsync failed for '" + tmp.string() + "'");
  }
  ::close(fd);
  std::filesystem::rename(tmp, path);
}

SdfGrid load_sdf(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw GeometryError("cannot open SDF cache '" + path.string() + "'");
  const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < sizeof(kMagic) || std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0)
    throw GeometryError("'" + path.string() + "' is not an SDF cache");
  std::size_t off = sizeof(kMagic);
  if (get_le<std::uint32_t>(buf, off) != kVersion)
    throw GeometryError("'" + path.string() + "': unsupported SDF cache version");
  std::array<int, 3> dims{};
  for (int& d : dims) d = static_cast<int>(get_le<std::uint32_t>(buf, off));
  Vec3 origin;
  for (int a = 0; a < 3; ++a) origin[a] = get_le<double>(buf, off);
  const double h = get_le<double>(buf, off);
  const auto hash = get_le<std::uint64_t>(buf, off);
  const std::size_t n = static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  if (buf.size() != off + 4 * n) throw GeometryError("'" + path.string() + "': SDF cache size mismatch");
  std::vector<float> values(n);
  for (float& v : values) v = get_le<float>(buf, off);
  SdfGrid grid(origin, h, dims, std::move(values));
  grid.source_hash = hash;
  return grid;
}

}  // namespace seqgrasp::geometry
