#pragma once

// Closed triangle meshes: STL input/output, watertightness checks and
// per-column inside/outside classification used by the coverage voxelizer.

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "mrguide/errors.hpp"
#include "mrguide/geometry.hpp"

namespace mrguide {

struct TriMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<std::uint32_t, 3>> triangles;

  Vec3 bbox_min() const {
    Vec3 m = Vec3::Constant(INFINITY);
    for (const auto& v : vertices) m = m.cwiseMin(v);
    return m;
  }
  Vec3 bbox_max() const {
    Vec3 m = Vec3::Constant(-INFINITY);
    for (const auto& v : vertices) m = m.cwiseMax(v);
    return m;
  }

  void translate(const Vec3& d) {
    for (auto& v : vertices) v += d;
  }

  void transform(const RigidTransform& t) {
    for (auto& v : vertices) v = t.rotation() * v + t.translation();
  }

  void flip_orientation() {
    for (auto& t : triangles) std::swap(t[1], t[2]);
  }
};

/// Signed enclosed volume via the divergence theorem, mm^3.
inline double signed_volume(const TriMesh& mesh) {
  double six_v = 0.0;
  for (const auto& t : mesh.triangles) {
    six_v += mesh.vertices[t[0]].dot(mesh.vertices[t[1]].cross(mesh.vertices[t[2]]));
  }
  return six_v / 6.0;
}

/// Every undirected edge must be shared by exactly two triangles that traverse
/// it in opposite directions (closed and consistently oriented).
inline bool is_watertight(const TriMesh& mesh, std::string* why = nullptr) {
  std::map<std::pair<std::uint32_t, std::uint32_t>, int> directed;
  for (const auto& t : mesh.triangles) {
    for (int k = 0; k < 3; ++k) {
      const auto a = t[k];
      const auto b = t[(k + 1) % 3];
      if (a == b) {
        if (why) *why = "degenerate triangle";
        return false;
      }
      if (++directed[{a, b}] > 1) {
        if (why) *why = "edge used twice in the same direction (non-manifold or inconsistent orientation)";
        return false;
      }
    }
  }
  for (const auto& [edge, count] : directed) {
    if (!directed.count({edge.second, edge.first})) {
      if (why) *why = "boundary edge without a matching opposite edge";
      return false;
    }
  }
  return !mesh.triangles.empty();
}

/// Validates the closed-mesh contract: watertight, non-zero volume. A mesh
/// with inward-facing normals is flipped in place.
inline void require_closed_mesh(TriMesh& mesh, double min_volume_mm3 = 1e-9) {
  std::string why;
  if (!is_watertight(mesh, &why)) throw Error(ErrorCode::OpenMesh, "mesh is not watertight: " + why);
  double v = signed_volume(mesh);
  if (std::abs(v) <= min_volume_mm3) throw Error(ErrorCode::ZeroVolume, "mesh encloses no volume");
  if (v < 0.0) mesh.flip_orientation();
}

namespace detail {

struct VertexWelder {
  std::map<std::tuple<double, double, double>, std::uint32_t> index;
  TriMesh* mesh;

  std::uint32_t add(const Vec3& p) {
    auto key = std::make_tuple(p.x(), p.y(), p.z());
    auto it = index.find(key);
    if (it != index.end()) return it->second;
    const auto id = static_cast<std::uint32_t>(mesh->vertices.size());
    mesh->vertices.push_back(p);
    index.emplace(key, id);
    return id;
  }
};

inline TriMesh parse_ascii_stl(const std::string& text) {
  TriMesh mesh;
  VertexWelder weld{{}, &mesh};
  std::istringstream in(text);
  std::string tok;
  std::vector<Vec3> facet;
  while (in >> tok) {
    if (tok == "vertex") {
      Vec3 v;
      if (!(in >> v.x() >> v.y() >> v.z())) throw Error(ErrorCode::MeshParse, "malformed ASCII STL vertex");
      facet.push_back(v);
    } else if (tok == "endfacet") {
      if (facet.size() != 3) throw Error(ErrorCode::MeshParse, "ASCII STL facet without 3 vertices");
      mesh.triangles.push_back({weld.add(facet[0]), weld.add(facet[1]), weld.add(facet[2])});
      facet.clear();
    }
  }
  if (mesh.triangles.empty()) throw Error(ErrorCode::MeshParse, "ASCII STL contains no facets");
  return mesh;
}

inline TriMesh parse_binary_stl(const std::string& bytes) {
  if (bytes.size() < 84) throw Error(ErrorCode::MeshParse, "binary STL shorter than its header");
  std::uint32_t count = 0;
  std::memcpy(&count, bytes.data() + 80, 4);
  if (bytes.size() < 84 + static_cast<std::size_t>(count) * 50) {
    throw Error(ErrorCode::MeshParse, "binary STL truncated");
  }
  TriMesh mesh;
  VertexWelder weld{{}, &mesh};
  for (std::uint32_t i = 0; i < count; ++i) {
    const char* rec = bytes.data() + 84 + static_cast<std::size_t>(i) * 50;
    std::array<std::uint32_t, 3> tri{};
    for (int k = 0; k < 3; ++k) {
      float xyz[3];
      std::memcpy(xyz, rec + 12 + 12 * k, 12);
      tri[k] = weld.add(Vec3(xyz[0], xyz[1], xyz[2]));
    }
    mesh.triangles.push_back(tri);
  }
  return mesh;
}

}  // namespace detail

/// Reads ASCII or binary STL, welding coincident vertices.
inline TriMesh read_stl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open mesh file " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  // Binary files may also start with "solid"; trust the size field when it fits exactly.
  if (bytes.size() >= 84) {
    std::uint32_t count = 0;
    std::memcpy(&count, bytes.data() + 80, 4);
    if (bytes.size() == 84 + static_cast<std::size_t>(count) * 50) return detail::parse_binary_stl(bytes);
  }
  if (bytes.rfind("solid", 0) == 0) return detail::parse_ascii_stl(bytes);
  return detail::parse_binary_stl(bytes);
}

inline void write_stl_binary(const TriMesh& mesh, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write mesh file " + path);
  char header[80] = {};
  std::strncpy(header, "mrguide binary stl", sizeof(header) - 1);
  out.write(header, 80);
  const auto count = static_cast<std::uint32_t>(mesh.triangles.size());
  out.write(reinterpret_cast<const char*>(&count), 4);
  for (const auto& t : mesh.triangles) {
    const Vec3& a = mesh.vertices[t[0]];
    const Vec3& b = mesh.vertices[t[1]];
    const Vec3& c = mesh.vertices[t[2]];
    Vec3 n = (b - a).cross(c - a);
    if (n.norm() > 0) n.normalize();
    float rec[12] = {float(n.x()), float(n.y()), float(n.z()), float(a.x()), float(a.y()), float(a.z()),
                     float(b.x()), float(b.y()), float(b.z()), float(c.x()), float(c.y()), float(c.z())};
    out.write(reinterpret_cast<const char*>(rec), sizeof(rec));
    const std::uint16_t attr = 0;
    out.write(reinterpret_cast<const char*>(&attr), 2);
  }
}

inline void write_stl_ascii(const TriMesh& mesh, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write mesh file " + path);
  out.precision(9);
  out << "solid mrguide\n";
  for (const auto& t : mesh.triangles) {
    const Vec3& a = mesh.vertices[t[0]];
    const Vec3& b = mesh.vertices[t[1]];
    const Vec3& c = mesh.vertices[t[2]];
    Vec3 n = (b - a).cross(c - a);
    if (n.norm() > 0) n.normalize();
    out << " facet normal " << n.x() << ' ' << n.y() << ' ' << n.z() << "\n  outer loop\n";
    for (const Vec3* v : {&a, &b, &c}) out << "   vertex " << v->x() << ' ' << v->y() << ' ' << v->z() << '\n';
    out << "  endloop\n endfacet\n";
  }
  out << "endsolid mrguide\n";
}

/// Axis-aligned box with outward-facing triangles.
inline TriMesh make_box(const Vec3& lo, const Vec3& hi) {
  TriMesh m;
  for (int i = 0; i < 8; ++i) {
    m.vertices.emplace_back((i & 1) ? hi.x() : lo.x(), (i & 2) ? hi.y() : lo.y(), (i & 4) ? hi.z() : lo.z());
  }
  const std::array<std::array<std::uint32_t, 4>, 6> quads = {{
      {0, 2, 3, 1},  // z-
      {4, 5, 7, 6},  // z+
      {0, 1, 5, 4},  // y-
      {2, 6, 7, 3},  // y+
      {0, 4, 6, 2},  // x-
      {1, 3, 7, 5},  // x+
  }};
  for (const auto& q : quads) {
    m.triangles.push_back({q[0], q[1], q[2]});
    m.triangles.push_back({q[0], q[2], q[3]});
  }
  return m;
}

/// UV ellipsoid centered at `center` with semi-axes (a, b, c).
inline TriMesh make_ellipsoid(const Vec3& center, double a, double b, double c, int slices = 48, int stacks = 24) {
  TriMesh m;
  m.vertices.push_back(center + Vec3(0, 0, c));
  for (int i = 1; i < stacks; ++i) {
    const double phi = kPi * i / stacks;
    for (int j = 0; j < slices; ++j) {
      const double th = 2.0 * kPi * j / slices;
      m.vertices.push_back(center + Vec3(a * std::sin(phi) * std::cos(th), b * std::sin(phi) * std::sin(th),
                                         c * std::cos(phi)));
    }
  }
  m.vertices.push_back(center - Vec3(0, 0, c));
  const auto top = 0u;
  const auto bottom = static_cast<std::uint32_t>(m.vertices.size() - 1);
  auto ring = [&](int i, int j) { return static_cast<std::uint32_t>(1 + (i - 1) * slices + (j % slices)); };
  for (int j = 0; j < slices; ++j) m.triangles.push_back({top, ring(1, j), ring(1, j + 1)});
  for (int i = 1; i < stacks - 1; ++i) {
    for (int j = 0; j < slices; ++j) {
      m.triangles.push_back({ring(i, j), ring(i + 1, j), ring(i + 1, j + 1)});
      m.triangles.push_back({ring(i, j), ring(i + 1, j + 1), ring(i, j + 1)});
    }
  }
  for (int j = 0; j < slices; ++j) m.triangles.push_back({ring(stacks - 1, j), bottom, ring(stacks - 1, j + 1)});
  return m;
}

constexpr double kStandinLiverVolumeMm3 = 1147.0e3;

/// Stand-in liver: an ellipsoid mesh scaled so its enclosed volume is
/// 1147 ml, centered on the robot axis with its top at z = top_z.
inline TriMesh make_liver_standin(double top_z) {
  constexpr double a0 = 95.0, b0 = 70.0;
  const double c0 = kStandinLiverVolumeMm3 * 3.0 / (4.0 * kPi * a0 * b0);
  TriMesh m = make_ellipsoid(Vec3::Zero(), a0, b0, c0, 64, 32);
  const double scale = std::cbrt(kStandinLiverVolumeMm3 / signed_volume(m));
  for (auto& v : m.vertices) v *= scale;
  m.translate(Vec3(0, 0, top_z - m.bbox_max().z()));
  return m;
}

/// Crossing of a vertical ray with the surface: height and facing sign
/// (+1 for upward-facing triangles, -1 for downward-facing).
struct ColumnCrossing {
  double z;
  int facing;
};

namespace detail {

inline double orient2d(double ax, double ay, double bx, double by, double px, double py) {
  return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
}

// Half-open edge ownership: a point exactly on a shared edge belongs to
// exactly one of the two triangles meeting there.
inline bool owns_edge(double dx, double dy) { return dy < 0.0 || (dy == 0.0 && dx < 0.0); }

}  // namespace detail

/// All crossings of the vertical line through (x, y) with the mesh surface,
/// sorted by z. Points on shared edges and vertices are counted once.
inline std::vector<ColumnCrossing> column_crossings(const TriMesh& mesh, double x, double y) {
  std::vector<ColumnCrossing> out;
  for (const auto& t : mesh.triangles) {
    Vec3 p[3] = {mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]};
    const double area = detail::orient2d(p[0].x(), p[0].y(), p[1].x(), p[1].y(), p[2].x(), p[2].y());
    if (area == 0.0) continue;
    const int facing = area > 0.0 ? 1 : -1;
    if (area < 0.0) std::swap(p[1], p[2]);
    bool inside = true;
    double w[3];
    for (int k = 0; k < 3 && inside; ++k) {
      const Vec3& a = p[k];
      const Vec3& b = p[(k + 1) % 3];
      w[k] = detail::orient2d(a.x(), a.y(), b.x(), b.y(), x, y);
      inside = w[k] > 0.0 || (w[k] == 0.0 && detail::owns_edge(b.x() - a.x(), b.y() - a.y()));
    }
    if (!inside) continue;
    // Barycentric weights: w[k] is opposite vertex (k + 2) % 3.
    const double total = std::abs(area);
    const double z = (w[1] * p[0].z() + w[2] * p[1].z() + w[0] * p[2].z()) / total;
    out.push_back({z, facing});
  }
  std::sort(out.begin(), out.end(), [](const ColumnCrossing& a, const ColumnCrossing& b) { return a.z < b.z; });
  return out;
}

/// Winding number of the closed surface around (x, y, z), counted along the
/// upward ray; non-zero means inside.
inline int winding_above(const std::vector<ColumnCrossing>& crossings, double z) {
  int w = 0;
  for (const auto& c : crossings) {
    if (c.z > z) w += c.facing;
  }
  return w;
}

}  // namespace mrguide
