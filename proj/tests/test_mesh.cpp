#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <random>

#include "mrguide/mesh.hpp"

using namespace mrguide;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("mrguide_test_" + name)).string();
}

bool inside(const TriMesh& m, const Vec3& p) { return winding_above(column_crossings(m, p.x(), p.y()), p.z()) != 0; }

}  // namespace

TEST(Mesh, BoxVolumeAndWatertight) {
  TriMesh box = make_box(Vec3(-1, -2, -3), Vec3(4, 5, 6));
  EXPECT_TRUE(is_watertight(box));
  EXPECT_NEAR(signed_volume(box), 5.0 * 7.0 * 9.0, 1e-9);
  EXPECT_NO_THROW(require_closed_mesh(box));
}

TEST(Mesh, EllipsoidVolumeConverges) {
  const TriMesh e = make_ellipsoid(Vec3(1, 2, 3), 30, 20, 10, 128, 64);
  EXPECT_TRUE(is_watertight(e));
  EXPECT_NEAR(signed_volume(e) / (4.0 / 3.0 * kPi * 30 * 20 * 10), 1.0, 2e-3);
}

TEST(Mesh, LiverStandInHasTargetVolume) {
  const TriMesh liver = make_liver_standin(-100.0);
  EXPECT_TRUE(is_watertight(liver));
  EXPECT_NEAR(signed_volume(liver), 1147.0e3, 1e-6 * 1147.0e3);
  EXPECT_NEAR(liver.bbox_max().z(), -100.0, 1e-9);
}

TEST(Mesh, OpenMeshIsRejected) {
  TriMesh box = make_box(Vec3(0, 0, 0), Vec3(1, 1, 1));
  box.triangles.pop_back();
  EXPECT_FALSE(is_watertight(box));
  try {
    require_closed_mesh(box);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::OpenMesh);
  }
}

TEST(Mesh, InvertedMeshIsFlipped) {
  TriMesh box = make_box(Vec3(0, 0, 0), Vec3(2, 2, 2));
  box.flip_orientation();
  EXPECT_LT(signed_volume(box), 0.0);
  require_closed_mesh(box);
  EXPECT_NEAR(signed_volume(box), 8.0, 1e-12);
}

TEST(Mesh, FlatMeshHasZeroVolume) {
  TriMesh flat = make_box(Vec3(0, 0, 0), Vec3(1, 1, 0));
  try {
    require_closed_mesh(flat);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ZeroVolume);
  }
}

TEST(Mesh, ColumnThroughSharedDiagonalCountsOnce) {
  const TriMesh box = make_box(Vec3(0, 0, 0), Vec3(2, 2, 2));
  // (1, 1) lies on the diagonal splitting the top and bottom faces.
  EXPECT_EQ(column_crossings(box, 1.0, 1.0).size(), 2u);
  // Box corners and edges: the half-open rule keeps the count even.
  for (double x : {0.0, 1.0, 2.0}) {
    for (double y : {0.0, 1.0, 2.0}) EXPECT_EQ(column_crossings(box, x, y).size() % 2, 0u) << x << "," << y;
  }
  EXPECT_TRUE(inside(box, Vec3(1, 1, 1)));
  EXPECT_FALSE(inside(box, Vec3(1, 1, 3)));
  EXPECT_FALSE(inside(box, Vec3(1, 1, -1)));
}

TEST(Mesh, PointInEllipsoidMatchesImplicitEquation) {
  const double a = 30, b = 20, c = 15;
  const TriMesh e = make_ellipsoid(Vec3::Zero(), a, b, c, 96, 48);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1.2, 1.2);
  int agree = 0, total = 0;
  for (int i = 0; i < 4000; ++i) {
    const Vec3 p(a * u(rng), b * u(rng), c * u(rng));
    const double f = (p.x() / a) * (p.x() / a) + (p.y() / b) * (p.y() / b) + (p.z() / c) * (p.z() / c);
    if (std::abs(f - 1.0) < 0.02) continue;  // facetting band
    ++total;
    agree += inside(e, p) == (f < 1.0);
  }
  EXPECT_EQ(agree, total);
}

TEST(Stl, BinaryAndAsciiRoundTrip) {
  const TriMesh e = make_ellipsoid(Vec3(0, 0, -100), 20, 15, 10, 24, 12);
  for (bool binary : {true, false}) {
    const std::string path = temp_path(binary ? "rt.stl" : "rt_ascii.stl");
    if (binary) write_stl_binary(e, path);
    else write_stl_ascii(e, path);
    const TriMesh back = read_stl(path);
    EXPECT_EQ(back.triangles.size(), e.triangles.size());
    EXPECT_EQ(back.vertices.size(), e.vertices.size());
    EXPECT_TRUE(is_watertight(back));
    EXPECT_NEAR(signed_volume(back), signed_volume(e), 1e-3 * signed_volume(e));
    std::remove(path.c_str());
  }
}

TEST(Stl, MalformedFilesAreReported) {
  const std::string path = temp_path("bad.stl");
  {
    std::ofstream out(path);
    out << "solid x\n facet normal 0 0 1\n outer loop\n vertex 0 0\n";
  }
  try {
    read_stl(path);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MeshParse);
  }
  std::remove(path.c_str());
  EXPECT_THROW(read_stl(temp_path("does_not_exist.stl")), Error);
}
