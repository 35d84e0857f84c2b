#include "ihf/synthbench.hpp"

#include <Eigen/Geometry>
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace ihf;

namespace {

constexpr int kW = 640;
constexpr int kH = 480;

double brute_diameter(const Mesh& m) {
  double best = 0.0;
  for (std::size_t i = 0; i < m.vertices.size(); ++i)
    for (std::size_t j = i + 1; j < m.vertices.size(); ++j) best = std::max(best, (m.vertices[i] - m.vertices[j]).norm());
  return best;
}

Pose at(double x, double y, double z) {
  Pose p;
  p.offset = Vec3(x, y, z);
  return p;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto d = std::filesystem::temp_directory_path() / ("ihf_synth_" + name);
  std::filesystem::remove_all(d);
  std::filesystem::create_directories(d);
  return d;
}

}  // namespace

TEST(Mesh, BoxHasTwelveTrianglesAndAnalyticDiameter) {
  const Mesh m = make_box(Vec3(100, 60, 40));
  EXPECT_EQ(m.triangles.size(), 12u);
  EXPECT_EQ(m.vertices.size(), 8u);
  EXPECT_NEAR(brute_diameter(m), std::sqrt(100.0 * 100 + 60 * 60 + 40 * 40), 1e-9);
  EXPECT_TRUE(is_closed(m));
  EXPECT_EQ(euler_characteristic(m), 2);
  EXPECT_LT(surface_centroid(m).norm(), 1e-9);
}

TEST(Mesh, DoublingDimsDoublesDiameter) {
  for (Shape s : {Shape::Box, Shape::Cup, Shape::Camera, Shape::Bottle}) {
    const Mesh a = make_mesh(s);
    std::vector<double> dims;
    switch (s) {
      case Shape::Box: dims = {200, 120, 80}; break;
      case Shape::Cup: dims = {80, 200}; break;
      case Shape::Camera: dims = {200, 120, 80, 36, 60}; break;
      case Shape::Bottle: dims = {60, 320}; break;
    }
    const Mesh b = make_mesh(s, dims);
    EXPECT_NEAR(brute_diameter(b), 2.0 * brute_diameter(a), 1e-6) << to_string(s);
  }
}

TEST(Mesh, CupIsClosedGenusOne) {
  const Mesh m = make_mesh(Shape::Cup);
  EXPECT_TRUE(is_closed(m));
  EXPECT_EQ(euler_characteristic(m), 0);
}

TEST(Mesh, OtherShapesAreClosedSpheres) {
  const Mesh bottle = make_mesh(Shape::Bottle);
  EXPECT_TRUE(is_closed(bottle));
  EXPECT_EQ(euler_characteristic(bottle), 2);
  // Camera is two closed components (body, lens) of genus 0 each.
  const Mesh camera = make_mesh(Shape::Camera);
  EXPECT_TRUE(is_closed(camera));
  EXPECT_EQ(euler_characteristic(camera), 4);
}

TEST(Mesh, DegenerateDimensionsThrow) {
  EXPECT_THROW(make_box(Vec3(0, 1, 1)), Error);
  EXPECT_THROW(make_cup(-1, 10), Error);
  EXPECT_THROW(make_bottle(10, std::nan("")), Error);
  EXPECT_THROW(shape_from_string("teapot"), Error);
  EXPECT_EQ(shape_from_string("cup"), Shape::Cup);
}

TEST(Mesh, AsciiRoundTrip) {
  const Mesh m = make_mesh(Shape::Cup);
  std::stringstream ss;
  write_mesh(ss, m);
  const Mesh r = read_mesh(ss);
  ASSERT_EQ(r.vertices.size(), m.vertices.size());
  EXPECT_EQ(r.triangles, m.triangles);
  for (std::size_t i = 0; i < m.vertices.size(); ++i) EXPECT_EQ(r.vertices[i], m.vertices[i]);

  std::stringstream bad("ihf-mesh 1\nvertices 1\n0 0 0\ntriangles 1\n0 0 5\n");
  EXPECT_THROW(read_mesh(bad), Error);
  std::stringstream trunc("ihf-mesh 1\nvertices 3\n0 0 0\n");
  EXPECT_THROW(read_mesh(trunc), Error);
}

TEST(Render, MinDepthIsCentreMinusFrontExtent) {
  const Mesh m = make_box(Vec3(100, 60, 40));
  const DepthImage d = render_mesh(m, at(0, 0, 750), Intrinsics{}, kW, kH);
  double mn = 1e9, mx = 0;
  for (double z : d.depth())
    if (z > 0) mn = std::min(mn, z), mx = std::max(mx, z);
  EXPECT_NEAR(mn, 730.0, 1e-9);
  EXPECT_NEAR(mx, 730.0, 1e-9);  // only the front face is visible head-on
  // Front face projects to 100*525/730 by 60*525/730 pixels.
  const BoundingBox bb = nonzero_bbox(d);
  EXPECT_NEAR(bb.width, 100.0 * 525 / 730, 1.5);
  EXPECT_NEAR(bb.height, 60.0 * 525 / 730, 1.5);
}

TEST(Render, DepthIsExactRayPlaneIntersection) {
  // Tilted box: every rendered pixel must back-project onto one of the box faces.
  const Mesh m = make_box(Vec3(100, 60, 40));
  Pose p = at(10, -5, 760);
  p.rotation = Vec3(0.3, -0.4, 0.2);
  const DepthImage d = render_mesh(m, p, Intrinsics{}, kW, kH);
  const Mat3 r = p.rotation_matrix();
  std::size_t n = 0;
  for (int v = 0; v < kH; ++v)
    for (int u = 0; u < kW; ++u) {
      const double z = d.at(u, v);
      if (z <= 0) continue;
      const Vec3 local = r.transpose() * (backproject_pixel(u, v, z, Intrinsics{}) - p.offset);
      const Vec3 q = local.cwiseAbs() - Vec3(50, 30, 20);
      ASSERT_LT(q.maxCoeff(), 1e-6);
      ASSERT_GT(q.maxCoeff(), -1e-6);  // on the surface, not inside
      ++n;
    }
  EXPECT_GT(n, 1000u);
}

TEST(Render, TranslationInZShiftsFrontFace) {
  const Mesh m = make_box(Vec3(100, 60, 40));
  const DepthImage a = render_mesh(m, at(0, 0, 750), Intrinsics{}, kW, kH);
  const DepthImage b = render_mesh(m, at(0, 0, 760), Intrinsics{}, kW, kH);
  for (int v = 0; v < kH; ++v)
    for (int u = 0; u < kW; ++u)
      if (a.at(u, v) > 0 && b.at(u, v) > 0) ASSERT_NEAR(b.at(u, v) - a.at(u, v), 10.0, 1e-9);
}

TEST(Render, OutsideFrustumThrows) {
  const Mesh m = make_box(Vec3(100, 60, 40));
  EXPECT_THROW(render_mesh(m, at(0, 0, -750), Intrinsics{}, kW, kH), Error);
  EXPECT_THROW(render_mesh(m, at(5000, 0, 750), Intrinsics{}, kW, kH), Error);
}

TEST(Scene, OccluderCoverageMatchesMaskCount) {
  const Mesh cup = make_mesh(Shape::Cup);
  for (double cov : {0.1, 0.3, 0.5}) {
    SceneSpec spec;
    spec.pose = at(10, 0, 760);
    spec.pose.rotation = Vec3(0, 0.3, 0.2);
    const DepthImage clean = render_mesh(cup, spec.pose, Intrinsics{}, kW, kH);
    const BoundingBox bb = nonzero_bbox(clean);
    Pixel target{bb.u0 + bb.width / 3, bb.v0 + bb.height / 2};
    while (clean.at(target.u, target.v) <= 0) ++target.u;
    spec.occluders.push_back(fit_occluder(cup, spec.pose, Intrinsics{}, kW, kH, cov, target));
    const SceneRender r = render_scene(spec, cup, Intrinsics{}, kW, kH);
    // Independent oracle: count object pixels whose scene depth differs from the clean depth.
    std::size_t total = 0, kept = 0;
    for (std::size_t p = 0; p < clean.depth().size(); ++p) {
      if (clean.depth()[p] <= 0) continue;
      ++total;
      kept += r.image.depth()[p] == clean.depth()[p];
    }
    const double vis = static_cast<double>(kept) / static_cast<double>(total);
    EXPECT_NEAR(vis, 1.0 - cov, 0.05) << cov;
    EXPECT_NEAR(r.visibility, vis, 1e-12);
    EXPECT_EQ(r.object_visible.count(), kept);
  }
}

TEST(Scene, GaussianNoiseHasRequestedSigma) {
  const Mesh m = make_box(Vec3(100, 60, 40));
  SceneSpec spec;
  spec.pose = at(0, 0, 750);
  spec.noise_sigma = 2.0;
  spec.noise_seed = 42;
  const SceneRender r = render_scene(spec, m, Intrinsics{}, kW, kH);
  double s = 0, s2 = 0;
  std::size_t n = 0;
  for (std::size_t p = 0; p < r.image.depth().size(); ++p) {
    const double c = r.object_clean.depth()[p];
    if (c <= 0) continue;
    const double e = r.image.depth()[p] - c;
    s += e;
    s2 += e * e;
    ++n;
  }
  const double mean = s / n;
  const double sd = std::sqrt(s2 / n - mean * mean);
  EXPECT_NEAR(sd, 2.0, 0.2);
  EXPECT_NEAR(mean, 0.0, 0.1);
}

TEST(Scene, DropoutZeroesAFraction) {
  const Mesh m = make_box(Vec3(100, 60, 40));
  SceneSpec spec;
  spec.pose = at(0, 0, 750);
  spec.dropout = 0.25;
  spec.noise_seed = 3;
  const SceneRender r = render_scene(spec, m, Intrinsics{}, kW, kH);
  const double kept = static_cast<double>(r.image.nonzero_count()) / r.object_clean.nonzero_count();
  EXPECT_NEAR(kept, 0.75, 0.03);
}

TEST(Scene, FullyOccludedIsFlagged) {
  const Mesh m = make_box(Vec3(100, 60, 40));
  SceneSpec spec;
  spec.pose = at(0, 0, 750);
  BoxPrimitive wall;
  wall.dims = Vec3(1000, 1000, 10);
  wall.pose = at(0, 0, 600);
  spec.occluders.push_back(wall);
  const SceneRender r = render_scene(spec, m, Intrinsics{}, kW, kH);
  EXPECT_TRUE(r.fully_occluded);
  EXPECT_EQ(r.visibility, 0.0);
  EXPECT_GT(r.object_pixels, 0u);
}

TEST(Dataset, TrainingGridHas49CleanEntries) {
  const Mesh cup = make_mesh(Shape::Cup);
  const auto set = generate_training_set(cup, TrainingGrid{}, Intrinsics{}, kW, kH);
  ASSERT_EQ(set.size(), 49u);
  double extent = 0;
  for (const auto& v : cup.vertices) extent = std::max(extent, v.norm());
  for (const auto& g : set) {
    EXPECT_EQ(g.entry.visibility, 1.0);
    EXPECT_EQ(g.entry.pose.offset, Vec3(0, 0, 750));
    double mn = 1e9;
    for (double z : g.image.depth())
      if (z > 0) mn = std::min(mn, z);
    EXPECT_GE(mn, 750 - extent);
    EXPECT_LE(mn, 750.0);
    // Tight box: every border row/column of the crop holds an object pixel.
    const BoundingBox inner = nonzero_bbox(g.image);
    EXPECT_EQ(inner, (BoundingBox{0, 0, g.image.width(), g.image.height()}));
  }
}

TEST(Dataset, CropKeepsBackprojection) {
  const Mesh cup = make_mesh(Shape::Cup);
  const auto set = generate_training_set(cup, TrainingGrid{750, 0, 15}, Intrinsics{}, kW, kH);
  ASSERT_EQ(set.size(), 1u);
  const DepthImage full = render_mesh(cup, set[0].entry.pose, Intrinsics{}, kW, kH);
  const auto& bb = set[0].entry.bbox;
  const auto& c = set[0].image;
  for (int v = 0; v < c.height(); v += 7)
    for (int u = 0; u < c.width(); u += 7) {
      ASSERT_EQ(c.at(u, v), full.at(u + bb.u0, v + bb.v0));
      if (c.at(u, v) > 0) {
        const Vec3 a = backproject_pixel(u, v, c.at(u, v), c.intrinsics());
        const Vec3 b = backproject_pixel(u + bb.u0, v + bb.v0, c.at(u, v), Intrinsics{});
        ASSERT_LT((a - b).norm(), 1e-9);
      }
    }
}

TEST(Dataset, TestSetRangesDeterminismAndBoxes) {
  const Mesh cup = make_mesh(Shape::Cup);
  TestSetOptions o;
  o.seed = 11;
  const auto a = generate_test_set(cup, o, Intrinsics{}, kW, kH);
  const auto b = generate_test_set(cup, o, Intrinsics{}, kW, kH);
  ASSERT_EQ(a.size(), 30u);
  int occluded = 0, cluttered = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& e = a[i].entry;
    EXPECT_GE(e.pose.offset.z(), 700.0);
    EXPECT_LE(e.pose.offset.z(), 800.0);
    EXPECT_LE(std::abs(e.pose.rotation.y()), kPi / 4 + 1e-12);
    EXPECT_LE(std::abs(e.pose.rotation.z()), kPi / 4 + 1e-12);
    EXPECT_LE(e.scene.coverage_target, 0.5);
    occluded += !e.scene.occluders.empty();
    cluttered += !e.scene.clutter.empty();
    EXPECT_EQ(a[i].image, b[i].image);
    EXPECT_EQ(e.bbox, b[i].entry.bbox);
    // Box holds >= 99% of the visible object pixels.
    const SceneRender r = render_scene(e.scene, cup, Intrinsics{}, kW, kH);
    std::size_t in = 0, vis = 0;
    for (int v = 0; v < kH; ++v)
      for (int u = 0; u < kW; ++u)
        if (r.object_visible.at(u, v)) {
          ++vis;
          in += e.bbox.contains(u, v);
        }
    EXPECT_GE(static_cast<double>(in), 0.99 * static_cast<double>(vis));
    EXPECT_NEAR(r.visibility, e.visibility, 1e-12);
  }
  EXPECT_GT(occluded, 20);
  EXPECT_GT(cluttered, 5);
  EXPECT_LT(cluttered, 25);

  o.seed = 12;
  const auto c = generate_test_set(cup, o, Intrinsics{}, kW, kH);
  EXPECT_NE(c[0].entry.pose.offset, a[0].entry.pose.offset);
}

TEST(Dataset, ManifestRoundTripAndDepthFiles) {
  const Mesh cup = make_mesh(Shape::Cup);
  TestSetOptions o;
  o.count = 3;
  const auto set = generate_test_set(cup, o, Intrinsics{}, kW, kH);
  const auto dir = temp_dir("manifest");
  save_mesh(cup, dir / "cup.mesh");
  const auto m = write_dataset(dir, "test", "cup", "cup.mesh", 750, Intrinsics{}, kW, kH, set);
  const auto r = read_manifest(dir / "manifest.json");
  EXPECT_EQ(r.split, "test");
  EXPECT_EQ(r.shape, "cup");
  EXPECT_EQ(r.mesh_file, "cup.mesh");
  ASSERT_EQ(r.entries.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& e = r.entries[i];
    EXPECT_EQ(e.id, set[i].entry.id);
    EXPECT_EQ(e.bbox, set[i].entry.bbox);
    EXPECT_NEAR((e.pose.offset - set[i].entry.pose.offset).norm(), 0.0, 1e-9);
    EXPECT_EQ(e.scene.noise_seed, set[i].entry.scene.noise_seed);
    EXPECT_EQ(e.scene.occluders.size(), set[i].entry.scene.occluders.size());
    const DepthImage d = load_depth(dir / e.depth_file);
    EXPECT_EQ(d.width(), set[i].image.width());
    for (std::size_t p = 0; p < d.depth().size(); ++p)
      ASSERT_NEAR(d.depth()[p], set[i].image.depth()[p], 0.05 + 1e-9);
  }
  // Scene specs re-render identically from the manifest.
  const SceneRender again = render_scene(r.entries[0].scene, load_mesh(dir / "cup.mesh"), Intrinsics{}, kW, kH);
  const SceneRender orig = render_scene(set[0].entry.scene, cup, Intrinsics{}, kW, kH);
  EXPECT_EQ(again.object_visible.bits, orig.object_visible.bits);

  std::ofstream(dir / "bad.json") << "{\"split\": 3}";
  EXPECT_THROW(read_manifest(dir / "bad.json"), Error);
  std::filesystem::remove_all(dir);
}
