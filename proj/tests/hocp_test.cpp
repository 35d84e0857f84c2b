#include "ihf/hocp.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <set>

namespace ihf {
namespace {

// Independent binning oracle written straight from the bin definitions, in
// double precision and without the shared helpers.
std::vector<float> oracle_histogram(const std::vector<Vec3>& pts, const Vec3& c, std::array<int, 3> nu, double frac) {
  double r_max = 0.0;
  for (const auto& p : pts) r_max = std::max(r_max, (p - c).norm());
  const double r_min = frac * r_max;
  std::vector<float> h(static_cast<std::size_t>(nu[0] * nu[1] * nu[2]), 0.0f);
  for (const auto& p : pts) {
    const Vec3 d = p - c;
    const double r = d.norm();
    int rb = 0;
    if (r >= r_min) rb = std::min(nu[0] - 1, static_cast<int>(nu[0] * std::log(r / r_min) / std::log(r_max / r_min)));
    int tb = std::min(nu[1] - 1, static_cast<int>(nu[1] * (d.z() / r + 1.0) / 2.0));
    double phi = std::atan2(d.y(), d.x());
    if (phi < 0) phi += 2 * kPi;
    int pb = std::min(nu[2] - 1, static_cast<int>(nu[2] * phi / (2 * kPi)));
    h[static_cast<std::size_t>((rb * nu[1] + tb) * nu[2] + pb)] += 1.0f;
  }
  return h;
}

std::vector<Vec3> random_points(int n, Rng& rng) {
  std::vector<Vec3> pts;
  for (int i = 0; i < n; ++i) pts.emplace_back(rng.uniform(), rng.uniform(), rng.uniform());
  return pts;
}

TEST(Hocp, DimensionIs256ForDefaultNu) {
  HocpParams p;
  EXPECT_EQ(p.dimension(), 256);
  Rng rng(1);
  const auto pts = random_points(50, rng);
  EXPECT_EQ(hocp_histogram(pts, Vec3::Constant(0.5), p).bins.size(), 256u);
}

TEST(Hocp, SingleDescriptorFillsOneBin) {
  HocpParams p;
  const std::vector<Vec3> one{Vec3(0.7, 0.5, 0.5)};
  const auto f = hocp_histogram(one, Vec3::Constant(0.5), p);
  EXPECT_EQ(f.total(), 1.0);
  EXPECT_EQ(std::count(f.bins.begin(), f.bins.end(), 1.0f), 1);
  EXPECT_NEAR(f.r_max, 0.2, 1e-15);
  EXPECT_NEAR(f.r_min, 0.2 / 16, 1e-15);
}

TEST(Hocp, ConservationAndOracleAgreement) {
  HocpParams p;
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const int k = 1 + static_cast<int>(rng.index(400));
    const auto pts = random_points(k, rng);
    const Vec3 c(rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7));
    const auto f = hocp_histogram(pts, c, p);
    EXPECT_EQ(f.total(), static_cast<double>(k));
    EXPECT_EQ(f.bins, oracle_histogram(pts, c, p.nu, p.r_min_fraction));
  }
}

TEST(Hocp, AzimuthRotationCyclicallyShiftsBins) {
  HocpParams p;
  Rng rng(3);
  const Vec3 c = Vec3::Constant(0.5);
  const auto pts = random_points(300, rng);
  const double a = 2 * kPi / p.nu[2];
  std::vector<Vec3> rotated;
  for (const auto& q : pts) {
    const Vec3 d = q - c;
    rotated.push_back(c + Vec3(std::cos(a) * d.x() - std::sin(a) * d.y(), std::sin(a) * d.x() + std::cos(a) * d.y(), d.z()));
  }
  const auto f0 = hocp_histogram(pts, c, p).bins;
  const auto f1 = hocp_histogram(rotated, c, p).bins;
  const int np = p.nu[2];
  for (int block = 0; block < p.nu[0] * p.nu[1]; ++block)
    for (int b = 0; b < np; ++b)
      EXPECT_EQ(f1[static_cast<std::size_t>(block * np + (b + 1) % np)], f0[static_cast<std::size_t>(block * np + b)]);
}

TEST(Hocp, CoincidentDescriptorsAreAnError) {
  const std::vector<Vec3> pts{Vec3::Constant(0.5), Vec3::Constant(0.5)};
  EXPECT_THROW(hocp_histogram(pts, Vec3::Constant(0.5), HocpParams{}), Error);
  EXPECT_THROW(hocp_histogram(std::vector<Vec3>{}, Vec3::Constant(0.5), HocpParams{}), Error);
}

TEST(Hocp, BinHelpersCoverTheirRanges) {
  EXPECT_EQ(inclination_bin(1.0, 1.0, 8), 7);
  EXPECT_EQ(inclination_bin(-1.0, 1.0, 8), 0);
  EXPECT_EQ(inclination_bin(0.0, 1.0, 8), 4);
  EXPECT_EQ(azimuth_bin(1.0, 0.0, 8), 0);
  EXPECT_EQ(azimuth_bin(0.0, -1.0, 8), 6);  // 3pi/2
  EXPECT_EQ(azimuth_bin(1.0, -1e-3, 8), 7);
  EXPECT_EQ(azimuth_bin(-1.0, -1e-12, 8), 4);
  const float lmax = std::log(0.4f);
  EXPECT_EQ(radial_bin(lmax, lmax, 1.0 / 16, 4), 3);
  EXPECT_EQ(radial_bin(std::log(0.4f / 32), lmax, 1.0 / 16, 4), 0);
}

// A template part: 10 x 10 columns with a three-layer shell at dz in {0, d, 2d}.
std::vector<PartDescriptor> shell(double dz_shift, HocpParams p) {
  std::vector<PartDescriptor> out;
  const double d = 0.05;
  for (int j = -5; j < 5; ++j)
    for (int i = -5; i < 5; ++i)
      for (int k = 0; k < 3; ++k) out.push_back(describe(Vec3(i * d, j * d, k * d + dz_shift), i, j, p));
  return out;
}

TEST(DepthCheck, TemplateAgainstItselfKeepsEverything) {
  HocpParams p;
  const auto t = shell(0.0, p);
  const TemplateDepthMap map(t);
  EXPECT_EQ(depth_consistency_filter(t, map, p.delta_d).size(), t.size());
}

TEST(DepthCheck, DisplacedDescriptorIsTheOnlyOneRemoved) {
  HocpParams p;
  const auto t = shell(0.0, p);
  const TemplateDepthMap map(t);
  auto part = t;
  // Lowest layer of one column pushed 2 * delta_d in front of the template range.
  auto& victim = part[37 * 3];
  victim.dz = static_cast<float>(-2 * p.delta_d);
  const auto kept = depth_consistency_filter(part, map, p.delta_d);
  ASSERT_EQ(kept.size(), part.size() - 1);
  for (const auto& d : kept) EXPECT_FALSE(d.di == victim.di && d.dj == victim.dj && d.dz == victim.dz);
}

TEST(DepthCheck, OccluderCoveringThirtyPercentLeavesSeventyPercent) {
  HocpParams p;
  Rng rng(4);
  const auto t = shell(0.0, p);
  const TemplateDepthMap map(t);
  // Ground-truth occlusion mask: 30 of 100 columns have their shell replaced
  // by an occluder surface 0.3 cube units in front.
  std::vector<int> cols(100);
  std::iota(cols.begin(), cols.end(), 0);
  for (int i = 99; i > 0; --i) std::swap(cols[static_cast<std::size_t>(i)], cols[rng.index(static_cast<std::size_t>(i) + 1)]);
  const std::set<int> occluded(cols.begin(), cols.begin() + 30);
  std::vector<PartDescriptor> part;
  for (const auto& d : t) {
    const int col = (d.dj + 5) * 10 + (d.di + 5);
    auto copy = d;
    if (occluded.count(col)) copy.dz = d.dz - 0.3f;
    part.push_back(copy);
  }
  const double ratio = static_cast<double>(depth_consistency_filter(part, map, p.delta_d).size()) / part.size();
  const double truth = 1.0 - occluded.size() / 100.0;
  EXPECT_NEAR(ratio, truth, 1e-12);
  EXPECT_NEAR(ratio, 0.7, 0.1);
}

TEST(DepthCheck, UnknownColumnsAreKept) {
  HocpParams p;
  const TemplateDepthMap map(shell(0.0, p));
  const auto far = describe(Vec3(1, 1, 1), 40, 40, p);
  EXPECT_TRUE(depth_consistent(far, map, p.delta_d));
}

TEST(DepthCheck, HistogramWithTemplateMatchesFilteredHistogram) {
  HocpParams p;
  const auto t = shell(0.0, p);
  const TemplateDepthMap map(t);
  auto part = t;
  for (std::size_t i = 0; i < part.size(); i += 7) part[i].dz -= 0.4f;
  std::vector<float> a(256), b(256);
  const auto kept = depth_consistency_filter(part, map, p.delta_d);
  EXPECT_EQ(histogram_into(part, p, a, &map), kept.size());
  histogram_into(kept, p, b);
  EXPECT_EQ(a, b);
}

ScaleLevel blob_level(int w, int h, int u0, int v0, int bw, int bh) {
  ScaleLevel level;
  level.cloud.frame = Frame::UnitCube;
  for (int v = v0; v < v0 + bh; ++v)
    for (int u = u0; u < u0 + bw; ++u) {
      level.pixels.push_back({u, v});
      level.cloud.points.emplace_back(static_cast<double>(u) / w, static_cast<double>(v) / h, 0.5);
    }
  return level;
}

TEST(PartsFixed, WindowSideIsFractionOfBox) {
  EXPECT_EQ(fixed_window_side(0.5, 100, 80), 50);
  EXPECT_EQ(fixed_window_side(1.0, 100, 80), 100);
  EXPECT_THROW(fixed_window_side(1.5, 100, 80), Error);
  EXPECT_THROW(fixed_window_side(0.0, 100, 80), Error);
}

TEST(PartsFixed, HolisticLimitCoversWholeBox) {
  const auto level = blob_level(40, 30, 0, 0, 40, 30);
  const auto parts = extract_parts_fixed(level, 40, 30, 1.0, 1000000);
  ASSERT_EQ(parts.size(), 1u);
  EXPECT_EQ(parts[0].size_px, 1200);
  EXPECT_EQ(parts[0].center_px, (Pixel{20, 15}));
}

TEST(PartsFixed, StrideOneGivesOnePartPerNonzeroPixel) {
  const auto level = blob_level(30, 30, 10, 10, 10, 10);
  const auto parts = extract_parts_fixed(level, 30, 30, 0.5, 1);
  EXPECT_EQ(parts.size(), level.cloud.size());
  // Exhaustive oracle for the realized sizes: count blob pixels inside each 15 px window.
  for (const auto& part : parts) {
    int count = 0;
    for (const auto& px : level.pixels)
      count += px.u >= part.center_px.u - 7 && px.u <= part.center_px.u + 7 && px.v >= part.center_px.v - 7 &&
               px.v <= part.center_px.v + 7;
    EXPECT_EQ(part.size_px, count);
  }
}

TEST(PartsVariable, UnitBoxCoversWholeCloud) {
  Rng rng(5);
  ScaleLevel level;
  for (int i = 0; i < 200; ++i) {
    level.cloud.points.emplace_back(rng.uniform(), rng.uniform(), rng.uniform());
    level.pixels.push_back({i % 20, i / 20});
  }
  // A unit box centred anywhere in the cube only holds every point from the centre.
  level.cloud.points[0] = Vec3::Constant(0.5);
  const auto parts = extract_parts_variable(level, 20, 10, 1.0, 1);
  EXPECT_EQ(parts.size(), 200u);
  EXPECT_EQ(parts[0].size_px, 200);
  for (const auto& p : parts) EXPECT_GE(p.size_px, 1);
}

TEST(PartsVariable, IsolatedPointHoldsItself) {
  ScaleLevel level;
  level.cloud.points = {Vec3(0.1, 0.1, 0.1), Vec3(0.9, 0.9, 0.9)};
  level.pixels = {{0, 0}, {1, 0}};
  const auto parts = extract_parts_variable(level, 2, 1, 0.2, 1);
  ASSERT_EQ(parts.size(), 2u);
  EXPECT_EQ(parts[0].size_px, 1);
  EXPECT_EQ(parts[1].size_px, 1);
}

TEST(PartsVariable, SizeShrinksAsNormalizedObjectGrows) {
  // Same metric plane normalized at growing scale h: a fixed cube box holds
  // fewer points per anchor.
  BackProjection bp;
  for (int v = 0; v < 40; ++v)
    for (int u = 0; u < 40; ++u) {
      bp.cloud.points.emplace_back(u, v, 0.5 * u);
      bp.pixels.push_back({u, v});
    }
  const std::vector<double> scales{1.0, 1.5, 2.0, 3.0};
  const auto space = normalize_scale_space(bp, scales);
  double previous = 1e300;
  double previous_h = -1.0;
  // Levels ordered by decreasing h; walk them from the smallest h upwards.
  for (auto it = space.levels.rbegin(); it != space.levels.rend(); ++it) {
    EXPECT_GT(it->h, previous_h);
    previous_h = it->h;
    const auto parts = extract_parts_variable(*it, 40, 40, 0.3, 4);
    double mean = 0.0;
    for (const auto& p : parts) mean += p.size_px;
    mean /= static_cast<double>(parts.size());
    EXPECT_LT(mean, previous);
    previous = mean;
  }
}

TEST(Featurize, WholeCubeSelectsAllDescriptors) {
  Rng rng(6);
  ControlLattice lat(6);
  for (double& c : lat.coeffs()) c = rng.uniform(0.1, 1.0);
  const LatticeColumns cols(lat);
  PartRegion r;
  r.center = Vec3::Constant(0.5);
  r.xmin = r.ymin = 0.0;
  r.xmax = r.ymax = 1.0;
  r.size_px = 1;
  const auto part = featurize_part(r, cols, HocpParams{});
  EXPECT_EQ(part.descriptors.size(), 216u);
  EXPECT_EQ(std::accumulate(part.feature.begin(), part.feature.end(), 0.0), 216.0);
}

TEST(Featurize, ColumnSelectionMatchesBruteForce) {
  Rng rng(7);
  ControlLattice lat(12);
  for (double& c : lat.coeffs()) c = rng.uniform() < 0.3 ? rng.uniform(-1, 1) : 0.0;
  const LatticeColumns cols(lat);
  const auto all = control_descriptors(lat);
  for (int t = 0; t < 50; ++t) {
    double x0 = rng.uniform(-0.2, 1.2), x1 = rng.uniform(-0.2, 1.2), y0 = rng.uniform(-0.2, 1.2), y1 = rng.uniform(-0.2, 1.2);
    if (x0 > x1) std::swap(x0, x1);
    if (y0 > y1) std::swap(y0, y1);
    std::size_t expected = 0;
    for (const auto& d : all)
      expected += d.position.x() >= x0 && d.position.x() <= x1 && d.position.y() >= y0 && d.position.y() <= y1;
    EXPECT_EQ(cols.select(x0, x1, y0, y1).size(), expected);
  }
}

TEST(Featurize, IdenticalPartsHaveIdenticalFeatures) {
  Rng rng(8);
  ControlLattice lat(10);
  for (double& c : lat.coeffs()) c = rng.uniform(-1, 1);
  const LatticeColumns cols(lat);
  PartRegion r;
  r.center = Vec3(0.4, 0.5, 0.45);
  r.xmin = 0.3, r.xmax = 0.6, r.ymin = 0.35, r.ymax = 0.7;
  const auto a = featurize_part(r, cols, HocpParams{});
  const auto b = featurize_part(r, cols, HocpParams{});
  EXPECT_EQ(a.feature, b.feature);
}

TEST(Featurize, EmptyFootprintIsAnError) {
  ControlLattice lat(8);
  const LatticeColumns cols(lat);
  PartRegion r;
  r.center = Vec3::Constant(0.5);
  r.xmin = r.ymin = 0.4;
  r.xmax = r.ymax = 0.6;
  EXPECT_THROW(featurize_part(r, cols, HocpParams{}), Error);
}

}  // namespace
}  // namespace ihf
