#include "ihf/ibs.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace ihf {
namespace {

// Independent oracle: the global tensor sum over all N^3 controls with the
// closed-form uniform cubic B-spline centred on each vertex.
double cubic_bspline(double t) {
  t = std::abs(t);
  if (t < 1.0) return (4.0 - 6.0 * t * t + 3.0 * t * t * t) / 6.0;
  if (t < 2.0) return (2.0 - t) * (2.0 - t) * (2.0 - t) / 6.0;
  return 0.0;
}

double global_tensor_sum(const ControlLattice& lat, const Vec3& x) {
  const int n = lat.resolution();
  const double d = lat.delta();
  double f = 0.0;
  for (int k = 1; k <= n; ++k) {
    const double bz = cubic_bspline((x.z() - (k - 2) * d) / d);
    if (bz == 0.0) continue;
    for (int j = 1; j <= n; ++j) {
      const double by = cubic_bspline((x.y() - (j - 2) * d) / d);
      if (by == 0.0) continue;
      for (int i = 1; i <= n; ++i) f += lat.at(i, j, k) * cubic_bspline((x.x() - (i - 2) * d) / d) * by * bz;
    }
  }
  return f;
}

ControlLattice random_lattice(int n, Rng& rng) {
  ControlLattice lat(n);
  for (double& c : lat.coeffs()) c = rng.uniform(-1.0, 1.0);
  return lat;
}

Vec3 random_point(Rng& rng) { return {rng.uniform(), rng.uniform(), rng.uniform()}; }

TEST(Blend, EndpointValues) {
  const auto b = blend(0.0);
  EXPECT_DOUBLE_EQ(b[0], 1.0 / 6.0);
  EXPECT_DOUBLE_EQ(b[1], 4.0 / 6.0);
  EXPECT_DOUBLE_EQ(b[2], 1.0 / 6.0);
  EXPECT_DOUBLE_EQ(b[3], 0.0);
}

TEST(Blend, MidpointMatchesHandDerivedFractions) {
  // (1/48, 23/48, 23/48, 1/48) from direct substitution of u = 1/2.
  const auto b = blend(0.5);
  EXPECT_NEAR(b[0], 1.0 / 48.0, 1e-15);
  EXPECT_NEAR(b[1], 23.0 / 48.0, 1e-15);
  EXPECT_NEAR(b[2], 23.0 / 48.0, 1e-15);
  EXPECT_NEAR(b[3], 1.0 / 48.0, 1e-15);
}

TEST(Blend, PartitionOfUnity) {
  Rng rng(1);
  double worst = 0.0;
  for (int t = 0; t < 10000; ++t) {
    const auto b = blend(rng.uniform());
    worst = std::max(worst, std::abs(b[0] + b[1] + b[2] + b[3] - 1.0));
    for (double w : b) {
      EXPECT_GE(w, 0.0);
      EXPECT_LE(w, 1.0);
    }
  }
  EXPECT_LE(worst, 1e-12);
  const auto b = blend(0.37);
  EXPECT_NEAR(b[0] + b[1] + b[2] + b[3], 1.0, 1e-12);
}

TEST(Blend, RejectsOutOfRange) {
  EXPECT_THROW(blend(1.0), Error);
  EXPECT_THROW(blend(-1e-9), Error);
}

TEST(BasisVector, SumsToOneAndFirstCellIndices) {
  Rng rng(2);
  for (int t = 0; t < 200; ++t) {
    const auto e = basis_vector(random_point(rng), 10);
    double sum = 0.0;
    for (const auto& entry : e.entries) sum += entry.value;
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
  const auto loc = locate(Vec3::Zero(), 10);
  EXPECT_EQ(loc.index, (std::array<int, 3>{1, 1, 1}));
  const auto e = basis_vector(Vec3::Zero(), 10);
  ControlLattice probe(10);
  for (const auto& entry : e.entries) {
    const int i = static_cast<int>(entry.index % 10) + 1;
    const int j = static_cast<int>((entry.index / 10) % 10) + 1;
    const int k = static_cast<int>(entry.index / 100) + 1;
    EXPECT_TRUE(i >= 1 && i <= 4 && j >= 1 && j <= 4 && k >= 1 && k <= 4);
  }
  EXPECT_THROW(basis_vector(Vec3::Zero(), 3), Error);
}

TEST(BasisVector, InnerProductEqualsEvaluate) {
  Rng rng(3);
  const auto lat = random_lattice(10, rng);
  for (int t = 0; t < 200; ++t) {
    const Vec3 x = random_point(rng);
    const auto e = basis_vector(x, 10);
    double dot = 0.0;
    for (const auto& entry : e.entries) dot += entry.value * lat.coeffs()[entry.index];
    EXPECT_NEAR(dot, evaluate(lat, x), 1e-12);
  }
}

TEST(Evaluate, ZeroAndConstantLattices) {
  Rng rng(4);
  ControlLattice zero(8);
  ControlLattice constant(8, std::vector<double>(512, 2.5));
  for (int t = 0; t < 100; ++t) {
    const Vec3 x = random_point(rng);
    EXPECT_EQ(evaluate(zero, x), 0.0);
    EXPECT_NEAR(evaluate(constant, x), 2.5, 1e-12);
  }
  EXPECT_NEAR(evaluate(constant, Vec3::Ones()), 2.5, 1e-12);
}

TEST(Evaluate, LocalFormEqualsGlobalTensorSum) {
  Rng rng(5);
  const auto lat = random_lattice(8, rng);
  for (int t = 0; t < 1000; ++t) {
    const Vec3 x = random_point(rng);
    EXPECT_NEAR(evaluate(lat, x), global_tensor_sum(lat, x), 1e-9);
  }
  // Knots and the closed upper face.
  for (double c : {0.0, 0.2, 0.4, 1.0}) EXPECT_NEAR(evaluate(lat, Vec3::Constant(c)), global_tensor_sum(lat, Vec3::Constant(c)), 1e-9);
}

TEST(Evaluate, Linearity) {
  Rng rng(6);
  const auto a = random_lattice(7, rng);
  const auto b = random_lattice(7, rng);
  ControlLattice mix(7);
  for (std::size_t i = 0; i < mix.coeffs().size(); ++i) mix.coeffs()[i] = 2.0 * a.coeffs()[i] - 0.5 * b.coeffs()[i];
  for (int t = 0; t < 200; ++t) {
    const Vec3 x = random_point(rng);
    EXPECT_NEAR(evaluate(mix, x), 2.0 * evaluate(a, x) - 0.5 * evaluate(b, x), 1e-12);
  }
}

TEST(Evaluate, ContinuousAcrossCellSeams) {
  Rng rng(7);
  const auto lat = random_lattice(10, rng);
  const double d = lat.delta();
  const double step = 1e-6;
  for (int c = 1; c < 7; ++c) {
    const Vec3 seam(c * d, rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9));
    const double jump = std::abs(evaluate(lat, seam + Vec3(step, 0, 0)) - evaluate(lat, seam - Vec3(step, 0, 0)));
    // Lipschitz bound: |grad f| <= 2 * max|c| / delta per axis for cubic splines.
    EXPECT_LE(jump, 2.0 / d * 2.0 * step);
  }
}

struct SphereSamples {
  PointCloud cloud;
  std::vector<Vec3> normals;
};

SphereSamples sphere(int count, double radius, Rng& rng) {
  SphereSamples s;
  s.cloud.frame = Frame::UnitCube;
  for (int i = 0; i < count; ++i) {
    Vec3 d(rng.normal(), rng.normal(), rng.normal());
    d.normalize();
    s.cloud.points.push_back(Vec3::Constant(0.5) + radius * d);
    s.normals.push_back(d);
  }
  return s;
}

double surface_rms(const ControlLattice& lat, const PointCloud& c) {
  double acc = 0.0;
  for (const auto& p : c.points) acc += evaluate(lat, p) * evaluate(lat, p);
  return std::sqrt(acc / static_cast<double>(c.size()));
}

TEST(Fit3L, SphereSurfaceResidualAndNearSurfaceSigns) {
  Rng rng(8);
  const auto s = sphere(2000, 0.3, rng);
  FitOptions opt;
  opt.n = 50;
  const auto lat = fit_3l(s.cloud, s.normals, opt);
  EXPECT_LE(surface_rms(lat, s.cloud), 0.1);

  const double eps = 0.5 * lat.delta();
  int correct = 0;
  const int probes = 1000;
  for (int t = 0; t < probes; ++t) {
    Vec3 d(rng.normal(), rng.normal(), rng.normal());
    d.normalize();
    correct += evaluate(lat, Vec3::Constant(0.5) + (0.3 + eps) * d) > 0.0;
    correct += evaluate(lat, Vec3::Constant(0.5) + (0.3 - eps) * d) < 0.0;
  }
  EXPECT_GE(correct, static_cast<int>(0.98 * 2 * probes));
}

TEST(Fit3L, PureRidgeVanishesAwayFromDataSmoothnessSeparatesInsideOutside) {
  Rng rng(9);
  const auto s = sphere(2000, 0.3, rng);
  FitOptions opt;
  opt.n = 50;
  const auto ridge = fit_3l(s.cloud, s.normals, opt);
  EXPECT_EQ(evaluate(ridge, Vec3::Constant(0.5)), 0.0);
  EXPECT_EQ(evaluate(ridge, Vec3::Constant(0.05)), 0.0);

  opt.smoothness = 1e-3;
  const auto smooth = fit_3l(s.cloud, s.normals, opt);
  const double centre = evaluate(smooth, Vec3::Constant(0.5));
  const double corner = evaluate(smooth, Vec3::Constant(0.05));
  EXPECT_LT(centre, 0.0);
  EXPECT_GT(corner, 0.0);
}

TEST(Fit3L, PlaneResidualAndSignFlip) {
  PointCloud plane;
  std::vector<Vec3> normals;
  for (int i = 0; i <= 40; ++i)
    for (int j = 0; j <= 40; ++j) {
      plane.points.emplace_back(0.1 + 0.8 * i / 40.0, 0.1 + 0.8 * j / 40.0, 0.5);
      normals.emplace_back(0, 0, -1);
    }
  FitOptions opt;
  opt.n = 20;
  const auto lat = fit_3l(plane, normals, opt);
  EXPECT_LE(surface_rms(lat, plane), 0.1);
  const double eps = 0.5 * lat.delta();
  Rng rng(10);
  for (int t = 0; t < 100; ++t) {
    const double x = rng.uniform(0.15, 0.85), y = rng.uniform(0.15, 0.85);
    EXPECT_GT(evaluate(lat, Vec3(x, y, 0.5 - eps)), 0.0);
    EXPECT_LT(evaluate(lat, Vec3(x, y, 0.5 + eps)), 0.0);
  }
}

TEST(Fit3L, ResidualNonDecreasingInLambda) {
  Rng rng(11);
  const auto s = sphere(600, 0.3, rng);
  FitOptions opt;
  opt.n = 12;
  // The ridge property holds for exact minimizers: solve to convergence.
  opt.max_iterations = 20000;
  opt.tolerance = 1e-13;
  const auto samples = three_level_samples(s.cloud.points, s.normals, 0.5 / 9.0);
  double previous = -1.0;
  for (double lambda : {1e-9, 1e-6, 1e-4, 1e-2, 1.0, 10.0}) {
    opt.lambda = lambda;
    const double r = fit_residual(fit_3l(s.cloud, s.normals, opt), samples);
    EXPECT_GE(r, previous - 1e-9);
    previous = r;
  }
}

TEST(Fit3L, ZeroLambdaUnderdeterminedIsAnError) {
  Rng rng(12);
  const auto s = sphere(20, 0.3, rng);
  FitOptions opt;
  opt.n = 20;
  opt.lambda = 0.0;
  try {
    fit_3l(s.cloud, s.normals, opt);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Underdetermined);
    EXPECT_NE(std::string(e.what()).find("lambda > 0"), std::string::npos);
  }
  opt.lambda = 1e-6;
  opt.epsilon = 1.0;
  EXPECT_THROW(fit_3l(s.cloud, s.normals, opt), Error);
}

TEST(Descriptors, CountsAndThresholds) {
  Rng rng(13);
  ControlLattice lat(4);
  for (double& c : lat.coeffs()) c = rng.uniform(0.1, 1.0) * (rng.uniform() < 0.5 ? -1 : 1);
  const auto all = control_descriptors(lat);
  EXPECT_EQ(all.size(), 64u);
  EXPECT_EQ(all[5].position, lat.vertex_position(all[5].index[0], all[5].index[1], all[5].index[2]));
  for (const auto& d : all) {
    for (int a : d.index) {
      EXPECT_GE(a, 1);
      EXPECT_LE(a, 4);
    }
  }

  EXPECT_TRUE(control_descriptors(ControlLattice(6), 1e-9).empty());

  const auto big = random_lattice(9, rng);
  std::vector<double> mags;
  for (double c : big.coeffs()) mags.push_back(std::abs(c));
  std::nth_element(mags.begin(), mags.begin() + mags.size() / 2, mags.end());
  const double median = mags[mags.size() / 2];
  const auto kept = control_descriptors(big, median);
  std::size_t oracle = 0;
  for (double c : big.coeffs()) oracle += std::abs(c) > median;
  EXPECT_EQ(kept.size(), oracle);
  EXPECT_NEAR(static_cast<double>(kept.size()), std::ceil(729 / 2.0), 1.0);
}

TEST(LatticeFile, RoundTripAndCorruption) {
  Rng rng(14);
  const auto lat = random_lattice(6, rng);
  std::stringstream a;
  write_lattice(a, lat);
  const auto bytes = a.str();
  EXPECT_EQ(bytes.size(), 12u + 8u * 216u);
  std::stringstream in(bytes);
  const auto back = read_lattice(in);
  EXPECT_EQ(back, lat);
  std::stringstream b;
  write_lattice(b, back);
  EXPECT_EQ(b.str(), bytes);

  std::stringstream truncated(bytes.substr(0, 40));
  EXPECT_THROW(read_lattice(truncated), Error);
  std::string bad = bytes;
  bad[0] = 'X';
  std::stringstream wrong(bad);
  try {
    read_lattice(wrong);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::CorruptModel);
  }
}

}  // namespace
}  // namespace ihf
