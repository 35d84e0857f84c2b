#pragma once

#include "ihf/common.hpp"
#include "ihf/geometry.hpp"

#include <array>
#include <iosfwd>
#include <span>
#include <vector>

namespace ihf {

/// Uniform cubic B-spline blending weights (b0..b3) for a local parameter u.
using BlendWeights = std::array<double, 4>;

BlendWeights blend(double u);

/// N x N x N control lattice of an implicit B-spline over [0,1]^3.
/// Indices are 1-based as in the tensor-product sum; vertex (i, j, k) sits at
/// ((i-2), (j-2), (k-2)) * delta.
class ControlLattice {
 public:
  explicit ControlLattice(int n);
  ControlLattice(int n, std::vector<double> coeffs);

  int resolution() const { return n_; }
  double delta() const { return 1.0 / (n_ - 3); }
  std::span<const double> coeffs() const { return coeffs_; }
  std::span<double> coeffs() { return coeffs_; }

  std::size_t flat(int i, int j, int k) const {
    return static_cast<std::size_t>(i - 1) +
           static_cast<std::size_t>(n_) * (static_cast<std::size_t>(j - 1) + static_cast<std::size_t>(n_) * (k - 1));
  }
  double at(int i, int j, int k) const { return coeffs_[flat(i, j, k)]; }
  double& at(int i, int j, int k) { return coeffs_[flat(i, j, k)]; }

  Vec3 vertex_position(int i, int j, int k) const { return Vec3(i - 2, j - 2, k - 2) * delta(); }

  friend bool operator==(const ControlLattice&, const ControlLattice&) = default;

 private:
  int n_;
  std::vector<double> coeffs_;
};

/// Cell lookup for a cube point: first active 1-based index per axis and the
/// local parameters (u, v, w). x = 1 clamps into the last cell.
struct CellLocation {
  std::array<int, 3> index{};
  std::array<double, 3> local{};
};

CellLocation locate(const Vec3& x, int n);

struct BasisEntry {
  std::size_t index;  // flat lattice index
  double value;
};

/// Sparse basis vector e(x): the 64 tensor products active at x.
struct BasisVector {
  std::array<BasisEntry, 64> entries{};
};

BasisVector basis_vector(const Vec3& x, int n);

double evaluate(const ControlLattice& lattice, const Vec3& x);

/// A constraint of the three-level fit: f(position) should equal target.
struct LevelSample {
  Vec3 position;
  double target;
};

/// Surface points (target 0) plus points pushed +epsilon / -epsilon along the
/// normals (targets +1 / -1). Offset samples leaving the cube are dropped.
std::vector<LevelSample> three_level_samples(std::span<const Vec3> points, std::span<const Vec3> normals,
                                             double epsilon);

struct FitOptions {
  int n = 24;
  double epsilon = -1.0;  // <= 0 selects delta / 2
  double lambda = 1e-6;
  // Weight of the squared-difference penalty between 6-adjacent controls.
  // Zero keeps the pure ridge objective, whose solution vanishes away from
  // the data.
  double smoothness = 0.0;
  // Preconditioned CG on the normal equations.
  int max_iterations = 200;
  double tolerance = 1e-4;
};

ControlLattice fit_3l(const PointCloud& points, std::span<const Vec3> normals, const FitOptions& options);

// Sum of squared residuals of the lattice over the given samples.
double fit_residual(const ControlLattice& lattice, std::span<const LevelSample> samples);

struct ControlDescriptor {
  std::array<int, 3> index{};  // 1-based
  double weight = 0.0;
  Vec3 position = Vec3::Zero();
};

/// One descriptor per vertex with |weight| > threshold, in flat index order.
std::vector<ControlDescriptor> control_descriptors(const ControlLattice& lattice, double weight_threshold = 0.0);

/// Binary layout: "IBSL", u32 version, u32 N, then N^3 little-endian f64.
void write_lattice(std::ostream& os, const ControlLattice& lattice);
ControlLattice read_lattice(std::istream& is);

}  // namespace ihf
