#include "ihf/ibs.hpp"

#include "ihf/binary_io.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>

namespace ihf {

BlendWeights blend(double u) {
  if (!(u >= 0.0 && u < 1.0)) throw Error(ErrorCode::InvalidArgument, "blend parameter must lie in [0, 1)");
  const double u2 = u * u;
  const double u3 = u2 * u;
  const double v = 1.0 - u;
  return {v * v * v / 6.0, (3.0 * u3 - 6.0 * u2 + 4.0) / 6.0, (-3.0 * u3 + 3.0 * u2 + 3.0 * u + 1.0) / 6.0,
          u3 / 6.0};
}

ControlLattice::ControlLattice(int n) : ControlLattice(n, std::vector<double>(n > 0 ? std::size_t(n) * n * n : 0)) {}

ControlLattice::ControlLattice(int n, std::vector<double> coeffs) : n_(n), coeffs_(std::move(coeffs)) {
  if (n < 4) throw Error(ErrorCode::InvalidArgument, "IBS resolution N must be >= 4");
  if (coeffs_.size() != static_cast<std::size_t>(n) * n * n)
    throw Error(ErrorCode::InvalidArgument, "control lattice needs N^3 coefficients");
}

CellLocation locate(const Vec3& x, int n) {
  if (n < 4) throw Error(ErrorCode::InvalidArgument, "IBS resolution N must be >= 4");
  CellLocation loc;
  const int last_cell = n - 4;
  for (int a = 0; a < 3; ++a) {
    if (!(x[a] >= 0.0 && x[a] <= 1.0)) throw Error(ErrorCode::InvalidArgument, "point lies outside the unit cube");
    const double t = x[a] * (n - 3);
    int cell = static_cast<int>(std::floor(t));
    double u = t - cell;
    if (cell > last_cell) {
      cell = last_cell;
      u = std::nextafter(1.0, 0.0);
    }
    loc.index[static_cast<std::size_t>(a)] = cell + 1;
    loc.local[static_cast<std::size_t>(a)] = u;
  }
  return loc;
}

BasisVector basis_vector(const Vec3& x, int n) {
  const CellLocation loc = locate(x, n);
  const BlendWeights bx = blend(loc.local[0]);
  const BlendWeights by = blend(loc.local[1]);
  const BlendWeights bz = blend(loc.local[2]);
  const auto [i, j, k] = loc.index;
  const auto nn = static_cast<std::size_t>(n);
  BasisVector e;
  std::size_t slot = 0;
  for (int p = 0; p < 4; ++p) {
    for (int m = 0; m < 4; ++m) {
      const std::size_t row = (static_cast<std::size_t>(j + m - 1) + nn * static_cast<std::size_t>(k + p - 1)) * nn;
      const double wmp = by[static_cast<std::size_t>(m)] * bz[static_cast<std::size_t>(p)];
      for (int l = 0; l < 4; ++l)
        e.entries[slot++] = {row + static_cast<std::size_t>(i + l - 1), bx[static_cast<std::size_t>(l)] * wmp};
    }
  }
  return e;
}

double evaluate(const ControlLattice& lattice, const Vec3& x) {
  const BasisVector e = basis_vector(x, lattice.resolution());
  const auto c = lattice.coeffs();
  double f = 0.0;
  for (const auto& entry : e.entries) f += c[entry.index] * entry.value;
  return f;
}

std::vector<LevelSample> three_level_samples(std::span<const Vec3> points, std::span<const Vec3> normals,
                                             double epsilon) {
  if (points.size() != normals.size()) throw Error(ErrorCode::InvalidArgument, "one normal per point required");
  auto inside = [](const Vec3& p) { return (p.array() >= 0.0).all() && (p.array() <= 1.0).all(); };
  std::vector<LevelSample> samples;
  samples.reserve(points.size() * 3);
  for (std::size_t q = 0; q < points.size(); ++q) {
    samples.push_back({points[q], 0.0});
    const Vec3 out = points[q] + epsilon * normals[q];
    const Vec3 in = points[q] - epsilon * normals[q];
    if (inside(out)) samples.push_back({out, 1.0});
    if (inside(in)) samples.push_back({in, -1.0});
  }
  return samples;
}

double fit_residual(const ControlLattice& lattice, std::span<const LevelSample> samples) {
  double r = 0.0;
  for (const auto& s : samples) {
    const double d = evaluate(lattice, s.position) - s.target;
    r += d * d;
  }
  return r;
}

namespace {

// Applies (A^T A + lambda I + smoothness * L) to x, where A holds the basis
// rows restricted to the unknown columns and L is the 6-neighbour graph
// Laplacian of the lattice.
class NormalOperator {
 public:
  NormalOperator(const std::vector<BasisVector>& rows, const std::vector<int>& column, int unknowns, int n,
                 double lambda, double smoothness)
      : rows_(rows), column_(column), unknowns_(unknowns), n_(n), lambda_(lambda), smoothness_(smoothness) {}

  void apply(const Eigen::VectorXd& x, Eigen::VectorXd& y) const {
    y = lambda_ * x;
    for (const auto& e : rows_) {
      double ax = 0.0;
      for (const auto& entry : e.entries) ax += entry.value * x[column_[entry.index]];
      for (const auto& entry : e.entries) y[column_[entry.index]] += entry.value * ax;
    }
    if (smoothness_ > 0.0) {
      const int n = n_;
      for (int k = 0; k < n; ++k)
        for (int j = 0; j < n; ++j)
          for (int i = 0; i < n; ++i) {
            const int a = i + n * (j + n * k);
            const int nb[3] = {i + 1 < n ? a + 1 : -1, j + 1 < n ? a + n : -1, k + 1 < n ? a + n * n : -1};
            for (int b : nb) {
              if (b < 0) continue;
              const double d = smoothness_ * (x[a] - x[b]);
              y[a] += d;
              y[b] -= d;
            }
          }
    }
  }

  Eigen::VectorXd diagonal() const {
    Eigen::VectorXd d = Eigen::VectorXd::Constant(unknowns_, lambda_);
    for (const auto& e : rows_)
      for (const auto& entry : e.entries) d[column_[entry.index]] += entry.value * entry.value;
    if (smoothness_ > 0.0) {
      const int n = n_;
      for (int k = 0; k < n; ++k)
        for (int j = 0; j < n; ++j)
          for (int i = 0; i < n; ++i) {
            const int deg = (i > 0) + (i + 1 < n) + (j > 0) + (j + 1 < n) + (k > 0) + (k + 1 < n);
            d[i + n * (j + n * k)] += smoothness_ * deg;
          }
    }
    return d;
  }

 private:
  const std::vector<BasisVector>& rows_;
  const std::vector<int>& column_;
  int unknowns_;
  int n_;
  double lambda_;
  double smoothness_;
};

// Jacobi-preconditioned conjugate gradients from a zero start, so that for
// tiny lambda the iterate stays in the row space (minimum-norm solution).
Eigen::VectorXd solve_pcg(const NormalOperator& op, const Eigen::VectorXd& rhs, int max_iterations, double tolerance) {
  const Eigen::VectorXd inv_diag = op.diagonal().cwiseMax(1e-300).cwiseInverse();
  Eigen::VectorXd x = Eigen::VectorXd::Zero(rhs.size());
  Eigen::VectorXd r = rhs;
  Eigen::VectorXd z = inv_diag.cwiseProduct(r);
  Eigen::VectorXd p = z;
  Eigen::VectorXd q(rhs.size());
  double rz = r.dot(z);
  const double stop = tolerance * tolerance * rhs.squaredNorm();
  for (int it = 0; it < max_iterations && r.squaredNorm() > stop; ++it) {
    op.apply(p, q);
    const double pq = p.dot(q);
    if (!(pq > 0.0)) break;
    const double step = rz / pq;
    x += step * p;
    r -= step * q;
    z = inv_diag.cwiseProduct(r);
    const double rz_next = r.dot(z);
    p = z + (rz_next / rz) * p;
    rz = rz_next;
  }
  return x;
}

}  // namespace

ControlLattice fit_3l(const PointCloud& points, std::span<const Vec3> normals, const FitOptions& options) {
  const int n = options.n;
  if (n < 4) throw Error(ErrorCode::InvalidArgument, "IBS resolution N must be >= 4");
  if (points.empty()) throw Error(ErrorCode::EmptyCloud, "3L fit needs at least one point");
  const double delta = 1.0 / (n - 3);
  const double eps = options.epsilon > 0.0 ? options.epsilon : 0.5 * delta;
  if (!(eps < delta)) throw Error(ErrorCode::InvalidArgument, "3L offset epsilon must be below the knot spacing");
  if (!(options.lambda >= 0.0) || !(options.smoothness >= 0.0))
    throw Error(ErrorCode::InvalidArgument, "regularization weights must be non-negative");

  const auto samples = three_level_samples(points.points, normals, eps);
  const std::size_t total = static_cast<std::size_t>(n) * n * n;
  const bool coupled = options.smoothness > 0.0;

  std::vector<BasisVector> rows;
  rows.reserve(samples.size());
  for (const auto& s : samples) rows.push_back(basis_vector(s.position, n));

  // Without the smoothness coupling, controls outside every sample's support
  // solve lambda * c = 0 and are left out of the system.
  std::vector<int> column(total, coupled ? 0 : -1);
  int unknowns = 0;
  if (!coupled)
    for (const auto& e : rows)
      for (const auto& entry : e.entries) column[entry.index] = 0;
  for (std::size_t c = 0; c < total; ++c)
    if (column[c] == 0) column[c] = unknowns++;

  if (options.lambda == 0.0 && !coupled && static_cast<std::size_t>(unknowns) > rows.size())
    throw Error(ErrorCode::Underdetermined,
                "3L system has more unknowns than constraints; use lambda > 0 for a ridge-regularized fit");

  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(unknowns);
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (const auto& entry : rows[r].entries) rhs[column[entry.index]] += entry.value * samples[r].target;

  const NormalOperator op(rows, column, unknowns, n, options.lambda, options.smoothness);
  const Eigen::VectorXd sol = solve_pcg(op, rhs, options.max_iterations, options.tolerance);

  ControlLattice lattice(n);
  auto c = lattice.coeffs();
  for (std::size_t v = 0; v < total; ++v)
    if (column[v] >= 0) c[v] = sol[column[v]];
  return lattice;
}

std::vector<ControlDescriptor> control_descriptors(const ControlLattice& lattice, double weight_threshold) {
  std::vector<ControlDescriptor> out;
  const int n = lattice.resolution();
  for (int k = 1; k <= n; ++k)
    for (int j = 1; j <= n; ++j)
      for (int i = 1; i <= n; ++i) {
        const double w = lattice.at(i, j, k);
        if (std::abs(w) > weight_threshold) out.push_back({{i, j, k}, w, lattice.vertex_position(i, j, k)});
      }
  return out;
}

namespace {
constexpr std::uint32_t kLatticeVersion = 1;
}

void write_lattice(std::ostream& os, const ControlLattice& lattice) {
  io::write_magic(os, "IBSL");
  io::write_u32(os, kLatticeVersion);
  io::write_u32(os, static_cast<std::uint32_t>(lattice.resolution()));
  for (double c : lattice.coeffs()) io::write_f64(os, c);
}

ControlLattice read_lattice(std::istream& is) {
  io::Reader in(is, "lattice");
  in.expect_magic("IBSL");
  if (in.u32() != kLatticeVersion) in.fail("unsupported version");
  const auto n = in.u32();
  if (n < 4 || n > 1024) in.fail("implausible resolution");
  std::vector<double> coeffs(static_cast<std::size_t>(n) * n * n);
  for (double& c : coeffs) c = in.f64();
  return ControlLattice(static_cast<int>(n), std::move(coeffs));
}

}  // namespace ihf
