#include "checks.hpp"

#include "ihf/harness.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <tuple>

namespace ihf::checks {

namespace {

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

// Closed-form uniform cubic B-spline centred on 0.
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
  for (int k = 1; k <= n; ++k)
    for (int j = 1; j <= n; ++j)
      for (int i = 1; i <= n; ++i)
        f += lat.at(i, j, k) * cubic_bspline((x.x() - (i - 2) * d) / d) * cubic_bspline((x.y() - (j - 2) * d) / d) *
             cubic_bspline((x.z() - (k - 2) * d) / d);
  return f;
}

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
    const int tb = std::min(nu[1] - 1, static_cast<int>(nu[1] * (d.z() / r + 1.0) / 2.0));
    double phi = std::atan2(d.y(), d.x());
    if (phi < 0) phi += 2 * kPi;
    const int pb = std::min(nu[2] - 1, static_cast<int>(nu[2] * phi / (2 * kPi)));
    h[static_cast<std::size_t>((rb * nu[1] + tb) * nu[2] + pb)] += 1.0f;
  }
  return h;
}

}  // namespace

CheckResult timed(const std::string& name, double limit_s, const std::function<void(CheckResult&)>& body) {
  CheckResult r;
  r.name = name;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    body(r);
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (limit_s > 0.0 && r.seconds >= limit_s) {
    r.passed = false;
    r.detail += fmt(" (runtime %.1f s over the %.0f s limit)", r.seconds, limit_s);
  }
  return r;
}

std::string format_line(const std::string& label, const CheckResult& r) {
  std::ostringstream os;
  os << (r.passed ? "PASS" : "FAIL") << "  " << label << "  " << r.name << "  [" << fmt("%.1f s", r.seconds) << "]  "
     << r.detail;
  return os.str();
}

CheckResult blending(double limit_s) {
  return timed("blending: partition of unity and u = 0 endpoint", limit_s, [](CheckResult& r) {
    Rng rng(101);
    double worst = 0.0;
    for (int i = 0; i < 10000; ++i) {
      const auto b = blend(rng.uniform());
      worst = std::max(worst, std::abs(b[0] + b[1] + b[2] + b[3] - 1.0));
    }
    const auto b0 = blend(0.0);
    const double e0 = std::abs(b0[0] - 1.0 / 6) + std::abs(b0[1] - 4.0 / 6) + std::abs(b0[2] - 1.0 / 6) + std::abs(b0[3]);
    r.passed = worst <= 1e-12 && e0 <= 1e-15;
    r.detail = fmt("max |sum - 1| = %.2e over 1e4 u; |blend(0) - (1,4,1,0)/6| = %.2e", worst, e0);
  });
}

CheckResult ibs_equivalence(double limit_s) {
  return timed("IBS local evaluation vs global tensor sum", limit_s, [](CheckResult& r) {
    Rng rng(202);
    ControlLattice lat(8);
    for (double& c : lat.coeffs()) c = rng.uniform(-1.0, 1.0);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
      const Vec3 x(rng.uniform(), rng.uniform(), rng.uniform());
      worst = std::max(worst, std::abs(evaluate(lat, x) - global_tensor_sum(lat, x)));
    }
    r.passed = worst <= 1e-9;
    r.detail = fmt("N = 8, 1000 points, max difference %.2e", worst);
  });
}

CheckResult sphere_fit(double limit_s) {
  return timed("3L sphere fit: surface RMS and inside/outside signs", limit_s, [](CheckResult& r) {
    Rng rng(303);
    PointCloud cloud;
    cloud.frame = Frame::UnitCube;
    std::vector<Vec3> normals;
    for (int i = 0; i < 2000; ++i) {
      Vec3 d(rng.normal(), rng.normal(), rng.normal());
      d.normalize();
      cloud.points.push_back(Vec3::Constant(0.5) + 0.3 * d);
      normals.push_back(d);
    }
    FitOptions opt;
    opt.n = 50;
    opt.lambda = 1e-6;
    const ControlLattice lat = fit_3l(cloud, normals, opt);
    double acc = 0.0;
    for (const auto& p : cloud.points) acc += evaluate(lat, p) * evaluate(lat, p);
    const double rms = std::sqrt(acc / cloud.size());
    // Probes just outside / inside the surface, within the fit's support.
    const double eps = 0.5 * lat.delta();
    int ok = 0;
    const int probes = 1000;
    for (int t = 0; t < probes; ++t) {
      Vec3 d(rng.normal(), rng.normal(), rng.normal());
      d.normalize();
      ok += evaluate(lat, Vec3::Constant(0.5) + (0.3 + eps) * d) > 0.0;
      ok += evaluate(lat, Vec3::Constant(0.5) + (0.3 - eps) * d) < 0.0;
    }
    const double frac = ok / (2.0 * probes);
    r.passed = rms <= 0.1 && frac >= 0.98;
    r.detail = fmt("RMS |f| = %.4f (<= 0.1), sign split %.1f%% (>= 98%%)", rms, 100 * frac);
  });
}

CheckResult hocp_properties(double limit_s) {
  return timed("HoCP conservation, azimuth equivariance, dimension 256", limit_s, [](CheckResult& r) {
    const HocpParams p;
    Rng rng(404);
    bool conserved = true, oracle = true;
    for (int trial = 0; trial < 50; ++trial) {
      const int k = 1 + static_cast<int>(rng.index(400));
      std::vector<Vec3> pts;
      for (int i = 0; i < k; ++i) pts.emplace_back(rng.uniform(), rng.uniform(), rng.uniform());
      const Vec3 c(rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7));
      const auto f = hocp_histogram(pts, c, p);
      conserved &= f.total() == static_cast<double>(k);
      oracle &= f.bins == oracle_histogram(pts, c, p.nu, p.r_min_fraction);
    }
    const Vec3 c = Vec3::Constant(0.5);
    std::vector<Vec3> pts, rotated;
    const double a = 2 * kPi / p.nu[2];
    for (int i = 0; i < 500; ++i) {
      pts.emplace_back(rng.uniform(), rng.uniform(), rng.uniform());
      const Vec3 d = pts.back() - c;
      rotated.push_back(c + Vec3(std::cos(a) * d.x() - std::sin(a) * d.y(), std::sin(a) * d.x() + std::cos(a) * d.y(), d.z()));
    }
    const auto f0 = hocp_histogram(pts, c, p).bins, f1 = hocp_histogram(rotated, c, p).bins;
    bool shifted = f0.size() == f1.size();
    const int np = p.nu[2];
    for (int block = 0; shifted && block < p.nu[0] * p.nu[1]; ++block)
      for (int b = 0; b < np; ++b)
        shifted &= f1[static_cast<std::size_t>(block * np + (b + 1) % np)] == f0[static_cast<std::size_t>(block * np + b)];
    const bool dim = p.dimension() == 256 && f0.size() == 256;
    r.passed = conserved && oracle && shifted && dim;
    std::ostringstream os;
    os << "conservation " << (conserved ? "exact" : "broken") << ", oracle bins " << (oracle ? "equal" : "differ")
       << ", 2pi/nu_phi rotation " << (shifted ? "shifts bins by one" : "not equivariant") << ", dimension "
       << f0.size();
    r.detail = os.str();
  });
}

CheckResult metric_exactness(double limit_s) {
  return timed("metric: ADD identity/translation, F1 monotone in z_omega", limit_s, [](CheckResult& r) {
    const Mesh m = make_mesh(Shape::Camera);
    Pose gt;
    gt.offset = Vec3(12, -7, 760);
    gt.rotation = Vec3(0.2, -0.4, 0.6);
    const double w0 = add_score(m.vertices, gt, gt);
    Pose moved = gt;
    const Vec3 t(3.5, -2.25, 11.0);
    moved.offset += t;
    const double wt = std::abs(add_score(m.vertices, gt, moved) - t.norm());

    Rng rng(909);
    std::vector<MetricResult> res;
    const double phi = model_diameter(m.vertices);
    for (int i = 0; i < 200; ++i)
      res.push_back({std::to_string(i), rng.uniform(0, 0.2 * phi), std::floor(rng.uniform(1, 40)), rng.uniform() > 0.05});
    const auto z = z_omega_sweep();
    const Report rep = pr_f1(res, phi, z);
    bool mono = true;
    for (std::size_t i = 1; i < rep.f1.size(); ++i) mono &= rep.f1[i].f1 >= rep.f1[i - 1].f1;
    r.passed = w0 == 0.0 && wt <= 1e-12 && mono;
    r.detail = fmt("omega(identical) = %.1e, |omega(t) - |t|| = %.1e, ", w0, wt) +
               (mono ? "F1 non-decreasing over 0.05..0.15" : "F1 NOT monotone") +
               fmt(" (%.3f -> %.3f)", rep.f1.front().f1, rep.f1.back().f1);
  });
}

CheckResult aggregation_scan() {
  return timed("vote aggregation vs exhaustive accumulator scan", 0.0, [](CheckResult& r) {
    Rng rng(505);
    std::vector<CastVote> votes;
    for (int i = 0; i < 400; ++i) {
      CastVote v;
      v.source = Vec3(rng.uniform(-40, 40), rng.uniform(-40, 40), 700);
      const bool major = i % 5 != 0;
      const Vec3 target = major ? Vec3(5, -3, 750) : Vec3(60, 20, 790);
      v.vote.offset = target - v.source + Vec3(rng.normal(), rng.normal(), rng.normal()) * 2.0;
      v.vote.rotation = Vec3(0, major ? 0.3 : -0.4, 0);
      votes.push_back(v);
    }
    const double bin = 5.0;
    auto idx = [&](double x) { return static_cast<long>(std::floor(x / bin)); };
    std::map<std::tuple<long, long, long>, int> counts;
    for (const auto& v : votes) {
      const Vec3 p = v.source + v.vote.offset;
      ++counts[{idx(p.x()), idx(p.y()), idx(p.z())}];
    }
    std::tuple<long, long, long> best{};
    int best_n = -1;
    for (const auto& [k, n] : counts)
      if (n > best_n) best = k, best_n = n;
    Vec3 mean = Vec3::Zero();
    int n = 0;
    for (const auto& v : votes) {
      const Vec3 p = v.source + v.vote.offset;
      if (std::labs(idx(p.x()) - std::get<0>(best)) <= 1 && std::labs(idx(p.y()) - std::get<1>(best)) <= 1 &&
          std::labs(idx(p.z()) - std::get<2>(best)) <= 1)
        mean += p, ++n;
    }
    mean /= n;
    const PoseHypothesis h = aggregate_votes(votes, bin);
    const double err = (h.pose.offset - mean).norm();
    r.passed = err <= 1e-9 && h.confidence == n;
    r.detail = fmt("translation difference %.1e, confidence %.0f vs %.0f", err, h.confidence, n);
  });
}

CheckResult diameter_brute_force() {
  return timed("model diameter vs O(n^2) scan", 0.0, [](CheckResult& r) {
    Rng rng(606);
    std::vector<Vec3> pts;
    for (int i = 0; i < 500; ++i) pts.emplace_back(rng.uniform(-50, 50), rng.uniform(-30, 30), rng.uniform(-20, 20));
    double best = 0.0;
    for (const auto& a : pts)
      for (const auto& b : pts) best = std::max(best, (a - b).norm());
    const double err = std::abs(model_diameter(pts) - best);
    r.passed = err <= 1e-12;
    r.detail = fmt("500 points, difference %.1e", err);
  });
}

}  // namespace ihf::checks
