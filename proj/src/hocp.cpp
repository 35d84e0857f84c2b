#include "ihf/hocp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ihf {

void HocpParams::validate() const {
  for (int v : nu)
    if (v < 1 || v > 255) throw Error(ErrorCode::InvalidArgument, "HoCP bin counts must lie in [1, 255]");
  if (!(r_min_fraction > 0.0 && r_min_fraction < 1.0))
    throw Error(ErrorCode::InvalidArgument, "r_min_fraction must lie in (0, 1)");
  if (!(delta_d > 0.0)) throw Error(ErrorCode::InvalidArgument, "delta_d must be positive");
}

double HocpFeature::total() const {
  double t = 0.0;
  for (float b : bins) t += b;
  return t;
}

int inclination_bin(double z, double r, int nu_theta) {
  if (!(r > 0.0)) return nu_theta / 2;
  const double t = nu_theta * (z / r + 1.0) / 2.0;
  return std::clamp(static_cast<int>(std::floor(t)), 0, nu_theta - 1);
}

int azimuth_bin(double x, double y, int nu_phi) {
  double phi = std::atan2(y, x);
  if (phi < 0.0) phi += 2.0 * kPi;
  const int b = static_cast<int>(std::floor(nu_phi * phi / (2.0 * kPi)));
  return std::clamp(b, 0, nu_phi - 1);
}

int radial_bin(float log_r, float log_r_max, double r_min_fraction, int nu_r) {
  // t_r = nu_r * log(r / r_min) / log(r_max / r_min) with r_min = fraction * r_max.
  const double span = -std::log(r_min_fraction);
  const double t = nu_r * (static_cast<double>(log_r) - static_cast<double>(log_r_max) + span) / span;
  if (!(t > 0.0)) return 0;  // inside r_min, or r = 0
  return std::min(static_cast<int>(std::floor(t)), nu_r - 1);
}

PartDescriptor describe(const Vec3& rel, int di, int dj, const HocpParams& params) {
  if (di < -127 || di > 127 || dj < -127 || dj > 127)
    throw Error(ErrorCode::InvalidArgument, "lattice too large for part descriptors");
  const double r = rel.norm();
  PartDescriptor d{};
  d.log_r = r > 0.0 ? static_cast<float>(std::log(r)) : -std::numeric_limits<float>::infinity();
  d.dz = static_cast<float>(rel.z());
  d.di = static_cast<std::int8_t>(di);
  d.dj = static_cast<std::int8_t>(dj);
  d.theta_bin = static_cast<std::uint8_t>(inclination_bin(rel.z(), r, params.nu[1]));
  d.phi_bin = static_cast<std::uint8_t>(azimuth_bin(rel.x(), rel.y(), params.nu[2]));
  return d;
}

std::size_t histogram_into(std::span<const PartDescriptor> descriptors, const HocpParams& params, std::span<float> out,
                           const TemplateDepthMap* tmpl) {
  std::fill(out.begin(), out.end(), 0.0f);
  // Hot path of forest training: one filtering pass, then bin the survivors.
  thread_local std::vector<const PartDescriptor*> kept;
  kept.clear();
  float log_r_max = -std::numeric_limits<float>::infinity();
  for (const auto& d : descriptors) {
    if (tmpl && !depth_consistent(d, *tmpl, params.delta_d)) continue;
    log_r_max = std::max(log_r_max, d.log_r);
    kept.push_back(&d);
  }
  if (kept.empty()) return 0;
  const double span = -std::log(params.r_min_fraction);
  for (const PartDescriptor* d : kept) out[static_cast<std::size_t>(flat_bin(*d, log_r_max, span, params.nu))] += 1.0f;
  return kept.size();
}

HocpFeature hocp_histogram(std::span<const Vec3> positions, const Vec3& center, const HocpParams& params) {
  params.validate();
  if (positions.empty()) throw Error(ErrorCode::NoDescriptors, "HoCP needs at least one descriptor");
  std::vector<PartDescriptor> descs;
  descs.reserve(positions.size());
  double r_max = 0.0;
  for (const auto& p : positions) {
    const Vec3 rel = p - center;
    r_max = std::max(r_max, rel.norm());
    descs.push_back(describe(rel, 0, 0, params));
  }
  if (!(r_max > 0.0)) throw Error(ErrorCode::DegenerateCloud, "all descriptors coincide with the part centre");
  HocpFeature f;
  f.nu = params.nu;
  f.r_max = r_max;
  f.r_min = params.r_min_fraction * r_max;
  f.bins.assign(static_cast<std::size_t>(params.dimension()), 0.0f);
  histogram_into(descs, params, f.bins);
  return f;
}

TemplateDepthMap::TemplateDepthMap(std::span<const PartDescriptor> descriptors) {
  if (descriptors.empty()) return;
  int i0 = 127, i1 = -128, j0 = 127, j1 = -128;
  for (const auto& d : descriptors) {
    i0 = std::min<int>(i0, d.di);
    i1 = std::max<int>(i1, d.di);
    j0 = std::min<int>(j0, d.dj);
    j1 = std::max<int>(j1, d.dj);
  }
  di0_ = i0;
  dj0_ = j0;
  width_ = i1 - i0 + 1;
  height_ = j1 - j0 + 1;
  const auto cells = static_cast<std::size_t>(width_) * height_;
  zmin_.assign(cells, std::numeric_limits<float>::infinity());
  zmax_.assign(cells, -std::numeric_limits<float>::infinity());
  for (const auto& d : descriptors) {
    const std::size_t c = static_cast<std::size_t>(d.dj - dj0_) * width_ + (d.di - di0_);
    zmin_[c] = std::min(zmin_[c], d.dz);
    zmax_[c] = std::max(zmax_[c], d.dz);
  }
}

TemplateDepthMap TemplateDepthMap::from_raw(int di0, int dj0, int width, int height, std::vector<float> zmin,
                                            std::vector<float> zmax) {
  if (width < 0 || height < 0 || zmin.size() != static_cast<std::size_t>(width) * height || zmax.size() != zmin.size())
    throw Error(ErrorCode::InvalidArgument, "inconsistent template depth map");
  TemplateDepthMap m;
  m.di0_ = di0;
  m.dj0_ = dj0;
  m.width_ = width;
  m.height_ = height;
  m.zmin_ = std::move(zmin);
  m.zmax_ = std::move(zmax);
  return m;
}

std::vector<PartDescriptor> depth_consistency_filter(std::span<const PartDescriptor> descriptors,
                                                     const TemplateDepthMap& tmpl, double delta_d) {
  if (!(delta_d > 0.0)) throw Error(ErrorCode::InvalidArgument, "delta_d must be positive");
  std::vector<PartDescriptor> out;
  for (const auto& d : descriptors)
    if (depth_consistent(d, tmpl, delta_d)) out.push_back(d);
  return out;
}

LatticeColumns::LatticeColumns(const ControlLattice& lattice, double weight_threshold)
    : n_(lattice.resolution()), delta_(lattice.delta()) {
  // control_descriptors walks k outermost; regroup by column (i, j).
  auto all = control_descriptors(lattice, weight_threshold);
  const auto nn = static_cast<std::size_t>(n_);
  column_start_.assign(nn * nn + 1, 0);
  for (const auto& d : all) ++column_start_[static_cast<std::size_t>(d.index[0] - 1) + nn * (d.index[1] - 1) + 1];
  for (std::size_t c = 1; c < column_start_.size(); ++c) column_start_[c] += column_start_[c - 1];
  descriptors_.resize(all.size());
  std::vector<std::uint32_t> fill(column_start_.begin(), column_start_.end() - 1);
  for (const auto& d : all) descriptors_[fill[static_cast<std::size_t>(d.index[0] - 1) + nn * (d.index[1] - 1)]++] = d;
}

std::vector<ControlDescriptor> LatticeColumns::select(double xmin, double xmax, double ymin, double ymax) const {
  // Column i sits at x = (i - 2) * delta.
  const int i0 = std::max(1, static_cast<int>(std::ceil(xmin / delta_ - 1e-9)) + 2);
  const int i1 = std::min(n_, static_cast<int>(std::floor(xmax / delta_ + 1e-9)) + 2);
  const int j0 = std::max(1, static_cast<int>(std::ceil(ymin / delta_ - 1e-9)) + 2);
  const int j1 = std::min(n_, static_cast<int>(std::floor(ymax / delta_ + 1e-9)) + 2);
  std::vector<ControlDescriptor> out;
  const auto nn = static_cast<std::size_t>(n_);
  for (int j = j0; j <= j1; ++j)
    for (int i = i0; i <= i1; ++i) {
      const std::size_t c = static_cast<std::size_t>(i - 1) + nn * (j - 1);
      out.insert(out.end(), descriptors_.begin() + column_start_[c], descriptors_.begin() + column_start_[c + 1]);
    }
  return out;
}

const char* to_string(PartMode mode) { return mode == PartMode::Fixed ? "fixed" : "variable"; }

PartMode part_mode_from_string(const std::string& name) {
  if (name == "fixed") return PartMode::Fixed;
  if (name == "variable") return PartMode::Variable;
  throw Error(ErrorCode::InvalidArgument, "part mode must be 'fixed' or 'variable', got '" + name + "'");
}

std::vector<int> anchor_points(const ScaleLevel& level, int width, int height, int stride) {
  if (stride < 1) throw Error(ErrorCode::InvalidArgument, "part stride must be >= 1");
  const int cu = width / 2;
  const int cv = height / 2;
  auto on_grid = [stride](int d) { return ((d % stride) + stride) % stride == 0; };
  std::vector<int> out;
  for (std::size_t p = 0; p < level.pixels.size(); ++p)
    if (on_grid(level.pixels[p].u - cu) && on_grid(level.pixels[p].v - cv)) out.push_back(static_cast<int>(p));
  return out;
}

namespace {

PartRegion empty_region(const ScaleLevel& level, int anchor) {
  PartRegion r;
  r.anchor = anchor;
  r.center_px = level.pixels[static_cast<std::size_t>(anchor)];
  r.center = level.cloud.points[static_cast<std::size_t>(anchor)];
  r.xmin = r.ymin = std::numeric_limits<double>::infinity();
  r.xmax = r.ymax = -std::numeric_limits<double>::infinity();
  return r;
}

void absorb(PartRegion& r, const Vec3& p) {
  r.xmin = std::min(r.xmin, p.x());
  r.xmax = std::max(r.xmax, p.x());
  r.ymin = std::min(r.ymin, p.y());
  r.ymax = std::max(r.ymax, p.y());
  ++r.size_px;
}

}  // namespace

int fixed_window_side(double g, int width, int height) {
  if (!(g > 0.0 && g <= 1.0)) throw Error(ErrorCode::InvalidArgument, "part size g must lie in (0, 1]");
  return std::max(1, static_cast<int>(std::lround(g * std::max(width, height))));
}

std::vector<PartRegion> extract_parts_fixed(const ScaleLevel& level, int width, int height, double g, int stride) {
  if (width < 1 || height < 1) throw Error(ErrorCode::InvalidArgument, "image dimensions must be positive");
  if (level.cloud.empty()) throw Error(ErrorCode::EmptyCloud, "cannot extract parts from an empty level");
  const int side = fixed_window_side(g, width, height);

  std::vector<int> grid(static_cast<std::size_t>(width) * height, -1);
  for (std::size_t p = 0; p < level.pixels.size(); ++p) {
    const auto& px = level.pixels[p];
    if (px.u < 0 || px.v < 0 || px.u >= width || px.v >= height)
      throw Error(ErrorCode::InvalidArgument, "level pixel outside the image");
    grid[static_cast<std::size_t>(px.v) * width + px.u] = static_cast<int>(p);
  }

  std::vector<PartRegion> out;
  for (int a : anchor_points(level, width, height, stride)) {
    PartRegion r = empty_region(level, a);
    const int u0 = std::max(0, r.center_px.u - side / 2);
    const int u1 = std::min(width - 1, r.center_px.u - side / 2 + side - 1);
    const int v0 = std::max(0, r.center_px.v - side / 2);
    const int v1 = std::min(height - 1, r.center_px.v - side / 2 + side - 1);
    for (int v = v0; v <= v1; ++v) {
      const int* row = grid.data() + static_cast<std::size_t>(v) * width;
      for (int u = u0; u <= u1; ++u)
        if (row[u] >= 0) absorb(r, level.cloud.points[static_cast<std::size_t>(row[u])]);
    }
    out.push_back(r);
  }
  return out;
}

std::vector<PartRegion> extract_parts_variable(const ScaleLevel& level, int width, int height, double box_edge,
                                               int stride) {
  if (!(box_edge > 0.0 && box_edge <= 1.0)) throw Error(ErrorCode::InvalidArgument, "box edge must lie in (0, 1]");
  if (level.cloud.empty()) throw Error(ErrorCode::EmptyCloud, "cannot extract parts from an empty level");
  const auto& pts = level.cloud.points;
  const double half = box_edge / 2.0;

  // Lateral bucket grid with cells of half a box edge.
  const int cells = std::clamp(static_cast<int>(std::ceil(1.0 / half)), 1, 256);
  auto cell_of = [cells](double x) { return std::clamp(static_cast<int>(x * cells), 0, cells - 1); };
  std::vector<std::vector<int>> buckets(static_cast<std::size_t>(cells) * cells);
  for (std::size_t p = 0; p < pts.size(); ++p)
    buckets[static_cast<std::size_t>(cell_of(pts[p].y())) * cells + cell_of(pts[p].x())].push_back(static_cast<int>(p));

  std::vector<PartRegion> out;
  for (int a : anchor_points(level, width, height, stride)) {
    PartRegion r = empty_region(level, a);
    const Vec3& c = r.center;
    const int bx0 = cell_of(c.x() - half), bx1 = cell_of(c.x() + half);
    const int by0 = cell_of(c.y() - half), by1 = cell_of(c.y() + half);
    for (int by = by0; by <= by1; ++by)
      for (int bx = bx0; bx <= bx1; ++bx)
        for (int p : buckets[static_cast<std::size_t>(by) * cells + bx]) {
          const Vec3& q = pts[static_cast<std::size_t>(p)];
          if (std::abs(q.x() - c.x()) <= half && std::abs(q.y() - c.y()) <= half && std::abs(q.z() - c.z()) <= half)
            absorb(r, q);
        }
    out.push_back(r);
  }
  return out;
}

Part featurize_part(const PartRegion& region, const LatticeColumns& columns, const HocpParams& params,
                    const TemplateDepthMap* tmpl) {
  const double delta = columns.delta();
  const auto selected =
      columns.select(region.xmin - delta, region.xmax + delta, region.ymin - delta, region.ymax + delta);
  const Vec3& c = region.center;
  const int ci = static_cast<int>(std::lround(c.x() / delta)) + 2;
  const int cj = static_cast<int>(std::lround(c.y() / delta)) + 2;

  Part part;
  part.center_px = region.center_px;
  part.center_cube = c;
  part.size_px = region.size_px;
  part.descriptors.reserve(selected.size());
  for (const auto& d : selected) {
    const auto pd = describe(d.position - c, d.index[0] - ci, d.index[1] - cj, params);
    if (!tmpl || depth_consistent(pd, *tmpl, params.delta_d)) part.descriptors.push_back(pd);
  }
  if (part.descriptors.empty()) throw Error(ErrorCode::NoDescriptors, "no control descriptors in the part footprint");
  part.feature.assign(static_cast<std::size_t>(params.dimension()), 0.0f);
  histogram_into(part.descriptors, params, part.feature);
  part.log_r_max = -std::numeric_limits<float>::infinity();
  for (const auto& d : part.descriptors) part.log_r_max = std::max(part.log_r_max, d.log_r);
  if (params.dimension() <= 65536) {
    const double span = -std::log(params.r_min_fraction);
    part.descriptor_bins.reserve(part.descriptors.size());
    for (const auto& d : part.descriptors)
      part.descriptor_bins.push_back(static_cast<std::uint16_t>(flat_bin(d, part.log_r_max, span, params.nu)));
  }
  return part;
}

PreparedImage prepare_image(const DepthImage& image, std::span<const double> scale_constants, int normal_k) {
  PreparedImage out;
  out.metric = backproject(image);
  const int k = std::min(normal_k, static_cast<int>(out.metric.cloud.size()) - 1);
  if (k < 3) throw Error(ErrorCode::EmptyCloud, "too few points to estimate normals");
  out.normals = estimate_normals(out.metric.cloud, k);
  out.space = normalize_scale_space(out.metric, scale_constants);
  return out;
}

ControlLattice fit_level(const ScaleLevel& level, const NormalEstimate& normals, const FeatureConfig& config) {
  const std::size_t n = level.cloud.size();
  if (normals.normals.size() != n) throw Error(ErrorCode::InvalidArgument, "one normal per point required");
  const std::size_t cap = static_cast<std::size_t>(std::max(1, config.max_fit_points));
  if (n <= cap) return fit_3l(level.cloud, normals.normals, config.fit);
  PointCloud sub;
  sub.frame = Frame::UnitCube;
  std::vector<Vec3> sub_normals;
  const std::size_t step = (n + cap - 1) / cap;
  for (std::size_t p = 0; p < n; p += step) {
    sub.points.push_back(level.cloud.points[p]);
    sub_normals.push_back(normals.normals[p]);
  }
  return fit_3l(sub, sub_normals, config.fit);
}

std::vector<Part> level_parts(const PreparedImage& prepared, int level_index, const ControlLattice& lattice,
                              const FeatureConfig& config, int width, int height, int stride) {
  const auto& level = prepared.space.levels.at(static_cast<std::size_t>(level_index));
  const auto regions = config.spec.mode == PartMode::Fixed
                           ? extract_parts_fixed(level, width, height, config.spec.g, stride)
                           : extract_parts_variable(level, width, height, config.spec.box_edge, stride);
  const LatticeColumns columns(lattice, config.descriptor_threshold);
  std::vector<Part> parts;
  parts.reserve(regions.size());
  for (const auto& r : regions) {
    Part p;
    try {
      p = featurize_part(r, columns, config.hocp);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NoDescriptors) throw;
      continue;
    }
    p.scale_level = level_index;
    p.center_metric = prepared.metric.cloud.points[static_cast<std::size_t>(r.anchor)];
    parts.push_back(std::move(p));
  }
  return parts;
}

}  // namespace ihf
