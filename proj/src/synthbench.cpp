#include "ihf/synthbench.hpp"

#include <Eigen/Geometry>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

namespace ihf {

const char* to_string(Shape shape) {
  switch (shape) {
    case Shape::Box: return "box";
    case Shape::Cup: return "cup";
    case Shape::Camera: return "camera";
    case Shape::Bottle: return "bottle";
  }
  return "?";
}

Shape shape_from_string(const std::string& name) {
  for (Shape s : {Shape::Box, Shape::Cup, Shape::Camera, Shape::Bottle})
    if (name == to_string(s)) return s;
  throw Error(ErrorCode::InvalidArgument, "unknown shape '" + name + "' (box, cup, camera, bottle)");
}

Vec3 surface_centroid(const Mesh& mesh) {
  Vec3 acc = Vec3::Zero();
  double area = 0.0;
  for (const auto& t : mesh.triangles) {
    const Vec3& a = mesh.vertices[static_cast<std::size_t>(t[0])];
    const Vec3& b = mesh.vertices[static_cast<std::size_t>(t[1])];
    const Vec3& c = mesh.vertices[static_cast<std::size_t>(t[2])];
    const double w = 0.5 * (b - a).cross(c - a).norm();
    acc += w * (a + b + c) / 3.0;
    area += w;
  }
  if (!(area > 0.0)) throw Error(ErrorCode::DegenerateCloud, "mesh has zero surface area");
  return acc / area;
}

namespace {

Mesh centred(Mesh m) {
  const Vec3 c = surface_centroid(m);
  for (auto& v : m.vertices) v -= c;
  return m;
}

void quad(Mesh& m, int a, int b, int c, int d) {
  m.triangles.push_back({a, b, c});
  m.triangles.push_back({a, c, d});
}

void require_positive(std::initializer_list<double> values) {
  for (double v : values)
    if (!(v > 0.0) || !std::isfinite(v)) throw Error(ErrorCode::InvalidArgument, "mesh dimensions must be positive");
}

Mesh raw_box(const Vec3& dims, const Vec3& center) {
  Mesh m;
  const Vec3 h = dims / 2.0;
  for (int i = 0; i < 8; ++i)
    m.vertices.push_back(center + Vec3((i & 1) ? h.x() : -h.x(), (i & 2) ? h.y() : -h.y(), (i & 4) ? h.z() : -h.z()));
  quad(m, 0, 2, 3, 1);  // -z
  quad(m, 4, 5, 7, 6);  // +z
  quad(m, 0, 1, 5, 4);  // -y
  quad(m, 2, 6, 7, 3);  // +y
  quad(m, 0, 4, 6, 2);  // -x
  quad(m, 1, 3, 7, 5);  // +x
  return m;
}

// Closed surface of revolution about the y axis through profile (r, y), r > 0
// at every sample; both ends capped with a fan.
Mesh lathe(const std::vector<std::pair<double, double>>& profile, int segments) {
  Mesh m;
  const int rings = static_cast<int>(profile.size());
  for (const auto& [r, y] : profile)
    for (int s = 0; s < segments; ++s) {
      const double th = 2.0 * kPi * s / segments;
      m.vertices.emplace_back(r * std::cos(th), y, r * std::sin(th));
    }
  for (int k = 0; k + 1 < rings; ++k)
    for (int s = 0; s < segments; ++s) {
      const int s1 = (s + 1) % segments;
      quad(m, k * segments + s, k * segments + s1, (k + 1) * segments + s1, (k + 1) * segments + s);
    }
  const int bottom = static_cast<int>(m.vertices.size());
  m.vertices.emplace_back(0.0, profile.front().second, 0.0);
  const int top = bottom + 1;
  m.vertices.emplace_back(0.0, profile.back().second, 0.0);
  const int last = (rings - 1) * segments;
  for (int s = 0; s < segments; ++s) {
    const int s1 = (s + 1) % segments;
    m.triangles.push_back({bottom, s1, s});
    m.triangles.push_back({top, last + s, last + s1});
  }
  return m;
}

void append(Mesh& dst, const Mesh& src) {
  const int base = static_cast<int>(dst.vertices.size());
  dst.vertices.insert(dst.vertices.end(), src.vertices.begin(), src.vertices.end());
  for (const auto& t : src.triangles) dst.triangles.push_back({t[0] + base, t[1] + base, t[2] + base});
}

}  // namespace

Mesh make_box(const Vec3& dims) {
  require_positive({dims.x(), dims.y(), dims.z()});
  return centred(raw_box(dims, Vec3::Zero()));
}

Mesh make_cup(double radius, double height, int segments, int rows) {
  require_positive({radius, height});
  if (segments < 8 || rows < 6) throw Error(ErrorCode::InvalidArgument, "cup needs >= 8 segments and >= 6 rows");
  Mesh m;
  const double dy = height / rows;
  // Side vertices: ring r at y_r, segment 0 centred on +x.
  for (int r = 0; r <= rows; ++r)
    for (int s = 0; s < segments; ++s) {
      const double th = 2.0 * kPi * s / segments - kPi / segments;
      m.vertices.emplace_back(radius * std::cos(th), -height / 2 + r * dy, radius * std::sin(th));
    }
  auto side = [segments](int r, int s) { return r * segments + (s % segments); };
  const int r1 = 2;
  const int r2 = rows - 3;
  for (int r = 0; r < rows; ++r)
    for (int s = 0; s < segments; ++s) {
      if (s == 0 && (r == r1 || r == r2)) continue;  // handle sockets
      quad(m, side(r, s), side(r + 1, s), side(r + 1, s + 1), side(r, s + 1));
    }
  const int bottom = static_cast<int>(m.vertices.size());
  m.vertices.emplace_back(0.0, -height / 2, 0.0);
  const int top = bottom + 1;
  m.vertices.emplace_back(0.0, height / 2, 0.0);
  for (int s = 0; s < segments; ++s) {
    m.triangles.push_back({bottom, side(0, s), side(0, s + 1)});
    m.triangles.push_back({top, side(rows, s + 1), side(rows, s)});
  }

  // Handle: square tube along a half circle in the x-y plane. Ring corners are
  // ordered (outer, -z), (outer, +z), (inner, +z), (inner, -z).
  const double y1 = -height / 2 + (r1 + 0.5) * dy;
  const double y2 = -height / 2 + (r2 + 0.5) * dy;
  const double rho = (y2 - y1) / 2;
  const double ym = (y1 + y2) / 2;
  const double an = dy / 2;
  const double az = radius * std::sin(kPi / segments);
  const int steps = 12;
  std::vector<std::array<int, 4>> ring(static_cast<std::size_t>(steps) + 1);
  ring[0] = {side(r1, 0), side(r1, 1), side(r1 + 1, 1), side(r1 + 1, 0)};
  ring[static_cast<std::size_t>(steps)] = {side(r2 + 1, 0), side(r2 + 1, 1), side(r2, 1), side(r2, 0)};
  for (int q = 1; q < steps; ++q) {
    const double phi = -kPi / 2 + kPi * q / steps;
    const Vec3 p(radius + rho * std::cos(phi), ym + rho * std::sin(phi), 0.0);
    const Vec3 n(std::cos(phi), std::sin(phi), 0.0);
    const Vec3 z = Vec3::UnitZ();
    const int base = static_cast<int>(m.vertices.size());
    m.vertices.push_back(p + an * n - az * z);
    m.vertices.push_back(p + an * n + az * z);
    m.vertices.push_back(p - an * n + az * z);
    m.vertices.push_back(p - an * n - az * z);
    ring[static_cast<std::size_t>(q)] = {base, base + 1, base + 2, base + 3};
  }
  for (int q = 0; q < steps; ++q)
    for (int c = 0; c < 4; ++c) {
      const auto& a = ring[static_cast<std::size_t>(q)];
      const auto& b = ring[static_cast<std::size_t>(q) + 1];
      quad(m, a[static_cast<std::size_t>(c)], b[static_cast<std::size_t>(c)], b[static_cast<std::size_t>((c + 1) % 4)],
           a[static_cast<std::size_t>((c + 1) % 4)]);
    }
  return centred(std::move(m));
}

Mesh make_camera(const Vec3& body, double lens_radius, double lens_length) {
  require_positive({body.x(), body.y(), body.z(), lens_radius, lens_length});
  Mesh m = raw_box(body, Vec3::Zero());
  // Lens: lathe about y, then rotated so its axis points along -z.
  Mesh lens = lathe({{lens_radius, 0.0}, {lens_radius, lens_length}}, 24);
  for (auto& v : lens.vertices) v = Vec3(v.x(), v.z(), -body.z() / 2 - v.y());
  append(m, lens);
  return centred(std::move(m));
}

Mesh make_bottle(double radius, double height) {
  require_positive({radius, height});
  const double neck = 0.4 * radius;
  std::vector<std::pair<double, double>> profile;
  profile.emplace_back(radius, 0.0);
  profile.emplace_back(radius, 0.62 * height);
  for (int i = 1; i <= 4; ++i) {
    const double t = i / 4.0;
    const double r = neck + (radius - neck) * std::cos(t * kPi / 2);
    profile.emplace_back(r, 0.62 * height + t * 0.2 * height);
  }
  profile.emplace_back(neck, height);
  // The image y axis points down; flip so the neck is up in the image.
  Mesh m = lathe(profile, 32);
  for (auto& v : m.vertices) v.y() = -v.y();
  for (auto& t : m.triangles) std::swap(t[1], t[2]);
  return centred(std::move(m));
}

Mesh make_mesh(Shape shape, std::span<const double> dims) {
  auto dim = [&](std::size_t i, double fallback) { return i < dims.size() ? dims[i] : fallback; };
  switch (shape) {
    case Shape::Box: return make_box(Vec3(dim(0, 100.0), dim(1, 60.0), dim(2, 40.0)));
    case Shape::Cup: return make_cup(dim(0, 40.0), dim(1, 100.0));
    case Shape::Camera: return make_camera(Vec3(dim(0, 100.0), dim(1, 60.0), dim(2, 40.0)), dim(3, 18.0), dim(4, 30.0));
    case Shape::Bottle: return make_bottle(dim(0, 30.0), dim(1, 160.0));
  }
  throw Error(ErrorCode::InvalidArgument, "unknown shape");
}

namespace {

std::map<std::pair<int, int>, int> edge_counts(const Mesh& mesh) {
  std::map<std::pair<int, int>, int> edges;
  for (const auto& t : mesh.triangles)
    for (int e = 0; e < 3; ++e) {
      const int a = t[static_cast<std::size_t>(e)];
      const int b = t[static_cast<std::size_t>((e + 1) % 3)];
      ++edges[{std::min(a, b), std::max(a, b)}];
    }
  return edges;
}

}  // namespace

int euler_characteristic(const Mesh& mesh) {
  return static_cast<int>(mesh.vertices.size()) - static_cast<int>(edge_counts(mesh).size()) +
         static_cast<int>(mesh.triangles.size());
}

bool is_closed(const Mesh& mesh) {
  for (const auto& [edge, count] : edge_counts(mesh))
    if (count != 2) return false;
  return true;
}

void write_mesh(std::ostream& os, const Mesh& mesh) {
  os << "ihf-mesh 1\nvertices " << mesh.vertices.size() << "\n" << std::setprecision(17);
  for (const auto& v : mesh.vertices) os << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  os << "triangles " << mesh.triangles.size() << "\n";
  for (const auto& t : mesh.triangles) os << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
}

Mesh read_mesh(std::istream& is) {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::IoError, "mesh: " + what); };
  std::string magic, word;
  int version = 0;
  std::size_t nv = 0, nt = 0;
  if (!(is >> magic >> version) || magic != "ihf-mesh" || version != 1) fail("bad header");
  if (!(is >> word >> nv) || word != "vertices") fail("missing vertex count");
  Mesh m;
  m.vertices.resize(nv);
  for (auto& v : m.vertices)
    if (!(is >> v.x() >> v.y() >> v.z())) fail("truncated vertices");
  if (!(is >> word >> nt) || word != "triangles") fail("missing triangle count");
  m.triangles.resize(nt);
  for (auto& t : m.triangles) {
    if (!(is >> t[0] >> t[1] >> t[2])) fail("truncated triangles");
    for (int i : t)
      if (i < 0 || static_cast<std::size_t>(i) >= nv) fail("vertex index out of range");
  }
  return m;
}

void save_mesh(const Mesh& mesh, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  write_mesh(os, mesh);
}

Mesh load_mesh(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  return read_mesh(is);
}

RenderResult render(std::span<const RenderItem> items, const Intrinsics& k, int width, int height) {
  if (!k.valid()) throw Error(ErrorCode::InvalidArgument, "invalid intrinsics");
  RenderResult out{DepthImage(width, height, k), std::vector<int>(static_cast<std::size_t>(width) * height, -1)};
  std::vector<double> zbuf(out.labels.size(), std::numeric_limits<double>::infinity());
  for (const auto& item : items) {
    const Mat3 r = item.pose.rotation_matrix();
    std::vector<Vec3> cam;
    cam.reserve(item.mesh->vertices.size());
    for (const auto& v : item.mesh->vertices) cam.push_back(r * v + item.pose.offset);
    for (const auto& t : item.mesh->triangles) {
      const Vec3& a = cam[static_cast<std::size_t>(t[0])];
      const Vec3& b = cam[static_cast<std::size_t>(t[1])];
      const Vec3& c = cam[static_cast<std::size_t>(t[2])];
      if (a.z() <= 1e-6 || b.z() <= 1e-6 || c.z() <= 1e-6) continue;
      const Eigen::Vector2d pa = project(a, k), pb = project(b, k), pc = project(c, k);
      auto edge = [](const Eigen::Vector2d& p, const Eigen::Vector2d& q, double u, double v) {
        return (q.x() - p.x()) * (v - p.y()) - (q.y() - p.y()) * (u - p.x());
      };
      const double area = edge(pa, pb, pc.x(), pc.y());
      if (std::abs(area) < 1e-12) continue;
      const Vec3 n = (b - a).cross(c - a);
      const double np = n.dot(a);
      const int u0 = std::max(0, static_cast<int>(std::ceil(std::min({pa.x(), pb.x(), pc.x()}))));
      const int u1 = std::min(width - 1, static_cast<int>(std::floor(std::max({pa.x(), pb.x(), pc.x()}))));
      const int v0 = std::max(0, static_cast<int>(std::ceil(std::min({pa.y(), pb.y(), pc.y()}))));
      const int v1 = std::min(height - 1, static_cast<int>(std::floor(std::max({pa.y(), pb.y(), pc.y()}))));
      const double sgn = area > 0 ? 1.0 : -1.0;
      for (int v = v0; v <= v1; ++v)
        for (int u = u0; u <= u1; ++u) {
          if (sgn * edge(pb, pc, u, v) < 0 || sgn * edge(pc, pa, u, v) < 0 || sgn * edge(pa, pb, u, v) < 0) continue;
          const Vec3 ray((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
          const double denom = n.dot(ray);
          if (std::abs(denom) < 1e-12) continue;
          const double z = np / denom;
          const std::size_t px = static_cast<std::size_t>(v) * width + u;
          if (z > 0.0 && z < zbuf[px]) {
            zbuf[px] = z;
            out.labels[px] = item.label;
          }
        }
    }
  }
  for (int v = 0; v < height; ++v)
    for (int u = 0; u < width; ++u) {
      const double z = zbuf[static_cast<std::size_t>(v) * width + u];
      if (std::isfinite(z)) out.depth.set(u, v, z);
    }
  return out;
}

DepthImage render_mesh(const Mesh& mesh, const Pose& pose, const Intrinsics& k, int width, int height) {
  const RenderItem item{&mesh, pose, 0};
  auto r = render(std::span<const RenderItem>(&item, 1), k, width, height);
  if (r.depth.empty()) throw Error(ErrorCode::OutsideFrustum, "model renders no pixel at this pose");
  return std::move(r.depth);
}

BoundingBox nonzero_bbox(const DepthImage& image) {
  int u0 = image.width(), v0 = image.height(), u1 = -1, v1 = -1;
  for (int v = 0; v < image.height(); ++v)
    for (int u = 0; u < image.width(); ++u)
      if (image.at(u, v) > 0.0) {
        u0 = std::min(u0, u);
        u1 = std::max(u1, u);
        v0 = std::min(v0, v);
        v1 = std::max(v1, v);
      }
  if (u1 < 0) return {};
  return {u0, v0, u1 - u0 + 1, v1 - v0 + 1};
}

namespace {

const Mesh& unit_box() {
  static const Mesh box = raw_box(Vec3::Ones(), Vec3::Zero());
  return box;
}

// Boxes are rendered from a unit cube with a per-axis scale folded into the vertices.
Mesh scaled_box(const BoxPrimitive& b) {
  Mesh m = unit_box();
  for (auto& v : m.vertices) v = v.cwiseProduct(b.dims);
  return m;
}

struct SceneMeshes {
  std::vector<Mesh> occluders;
  std::vector<Mesh> clutter;
};

}  // namespace

SceneRender render_scene(const SceneSpec& spec, const Mesh& object, const Intrinsics& k, int width, int height) {
  SceneMeshes meshes;
  for (const auto& o : spec.occluders) meshes.occluders.push_back(scaled_box(o));
  for (const auto& c : spec.clutter) meshes.clutter.push_back(scaled_box(c));
  std::vector<RenderItem> items{{&object, spec.pose, 0}};
  for (std::size_t i = 0; i < spec.occluders.size(); ++i) items.push_back({&meshes.occluders[i], spec.occluders[i].pose, 1});
  for (std::size_t i = 0; i < spec.clutter.size(); ++i) items.push_back({&meshes.clutter[i], spec.clutter[i].pose, 2});

  SceneRender out;
  out.object_clean = render(std::span<const RenderItem>(items.data(), 1), k, width, height).depth;
  auto full = render(items, k, width, height);
  out.bbox = nonzero_bbox(out.object_clean);
  out.object_visible = PixelMask{width, height, std::vector<std::uint8_t>(full.labels.size(), 0)};
  std::size_t visible = 0;
  for (std::size_t p = 0; p < full.labels.size(); ++p) {
    if (out.object_clean.depth()[p] > 0.0) ++out.object_pixels;
    if (full.labels[p] == 0) {
      out.object_visible.bits[p] = 1;
      ++visible;
    }
  }
  out.visibility = out.object_pixels ? static_cast<double>(visible) / static_cast<double>(out.object_pixels) : 0.0;
  out.fully_occluded = visible == 0;

  if (spec.noise_sigma > 0.0 || spec.dropout > 0.0) {
    Rng rng(spec.noise_seed);
    for (int v = 0; v < height; ++v)
      for (int u = 0; u < width; ++u) {
        const double z = full.depth.at(u, v);
        if (z <= 0.0) continue;
        const double n = rng.normal();
        const bool drop = spec.dropout > 0.0 && rng.uniform() < spec.dropout;
        full.depth.set(u, v, drop ? 0.0 : std::max(0.0, z + spec.noise_sigma * n));
      }
  }
  out.image = std::move(full.depth);
  return out;
}

BoxPrimitive fit_occluder(const Mesh& object, const Pose& pose, const Intrinsics& k, int width, int height,
                          double coverage, Pixel target) {
  if (!(coverage >= 0.0 && coverage <= 0.9)) throw Error(ErrorCode::InvalidArgument, "coverage must lie in [0, 0.9]");
  const DepthImage clean = render_mesh(object, pose, k, width, height);
  if (!clean.contains(target.u, target.v) || clean.at(target.u, target.v) <= 0.0)
    throw Error(ErrorCode::InvalidArgument, "occluder target is not an object pixel");
  const BoundingBox bb = nonzero_bbox(clean);
  double front = std::numeric_limits<double>::infinity();
  for (double z : clean.depth())
    if (z > 0.0) front = std::min(front, z);
  const double zc = front - 80.0;
  const double thickness = 20.0;
  const double reach = std::hypot(bb.width, bb.height);

  // Square of half-size t*reach pixels around the target, on the front plane.
  auto make = [&](double t) {
    const double half = std::max(0.5, t * reach);
    const double zf = zc - thickness / 2;
    const Vec3 p0 = backproject_pixel(target.u - half, target.v - half, zf, k);
    const Vec3 p1 = backproject_pixel(target.u + half, target.v + half, zf, k);
    BoxPrimitive box;
    box.dims = Vec3(p1.x() - p0.x(), p1.y() - p0.y(), thickness);
    box.pose.offset = Vec3((p0.x() + p1.x()) / 2, (p0.y() + p1.y()) / 2, zc);
    return box;
  };
  auto hidden = [&](const BoxPrimitive& box) {
    const Mesh m = scaled_box(box);
    const DepthImage occ = render_mesh(m, box.pose, k, width, height);
    std::size_t total = 0, covered = 0;
    for (std::size_t p = 0; p < clean.depth().size(); ++p) {
      const double z = clean.depth()[p];
      if (z <= 0.0) continue;
      ++total;
      const double o = occ.depth()[p];
      covered += o > 0.0 && o < z;
    }
    return static_cast<double>(covered) / static_cast<double>(total);
  };
  double lo = 0.0, hi = 1.0;
  for (int it = 0; it < 18; ++it) {
    const double mid = 0.5 * (lo + hi);
    (hidden(make(mid)) < coverage ? lo : hi) = mid;
  }
  const BoxPrimitive a = make(lo), b = make(hi);
  return std::abs(hidden(a) - coverage) <= std::abs(hidden(b) - coverage) ? a : b;
}

namespace {

double deg(double d) { return d * kPi / 180.0; }

GeneratedImage crop_entry(const SceneRender& r, const BoundingBox& box, const SceneSpec& spec, std::string id) {
  GeneratedImage g;
  g.entry.id = std::move(id);
  g.entry.depth_file = g.entry.id + ".raw";
  g.entry.pose = spec.pose;
  g.entry.bbox = box;
  g.entry.visibility = r.visibility;
  g.entry.scene = spec;
  g.image = r.image.crop(box.u0, box.v0, box.width, box.height);
  return g;
}

std::string index_id(std::size_t i) {
  std::ostringstream os;
  os << std::setw(3) << std::setfill('0') << i;
  return os.str();
}

}  // namespace

std::vector<GeneratedImage> generate_training_set(const Mesh& mesh, const TrainingGrid& grid, const Intrinsics& k,
                                                  int width, int height) {
  if (!(grid.step_deg > 0.0) || !(grid.limit_deg >= 0.0))
    throw Error(ErrorCode::InvalidArgument, "training grid needs a positive step");
  const int steps = static_cast<int>(std::floor(grid.limit_deg / grid.step_deg + 1e-9));
  std::vector<GeneratedImage> out;
  for (int iy = -steps; iy <= steps; ++iy)
    for (int ip = -steps; ip <= steps; ++ip) {
      SceneSpec spec;
      spec.pose.offset = Vec3(0.0, 0.0, grid.f_d);
      spec.pose.rotation = Vec3(0.0, deg(ip * grid.step_deg), deg(iy * grid.step_deg));
      const auto r = render_scene(spec, mesh, k, width, height);
      out.push_back(crop_entry(r, r.bbox, spec, index_id(out.size())));
    }
  return out;
}

std::vector<GeneratedImage> generate_test_set(const Mesh& mesh, const TestSetOptions& o, const Intrinsics& k,
                                              int width, int height) {
  if (o.count < 1) throw Error(ErrorCode::InvalidArgument, "test set count must be >= 1");
  if (!(o.occlusion_min >= 0.0 && o.occlusion_min <= o.occlusion_max && o.occlusion_max <= 0.9))
    throw Error(ErrorCode::InvalidArgument, "occlusion range must lie within [0, 0.9]");
  double radius = 0.0;
  for (const auto& v : mesh.vertices) radius = std::max(radius, v.norm());
  std::vector<GeneratedImage> out;
  for (int i = 0; i < o.count; ++i) {
    Rng rng(Rng::derive(o.seed, static_cast<std::uint64_t>(i)));
    SceneSpec spec;
    spec.pose.offset = Vec3(rng.uniform(-o.lateral_range, o.lateral_range), rng.uniform(-o.lateral_range, o.lateral_range),
                            rng.uniform(o.f_d - o.depth_range, o.f_d + o.depth_range));
    spec.pose.rotation = Vec3(0.0, deg(rng.uniform(-o.max_angle_deg, o.max_angle_deg)),
                              deg(rng.uniform(-o.max_angle_deg, o.max_angle_deg)));
    spec.coverage_target = rng.uniform(o.occlusion_min, o.occlusion_max);
    if (spec.coverage_target > 0.0) {
      const DepthImage clean = render_mesh(mesh, spec.pose, k, width, height);
      std::vector<Pixel> visible;
      for (int v = 0; v < height; ++v)
        for (int u = 0; u < width; ++u)
          if (clean.at(u, v) > 0.0) visible.push_back({u, v});
      const Pixel target = visible[rng.index(visible.size())];
      spec.occluders.push_back(fit_occluder(mesh, spec.pose, k, width, height, spec.coverage_target, target));
    }
    if (rng.uniform() < o.clutter_probability) {
      const Vec3 c = spec.pose.offset;
      BoxPrimitive wall;
      wall.dims = Vec3(1500.0, 1200.0, 10.0);
      wall.pose.offset = Vec3(c.x(), c.y(), c.z() + 150.0 + rng.uniform(0.0, 50.0));
      spec.clutter.push_back(wall);
      for (double sgn : {-1.0, 1.0}) {
        BoxPrimitive b;
        b.dims = Vec3(rng.uniform(40, 80), rng.uniform(60, 120), rng.uniform(40, 80));
        const double depth = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(120.0, 200.0);
        b.pose.offset = Vec3(c.x() + sgn * (radius + b.dims.x() / 2 + rng.uniform(5.0, 25.0)),
                             c.y() + rng.uniform(-30.0, 30.0), c.z() + depth);
        spec.clutter.push_back(b);
      }
    }
    spec.noise_sigma = o.noise_sigma;
    spec.dropout = o.dropout;
    spec.noise_seed = rng.next_u64();
    const auto r = render_scene(spec, mesh, k, width, height);
    // Coarse detection box: the object's box grown outward by up to crop_jitter per side.
    BoundingBox box = r.bbox;
    const int gl = static_cast<int>(std::lround(rng.uniform(0.0, o.crop_jitter) * box.width));
    const int gr = static_cast<int>(std::lround(rng.uniform(0.0, o.crop_jitter) * box.width));
    const int gt = static_cast<int>(std::lround(rng.uniform(0.0, o.crop_jitter) * box.height));
    const int gb = static_cast<int>(std::lround(rng.uniform(0.0, o.crop_jitter) * box.height));
    const int u0 = std::max(0, box.u0 - gl), v0 = std::max(0, box.v0 - gt);
    const int u1 = std::min(width, box.u0 + box.width + gr), v1 = std::min(height, box.v0 + box.height + gb);
    box = {u0, v0, u1 - u0, v1 - v0};
    out.push_back(crop_entry(r, box, spec, index_id(static_cast<std::size_t>(i))));
  }
  return out;
}

namespace {

using nlohmann::ordered_json;

ordered_json vec_json(const Vec3& v) { return ordered_json::array({v.x(), v.y(), v.z()}); }

Vec3 json_vec(const ordered_json& j) {
  if (!j.is_array() || j.size() != 3) throw Error(ErrorCode::IoError, "manifest: expected a 3-vector");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

ordered_json pose_json(const Pose& p) { return {{"offset", vec_json(p.offset)}, {"rotation", vec_json(p.rotation)}}; }

Pose json_pose(const ordered_json& j) {
  Pose p;
  p.offset = json_vec(j.at("offset"));
  p.rotation = json_vec(j.at("rotation"));
  return p;
}

ordered_json boxes_json(const std::vector<BoxPrimitive>& boxes) {
  ordered_json a = ordered_json::array();
  for (const auto& b : boxes) a.push_back({{"dims", vec_json(b.dims)}, {"pose", pose_json(b.pose)}});
  return a;
}

std::vector<BoxPrimitive> json_boxes(const ordered_json& a) {
  std::vector<BoxPrimitive> out;
  for (const auto& j : a) out.push_back({json_vec(j.at("dims")), json_pose(j.at("pose"))});
  return out;
}

}  // namespace

void write_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
  ordered_json j;
  j["split"] = m.split;
  j["f_d"] = m.f_d;
  j["shape"] = m.shape;
  j["mesh"] = m.mesh_file;
  j["intrinsics"] = {{"fx", m.intrinsics.fx}, {"fy", m.intrinsics.fy}, {"cx", m.intrinsics.cx}, {"cy", m.intrinsics.cy}};
  j["image_width"] = m.image_width;
  j["image_height"] = m.image_height;
  j["entries"] = ordered_json::array();
  for (const auto& e : m.entries) {
    ordered_json s;
    s["coverage_target"] = e.scene.coverage_target;
    s["noise_sigma"] = e.scene.noise_sigma;
    s["dropout"] = e.scene.dropout;
    s["noise_seed"] = e.scene.noise_seed;
    s["occluders"] = boxes_json(e.scene.occluders);
    s["clutter"] = boxes_json(e.scene.clutter);
    j["entries"].push_back({{"id", e.id},
                            {"depth", e.depth_file},
                            {"pose", pose_json(e.pose)},
                            {"bbox", {e.bbox.u0, e.bbox.v0, e.bbox.width, e.bbox.height}},
                            {"visibility", e.visibility},
                            {"scene", s}});
  }
  std::ofstream os(path);
  if (!os) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  os << std::setw(2) << j << '\n';
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::IoError, "cannot open manifest " + path.string());
  DatasetManifest m;
  try {
    const auto j = ordered_json::parse(is);
    m.split = j.at("split").get<std::string>();
    m.f_d = j.at("f_d").get<double>();
    m.shape = j.value("shape", std::string{});
    m.mesh_file = j.at("mesh").get<std::string>();
    const auto& k = j.at("intrinsics");
    m.intrinsics = {k.at("fx").get<double>(), k.at("fy").get<double>(), k.at("cx").get<double>(), k.at("cy").get<double>()};
    m.image_width = j.at("image_width").get<int>();
    m.image_height = j.at("image_height").get<int>();
    for (const auto& e : j.at("entries")) {
      ManifestEntry me;
      me.id = e.at("id").get<std::string>();
      me.depth_file = e.at("depth").get<std::string>();
      me.pose = json_pose(e.at("pose"));
      const auto& b = e.at("bbox");
      me.bbox = {b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>(), b.at(3).get<int>()};
      me.visibility = e.at("visibility").get<double>();
      const auto& s = e.at("scene");
      me.scene.pose = me.pose;
      me.scene.coverage_target = s.at("coverage_target").get<double>();
      me.scene.noise_sigma = s.at("noise_sigma").get<double>();
      me.scene.dropout = s.at("dropout").get<double>();
      me.scene.noise_seed = s.at("noise_seed").get<std::uint64_t>();
      me.scene.occluders = json_boxes(s.at("occluders"));
      me.scene.clutter = json_boxes(s.at("clutter"));
      m.entries.push_back(std::move(me));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::IoError, "malformed manifest " + path.string() + ": " + e.what());
  }
  return m;
}

DatasetManifest write_dataset(const std::filesystem::path& dir, const std::string& split, const std::string& shape,
                              const std::filesystem::path& mesh_file, double f_d, const Intrinsics& k, int width,
                              int height, std::span<const GeneratedImage> images) {
  std::filesystem::create_directories(dir);
  DatasetManifest m;
  m.split = split;
  m.f_d = f_d;
  m.shape = shape;
  m.mesh_file = mesh_file.string();
  m.intrinsics = k;
  m.image_width = width;
  m.image_height = height;
  for (const auto& g : images) {
    save_depth(g.image, dir / g.entry.depth_file);
    m.entries.push_back(g.entry);
  }
  write_manifest(dir / "manifest.json", m);
  return m;
}

}  // namespace ihf
