#include "ihf/geometry.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>

namespace ihf {

DepthImage::DepthImage(int width, int height, Intrinsics intrinsics)
    : DepthImage(width, height, intrinsics,
                 std::vector<double>(static_cast<std::size_t>(std::max(width, 0)) * std::max(height, 0), 0.0)) {}

DepthImage::DepthImage(int width, int height, Intrinsics intrinsics, std::vector<double> depth)
    : width_(width), height_(height), intrinsics_(intrinsics), depth_(std::move(depth)) {
  if (width < 0 || height < 0) throw Error(ErrorCode::InvalidArgument, "negative image size");
  if (depth_.size() != static_cast<std::size_t>(width) * height)
    throw Error(ErrorCode::InvalidArgument, "depth buffer does not match width*height");
  for (double z : depth_)
    if (!(z >= 0.0)) throw Error(ErrorCode::InvalidArgument, "depth values must be finite and >= 0");
}

void DepthImage::set(int u, int v, double z) {
  if (!(z >= 0.0)) throw Error(ErrorCode::InvalidArgument, "depth values must be finite and >= 0");
  depth_[static_cast<std::size_t>(v) * width_ + u] = z;
}

std::size_t DepthImage::nonzero_count() const {
  return static_cast<std::size_t>(std::count_if(depth_.begin(), depth_.end(), [](double z) { return z > 0.0; }));
}

DepthImage DepthImage::crop(int u0, int v0, int w, int h) const {
  const int a = std::clamp(u0, 0, width_);
  const int b = std::clamp(v0, 0, height_);
  const int c = std::clamp(u0 + w, 0, width_);
  const int d = std::clamp(v0 + h, 0, height_);
  Intrinsics k = intrinsics_;
  k.cx -= a;
  k.cy -= b;
  DepthImage out(c - a, d - b, k);
  for (int v = b; v < d; ++v)
    for (int u = a; u < c; ++u) out.depth_[static_cast<std::size_t>(v - b) * out.width_ + (u - a)] = at(u, v);
  return out;
}

std::size_t PixelMask::count() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

Mat3 euler_to_matrix(const Vec3& rpy) {
  return (Eigen::AngleAxisd(rpy.z(), Vec3::UnitZ()) * Eigen::AngleAxisd(rpy.y(), Vec3::UnitY()) *
          Eigen::AngleAxisd(rpy.x(), Vec3::UnitX()))
      .toRotationMatrix();
}

Vec3 matrix_to_euler(const Mat3& r) {
  const double pitch = std::asin(std::clamp(-r(2, 0), -1.0, 1.0));
  const double roll = std::atan2(r(2, 1), r(2, 2));
  const double yaw = std::atan2(r(1, 0), r(0, 0));
  return {roll, pitch, yaw};
}

Mat3 Pose::rotation_matrix() const { return euler_to_matrix(rotation); }

Pose Pose::wrapped() const {
  Pose p = *this;
  for (int i = 0; i < 3; ++i) p.rotation[i] = wrap_angle(p.rotation[i]);
  return p;
}

Vec3 backproject_pixel(double u, double v, double z, const Intrinsics& k) {
  return {(u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z};
}

Eigen::Vector2d project(const Vec3& p, const Intrinsics& k) {
  return {k.fx * p.x() / p.z() + k.cx, k.fy * p.y() / p.z() + k.cy};
}

BackProjection backproject(const DepthImage& image) {
  const Intrinsics& k = image.intrinsics();
  if (!k.valid()) throw Error(ErrorCode::InvalidArgument, "intrinsics require fx, fy > 0");
  BackProjection out;
  out.cloud.frame = Frame::Metric;
  for (int v = 0; v < image.height(); ++v) {
    for (int u = 0; u < image.width(); ++u) {
      const double z = image.at(u, v);
      if (z <= 0.0) continue;
      out.cloud.points.push_back(backproject_pixel(u, v, z, k));
      out.pixels.push_back({u, v});
    }
  }
  if (out.cloud.empty()) throw Error(ErrorCode::EmptyCloud, "depth image has no valid pixels");
  return out;
}

std::vector<double> default_scale_constants(double factor, int count) {
  std::vector<double> s(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) s[static_cast<std::size_t>(i)] = std::pow(factor, i);
  return s;
}

Vec3 to_unit_cube(const Vec3& x, const Vec3& center, double alpha, double s) {
  return (x - center) / (s * alpha) + Vec3::Constant(0.5);
}

ScaleSpace normalize_scale_space(const BackProjection& metric, std::span<const double> scale_constants) {
  const auto& pts = metric.cloud.points;
  if (pts.empty()) throw Error(ErrorCode::EmptyCloud, "cannot normalize an empty cloud");
  if (scale_constants.empty() || scale_constants.front() != 1.0)
    throw Error(ErrorCode::InvalidArgument, "scale constants must start with s0 = 1");
  for (double s : scale_constants)
    if (!(s > 0.0)) throw Error(ErrorCode::InvalidArgument, "scale constants must be positive");

  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  for (const auto& p : pts) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }

  ScaleSpace space;
  space.center = 0.5 * (lo + hi);
  space.alpha = (hi - lo).maxCoeff();
  if (!(space.alpha > 0.0)) throw Error(ErrorCode::DegenerateCloud, "all points coincide (alpha = 0)");

  for (double s : scale_constants) {
    ScaleLevel level;
    level.s = s;
    level.cloud.frame = Frame::UnitCube;
    level.cloud.points.reserve(pts.size());
    double zmin = std::numeric_limits<double>::infinity();
    double zmax = -zmin;
    for (const auto& p : pts) {
      // Clamp only absorbs rounding at the faces.
      const Vec3 q = to_unit_cube(p, space.center, space.alpha, s).cwiseMax(0.0).cwiseMin(1.0);
      zmin = std::min(zmin, q.z());
      zmax = std::max(zmax, q.z());
      level.cloud.points.push_back(q);
    }
    level.h = zmax - zmin;
    level.pixels = metric.pixels;
    space.levels.push_back(std::move(level));
  }
  return space;
}

namespace {

// Static kd-tree over a point span, used for k-nearest-neighbour queries.
class KdTree {
 public:
  explicit KdTree(std::span<const Vec3> pts) : pts_(pts), index_(pts.size()) {
    std::iota(index_.begin(), index_.end(), 0);
    nodes_.reserve(pts.size());
    if (!pts.empty()) build(0, static_cast<int>(pts.size()), 0);
  }

  // k nearest excluding `self`, ascending distance.
  std::vector<int> query(int self, int k) const {
    std::priority_queue<std::pair<double, int>> heap;
    if (!nodes_.empty()) search(0, pts_[static_cast<std::size_t>(self)], self, k, heap);
    std::vector<int> out(heap.size());
    for (auto i = static_cast<int>(heap.size()) - 1; i >= 0; --i) {
      out[static_cast<std::size_t>(i)] = heap.top().second;
      heap.pop();
    }
    return out;
  }

 private:
  struct Node {
    int point;
    int axis;
    int left = -1;
    int right = -1;
  };

  int build(int begin, int end, int depth) {
    if (begin >= end) return -1;
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 hi = -lo;
    for (int i = begin; i < end; ++i) {
      lo = lo.cwiseMin(pts_[static_cast<std::size_t>(index_[static_cast<std::size_t>(i)])]);
      hi = hi.cwiseMax(pts_[static_cast<std::size_t>(index_[static_cast<std::size_t>(i)])]);
    }
    int axis = 0;
    (hi - lo).maxCoeff(&axis);
    const int mid = (begin + end) / 2;
    std::nth_element(index_.begin() + begin, index_.begin() + mid, index_.begin() + end, [&](int a, int b) {
      const double da = pts_[static_cast<std::size_t>(a)][axis];
      const double db = pts_[static_cast<std::size_t>(b)][axis];
      return da < db || (da == db && a < b);
    });
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back({index_[static_cast<std::size_t>(mid)], axis});
    const int l = build(begin, mid, depth + 1);
    const int r = build(mid + 1, end, depth + 1);
    nodes_[static_cast<std::size_t>(id)].left = l;
    nodes_[static_cast<std::size_t>(id)].right = r;
    return id;
  }

  void search(int node, const Vec3& q, int self, int k, std::priority_queue<std::pair<double, int>>& heap) const {
    const Node& n = nodes_[static_cast<std::size_t>(node)];
    const Vec3& p = pts_[static_cast<std::size_t>(n.point)];
    if (n.point != self) {
      const double d = (p - q).squaredNorm();
      if (static_cast<int>(heap.size()) < k) {
        heap.emplace(d, n.point);
      } else if (d < heap.top().first) {
        heap.pop();
        heap.emplace(d, n.point);
      }
    }
    const double diff = q[n.axis] - p[n.axis];
    const int near = diff < 0.0 ? n.left : n.right;
    const int far = diff < 0.0 ? n.right : n.left;
    if (near >= 0) search(near, q, self, k, heap);
    if (far >= 0 && (static_cast<int>(heap.size()) < k || diff * diff < heap.top().first))
      search(far, q, self, k, heap);
  }

  std::span<const Vec3> pts_;
  std::vector<int> index_;
  std::vector<Node> nodes_;
};

}  // namespace

std::vector<std::vector<int>> nearest_neighbours(std::span<const Vec3> points, int k) {
  KdTree tree(points);
  std::vector<std::vector<int>> out(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) out[i] = tree.query(static_cast<int>(i), k);
  return out;
}

NormalEstimate estimate_normals(const PointCloud& cloud, int k) {
  if (k < 3) throw Error(ErrorCode::InvalidArgument, "normal estimation needs k >= 3");
  if (static_cast<int>(cloud.size()) <= k)
    throw Error(ErrorCode::InvalidArgument, "normal estimation needs more points than neighbours");

  const auto neighbours = nearest_neighbours(cloud.points, k);
  NormalEstimate out;
  out.normals.resize(cloud.size());
  out.fallback.assign(cloud.size(), false);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    Vec3 mean = cloud.points[i];
    for (int j : neighbours[i]) mean += cloud.points[static_cast<std::size_t>(j)];
    mean /= static_cast<double>(neighbours[i].size() + 1);
    Mat3 cov = (cloud.points[i] - mean) * (cloud.points[i] - mean).transpose();
    for (int j : neighbours[i]) {
      const Vec3 d = cloud.points[static_cast<std::size_t>(j)] - mean;
      cov += d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
    const Vec3 ev = eig.eigenvalues();
    // Rank <= 1 neighbourhood: no plane is defined.
    if (!(ev(1) > 1e-12 * std::max(ev(2), 1e-300))) {
      out.normals[i] = Vec3(0.0, 0.0, -1.0);
      out.fallback[i] = true;
      continue;
    }
    Vec3 n = eig.eigenvectors().col(0).normalized();
    if (n.z() > 0.0) n = -n;
    out.normals[i] = n;
  }
  return out;
}

}  // namespace ihf
