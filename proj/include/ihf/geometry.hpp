#pragma once

#include "ihf/common.hpp"

#include <filesystem>
#include <span>
#include <vector>

namespace ihf {

struct Intrinsics {
  double fx = 525.0;
  double fy = 525.0;
  double cx = 319.5;
  double cy = 239.5;

  bool valid() const { return fx > 0.0 && fy > 0.0; }
  friend bool operator==(const Intrinsics&, const Intrinsics&) = default;
};

struct Pixel {
  int u = 0;
  int v = 0;
  friend bool operator==(const Pixel&, const Pixel&) = default;
};

/// Row-major metric depth map (mm). Zero marks a missing measurement.
class DepthImage {
 public:
  DepthImage() = default;
  DepthImage(int width, int height, Intrinsics intrinsics);
  DepthImage(int width, int height, Intrinsics intrinsics, std::vector<double> depth);

  int width() const { return width_; }
  int height() const { return height_; }
  const Intrinsics& intrinsics() const { return intrinsics_; }
  std::span<const double> depth() const { return depth_; }

  double at(int u, int v) const { return depth_[static_cast<std::size_t>(v) * width_ + u]; }
  void set(int u, int v, double z);
  bool contains(int u, int v) const { return u >= 0 && v >= 0 && u < width_ && v < height_; }

  std::size_t nonzero_count() const;
  bool empty() const { return nonzero_count() == 0; }

  // Sub-window [u0, u0+w) x [v0, v0+h), clipped to the image; the principal
  // point is shifted so that back-projection is unchanged.
  DepthImage crop(int u0, int v0, int w, int h) const;

  friend bool operator==(const DepthImage&, const DepthImage&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  Intrinsics intrinsics_;
  std::vector<double> depth_;
};

// Bool mask is kept as bytes so it can be viewed as a span.
struct PixelMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;

  bool at(int u, int v) const { return bits[static_cast<std::size_t>(v) * width + u] != 0; }
  std::size_t count() const;
};

enum class Frame { Metric, UnitCube };

struct PointCloud {
  std::vector<Vec3> points;
  Frame frame = Frame::Metric;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

struct BackProjection {
  PointCloud cloud;
  std::vector<Pixel> pixels;  // source pixel per point
};

struct ScaleLevel {
  double s = 1.0;
  PointCloud cloud;  // unit-cube frame
  double h = 0.0;    // z extent inside the cube
  std::vector<Pixel> pixels;
};

struct ScaleSpace {
  std::vector<ScaleLevel> levels;
  double alpha = 0.0;  // mm
  // Bounding-box midpoint of the metric cloud (mm); centring on the midpoint
  // keeps every level inside the closed unit cube.
  Vec3 center = Vec3::Zero();
};

/// Rigid pose of an object centre in the camera frame: translation (mm) and
/// roll/pitch/yaw Euler angles (rad), R = Rz(yaw) * Ry(pitch) * Rx(roll).
struct Pose {
  Vec3 offset = Vec3::Zero();
  Vec3 rotation = Vec3::Zero();

  Mat3 rotation_matrix() const;
  Vec3 apply(const Vec3& x) const { return rotation_matrix() * x + offset; }
  Pose wrapped() const;
};

Mat3 euler_to_matrix(const Vec3& rpy);
Vec3 matrix_to_euler(const Mat3& r);

Vec3 backproject_pixel(double u, double v, double z, const Intrinsics& k);
Eigen::Vector2d project(const Vec3& p, const Intrinsics& k);

BackProjection backproject(const DepthImage& image);

std::vector<double> default_scale_constants(double factor = 1.15, int count = 9);

// Cube coordinates of a metric point for a given normalization.
Vec3 to_unit_cube(const Vec3& x, const Vec3& center, double alpha, double s);

ScaleSpace normalize_scale_space(const BackProjection& metric, std::span<const double> scale_constants);

struct NormalEstimate {
  std::vector<Vec3> normals;
  std::vector<bool> fallback;  // collinear neighbourhoods
};

NormalEstimate estimate_normals(const PointCloud& cloud, int k);

// Indices of the k nearest neighbours of every point (excluding itself).
std::vector<std::vector<int>> nearest_neighbours(std::span<const Vec3> points, int k);

/// Depth file: 16-bit little-endian raw in units of `depth_scale` mm plus a
/// JSON sidecar {width, height, fx, fy, cx, cy, depth_scale}.
void save_depth(const DepthImage& image, const std::filesystem::path& raw_path, double depth_scale = 0.1);
DepthImage load_depth(const std::filesystem::path& raw_path);
std::filesystem::path depth_sidecar_path(const std::filesystem::path& raw_path);

}  // namespace ihf
