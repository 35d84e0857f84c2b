#pragma once

#include "ihf/common.hpp"
#include "ihf/geometry.hpp"
#include "ihf/ibs.hpp"

#include <algorithm>
#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace ihf {

struct HocpParams {
  std::array<int, 3> nu{4, 8, 8};  // radial, inclination, azimuth bins
  double r_min_fraction = 1.0 / 16.0;
  double delta_d = 0.05;  // depth-check tolerance, cube units

  int dimension() const { return nu[0] * nu[1] * nu[2]; }
  void validate() const;
};

struct HocpFeature {
  std::vector<float> bins;
  std::array<int, 3> nu{};
  double r_min = 0.0;
  double r_max = 0.0;

  double total() const;
};

/// A control descriptor expressed relative to a part centre, with the angular
/// bins precomputed. The radial bin depends on r_max of whatever subset is
/// binned, so only log r is kept. (di, dj) is the lateral lattice column
/// relative to the centre's column; dz the cube depth relative to the centre.
struct PartDescriptor {
  float log_r;
  float dz;
  std::int8_t di;
  std::int8_t dj;
  std::uint8_t theta_bin;
  std::uint8_t phi_bin;
};

int inclination_bin(double z, double r, int nu_theta);
int azimuth_bin(double x, double y, int nu_phi);
int radial_bin(float log_r, float log_r_max, double r_min_fraction, int nu_r);

// Flat histogram index of a descriptor within a set whose largest log r is
// log_r_max; span = -log(r_min_fraction). Shared by every histogram path.
inline int flat_bin(const PartDescriptor& d, float log_r_max, double span, const std::array<int, 3>& nu) {
  const double t = nu[0] * (static_cast<double>(d.log_r) - static_cast<double>(log_r_max) + span) / span;
  const int rb = t > 0.0 ? std::min(static_cast<int>(t), nu[0] - 1) : 0;
  return (rb * nu[1] + d.theta_bin) * nu[2] + d.phi_bin;
}

PartDescriptor describe(const Vec3& relative, int di, int dj, const HocpParams& params);

/// Log-radius x inclination x azimuth counts about `center`; flat index is
/// (radial * nu_theta + inclination) * nu_phi + azimuth.
HocpFeature hocp_histogram(std::span<const Vec3> positions, const Vec3& center, const HocpParams& params);

/// Per relative lateral column, the depth range [zmin, zmax] of a template
/// part's descriptors. Columns the template never saw have no entry.
class TemplateDepthMap {
 public:
  TemplateDepthMap() = default;
  explicit TemplateDepthMap(std::span<const PartDescriptor> descriptors);

  bool lookup(int di, int dj, float& zmin, float& zmax) const {
    const int a = di - di0_;
    const int b = dj - dj0_;
    if (a < 0 || b < 0 || a >= width_ || b >= height_) return false;
    const std::size_t c = static_cast<std::size_t>(b) * width_ + a;
    zmin = zmin_[c];
    zmax = zmax_[c];
    return zmin <= zmax;
  }

  // Raw access for serialization.
  int di0() const { return di0_; }
  int dj0() const { return dj0_; }
  int width() const { return width_; }
  int height() const { return height_; }
  std::span<const float> zmin() const { return zmin_; }
  std::span<const float> zmax() const { return zmax_; }
  static TemplateDepthMap from_raw(int di0, int dj0, int width, int height, std::vector<float> zmin,
                                   std::vector<float> zmax);

  friend bool operator==(const TemplateDepthMap&, const TemplateDepthMap&) = default;

 private:
  int di0_ = 0;
  int dj0_ = 0;
  int width_ = 0;
  int height_ = 0;
  std::vector<float> zmin_;
  std::vector<float> zmax_;
};

// A descriptor passes the depth check if the template has no entry for its
// column or its depth lies within the template's range widened by delta_d.
inline bool depth_consistent(const PartDescriptor& d, const TemplateDepthMap& tmpl, double delta_d) {
  float lo = 0.0f;
  float hi = 0.0f;
  if (!tmpl.lookup(d.di, d.dj, lo, hi)) return true;
  return d.dz >= lo - delta_d && d.dz <= hi + delta_d;
}

std::vector<PartDescriptor> depth_consistency_filter(std::span<const PartDescriptor> descriptors,
                                                     const TemplateDepthMap& tmpl, double delta_d);

/// Histogram of `descriptors` (optionally only those passing the depth check
/// against `tmpl`) written into `out`, which must have dimension() entries.
/// Returns the number of descriptors binned.
std::size_t histogram_into(std::span<const PartDescriptor> descriptors, const HocpParams& params, std::span<float> out,
                           const TemplateDepthMap* tmpl = nullptr);

/// Non-zero control descriptors grouped by lateral column (i, j).
class LatticeColumns {
 public:
  LatticeColumns(const ControlLattice& lattice, double weight_threshold = 0.0);

  int resolution() const { return n_; }
  double delta() const { return delta_; }
  std::size_t size() const { return descriptors_.size(); }

  // Descriptors whose lateral position lies in [xmin, xmax] x [ymin, ymax].
  std::vector<ControlDescriptor> select(double xmin, double xmax, double ymin, double ymax) const;

 private:
  int n_;
  double delta_;
  std::vector<ControlDescriptor> descriptors_;  // sorted by column
  std::vector<std::uint32_t> column_start_;     // n*n + 1 offsets
};

enum class PartMode { Fixed, Variable };

const char* to_string(PartMode mode);
PartMode part_mode_from_string(const std::string& name);

struct PartSpec {
  PartMode mode = PartMode::Fixed;
  double g = 0.5;          // fixed: window side as a fraction of the box side
  double box_edge = 0.75;  // variable: cube-unit edge of the 3D box
};

/// Spatial extent of one part on a scale level: anchor, lateral footprint of
/// the member points (cube units) and their count.
struct PartRegion {
  int anchor = 0;  // point index in the level cloud
  Pixel center_px;
  Vec3 center = Vec3::Zero();
  double xmin = 0.0, xmax = 0.0, ymin = 0.0, ymax = 0.0;
  int size_px = 0;
};

// Points whose pixels sit on the stride grid through the image centre.
std::vector<int> anchor_points(const ScaleLevel& level, int width, int height, int stride);

// Window side in pixels: g times the longer image side.
int fixed_window_side(double g, int width, int height);

std::vector<PartRegion> extract_parts_fixed(const ScaleLevel& level, int width, int height, double g, int stride);
std::vector<PartRegion> extract_parts_variable(const ScaleLevel& level, int width, int height, double box_edge,
                                               int stride);

struct Part {
  Pixel center_px;
  Vec3 center_cube = Vec3::Zero();
  Vec3 center_metric = Vec3::Zero();
  int scale_level = 0;
  int size_px = 0;
  std::vector<float> feature;
  std::vector<PartDescriptor> descriptors;  // also serves as the part depth map
  // Bin of each descriptor when the whole set is binned, and that set's
  // largest log r; lets template scoring skip rebinning when the farthest
  // descriptor survives the depth check. Optional.
  std::vector<std::uint16_t> descriptor_bins;
  float log_r_max = 0.0f;
  // Labels, filled for training parts.
  Vec3 offset = Vec3::Zero();
  Vec3 rotation = Vec3::Zero();
};

/// Selects the descriptors in the region's footprint (widened by one knot
/// spacing, full depth column), optionally depth-checks them against a
/// template, and bins them about the region centre.
Part featurize_part(const PartRegion& region, const LatticeColumns& columns, const HocpParams& params,
                    const TemplateDepthMap* tmpl = nullptr);

/// Everything needed to turn a depth image into featurized parts.
struct FeatureConfig {
  std::vector<double> scales = default_scale_constants();
  FitOptions fit;
  int normal_k = 10;
  int max_fit_points = 2500;
  // Control points with |weight| <= threshold are not descriptors.
  double descriptor_threshold = 0.0;
  HocpParams hocp;
  PartSpec spec;
};

struct PreparedImage {
  BackProjection metric;
  NormalEstimate normals;
  ScaleSpace space;
};

PreparedImage prepare_image(const DepthImage& image, std::span<const double> scale_constants, int normal_k);

// 3L fit of one level, on a deterministic subsample of at most max_fit_points.
ControlLattice fit_level(const ScaleLevel& level, const NormalEstimate& normals, const FeatureConfig& config);

/// All featurized parts of one level. Regions without descriptors are skipped.
std::vector<Part> level_parts(const PreparedImage& prepared, int level_index, const ControlLattice& lattice,
                              const FeatureConfig& config, int width, int height, int stride);

}  // namespace ihf
