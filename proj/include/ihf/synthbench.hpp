#pragma once

#include "ihf/common.hpp"
#include "ihf/geometry.hpp"

#include <array>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace ihf {

struct Mesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;
};

enum class Shape { Box, Cup, Camera, Bottle };

const char* to_string(Shape shape);
Shape shape_from_string(const std::string& name);

// Watertight stand-in meshes, translated so the area-weighted surface centroid
// is the origin. Dimensions in mm.
Mesh make_box(const Vec3& dims);
// Closed cylinder (axis along y) with a square-section handle tube stitched
// into two holes of the side wall: one closed genus-1 surface.
Mesh make_cup(double radius, double height, int segments = 32, int rows = 10);
// Box body with a closed lens cylinder on its -z face.
Mesh make_camera(const Vec3& body, double lens_radius, double lens_length);
// Surface of revolution: body, shoulder and neck.
Mesh make_bottle(double radius, double height);

// `dims` may be empty for the default size of each shape.
Mesh make_mesh(Shape shape, std::span<const double> dims = {});

Vec3 surface_centroid(const Mesh& mesh);
int euler_characteristic(const Mesh& mesh);
// Every undirected edge is shared by exactly two triangles.
bool is_closed(const Mesh& mesh);

/// ASCII mesh: "ihf-mesh 1", "vertices V", V lines "x y z", "triangles T",
/// T lines "a b c" (0-based vertex indices).
void write_mesh(std::ostream& os, const Mesh& mesh);
Mesh read_mesh(std::istream& is);
void save_mesh(const Mesh& mesh, const std::filesystem::path& path);
Mesh load_mesh(const std::filesystem::path& path);

struct RenderItem {
  const Mesh* mesh = nullptr;
  Pose pose;
  int label = 0;
};

struct RenderResult {
  DepthImage depth;
  std::vector<int> labels;  // per pixel, -1 where nothing was hit
};

/// Z-buffer render: depth at each pixel centre is the exact ray/triangle-plane
/// intersection of the nearest covering triangle.
RenderResult render(std::span<const RenderItem> items, const Intrinsics& k, int width, int height);

// Single-mesh render; throws OutsideFrustum if no pixel is covered.
DepthImage render_mesh(const Mesh& mesh, const Pose& pose, const Intrinsics& k, int width, int height);

struct BoundingBox {
  int u0 = 0;
  int v0 = 0;
  int width = 0;
  int height = 0;

  bool contains(int u, int v) const { return u >= u0 && v >= v0 && u < u0 + width && v < v0 + height; }
  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

// Tight box of the nonzero pixels.
BoundingBox nonzero_bbox(const DepthImage& image);

/// Axis-aligned (in its own frame) box primitive used for occluders and clutter.
struct BoxPrimitive {
  Vec3 dims = Vec3::Ones();
  Pose pose;
};

struct SceneSpec {
  Pose pose;
  std::vector<BoxPrimitive> occluders;
  std::vector<BoxPrimitive> clutter;
  double coverage_target = 0.0;
  double noise_sigma = 0.0;
  double dropout = 0.0;
  std::uint64_t noise_seed = 0;
};

struct SceneRender {
  DepthImage image;         // full scene, noise applied
  DepthImage object_clean;  // object alone, no noise
  PixelMask object_visible;
  std::size_t object_pixels = 0;
  double visibility = 0.0;
  BoundingBox bbox;  // projection of the whole object
  bool fully_occluded = false;
};

SceneRender render_scene(const SceneSpec& spec, const Mesh& object, const Intrinsics& k, int width, int height);

/// Box occluder 80 mm in front of the object's nearest point, centred on the
/// ray through `target` (a visible object pixel) and grown by bisection until
/// the hidden fraction of the object's pixels approaches `coverage`.
BoxPrimitive fit_occluder(const Mesh& object, const Pose& pose, const Intrinsics& k, int width, int height,
                          double coverage, Pixel target);

struct ManifestEntry {
  std::string id;
  std::string depth_file;  // relative to the manifest directory
  Pose pose;
  BoundingBox bbox;  // crop window in full-image pixels
  double visibility = 1.0;
  SceneSpec scene;
};

struct DatasetManifest {
  std::string split;
  double f_d = 750.0;
  std::string shape;
  std::string mesh_file;  // relative to the manifest directory
  Intrinsics intrinsics;
  int image_width = 640;
  int image_height = 480;
  std::vector<ManifestEntry> entries;
};

struct GeneratedImage {
  ManifestEntry entry;
  DepthImage image;  // cropped to entry.bbox
};

struct TrainingGrid {
  double f_d = 750.0;
  double limit_deg = 45.0;
  double step_deg = 15.0;
};

struct TestSetOptions {
  int count = 30;
  double f_d = 750.0;
  double depth_range = 50.0;
  double lateral_range = 30.0;
  double max_angle_deg = 45.0;
  double occlusion_min = 0.0;
  double occlusion_max = 0.5;
  double clutter_probability = 0.5;
  double noise_sigma = 1.0;
  double dropout = 0.0;
  double crop_jitter = 0.1;
  std::uint64_t seed = 1;
};

/// Clean renders on a yaw x pitch grid at (0, 0, f_d), cropped to the object.
std::vector<GeneratedImage> generate_training_set(const Mesh& mesh, const TrainingGrid& grid, const Intrinsics& k,
                                                  int width, int height);

/// Randomized scenes; scene i draws from the stream derive(seed, i).
std::vector<GeneratedImage> generate_test_set(const Mesh& mesh, const TestSetOptions& options, const Intrinsics& k,
                                              int width, int height);

/// Writes depth files and `manifest.json` into `dir`; returns the manifest.
DatasetManifest write_dataset(const std::filesystem::path& dir, const std::string& split, const std::string& shape,
                              const std::filesystem::path& mesh_file, double f_d, const Intrinsics& k, int width,
                              int height, std::span<const GeneratedImage> images);

DatasetManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

}  // namespace ihf
