#pragma once

#include "ihf/forest.hpp"
#include "ihf/synthbench.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ihf {

struct ClutterParams {
  double psi1 = 0.95;
  double psi2 = 1.05;
  int max_iterations = 5;

  void validate() const;
};

struct RegistrationParams {
  ClutterParams clutter;
  double bin_mm = 5.0;
  // Anchor stride (pixels) of test-time part extraction.
  int stride = 2;
};

struct PoseHypothesis {
  Pose pose;
  double confidence = 0.0;
  int iteration = 0;
};

/// One vote paired with the metric centre of the part that cast it.
struct CastVote {
  Vec3 source = Vec3::Zero();
  Vote vote;
};

/// z-buffer render of the model at `pose`. Passing a crop's intrinsics and size
/// renders straight into the crop. Throws OutsideFrustum if nothing is hit.
DepthImage render_hypothesis(const Mesh& model, const Pose& pose, const Intrinsics& k, int width, int height);

/// Hough accumulation of object-centre predictions source + offset in cubic
/// bins of `bin_mm`. The max-count bin wins (lowest (ix, iy, iz) on ties); its
/// 3x3x3 neighbourhood contributes to the mean translation and the per-angle
/// circular mean rotation. Confidence is the contributing vote count.
PoseHypothesis aggregate_votes(std::span<const CastVote> votes, double bin_mm = 5.0);

struct ClutterResult {
  DepthImage image;
  PixelMask removed;
  std::size_t removed_count = 0;
  double gamma = 0.0;  // min of the hypothesis render
  double beta = 0.0;   // max of the hypothesis render
};

/// Keeps pixel p iff gamma*psi1 < I(p) < beta*psi2; other pixels become 0.
/// Only pixels that were nonzero are reported as removed.
ClutterResult remove_clutter(const DepthImage& image, const DepthImage& hypothesis, const ClutterParams& params);

/// Summary of the features used to form one hypothesis.
struct EstimateSummary {
  double h = 0.0;      // z extent of the normalized cloud
  double alpha = 0.0;  // normalization scale (mm)
  double g = 0.0;      // fixed: window fraction; variable: box edge relative to the initial crop
  std::size_t point_count = 0;
  std::size_t part_count = 0;
  double median_part_px = 0.0;
  std::size_t vote_count = 0;
  std::size_t max_votes_per_part = 0;
};

struct Estimate {
  PoseHypothesis hypothesis;
  EstimateSummary summary;
};

/// Single-scale (s = 1) normalization, IBS fit, part extraction with the given
/// spec, traversal and aggregation. Throws NoParts if no part is featurized.
Estimate estimate_pose(const DepthImage& image, const HoughForest& forest, const PartSpec& spec, int stride,
                       double bin_mm);

/// Initial registration with the forest's own part spec (g0 = 1/2 for fixed
/// parts, a 3/4 box for variable parts by default).
Estimate initial_register(const DepthImage& image, const HoughForest& forest, const RegistrationParams& params);

struct TraceStep {
  int k = 0;
  PoseHypothesis hypothesis;
  EstimateSummary summary;
  std::size_t removed_px = 0;    // pixels zeroed by this iteration's clutter removal
  std::size_t remaining_px = 0;  // nonzero pixels of the input to this iteration
  PixelMask removed;             // removal mask V^k (empty at k = 0)
  std::optional<double> omega;   // filled when ground truth is known
};

struct RefinementTrace {
  std::vector<TraceStep> steps;
  bool stopped_early = false;
  std::string stop_reason;

  const PoseHypothesis& final_hypothesis() const { return steps.back().hypothesis; }
};

/// Initial registration followed by params.clutter.max_iterations rounds of
/// render, clutter removal and re-estimation. Removal is cumulative: each
/// iteration filters the previous iteration's input. Fixed parts keep g; in
/// variable mode the cube-unit box is kept, so as the normalized object grows
/// each part covers less of it and fewer pixels.
RefinementTrace refine_iteratively(const DepthImage& image, const HoughForest& forest, const Mesh& model,
                                   const RegistrationParams& params);

/// {"stopped_early", "stop_reason", "iterations": [{k, pose, confidence, h, g,
/// removed_px, omega}]}.
void write_trace(const std::filesystem::path& path, const RefinementTrace& trace);
std::string trace_json(const RefinementTrace& trace);

}  // namespace ihf
