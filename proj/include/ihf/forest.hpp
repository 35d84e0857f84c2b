#pragma once

#include "ihf/common.hpp"
#include "ihf/hocp.hpp"

#include <filesystem>
#include <iosfwd>
#include <limits>
#include <span>
#include <vector>

namespace ihf {

/// A leaf vote: offset from the part centre to the object centre (mm, camera
/// frame) and the object's Euler rotation.
struct Vote {
  Vec3 offset = Vec3::Zero();
  Vec3 rotation = Vec3::Zero();
  friend bool operator==(const Vote&, const Vote&) = default;
};

struct ForestParams {
  int tree_count = 3;
  int max_depth = 25;
  int max_leaf_samples = 15;
  int template_candidates = 20;
  int threshold_candidates = 10;
  double bootstrap_fraction = 0.7;
  double cov_epsilon = 1e-6;
  std::uint64_t seed = 1;

  void validate() const;
};

struct TreeNode {
  bool leaf = true;
  int depth = 0;
  // Split nodes.
  double tau = 0.0;
  std::vector<float> feature;
  TemplateDepthMap depth_map;
  int left = -1;
  int right = -1;
  // Leaves.
  std::vector<Vote> votes;
};

/// Nodes in preorder; node 0 is the root.
struct Tree {
  std::vector<TreeNode> nodes;

  int depth() const;
  std::size_t leaf_count() const;
};

struct HoughForest {
  ForestParams params;
  FeatureConfig features;
  std::vector<Tree> trees;

  PartMode mode() const { return features.spec.mode; }
};

/// ||f_Omega - f_T||_2 where Omega is the part's descriptors surviving the
/// depth check against the template; +inf when Omega is empty. `scratch`
/// must hold dimension() floats.
double similarity(const Part& part, std::span<const float> template_feature, const TemplateDepthMap& template_map,
                  const HocpParams& params, std::span<float> scratch);
double similarity(const Part& part, const Part& tmpl, const HocpParams& params);

/// similarity() against one fixed template, with the depth-check bounds
/// widened once up front. Scores are identical to similarity().
class TemplateScorer {
 public:
  TemplateScorer(std::span<const float> feature, const TemplateDepthMap& map, const HocpParams& params);

  double operator()(const Part& part, std::span<float> scratch) const;

 private:
  std::span<const float> feature_;
  const HocpParams& params_;
  int di0_ = 0;
  int dj0_ = 0;
  unsigned width_ = 0;
  unsigned height_ = 0;
  // Accepted dz range per column; unseen columns accept everything.
  std::vector<double> lo_;
  std::vector<double> hi_;
};

/// Gaussian entropy proxy of a vote set: 1/2 log det(cov + eps I) of the
/// offsets plus the same for the rotations, the latter with wrap-aware
/// deviations about the circular mean.
double vote_entropy(std::span<const Vote> votes, double eps);

/// Votes with cached sines and cosines, for evaluating vote_entropy over many
/// index subsets of one set.
class VoteTable {
 public:
  explicit VoteTable(std::span<const Vote> votes);

  std::size_t size() const { return votes_.size(); }
  // vote_entropy of the votes at `subset`.
  double entropy(std::span<const int> subset, double eps) const;

 private:
  std::vector<Vote> votes_;
  std::vector<Vec3> sin_;
  std::vector<Vec3> cos_;
};

/// Information gain of a split; -inf if a side is empty.
double split_quality(std::span<const Vote> left, std::span<const Vote> right, double eps);

/// Grows one tree over the given parts.
Tree grow_tree(std::span<const Part> parts, std::span<const int> subset, const ForestParams& params,
               const HocpParams& hocp, Rng& rng);

HoughForest train_forest(std::span<const Part> parts, const ForestParams& params, const FeatureConfig& features);

/// Leaf votes of every tree for one part, concatenated in tree order.
std::vector<Vote> traverse(const HoughForest& forest, const Part& part);

/// Labels the parts of every scale level of a foreground training image with
/// the ground-truth pose: offset = object centre - part centre.
std::vector<Part> annotate_parts(const PreparedImage& prepared, std::span<const ControlLattice> lattices,
                                 const Pose& gt, const FeatureConfig& config, int width, int height, int stride);

/// prepare_image + per-level fit + annotate_parts for one training image.
std::vector<Part> training_parts(const DepthImage& image, const Pose& gt, const FeatureConfig& config, int stride);

void write_forest(std::ostream& os, const HoughForest& forest);
HoughForest read_forest(std::istream& is);
void save_forest(const HoughForest& forest, const std::filesystem::path& path);
HoughForest load_forest(const std::filesystem::path& path);

}  // namespace ihf
