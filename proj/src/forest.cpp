#include "ihf/forest.hpp"

#include "ihf/binary_io.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace ihf {

void ForestParams::validate() const {
  if (tree_count < 1) throw Error(ErrorCode::InvalidArgument, "forest needs at least one tree");
  if (max_depth < 0) throw Error(ErrorCode::InvalidArgument, "max_depth must be non-negative");
  if (max_leaf_samples < 1) throw Error(ErrorCode::InvalidArgument, "max_leaf_samples must be >= 1");
  if (template_candidates < 1 || threshold_candidates < 1)
    throw Error(ErrorCode::InvalidArgument, "candidate counts must be >= 1");
  if (!(bootstrap_fraction > 0.0 && bootstrap_fraction <= 1.0))
    throw Error(ErrorCode::InvalidArgument, "bootstrap_fraction must lie in (0, 1]");
  if (!(cov_epsilon > 0.0)) throw Error(ErrorCode::InvalidArgument, "cov_epsilon must be positive");
}

int Tree::depth() const {
  int d = 0;
  for (const auto& n : nodes) d = std::max(d, n.depth);
  return d;
}

std::size_t Tree::leaf_count() const {
  return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& n) { return n.leaf; }));
}

TemplateScorer::TemplateScorer(std::span<const float> feature, const TemplateDepthMap& map, const HocpParams& params)
    : feature_(feature), params_(params), di0_(map.di0()), dj0_(map.dj0()),
      width_(static_cast<unsigned>(map.width())), height_(static_cast<unsigned>(map.height())) {
  const auto cells = static_cast<std::size_t>(width_) * height_;
  lo_.resize(cells);
  hi_.resize(cells);
  for (std::size_t c = 0; c < cells; ++c) {
    const float zmin = map.zmin()[c];
    const float zmax = map.zmax()[c];
    if (zmin <= zmax) {
      lo_[c] = zmin - params.delta_d;
      hi_[c] = zmax + params.delta_d;
    } else {
      lo_[c] = -std::numeric_limits<double>::infinity();
      hi_[c] = std::numeric_limits<double>::infinity();
    }
  }
}

double TemplateScorer::operator()(const Part& part, std::span<float> scratch) const {
  if (feature_.size() != part.feature.size() || scratch.size() != feature_.size())
    throw Error(ErrorCode::InvalidArgument, "feature dimension mismatch");
  // Same counts as histogram_into with a template. With cached bins the
  // histogram is filled in the filtering pass; it is only rebuilt when the
  // farthest descriptor failed the depth check (its r_max then differs).
  const auto& ds = part.descriptors;
  const bool cached = part.descriptor_bins.size() == ds.size();
  auto passes = [&](const PartDescriptor& d) {
    const unsigned a = static_cast<unsigned>(d.di - di0_);
    const unsigned b = static_cast<unsigned>(d.dj - dj0_);
    if (a >= width_ || b >= height_) return true;
    const std::size_t c = static_cast<std::size_t>(b) * width_ + a;
    const double z = d.dz;
    return z >= lo_[c] && z <= hi_[c];
  };
  std::fill(scratch.begin(), scratch.end(), 0.0f);
  float log_r_max = -std::numeric_limits<float>::infinity();
  std::size_t kept = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (!passes(ds[i])) continue;
    log_r_max = std::max(log_r_max, ds[i].log_r);
    ++kept;
    if (cached) scratch[part.descriptor_bins[i]] += 1.0f;
  }
  if (kept == 0) return std::numeric_limits<double>::infinity();
  if (!cached || log_r_max != part.log_r_max) {
    std::fill(scratch.begin(), scratch.end(), 0.0f);
    const double span = -std::log(params_.r_min_fraction);
    for (const auto& d : ds)
      if (passes(d)) scratch[static_cast<std::size_t>(flat_bin(d, log_r_max, span, params_.nu))] += 1.0f;
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < scratch.size(); ++i) {
    const double diff = static_cast<double>(scratch[i]) - feature_[i];
    acc += diff * diff;
  }
  return std::sqrt(acc);
}

double similarity(const Part& part, std::span<const float> template_feature, const TemplateDepthMap& template_map,
                  const HocpParams& params, std::span<float> scratch) {
  return TemplateScorer(template_feature, template_map, params)(part, scratch);
}

double similarity(const Part& part, const Part& tmpl, const HocpParams& params) {
  std::vector<float> scratch(tmpl.feature.size());
  return similarity(part, tmpl.feature, TemplateDepthMap(tmpl.descriptors), params, scratch);
}

VoteTable::VoteTable(std::span<const Vote> votes) : votes_(votes.begin(), votes.end()) {
  sin_.reserve(votes_.size());
  cos_.reserve(votes_.size());
  for (const auto& v : votes_) {
    sin_.push_back(v.rotation.array().sin().matrix());
    cos_.push_back(v.rotation.array().cos().matrix());
  }
}

double VoteTable::entropy(std::span<const int> subset, double eps) const {
  if (subset.empty()) throw Error(ErrorCode::EmptyVotes, "entropy of an empty vote set");
  const double n = static_cast<double>(subset.size());
  Vec3 mean = Vec3::Zero();
  Vec3 s = Vec3::Zero();
  Vec3 c = Vec3::Zero();
  for (int i : subset) {
    const auto q = static_cast<std::size_t>(i);
    mean += votes_[q].offset;
    s += sin_[q];
    c += cos_[q];
  }
  mean /= n;
  Vec3 circ;
  for (int a = 0; a < 3; ++a) circ[a] = std::atan2(s[a], c[a]);
  Mat3 cov_t = Mat3::Zero();
  Mat3 cov_r = Mat3::Zero();
  for (int i : subset) {
    const auto& v = votes_[static_cast<std::size_t>(i)];
    const Vec3 dt = v.offset - mean;
    Vec3 dr = v.rotation - circ;
    for (int a = 0; a < 3; ++a)
      if (dr[a] > kPi || dr[a] <= -kPi) dr[a] = wrap_angle(dr[a]);
    cov_t.noalias() += dt * dt.transpose();
    cov_r.noalias() += dr * dr.transpose();
  }
  cov_t = cov_t / n + eps * Mat3::Identity();
  cov_r = cov_r / n + eps * Mat3::Identity();
  return 0.5 * (std::log(cov_t.determinant()) + std::log(cov_r.determinant()));
}

double vote_entropy(std::span<const Vote> votes, double eps) {
  if (votes.empty()) throw Error(ErrorCode::EmptyVotes, "entropy of an empty vote set");
  std::vector<int> all(votes.size());
  std::iota(all.begin(), all.end(), 0);
  return VoteTable(votes).entropy(all, eps);
}

double split_quality(std::span<const Vote> left, std::span<const Vote> right, double eps) {
  if (left.empty() || right.empty()) return -std::numeric_limits<double>::infinity();
  std::vector<Vote> parent(left.begin(), left.end());
  parent.insert(parent.end(), right.begin(), right.end());
  const double n = static_cast<double>(parent.size());
  return vote_entropy(parent, eps) -
         (static_cast<double>(left.size()) * vote_entropy(left, eps) +
          static_cast<double>(right.size()) * vote_entropy(right, eps)) /
             n;
}

namespace {

class Grower {
 public:
  Grower(std::span<const Part> parts, const ForestParams& params, const HocpParams& hocp, Rng& rng)
      : parts_(parts), params_(params), hocp_(hocp), rng_(rng), table_(all_votes(parts)),
        scratch_(static_cast<std::size_t>(hocp.dimension())) {}

  Tree run(std::vector<int> subset) {
    grow(std::move(subset), 0);
    return std::move(tree_);
  }

 private:
  static std::vector<Vote> all_votes(std::span<const Part> parts) {
    std::vector<Vote> v;
    v.reserve(parts.size());
    for (const auto& p : parts) v.push_back({p.offset, p.rotation});
    return v;
  }

  Vote vote_of(int i) const { return {parts_[static_cast<std::size_t>(i)].offset, parts_[static_cast<std::size_t>(i)].rotation}; }

  void make_leaf(int id, std::vector<int> idx) {
    const auto cap = static_cast<std::size_t>(params_.max_leaf_samples);
    if (idx.size() > cap) {
      for (std::size_t i = 0; i < cap; ++i) std::swap(idx[i], idx[i + rng_.index(idx.size() - i)]);
      idx.resize(cap);
    }
    auto& node = tree_.nodes[static_cast<std::size_t>(id)];
    node.leaf = true;
    for (int i : idx) node.votes.push_back(vote_of(i));
  }

  void score(const std::vector<int>& idx, const TemplateScorer& scorer, std::vector<double>& out) {
    out.resize(idx.size());
    for (std::size_t q = 0; q < idx.size(); ++q)
      out[q] = scorer(parts_[static_cast<std::size_t>(idx[q])], scratch_);
  }

  int grow(std::vector<int> idx, int depth) {
    const int id = static_cast<int>(tree_.nodes.size());
    tree_.nodes.emplace_back();
    tree_.nodes.back().depth = depth;
    if (depth >= params_.max_depth || idx.size() <= static_cast<std::size_t>(params_.max_leaf_samples)) {
      make_leaf(id, std::move(idx));
      return id;
    }

    double best_gain = -std::numeric_limits<double>::infinity();
    int best_template = -1;
    double best_tau = 0.0;
    std::vector<double> best_scores;
    std::vector<double> scores;
    std::vector<int> left;
    std::vector<int> right;
    const double n = static_cast<double>(idx.size());
    const double parent = table_.entropy(idx, params_.cov_epsilon);
    for (int t = 0; t < params_.template_candidates; ++t) {
      const int ti = idx[rng_.index(idx.size())];
      const Part& tmpl = parts_[static_cast<std::size_t>(ti)];
      const TemplateDepthMap map(tmpl.descriptors);
      score(idx, TemplateScorer(tmpl.feature, map, hocp_), scores);
      double lo = std::numeric_limits<double>::infinity();
      double hi = -lo;
      for (double s : scores)
        if (std::isfinite(s)) {
          lo = std::min(lo, s);
          hi = std::max(hi, s);
        }
      if (!(lo < hi)) continue;
      for (int k = 0; k < params_.threshold_candidates; ++k) {
        const double tau = rng_.uniform(lo, hi);
        left.clear();
        right.clear();
        for (std::size_t q = 0; q < idx.size(); ++q) (scores[q] < tau ? left : right).push_back(idx[q]);
        if (left.empty() || right.empty()) continue;
        const double gain = parent - (static_cast<double>(left.size()) * table_.entropy(left, params_.cov_epsilon) +
                                      static_cast<double>(right.size()) * table_.entropy(right, params_.cov_epsilon)) /
                                         n;
        if (gain > best_gain) {
          best_gain = gain;
          best_template = ti;
          best_tau = tau;
          best_scores = scores;
        }
      }
    }

    if (best_template < 0 || !(best_gain > 0.0)) {
      make_leaf(id, std::move(idx));
      return id;
    }

    std::vector<int> li;
    std::vector<int> ri;
    for (std::size_t q = 0; q < idx.size(); ++q) (best_scores[q] < best_tau ? li : ri).push_back(idx[q]);
    {
      auto& node = tree_.nodes[static_cast<std::size_t>(id)];
      const Part& tmpl = parts_[static_cast<std::size_t>(best_template)];
      node.leaf = false;
      node.tau = best_tau;
      node.feature = tmpl.feature;
      node.depth_map = TemplateDepthMap(tmpl.descriptors);
    }
    idx.clear();
    idx.shrink_to_fit();
    const int l = grow(std::move(li), depth + 1);
    const int r = grow(std::move(ri), depth + 1);
    tree_.nodes[static_cast<std::size_t>(id)].left = l;
    tree_.nodes[static_cast<std::size_t>(id)].right = r;
    return id;
  }

  std::span<const Part> parts_;
  const ForestParams& params_;
  const HocpParams& hocp_;
  Rng& rng_;
  VoteTable table_;
  std::vector<float> scratch_;
  Tree tree_;
};

}  // namespace

Tree grow_tree(std::span<const Part> parts, std::span<const int> subset, const ForestParams& params,
               const HocpParams& hocp, Rng& rng) {
  if (subset.empty()) throw Error(ErrorCode::InvalidArgument, "cannot grow a tree on an empty subset");
  for (const auto& p : parts)
    if (static_cast<int>(p.feature.size()) != hocp.dimension())
      throw Error(ErrorCode::InvalidArgument, "part feature dimension does not match the HoCP configuration");
  return Grower(parts, params, hocp, rng).run(std::vector<int>(subset.begin(), subset.end()));
}

HoughForest train_forest(std::span<const Part> parts, const ForestParams& params, const FeatureConfig& features) {
  params.validate();
  features.hocp.validate();
  if (parts.empty()) throw Error(ErrorCode::NoParts, "cannot train a forest without parts");
  HoughForest forest;
  forest.params = params;
  forest.features = features;
  const std::size_t n = parts.size();
  const auto m = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(params.bootstrap_fraction * n)), 1, n);
  for (int t = 0; t < params.tree_count; ++t) {
    Rng rng(Rng::derive(params.seed, static_cast<std::uint64_t>(t)));
    std::vector<int> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = static_cast<int>(i);
    for (std::size_t i = 0; i < m; ++i) std::swap(idx[i], idx[i + rng.index(n - i)]);
    idx.resize(m);
    std::sort(idx.begin(), idx.end());
    forest.trees.push_back(grow_tree(parts, idx, params, features.hocp, rng));
  }
  return forest;
}

std::vector<Vote> traverse(const HoughForest& forest, const Part& part) {
  std::vector<Vote> votes;
  std::vector<float> scratch(static_cast<std::size_t>(forest.features.hocp.dimension()));
  for (const auto& tree : forest.trees) {
    int id = 0;
    while (!tree.nodes[static_cast<std::size_t>(id)].leaf) {
      const auto& node = tree.nodes[static_cast<std::size_t>(id)];
      const double s = similarity(part, node.feature, node.depth_map, forest.features.hocp, scratch);
      id = s < node.tau ? node.left : node.right;
    }
    const auto& leaf = tree.nodes[static_cast<std::size_t>(id)].votes;
    votes.insert(votes.end(), leaf.begin(), leaf.end());
  }
  return votes;
}

std::vector<Part> annotate_parts(const PreparedImage& prepared, std::span<const ControlLattice> lattices,
                                 const Pose& gt, const FeatureConfig& config, int width, int height, int stride) {
  if (lattices.size() != prepared.space.levels.size())
    throw Error(ErrorCode::InvalidArgument, "one lattice per scale level required");
  const Pose label = gt.wrapped();
  std::vector<Part> out;
  for (std::size_t i = 0; i < lattices.size(); ++i) {
    auto parts = level_parts(prepared, static_cast<int>(i), lattices[i], config, width, height, stride);
    for (auto& p : parts) {
      p.offset = label.offset - p.center_metric;
      p.rotation = label.rotation;
      out.push_back(std::move(p));
    }
  }
  return out;
}

std::vector<Part> training_parts(const DepthImage& image, const Pose& gt, const FeatureConfig& config, int stride) {
  const auto prepared = prepare_image(image, config.scales, config.normal_k);
  std::vector<ControlLattice> lattices;
  for (const auto& level : prepared.space.levels) lattices.push_back(fit_level(level, prepared.normals, config));
  return annotate_parts(prepared, lattices, gt, config, image.width(), image.height(), stride);
}

namespace {

constexpr std::uint32_t kForestVersion = 1;

void write_vec3(std::ostream& os, const Vec3& v) {
  for (int a = 0; a < 3; ++a) io::write_f64(os, v[a]);
}

Vec3 read_vec3(io::Reader& in) {
  Vec3 v;
  for (int a = 0; a < 3; ++a) v[a] = in.f64();
  return v;
}

void write_node(std::ostream& os, const Tree& tree, int id) {
  const auto& node = tree.nodes[static_cast<std::size_t>(id)];
  io::write_u8(os, node.leaf ? 0 : 1);
  if (node.leaf) {
    io::write_u32(os, static_cast<std::uint32_t>(node.votes.size()));
    for (const auto& v : node.votes) {
      write_vec3(os, v.offset);
      write_vec3(os, v.rotation);
    }
    return;
  }
  io::write_f64(os, node.tau);
  io::write_u32(os, static_cast<std::uint32_t>(node.feature.size()));
  for (float f : node.feature) io::write_f32(os, f);
  const auto& m = node.depth_map;
  io::write_i32(os, m.di0());
  io::write_i32(os, m.dj0());
  io::write_u32(os, static_cast<std::uint32_t>(m.width()));
  io::write_u32(os, static_cast<std::uint32_t>(m.height()));
  for (float z : m.zmin()) io::write_f32(os, z);
  for (float z : m.zmax()) io::write_f32(os, z);
  write_node(os, tree, node.left);
  write_node(os, tree, node.right);
}

int read_node(io::Reader& in, Tree& tree, int depth, int dimension) {
  if (depth > 4096) in.fail("tree too deep");
  const int id = static_cast<int>(tree.nodes.size());
  tree.nodes.emplace_back();
  tree.nodes.back().depth = depth;
  const auto tag = in.u8();
  if (tag == 0) {
    const auto count = in.u32();
    if (count == 0 || count > 1u << 20) in.fail("implausible leaf size");
    std::vector<Vote> votes(count);
    for (auto& v : votes) {
      v.offset = read_vec3(in);
      v.rotation = read_vec3(in);
    }
    tree.nodes[static_cast<std::size_t>(id)].votes = std::move(votes);
    return id;
  }
  if (tag != 1) in.fail("bad node tag");
  TreeNode node;
  node.leaf = false;
  node.depth = depth;
  node.tau = in.f64();
  if (in.u32() != static_cast<std::uint32_t>(dimension)) in.fail("template dimension mismatch");
  node.feature.resize(static_cast<std::size_t>(dimension));
  for (float& f : node.feature) f = in.f32();
  const int di0 = in.i32();
  const int dj0 = in.i32();
  const auto w = in.u32();
  const auto h = in.u32();
  if (w > 512 || h > 512) in.fail("implausible depth map");
  std::vector<float> zmin(static_cast<std::size_t>(w) * h);
  std::vector<float> zmax(zmin.size());
  for (float& z : zmin) z = in.f32();
  for (float& z : zmax) z = in.f32();
  node.depth_map = TemplateDepthMap::from_raw(di0, dj0, static_cast<int>(w), static_cast<int>(h), std::move(zmin),
                                              std::move(zmax));
  tree.nodes[static_cast<std::size_t>(id)] = std::move(node);
  const int l = read_node(in, tree, depth + 1, dimension);
  const int r = read_node(in, tree, depth + 1, dimension);
  tree.nodes[static_cast<std::size_t>(id)].left = l;
  tree.nodes[static_cast<std::size_t>(id)].right = r;
  return id;
}

}  // namespace

void write_forest(std::ostream& os, const HoughForest& forest) {
  io::write_magic(os, "IHF1");
  io::write_u32(os, kForestVersion);
  const auto& p = forest.params;
  io::write_u32(os, static_cast<std::uint32_t>(p.tree_count));
  io::write_u32(os, static_cast<std::uint32_t>(p.max_depth));
  io::write_u32(os, static_cast<std::uint32_t>(p.max_leaf_samples));
  io::write_u32(os, static_cast<std::uint32_t>(p.template_candidates));
  io::write_u32(os, static_cast<std::uint32_t>(p.threshold_candidates));
  io::write_f64(os, p.bootstrap_fraction);
  io::write_f64(os, p.cov_epsilon);
  io::write_u64(os, p.seed);

  const auto& f = forest.features;
  io::write_u8(os, f.spec.mode == PartMode::Fixed ? 0 : 1);
  io::write_f64(os, f.spec.g);
  io::write_f64(os, f.spec.box_edge);
  io::write_u32(os, static_cast<std::uint32_t>(f.scales.size()));
  for (double s : f.scales) io::write_f64(os, s);
  io::write_u32(os, static_cast<std::uint32_t>(f.fit.n));
  io::write_f64(os, f.fit.epsilon);
  io::write_f64(os, f.fit.lambda);
  io::write_f64(os, f.fit.smoothness);
  io::write_u32(os, static_cast<std::uint32_t>(f.fit.max_iterations));
  io::write_f64(os, f.fit.tolerance);
  io::write_u32(os, static_cast<std::uint32_t>(f.normal_k));
  io::write_u32(os, static_cast<std::uint32_t>(f.max_fit_points));
  io::write_f64(os, f.descriptor_threshold);
  for (int v : f.hocp.nu) io::write_u32(os, static_cast<std::uint32_t>(v));
  io::write_f64(os, f.hocp.r_min_fraction);
  io::write_f64(os, f.hocp.delta_d);

  io::write_u32(os, static_cast<std::uint32_t>(forest.trees.size()));
  for (const auto& t : forest.trees) write_node(os, t, 0);
}

HoughForest read_forest(std::istream& is) {
  io::Reader in(is, "forest");
  in.expect_magic("IHF1");
  if (in.u32() != kForestVersion) in.fail("unsupported version");
  HoughForest forest;
  auto& p = forest.params;
  p.tree_count = static_cast<int>(in.u32());
  p.max_depth = static_cast<int>(in.u32());
  p.max_leaf_samples = static_cast<int>(in.u32());
  p.template_candidates = static_cast<int>(in.u32());
  p.threshold_candidates = static_cast<int>(in.u32());
  p.bootstrap_fraction = in.f64();
  p.cov_epsilon = in.f64();
  p.seed = in.u64();

  auto& f = forest.features;
  const auto mode = in.u8();
  if (mode > 1) in.fail("bad part mode");
  f.spec.mode = mode == 0 ? PartMode::Fixed : PartMode::Variable;
  f.spec.g = in.f64();
  f.spec.box_edge = in.f64();
  const auto scale_count = in.u32();
  if (scale_count == 0 || scale_count > 1024) in.fail("implausible scale count");
  f.scales.resize(scale_count);
  for (double& s : f.scales) s = in.f64();
  f.fit.n = static_cast<int>(in.u32());
  f.fit.epsilon = in.f64();
  f.fit.lambda = in.f64();
  f.fit.smoothness = in.f64();
  f.fit.max_iterations = static_cast<int>(in.u32());
  f.fit.tolerance = in.f64();
  f.normal_k = static_cast<int>(in.u32());
  f.max_fit_points = static_cast<int>(in.u32());
  f.descriptor_threshold = in.f64();
  for (int& v : f.hocp.nu) v = static_cast<int>(in.u32());
  f.hocp.r_min_fraction = in.f64();
  f.hocp.delta_d = in.f64();
  try {
    p.validate();
    f.hocp.validate();
  } catch (const Error& e) {
    in.fail(e.what());
  }

  const auto trees = in.u32();
  if (trees != static_cast<std::uint32_t>(p.tree_count)) in.fail("tree count mismatch");
  for (std::uint32_t t = 0; t < trees; ++t) {
    Tree tree;
    read_node(in, tree, 0, f.hocp.dimension());
    forest.trees.push_back(std::move(tree));
  }
  return forest;
}

void save_forest(const HoughForest& forest, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  write_forest(os, forest);
  if (!os) throw Error(ErrorCode::IoError, "failed writing " + path.string());
}

HoughForest load_forest(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  return read_forest(is);
}

}  // namespace ihf
