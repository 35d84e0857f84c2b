#include "ihf/registration.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <tuple>

namespace ihf {

void ClutterParams::validate() const {
  if (!(psi1 > 0.0 && psi1 <= 1.0 && psi2 >= 1.0 && std::isfinite(psi2)))
    throw Error(ErrorCode::InvalidArgument, "clutter coefficients need 0 < psi1 <= 1 <= psi2");
  if (max_iterations < 0) throw Error(ErrorCode::InvalidArgument, "max_iterations must be >= 0");
}

DepthImage render_hypothesis(const Mesh& model, const Pose& pose, const Intrinsics& k, int width, int height) {
  if (!pose.offset.allFinite() || !pose.rotation.allFinite())
    throw Error(ErrorCode::InvalidArgument, "hypothesis pose is not finite");
  return render_mesh(model, pose, k, width, height);
}

PoseHypothesis aggregate_votes(std::span<const CastVote> votes, double bin_mm) {
  if (votes.empty()) throw Error(ErrorCode::EmptyVotes, "no votes to aggregate");
  if (!(bin_mm > 0.0)) throw Error(ErrorCode::InvalidArgument, "bin size must be positive");
  using Key = std::tuple<long, long, long>;
  std::vector<Vec3> centers(votes.size());
  std::vector<Key> keys(votes.size());
  std::map<Key, std::size_t> counts;
  for (std::size_t i = 0; i < votes.size(); ++i) {
    centers[i] = votes[i].source + votes[i].vote.offset;
    const Vec3 b = (centers[i] / bin_mm).array().floor();
    keys[i] = {static_cast<long>(b.x()), static_cast<long>(b.y()), static_cast<long>(b.z())};
    ++counts[keys[i]];
  }
  // std::map iterates in lexicographic order, so strict > keeps the lowest index.
  Key best{};
  std::size_t best_count = 0;
  for (const auto& [key, c] : counts)
    if (c > best_count) best = key, best_count = c;

  Vec3 sum = Vec3::Zero();
  Eigen::Array3d s = Eigen::Array3d::Zero(), c = Eigen::Array3d::Zero();
  std::size_t n = 0;
  for (std::size_t i = 0; i < votes.size(); ++i) {
    if (std::abs(std::get<0>(keys[i]) - std::get<0>(best)) > 1 || std::abs(std::get<1>(keys[i]) - std::get<1>(best)) > 1 ||
        std::abs(std::get<2>(keys[i]) - std::get<2>(best)) > 1)
      continue;
    sum += centers[i];
    for (int a = 0; a < 3; ++a) {
      s[a] += std::sin(votes[i].vote.rotation[a]);
      c[a] += std::cos(votes[i].vote.rotation[a]);
    }
    ++n;
  }
  PoseHypothesis h;
  h.pose.offset = sum / static_cast<double>(n);
  for (int a = 0; a < 3; ++a) h.pose.rotation[a] = std::atan2(s[a], c[a]);
  h.confidence = static_cast<double>(n);
  return h;
}

ClutterResult remove_clutter(const DepthImage& image, const DepthImage& hypothesis, const ClutterParams& params) {
  params.validate();
  if (hypothesis.width() != image.width() || hypothesis.height() != image.height())
    throw Error(ErrorCode::InvalidArgument, "hypothesis render must match the image size");
  double gamma = std::numeric_limits<double>::infinity(), beta = 0.0;
  for (double z : hypothesis.depth())
    if (z > 0.0) gamma = std::min(gamma, z), beta = std::max(beta, z);
  if (beta <= 0.0) throw Error(ErrorCode::InvalidArgument, "hypothesis render is empty");

  ClutterResult out;
  out.gamma = gamma;
  out.beta = beta;
  out.image = image;
  out.removed = PixelMask{image.width(), image.height(), std::vector<std::uint8_t>(image.depth().size(), 0)};
  const double lo = gamma * params.psi1, hi = beta * params.psi2;
  for (int v = 0; v < image.height(); ++v)
    for (int u = 0; u < image.width(); ++u) {
      const double z = image.at(u, v);
      if (z <= 0.0 || (lo < z && z < hi)) continue;
      out.image.set(u, v, 0.0);
      out.removed.bits[static_cast<std::size_t>(v) * image.width() + u] = 1;
      ++out.removed_count;
    }
  return out;
}

Estimate estimate_pose(const DepthImage& image, const HoughForest& forest, const PartSpec& spec, int stride,
                       double bin_mm) {
  if (image.empty()) throw Error(ErrorCode::EmptyCloud, "image has no valid depth");
  FeatureConfig config = forest.features;
  config.spec = spec;
  const double unit = 1.0;
  const auto prepared = prepare_image(image, std::span<const double>(&unit, 1), config.normal_k);
  const ControlLattice lattice = fit_level(prepared.space.levels[0], prepared.normals, config);
  const auto parts = level_parts(prepared, 0, lattice, config, image.width(), image.height(), stride);
  if (parts.empty()) throw Error(ErrorCode::NoParts, "no part carries descriptors");

  Estimate e;
  e.summary.h = prepared.space.levels[0].h;
  e.summary.alpha = prepared.space.alpha;
  e.summary.g = spec.mode == PartMode::Fixed ? spec.g : spec.box_edge;
  e.summary.point_count = prepared.metric.cloud.size();
  e.summary.part_count = parts.size();
  std::vector<int> sizes;
  std::vector<CastVote> cast;
  for (const auto& p : parts) {
    sizes.push_back(p.size_px);
    const auto votes = traverse(forest, p);
    e.summary.max_votes_per_part = std::max(e.summary.max_votes_per_part, votes.size());
    for (const auto& v : votes) cast.push_back({p.center_metric, v});
  }
  std::nth_element(sizes.begin(), sizes.begin() + static_cast<long>(sizes.size() / 2), sizes.end());
  e.summary.median_part_px = sizes[sizes.size() / 2];
  e.summary.vote_count = cast.size();
  e.hypothesis = aggregate_votes(cast, bin_mm);
  return e;
}

Estimate initial_register(const DepthImage& image, const HoughForest& forest, const RegistrationParams& params) {
  return estimate_pose(image, forest, forest.features.spec, params.stride, params.bin_mm);
}

RefinementTrace refine_iteratively(const DepthImage& image, const HoughForest& forest, const Mesh& model,
                                   const RegistrationParams& params) {
  params.clutter.validate();
  RefinementTrace trace;
  const PartSpec spec = forest.features.spec;
  Estimate e = initial_register(image, forest, params);
  const double alpha0 = e.summary.alpha;
  TraceStep s0;
  s0.hypothesis = e.hypothesis;
  s0.summary = e.summary;
  s0.remaining_px = image.nonzero_count();
  trace.steps.push_back(std::move(s0));

  DepthImage current = image;
  for (int k = 1; k <= params.clutter.max_iterations; ++k) {
    const Pose& prev = trace.steps.back().hypothesis.pose;
    DepthImage rendered;
    try {
      rendered = render_hypothesis(model, prev, current.intrinsics(), current.width(), current.height());
    } catch (const Error& err) {
      if (err.code() != ErrorCode::OutsideFrustum) throw;
      trace.stopped_early = true;
      trace.stop_reason = "hypothesis outside the image";
      break;
    }
    ClutterResult cr = remove_clutter(current, rendered, params.clutter);
    TraceStep step;
    step.k = k;
    step.remaining_px = current.nonzero_count();
    step.removed_px = cr.removed_count;
    step.removed = std::move(cr.removed);
    current = std::move(cr.image);
    try {
      e = estimate_pose(current, forest, spec, params.stride, params.bin_mm);
    } catch (const Error& err) {
      if (err.code() != ErrorCode::EmptyCloud && err.code() != ErrorCode::NoParts &&
          err.code() != ErrorCode::DegenerateCloud)
        throw;
      trace.stopped_early = true;
      trace.stop_reason = std::string("image emptied by clutter removal: ") + err.what();
      break;
    }
    step.hypothesis = e.hypothesis;
    step.hypothesis.iteration = k;
    step.summary = e.summary;
    if (spec.mode == PartMode::Variable) step.summary.g = spec.box_edge * e.summary.alpha / alpha0;
    trace.steps.push_back(std::move(step));
  }
  return trace;
}

std::string trace_json(const RefinementTrace& trace) {
  nlohmann::ordered_json j;
  j["stopped_early"] = trace.stopped_early;
  j["stop_reason"] = trace.stop_reason;
  j["iterations"] = nlohmann::ordered_json::array();
  for (const auto& s : trace.steps) {
    const Pose& p = s.hypothesis.pose;
    nlohmann::ordered_json it;
    it["k"] = s.k;
    it["pose"] = {{"offset", {p.offset.x(), p.offset.y(), p.offset.z()}},
                  {"rotation", {p.rotation.x(), p.rotation.y(), p.rotation.z()}}};
    it["confidence"] = s.hypothesis.confidence;
    it["h"] = s.summary.h;
    it["g"] = s.summary.g;
    it["removed_px"] = s.removed_px;
    it["remaining_px"] = s.remaining_px;
    it["parts"] = s.summary.part_count;
    it["median_part_px"] = s.summary.median_part_px;
    it["votes"] = s.summary.vote_count;
    it["omega"] = s.omega ? nlohmann::ordered_json(*s.omega) : nlohmann::ordered_json(nullptr);
    j["iterations"].push_back(it);
  }
  return j.dump(2);
}

void write_trace(const std::filesystem::path& path, const RefinementTrace& trace) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  os << trace_json(trace) << '\n';
}

}  // namespace ihf
