#include "ihf/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>

namespace ihf {

using json = nlohmann::ordered_json;

double model_diameter(std::span<const Vec3> points) {
  if (points.size() < 2) throw Error(ErrorCode::InvalidArgument, "diameter needs at least 2 points");
  double best = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i)
    for (std::size_t j = i + 1; j < points.size(); ++j) best = std::max(best, (points[i] - points[j]).squaredNorm());
  return std::sqrt(best);
}

double add_score(std::span<const Vec3> points, const Pose& gt, const Pose& est) {
  if (points.empty()) throw Error(ErrorCode::InvalidArgument, "ADD needs model points");
  const Mat3 rg = gt.rotation_matrix(), re = est.rotation_matrix();
  double sum = 0.0;
  for (const Vec3& x : points) sum += ((rg * x + gt.offset) - (re * x + est.offset)).norm();
  return sum / static_cast<double>(points.size());
}

std::vector<double> z_omega_sweep() {
  std::vector<double> z;
  for (int i = 5; i <= 15; ++i) z.push_back(i / 100.0);
  return z;
}

double f1_score(double precision, double recall) {
  return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

namespace {

double ratio(std::size_t a, std::size_t b) { return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b); }

struct Counts {
  std::size_t tp = 0, fp = 0, fn = 0;
};

Counts count_at(std::span<const MetricResult> results, double phi, double z, double threshold) {
  Counts c;
  for (const auto& r : results) {
    if (!r.detected || r.confidence < threshold)
      ++c.fn;
    else if (is_correct(r.omega, phi, z))
      ++c.tp;
    else
      ++c.fp;
  }
  return c;
}

}  // namespace

Report pr_f1(std::span<const MetricResult> results, double phi, std::span<const double> sweep, double z_omega) {
  if (results.empty()) throw Error(ErrorCode::InvalidArgument, "no results to report");
  if (!(phi > 0.0)) throw Error(ErrorCode::InvalidArgument, "model diameter must be positive");
  Report rep;
  rep.results.assign(results.begin(), results.end());
  rep.phi = phi;
  rep.z_omega = z_omega;
  rep.sweep.assign(sweep.begin(), sweep.end());

  std::set<double, std::greater<>> thresholds;
  for (const auto& r : results)
    if (r.detected) thresholds.insert(r.confidence);

  double f1_sum = 0.0;
  for (double z : sweep) {
    F1Entry e;
    e.z_omega = z;
    for (double t : thresholds) {
      const Counts c = count_at(results, phi, z, t);
      e.curve.push_back({t, ratio(c.tp, c.tp + c.fp), ratio(c.tp, c.tp + c.fn)});
    }
    const double lowest = thresholds.empty() ? std::numeric_limits<double>::infinity() : *thresholds.rbegin();
    const Counts c = count_at(results, phi, z, lowest);
    e.tp = c.tp;
    e.fp = c.fp;
    e.fn = c.fn;
    e.precision = ratio(c.tp, c.tp + c.fp);
    e.recall = ratio(c.tp, c.tp + c.fn);
    e.f1 = f1_score(e.precision, e.recall);
    f1_sum += e.f1;
    rep.f1.push_back(std::move(e));
  }
  rep.mean_f1 = sweep.empty() ? 0.0 : f1_sum / static_cast<double>(sweep.size());
  return rep;
}

double fraction_correct(const Report& report, double z_omega) {
  std::size_t ok = 0;
  for (const auto& r : report.results) ok += r.detected && is_correct(r.omega, report.phi, z_omega);
  return ratio(ok, report.results.size());
}

double mean_omega(const Report& report) {
  double s = 0.0;
  for (const auto& r : report.results) s += r.omega;
  return s / static_cast<double>(report.results.size());
}

namespace {

std::string num(double x) {
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", x);
  return buf;
}

json num_json(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  return os;
}

}  // namespace

void write_report(const std::filesystem::path& dir, const Report& report) {
  std::filesystem::create_directories(dir);
  {
    auto os = open_out(dir / "report.csv");
    os << "id,omega,confidence";
    for (double z : report.sweep) os << ",correct@" << num(z);
    os << '\n';
    for (const auto& r : report.results) {
      os << r.id << ',' << num(r.omega) << ',' << (r.detected ? num(r.confidence) : "") ;
      for (double z : report.sweep) os << ',' << (r.detected && is_correct(r.omega, report.phi, z) ? 1 : 0);
      os << '\n';
    }
  }
  {
    json j;
    j["count"] = report.results.size();
    j["phi"] = report.phi;
    j["z_omega"] = report.z_omega;
    j["fraction_correct"] = fraction_correct(report, report.z_omega);
    j["mean_omega"] = num_json(mean_omega(report));
    j["mean_f1"] = report.mean_f1;
    j["f1"] = json::array();
    for (const auto& e : report.f1)
      j["f1"].push_back({{"z_omega", e.z_omega},
                         {"tp", e.tp},
                         {"fp", e.fp},
                         {"fn", e.fn},
                         {"precision", e.precision},
                         {"recall", e.recall},
                         {"f1", e.f1}});
    j["config"] = report.config;
    auto os = open_out(dir / "report.json");
    os << j.dump(2) << '\n';
  }
  {
    auto os = open_out(dir / "pr.tsv");
    os << "z_omega\tthreshold\tprecision\trecall\n";
    for (const auto& e : report.f1)
      for (const auto& p : e.curve)
        os << num(e.z_omega) << '\t' << num(p.threshold) << '\t' << num(p.precision) << '\t' << num(p.recall) << '\n';
  }
}

// ---- config ----

ExperimentConfig::ExperimentConfig() {
  features.fit.n = 20;
  features.fit.max_iterations = 30;
}

void ExperimentConfig::validate() const {
  auto bad = [](const std::string& what) { throw Error(ErrorCode::InvalidArgument, "config: " + what); };
  shape_from_string(shape);
  if (image_width <= 0 || image_height <= 0) bad("image size must be positive");
  if (!intrinsics.valid()) bad("focal lengths must be positive");
  if (train_stride < 1 || registration.stride < 1) bad("strides must be >= 1");
  if (!(registration.bin_mm > 0.0)) bad("bin_mm must be positive");
  if (!(z_omega > 0.0)) bad("z_omega must be positive");
  if (training.step_deg <= 0.0 || training.limit_deg < 0.0) bad("training grid needs step > 0, limit >= 0");
  if (test.count < 0) bad("test count must be >= 0");
  if (test.occlusion_min < 0.0 || test.occlusion_max > 0.9 || test.occlusion_min > test.occlusion_max)
    bad("occlusion range must lie in [0, 0.9]");
  if (features.scales.empty() || features.scales.front() != 1.0) bad("scales must start at 1");
  for (std::size_t i = 1; i < features.scales.size(); ++i)
    if (!(features.scales[i] > features.scales[i - 1])) bad("scales must increase");
  if (features.fit.n < 4) bad("lattice resolution must be >= 4");
  features.hocp.validate();
  forest.validate();
  registration.clutter.validate();
}

json config_to_json(const ExperimentConfig& c) {
  const auto& f = c.features;
  json j;
  j["shape"] = c.shape;
  j["dims"] = c.dims;
  j["intrinsics"] = {{"fx", c.intrinsics.fx}, {"fy", c.intrinsics.fy}, {"cx", c.intrinsics.cx}, {"cy", c.intrinsics.cy}};
  j["image_width"] = c.image_width;
  j["image_height"] = c.image_height;
  j["training"] = {{"f_d", c.training.f_d},
                   {"limit_deg", c.training.limit_deg},
                   {"step_deg", c.training.step_deg},
                   {"stride", c.train_stride}};
  j["test"] = {{"count", c.test.count},
               {"f_d", c.test.f_d},
               {"depth_range", c.test.depth_range},
               {"lateral_range", c.test.lateral_range},
               {"max_angle_deg", c.test.max_angle_deg},
               {"occlusion_min", c.test.occlusion_min},
               {"occlusion_max", c.test.occlusion_max},
               {"clutter_probability", c.test.clutter_probability},
               {"noise_sigma", c.test.noise_sigma},
               {"dropout", c.test.dropout},
               {"crop_jitter", c.test.crop_jitter},
               {"seed", c.test.seed}};
  j["features"] = {{"scales", f.scales},
                   {"normal_k", f.normal_k},
                   {"max_fit_points", f.max_fit_points},
                   {"descriptor_threshold", f.descriptor_threshold},
                   {"fit",
                    {{"n", f.fit.n},
                     {"epsilon", f.fit.epsilon},
                     {"lambda", f.fit.lambda},
                     {"smoothness", f.fit.smoothness},
                     {"max_iterations", f.fit.max_iterations},
                     {"tolerance", f.fit.tolerance}}},
                   {"hocp", {{"nu", f.hocp.nu}, {"r_min_fraction", f.hocp.r_min_fraction}, {"delta_d", f.hocp.delta_d}}},
                   {"part", {{"mode", to_string(f.spec.mode)}, {"g", f.spec.g}, {"box_edge", f.spec.box_edge}}}};
  j["forest"] = {{"tree_count", c.forest.tree_count},
                 {"max_depth", c.forest.max_depth},
                 {"max_leaf_samples", c.forest.max_leaf_samples},
                 {"template_candidates", c.forest.template_candidates},
                 {"threshold_candidates", c.forest.threshold_candidates},
                 {"bootstrap_fraction", c.forest.bootstrap_fraction},
                 {"cov_epsilon", c.forest.cov_epsilon},
                 {"seed", c.forest.seed}};
  j["registration"] = {{"psi1", c.registration.clutter.psi1},
                       {"psi2", c.registration.clutter.psi2},
                       {"max_iterations", c.registration.clutter.max_iterations},
                       {"bin_mm", c.registration.bin_mm},
                       {"stride", c.registration.stride}};
  j["evaluation"] = {{"z_omega", c.z_omega}};
  return j;
}

namespace {

// Reads the keys of one object into their targets; anything else is an error.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw Error(ErrorCode::InvalidArgument, "config: " + path_ + " must be an object");
  }

  template <class T>
  Section& get(const char* key, T& out) {
    seen_.insert(key);
    if (auto it = j_.find(key); it != j_.end()) {
      try {
        out = it->template get<T>();
      } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::InvalidArgument, "config: " + path_ + "." + key + ": " + e.what());
      }
    }
    return *this;
  }

  // Nested object, or a null json when absent.
  const json* sub(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw Error(ErrorCode::InvalidArgument, "config: unknown key " + path_ + "." + k);
  }

  const std::string& path() const { return path_; }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  Section root(j, "config");
  root.get("shape", c.shape).get("dims", c.dims).get("image_width", c.image_width).get("image_height", c.image_height);
  if (const json* s = root.sub("intrinsics")) {
    Section(*s, "intrinsics")
        .get("fx", c.intrinsics.fx)
        .get("fy", c.intrinsics.fy)
        .get("cx", c.intrinsics.cx)
        .get("cy", c.intrinsics.cy)
        .finish();
  }
  if (const json* s = root.sub("training")) {
    Section(*s, "training")
        .get("f_d", c.training.f_d)
        .get("limit_deg", c.training.limit_deg)
        .get("step_deg", c.training.step_deg)
        .get("stride", c.train_stride)
        .finish();
  }
  if (const json* s = root.sub("test")) {
    Section(*s, "test")
        .get("count", c.test.count)
        .get("f_d", c.test.f_d)
        .get("depth_range", c.test.depth_range)
        .get("lateral_range", c.test.lateral_range)
        .get("max_angle_deg", c.test.max_angle_deg)
        .get("occlusion_min", c.test.occlusion_min)
        .get("occlusion_max", c.test.occlusion_max)
        .get("clutter_probability", c.test.clutter_probability)
        .get("noise_sigma", c.test.noise_sigma)
        .get("dropout", c.test.dropout)
        .get("crop_jitter", c.test.crop_jitter)
        .get("seed", c.test.seed)
        .finish();
  }
  if (const json* s = root.sub("features")) {
    auto& f = c.features;
    Section fs(*s, "features");
    fs.get("scales", f.scales)
        .get("normal_k", f.normal_k)
        .get("max_fit_points", f.max_fit_points)
        .get("descriptor_threshold", f.descriptor_threshold);
    if (const json* t = fs.sub("fit")) {
      Section(*t, "features.fit")
          .get("n", f.fit.n)
          .get("epsilon", f.fit.epsilon)
          .get("lambda", f.fit.lambda)
          .get("smoothness", f.fit.smoothness)
          .get("max_iterations", f.fit.max_iterations)
          .get("tolerance", f.fit.tolerance)
          .finish();
    }
    if (const json* t = fs.sub("hocp")) {
      Section(*t, "features.hocp")
          .get("nu", f.hocp.nu)
          .get("r_min_fraction", f.hocp.r_min_fraction)
          .get("delta_d", f.hocp.delta_d)
          .finish();
    }
    if (const json* t = fs.sub("part")) {
      std::string mode = to_string(f.spec.mode);
      Section(*t, "features.part").get("mode", mode).get("g", f.spec.g).get("box_edge", f.spec.box_edge).finish();
      f.spec.mode = part_mode_from_string(mode);
    }
    fs.finish();
  }
  if (const json* s = root.sub("forest")) {
    Section(*s, "forest")
        .get("tree_count", c.forest.tree_count)
        .get("max_depth", c.forest.max_depth)
        .get("max_leaf_samples", c.forest.max_leaf_samples)
        .get("template_candidates", c.forest.template_candidates)
        .get("threshold_candidates", c.forest.threshold_candidates)
        .get("bootstrap_fraction", c.forest.bootstrap_fraction)
        .get("cov_epsilon", c.forest.cov_epsilon)
        .get("seed", c.forest.seed)
        .finish();
  }
  if (const json* s = root.sub("registration")) {
    Section(*s, "registration")
        .get("psi1", c.registration.clutter.psi1)
        .get("psi2", c.registration.clutter.psi2)
        .get("max_iterations", c.registration.clutter.max_iterations)
        .get("bin_mm", c.registration.bin_mm)
        .get("stride", c.registration.stride)
        .finish();
  }
  if (const json* s = root.sub("evaluation")) Section(*s, "evaluation").get("z_omega", c.z_omega).finish();
  root.finish();
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::IoError, "cannot read config " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, "config " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

void save_config(const std::filesystem::path& path, const ExperimentConfig& config) {
  auto os = open_out(path);
  os << config_to_json(config).dump(2) << '\n';
}

Mesh config_mesh(const ExperimentConfig& config) { return make_mesh(shape_from_string(config.shape), config.dims); }

// ---- pipeline ----

std::vector<Part> collect_training_parts(std::span<const GeneratedImage> images, const FeatureConfig& features,
                                         int stride) {
  std::vector<Part> parts;
  for (const auto& g : images) {
    auto p = training_parts(g.image, g.entry.pose, features, stride);
    parts.insert(parts.end(), std::make_move_iterator(p.begin()), std::make_move_iterator(p.end()));
  }
  return parts;
}

HoughForest train_on_images(std::span<const GeneratedImage> images, const ExperimentConfig& config) {
  const auto parts = collect_training_parts(images, config.features, config.train_stride);
  if (parts.empty()) throw Error(ErrorCode::NoParts, "training images produced no parts");
  return train_forest(parts, config.forest, config.features);
}

std::vector<SceneOutcome> evaluate_images(std::span<const GeneratedImage> images, const HoughForest& forest,
                                          const Mesh& model, const RegistrationParams& params) {
  const double phi = model_diameter(model.vertices);
  std::vector<SceneOutcome> out;
  for (const auto& g : images) {
    SceneOutcome o;
    o.id = g.entry.id;
    o.phi = phi;
    try {
      o.trace = refine_iteratively(g.image, forest, model, params);
    } catch (const Error& e) {
      // No initial hypothesis: the scene counts as a miss.
      if (e.code() != ErrorCode::EmptyCloud && e.code() != ErrorCode::NoParts && e.code() != ErrorCode::DegenerateCloud &&
          e.code() != ErrorCode::EmptyVotes)
        throw;
      o.trace.stopped_early = true;
      o.trace.stop_reason = std::string("initial registration failed: ") + e.what();
    }
    for (auto& s : o.trace.steps) s.omega = add_score(model.vertices, g.entry.pose, s.hypothesis.pose);
    out.push_back(std::move(o));
  }
  return out;
}

double omega_at(const SceneOutcome& o, int k) {
  if (o.trace.steps.empty()) return std::numeric_limits<double>::infinity();
  const auto i = std::min<std::size_t>(static_cast<std::size_t>(k), o.trace.steps.size() - 1);
  return *o.trace.steps[i].omega;
}

double confidence_at(const SceneOutcome& o, int k) {
  if (o.trace.steps.empty()) return 0.0;
  const auto i = std::min<std::size_t>(static_cast<std::size_t>(k), o.trace.steps.size() - 1);
  return o.trace.steps[i].hypothesis.confidence;
}

Report report_at(std::span<const SceneOutcome> outcomes, int k, const ExperimentConfig& config) {
  if (outcomes.empty()) throw Error(ErrorCode::InvalidArgument, "no scenes to report");
  std::vector<MetricResult> results;
  for (const auto& o : outcomes)
    results.push_back({o.id, omega_at(o, k), confidence_at(o, k), !o.trace.steps.empty()});
  const auto sweep = z_omega_sweep();
  Report r = pr_f1(results, outcomes.front().phi, sweep, config.z_omega);
  r.config = config_to_json(config);
  return r;
}

}  // namespace ihf
