// ihf: data generation, training, registration and evaluation front end.

#include "checks.hpp"

#include "ihf/harness.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <fstream>
#include <iostream>
#include <optional>

using namespace ihf;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::string> mode;
  std::optional<int> iterations;
};

ExperimentConfig effective_config(const Common& c) {
  ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : load_config(c.config);
  if (c.mode) cfg.features.spec.mode = part_mode_from_string(*c.mode);
  if (c.iterations) cfg.registration.clutter.max_iterations = *c.iterations;
  cfg.validate();
  return cfg;
}

void add_common(CLI::App* app, Common& c, bool seed, bool mode, bool iterations) {
  app->add_option("--config", c.config, "JSON experiment config")->check(CLI::ExistingFile);
  app->add_option("--out", c.out, "Output directory")->required();
  if (seed) app->add_option("--seed", c.seed, "Random seed (u64)");
  if (mode) app->add_option("--mode", c.mode, "Part mode")->check(CLI::IsMember({"fixed", "variable"}));
  if (iterations) app->add_option("--iterations", c.iterations, "Refinement iterations")->check(CLI::NonNegativeNumber);
}

// Manifest path from a dataset directory or a manifest file.
fs::path manifest_path(const fs::path& p) { return fs::is_directory(p) ? p / "manifest.json" : p; }

struct Dataset {
  DatasetManifest manifest;
  std::vector<GeneratedImage> images;
  Mesh mesh;
};

Dataset load_dataset(const fs::path& where) {
  const fs::path mpath = manifest_path(where);
  Dataset d;
  d.manifest = read_manifest(mpath);
  if (d.manifest.entries.empty()) throw Error(ErrorCode::InvalidArgument, "manifest " + mpath.string() + " has no entries");
  const fs::path dir = mpath.parent_path();
  d.mesh = load_mesh(dir / d.manifest.mesh_file);
  for (const auto& e : d.manifest.entries) d.images.push_back({e, load_depth(dir / e.depth_file)});
  return d;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int cmd_gen_data(const Common& c, const std::string& split) {
  ExperimentConfig cfg = effective_config(c);
  if (c.seed) cfg.test.seed = *c.seed;
  const Mesh mesh = config_mesh(cfg);
  const fs::path out = c.out;
  fs::create_directories(out);
  save_config(out / "config.json", cfg);
  auto emit = [&](const std::string& name, const std::vector<GeneratedImage>& images, double f_d) {
    const fs::path dir = out / name;
    fs::create_directories(dir);
    save_mesh(mesh, dir / "mesh.txt");
    write_dataset(dir, name, cfg.shape, "mesh.txt", f_d, cfg.intrinsics, cfg.image_width, cfg.image_height, images);
    std::cout << name << ": " << images.size() << " images -> " << (dir / "manifest.json").string() << '\n';
  };
  if (split == "train" || split == "both")
    emit("train", generate_training_set(mesh, cfg.training, cfg.intrinsics, cfg.image_width, cfg.image_height),
         cfg.training.f_d);
  if (split == "test" || split == "both")
    emit("test", generate_test_set(mesh, cfg.test, cfg.intrinsics, cfg.image_width, cfg.image_height), cfg.test.f_d);
  return 0;
}

int cmd_train(const Common& c, const std::string& data) {
  ExperimentConfig cfg = effective_config(c);
  if (c.seed) cfg.forest.seed = *c.seed;
  const auto t0 = std::chrono::steady_clock::now();
  const Dataset d = load_dataset(data);
  const auto parts = collect_training_parts(d.images, cfg.features, cfg.train_stride);
  if (parts.empty()) throw Error(ErrorCode::NoParts, "training images produced no parts");
  const HoughForest forest = train_forest(parts, cfg.forest, cfg.features);
  fs::create_directories(c.out);
  save_forest(forest, fs::path(c.out) / "forest.ihf");
  save_config(fs::path(c.out) / "config.json", cfg);
  std::cout << "trained " << forest.trees.size() << " trees (" << to_string(forest.mode()) << " parts) on "
            << parts.size() << " parts from " << d.images.size() << " images in " << seconds_since(t0) << " s -> "
            << (fs::path(c.out) / "forest.ihf").string() << '\n';
  return 0;
}

HoughForest load_checked_forest(const std::string& path, const Common& c) {
  HoughForest forest = load_forest(path);
  if (c.mode && part_mode_from_string(*c.mode) != forest.mode())
    throw Error(ErrorCode::InvalidArgument,
                "--mode " + *c.mode + " does not match the forest's " + to_string(forest.mode()) + " parts");
  return forest;
}

int cmd_register(const Common& c, const std::string& forest_path, const std::string& image, const std::string& mesh_path,
                 const std::string& data, const std::string& id) {
  const ExperimentConfig cfg = effective_config(c);
  const HoughForest forest = load_checked_forest(forest_path, c);
  DepthImage depth;
  Mesh mesh;
  std::optional<Pose> gt;
  if (!data.empty()) {
    const Dataset d = load_dataset(data);
    const auto it = std::find_if(d.images.begin(), d.images.end(), [&](const auto& g) { return g.entry.id == id; });
    if (it == d.images.end()) throw Error(ErrorCode::InvalidArgument, "no entry '" + id + "' in the manifest");
    depth = it->image;
    gt = it->entry.pose;
    mesh = mesh_path.empty() ? d.mesh : load_mesh(mesh_path);
  } else {
    if (image.empty() || mesh_path.empty())
      throw Error(ErrorCode::InvalidArgument, "register needs --image and --mesh, or --data and --id");
    depth = load_depth(image);
    mesh = load_mesh(mesh_path);
  }
  RefinementTrace trace = refine_iteratively(depth, forest, mesh, cfg.registration);
  if (gt)
    for (auto& s : trace.steps) s.omega = add_score(mesh.vertices, *gt, s.hypothesis.pose);
  fs::create_directories(c.out);
  write_trace(fs::path(c.out) / "trace.json", trace);
  const Pose& p = trace.final_hypothesis().pose;
  std::cout << "pose offset (" << p.offset.x() << ", " << p.offset.y() << ", " << p.offset.z() << ") rotation ("
            << p.rotation.x() << ", " << p.rotation.y() << ", " << p.rotation.z() << ") after "
            << trace.steps.size() - 1 << " iterations";
  if (gt) std::cout << ", omega " << *trace.steps.back().omega << " mm";
  std::cout << '\n';
  return 0;
}

int cmd_evaluate(const Common& c, const std::string& forest_path, const std::string& data) {
  const ExperimentConfig cfg = effective_config(c);
  const Dataset d = load_dataset(data);
  const HoughForest forest = load_checked_forest(forest_path, c);
  const auto outcomes = evaluate_images(d.images, forest, d.mesh, cfg.registration);
  const int k = cfg.registration.clutter.max_iterations;
  const fs::path out = c.out;
  Report rep = report_at(outcomes, k, cfg);
  write_report(out, rep);

  nlohmann::ordered_json per_k = nlohmann::ordered_json::array();
  for (int i = 0; i <= k; ++i) {
    const Report r = report_at(outcomes, i, cfg);
    per_k.push_back({{"k", i},
                     {"fraction_correct", fraction_correct(r, cfg.z_omega)},
                     {"mean_omega", mean_omega(r)},
                     {"mean_f1", r.mean_f1}});
  }
  std::ofstream(out / "iterations.json") << per_k.dump(2) << '\n';
  fs::create_directories(out / "traces");
  for (const auto& o : outcomes) write_trace(out / "traces" / (o.id + ".json"), o.trace);
  std::cout << "evaluated " << outcomes.size() << " scenes at k = " << k << ": correct@" << cfg.z_omega << " = "
            << fraction_correct(rep, cfg.z_omega) << ", mean F1 = " << rep.mean_f1 << " -> " << out.string() << '\n';
  return 0;
}

int cmd_selftest() {
  using namespace ihf::checks;
  const std::vector<CheckResult> all{blending(),        ibs_equivalence(),  sphere_fit(),          hocp_properties(),
                                     metric_exactness(), aggregation_scan(), diameter_brute_force()};
  int failed = 0;
  for (const auto& r : all) {
    std::cout << format_line("selftest", r) << '\n';
    failed += !r.passed;
  }
  std::cout << (all.size() - failed) << "/" << all.size() << " oracle checks passed\n";
  return failed == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Iterative Hough forest pose registration on depth images"};
  app.require_subcommand(1);

  Common gen, train, reg, eval;
  std::string split = "both", train_data, forest_path, image, mesh_path, reg_data, reg_id, eval_data;

  auto* g = app.add_subcommand("gen-data", "Render synthetic training and test sets");
  add_common(g, gen, true, false, false);
  g->add_option("--split", split, "Which split to write")->check(CLI::IsMember({"train", "test", "both"}));

  auto* t = app.add_subcommand("train", "Train a Hough forest on a training manifest");
  add_common(t, train, true, true, false);
  t->add_option("--data", train_data, "Training dataset directory or manifest")->required();

  auto* r = app.add_subcommand("register", "Register one depth image and write its trace");
  add_common(r, reg, false, true, true);
  r->add_option("--forest", forest_path, "Forest file")->required();
  r->add_option("--image", image, "Depth image (.raw with JSON sidecar)");
  r->add_option("--mesh", mesh_path, "Object mesh");
  r->add_option("--data", reg_data, "Dataset directory or manifest (with --id)");
  r->add_option("--id", reg_id, "Entry id within --data");

  auto* e = app.add_subcommand("evaluate", "Register a test manifest and write reports");
  add_common(e, eval, false, true, true);
  e->add_option("--forest", forest_path, "Forest file")->required();
  e->add_option("--data", eval_data, "Test dataset directory or manifest")->required();

  auto* s = app.add_subcommand("selftest", "Run the built-in oracle checks");

  CLI11_PARSE(app, argc, argv);
  try {
    if (g->parsed()) return cmd_gen_data(gen, split);
    if (t->parsed()) return cmd_train(train, train_data);
    if (r->parsed()) return cmd_register(reg, forest_path, image, mesh_path, reg_data, reg_id);
    if (e->parsed()) return cmd_evaluate(eval, forest_path, eval_data);
    if (s->parsed()) return cmd_selftest();
  } catch (const Error& err) {
    std::cerr << "error [" << to_string(err.code()) << "]: " << err.what() << '\n';
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 1;
  }
  return 1;
}
