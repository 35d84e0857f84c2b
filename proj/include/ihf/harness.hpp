#pragma once

#include "ihf/registration.hpp"

#include <json.hpp>

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace ihf {

/// Largest pairwise distance. Throws InvalidArgument for fewer than 2 points.
double model_diameter(std::span<const Vec3> points);

/// ADD: mean over model points of |T_gt(x) - T_est(x)|.
double add_score(std::span<const Vec3> points, const Pose& gt, const Pose& est);

inline bool is_correct(double omega, double phi, double z_omega) { return omega <= z_omega * phi; }

/// 0.05, 0.06, ..., 0.15.
std::vector<double> z_omega_sweep();

struct MetricResult {
  std::string id;
  double omega = 0.0;
  double confidence = 0.0;
  bool detected = true;  // false when registration produced no hypothesis
};

struct PrPoint {
  double threshold = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

/// Counts at one z_omega with every hypothesis accepted. Each image holds one
/// object and yields one hypothesis: a correct one is a TP, a wrong one an FP;
/// an image whose hypothesis falls below the confidence threshold is an FN.
struct F1Entry {
  double z_omega = 0.0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::vector<PrPoint> curve;  // one point per distinct confidence, descending
};

struct Report {
  std::vector<MetricResult> results;
  double phi = 0.0;
  double z_omega = 0.08;
  std::vector<double> sweep;
  std::vector<F1Entry> f1;  // one per sweep value
  double mean_f1 = 0.0;
  nlohmann::ordered_json config;
};

// F1 = 2PR / (P + R), 0 when P + R = 0; P, R are 0 when their denominator is.
double f1_score(double precision, double recall);

/// PR curves by confidence thresholding and F1 at each z_omega.
Report pr_f1(std::span<const MetricResult> results, double phi, std::span<const double> sweep, double z_omega = 0.08);

double fraction_correct(const Report& report, double z_omega);
double mean_omega(const Report& report);

/// report.csv (id, omega, confidence, correct@z per sweep value), report.json
/// (summary), pr.tsv (z, threshold, precision, recall).
void write_report(const std::filesystem::path& dir, const Report& report);

/// Every tunable of a run. Missing keys keep their defaults; unknown keys and
/// wrong types are InvalidArgument errors.
struct ExperimentConfig {
  std::string shape = "camera";
  std::vector<double> dims;  // empty: the shape's default size
  Intrinsics intrinsics;
  int image_width = 640;
  int image_height = 480;
  TrainingGrid training;
  TestSetOptions test;
  FeatureConfig features;
  ForestParams forest;
  RegistrationParams registration;
  int train_stride = 6;
  double z_omega = 0.08;

  ExperimentConfig();
  void validate() const;
};

nlohmann::ordered_json config_to_json(const ExperimentConfig& config);
ExperimentConfig config_from_json(const nlohmann::ordered_json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const ExperimentConfig& config);

Mesh config_mesh(const ExperimentConfig& config);

/// Parts of every training image, in image order.
std::vector<Part> collect_training_parts(std::span<const GeneratedImage> images, const FeatureConfig& features,
                                         int stride);
HoughForest train_on_images(std::span<const GeneratedImage> images, const ExperimentConfig& config);

struct SceneOutcome {
  std::string id;
  RefinementTrace trace;  // omega filled per step
  double phi = 0.0;
};

/// Refines every image and scores each iteration against its ground truth.
/// Steps past an early stop repeat the last hypothesis when scored by
/// iteration.
std::vector<SceneOutcome> evaluate_images(std::span<const GeneratedImage> images, const HoughForest& forest,
                                          const Mesh& model, const RegistrationParams& params);

/// Omega of iteration k (the last step if the trace stopped earlier).
double omega_at(const SceneOutcome& outcome, int k);
double confidence_at(const SceneOutcome& outcome, int k);

/// Report on the hypotheses of iteration k.
Report report_at(std::span<const SceneOutcome> outcomes, int k, const ExperimentConfig& config);

}  // namespace ihf
