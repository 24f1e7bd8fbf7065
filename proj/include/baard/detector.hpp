#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "baard/data.hpp"
#include "baard/spatial.hpp"

namespace baard {

// Sample quantile with linear interpolation between order statistics
// (position (n-1)*q in the sorted values). q in [0, 1].
double quantile(std::vector<double> values, double q);
// Same on already sorted values.
double quantile_sorted(std::span<const double> sorted, double q);

using IndexBuilder =
    std::function<std::unique_ptr<NeighborIndex>(const Matrix&, std::vector<int>, Metric)>;

// Default builder: a ball tree with the given leaf size.
IndexBuilder ball_tree_builder(std::size_t leaf_size = BallTree::kDefaultLeafSize);

// ---------------------------------------------------------------------------
// Stage 1: per-class bounding boxes.

enum class BoxTrimming {
  // One symmetric trim level per class, the largest for which the box still
  // holds at least a q fraction of the class's training points.
  kJointCoverage,
  // Each feature independently: lower = (1-q)-quantile, upper = q-quantile.
  kPerFeature,
};

struct ApplicabilityOptions {
  double q = 1.0;
  double noise_sd = 0.0;
  std::uint64_t seed = 0;
  BoxTrimming trimming = BoxTrimming::kJointCoverage;
  // Optional preprocessing of each class's training samples before the box is
  // computed (e.g. image augmentation). Receives the class id.
  std::function<Matrix(const Matrix&, int)> augment;
};

struct ClassBox {
  std::vector<double> low;
  std::vector<double> high;
};

struct ApplicabilityModel {
  double q = 1.0;
  std::vector<ClassBox> boxes;
};

ApplicabilityModel fit_applicability(const Dataset& train, const ApplicabilityOptions& options);
// Inclusive on both bounds.
bool check_applicability(const ApplicabilityModel& model, std::span<const double> x, int label);

// ---------------------------------------------------------------------------
// Stage 2: mean distance to the k nearest same-class training points.

struct ReliabilityModel {
  std::size_t k = 10;
  double q = 1.0;
  Metric metric = Metric::kL2;
  std::vector<double> thresholds;
  // One index per class; payloads are row ids into the full training set.
  std::vector<std::shared_ptr<const NeighborIndex>> class_indices;

  double mean_distance(std::span<const double> x, int label) const;
};

// Per-class pools of validation mean distances (grouped by true label).
std::vector<std::vector<double>> reliability_pools(const ReliabilityModel& model,
                                                   const Dataset& validation);

ReliabilityModel fit_reliability(const Dataset& train, const Dataset& validation,
                                 std::size_t k, double q, Metric metric,
                                 const IndexBuilder& builder = ball_tree_builder());
// Threshold refit from precomputed pools: t_c = q-quantile of pool c.
std::vector<double> reliability_thresholds(const std::vector<std::vector<double>>& pools,
                                           double q);
// Rejects when the mean distance is strictly above the class threshold.
bool check_reliability(const ReliabilityModel& model, std::span<const double> x, int label);

// ---------------------------------------------------------------------------
// Stage 3: label frequency among the k nearest training points (all classes).

struct DecidabilityModel {
  std::size_t k = 100;
  double q = 1.0;
  Metric metric = Metric::kL2;
  std::vector<double> thresholds;
  int class_count = 0;
  std::shared_ptr<const NeighborIndex> index;  // payloads are training row ids
  std::vector<int> train_labels;

  double class_probability(std::span<const double> x, int label) const;
};

std::vector<std::vector<double>> decidability_pools(const DecidabilityModel& model,
                                                    const Dataset& validation);

DecidabilityModel fit_decidability(const Dataset& train, const Dataset& validation,
                                   std::size_t k, double q, Metric metric,
                                   const IndexBuilder& builder = ball_tree_builder());
// Lower tail: t_c = (1-q)-quantile of pool c.
std::vector<double> decidability_thresholds(const std::vector<std::vector<double>>& pools,
                                            double q);
// Rejects when the class probability is strictly below the class threshold.
bool check_decidability(const DecidabilityModel& model, std::span<const double> x, int label);

// ---------------------------------------------------------------------------
// The chained detector.

enum class Stage { kApplicability = 1, kReliability = 2, kDecidability = 3 };

struct Verdict {
  bool rejected = false;
  int stage = 0;  // first rejecting stage, 0 when accepted
  friend bool operator==(const Verdict&, const Verdict&) = default;
};

struct DetectorOptions {
  double q1 = 1.0;
  double q2 = 1.0;
  double q3 = 1.0;
  std::size_t k2 = 10;
  std::size_t k3 = 100;
  Metric metric = Metric::kL2;
  double noise_sd = 0.0;
  BoxTrimming trimming = BoxTrimming::kJointCoverage;
  std::array<bool, 3> enabled = {true, true, true};
  std::size_t leaf_size = BallTree::kDefaultLeafSize;
  std::uint64_t seed = 0;
};

class BaardDetector {
 public:
  BaardDetector() = default;
  // Unfitted detector; stage models are attached with the setters.
  BaardDetector(DetectorOptions options, std::shared_ptr<const Dataset> train)
      : options_(options), enabled_(options.enabled), train_(std::move(train)) {}
  BaardDetector(const BaardDetector& other);
  BaardDetector& operator=(const BaardDetector& other);
  BaardDetector(BaardDetector&& other) noexcept;
  BaardDetector& operator=(BaardDetector&& other) noexcept;

  // Fits every enabled stage. Stage 1 uses train only; stages 2 and 3 are
  // calibrated on validation.
  static BaardDetector fit(const Dataset& train, const Dataset& validation,
                           const DetectorOptions& options,
                           const IndexBuilder& builder = {});

  // Stages run in order 1, 2, 3 and stop at the first rejection. Throws when a
  // stage is enabled but was never fitted.
  Verdict detect(std::span<const double> x, int predicted) const;
  // Evaluates one stage regardless of the enable flags. True means reject.
  bool stage_rejects(Stage stage, std::span<const double> x, int predicted) const;

  void set_enabled(Stage stage, bool on) { enabled_[index(stage)] = on; }
  bool enabled(Stage stage) const { return enabled_[index(stage)]; }

  void set_applicability(ApplicabilityModel m) { applicability_ = std::move(m); }
  void set_reliability(ReliabilityModel m) { reliability_ = std::move(m); }
  void set_decidability(DecidabilityModel m) { decidability_ = std::move(m); }

  const std::optional<ApplicabilityModel>& applicability() const { return applicability_; }
  const std::optional<ReliabilityModel>& reliability() const { return reliability_; }
  const std::optional<DecidabilityModel>& decidability() const { return decidability_; }

  const DetectorOptions& options() const { return options_; }
  // Training set the stages were fitted on (needed to rebuild the trees).
  const std::shared_ptr<const Dataset>& train() const { return train_; }

  // Number of times each stage has been evaluated by detect().
  std::uint64_t query_count(Stage stage) const {
    return counters_[index(stage)].load(std::memory_order_relaxed);
  }
  void reset_counters();

 private:
  static std::size_t index(Stage s) { return static_cast<std::size_t>(s) - 1; }

  DetectorOptions options_;
  std::array<bool, 3> enabled_ = {true, true, true};
  std::optional<ApplicabilityModel> applicability_;
  std::optional<ReliabilityModel> reliability_;
  std::optional<DecidabilityModel> decidability_;
  std::shared_ptr<const Dataset> train_;
  mutable std::array<std::atomic<std::uint64_t>, 3> counters_{};
};

// Structured-text form: boxes, thresholds, quantiles, k values, metric, the
// training points and their content hash. Trees are rebuilt on load.
nlohmann::json detector_to_json(const BaardDetector& detector);

struct LoadedDetector {
  BaardDetector detector;
  std::uint64_t stored_hash = 0;
  std::uint64_t computed_hash = 0;
  bool hash_matches() const { return stored_hash == computed_hash; }
};
LoadedDetector detector_from_json(const nlohmann::json& doc);

// ---------------------------------------------------------------------------
// Accept/reject rasters over a 2-D box, per claimed label and per stage.

class Classifier;

struct Bounds2D {
  double x_min = -2.0;
  double x_max = 2.0;
  double y_min = -2.0;
  double y_max = 2.0;
};

struct RegionGrid {
  std::size_t resolution = 0;
  Bounds2D bounds;
  // rejects[label][s] for s = 0,1,2 (stages 1..3) and s = 3 (chained). Cell
  // (row, col) is at index row * resolution + col; row runs along y.
  std::vector<std::array<std::vector<std::uint8_t>, 4>> rejects;
  std::vector<int> predicted;  // classifier output per cell

  std::array<double, 2> cell_center(std::size_t row, std::size_t col) const;
};

RegionGrid reject_region_grid(const BaardDetector& detector, const Classifier& classifier,
                              const Bounds2D& bounds, std::size_t resolution);

}  // namespace baard
