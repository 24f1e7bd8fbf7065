#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "baard/attacks.hpp"
#include "baard/detector.hpp"

namespace baard {

enum class AttackKind { kFgsm, kPgd, kDeepFool, kBoundary, kDecisionTree };

std::string_view to_string(AttackKind k);
AttackKind attack_from_string(std::string_view name);
// FGSM and PGD spend a norm budget; the others minimize the perturbation.
bool is_budgeted(AttackKind k);

// Runs fn(i) for i in [0, n) on up to `workers` threads. Each index runs
// exactly once; callers write results into per-index slots.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

struct AdversarialSet {
  Matrix samples;
  std::vector<int> true_labels;
  std::vector<int> predicted;  // classifier output on each adversarial sample
  std::vector<std::uint8_t> success;
  std::vector<double> norms;
  std::vector<std::size_t> source_index;  // row in the attacked dataset

  std::size_t size() const { return samples.rows(); }
  std::size_t success_count() const;
};

// Attacks every row of `source`. Input i uses seed stream_seed(budget.seed, i)
// so results do not depend on scheduling. start_pool feeds the boundary
// attack's starting points.
AdversarialSet generate_adversarial(const Classifier& model, const Dataset& source,
                                    AttackKind kind, const AttackBudget& budget,
                                    const Matrix& start_pool, std::size_t workers = 1);

// Mean over the set of D(x) = 1 if the classifier is right or the detector
// rejects, else 0.
double detector_score(const Classifier& classifier, const BaardDetector& detector,
                      const Matrix& adversarial, std::span<const int> true_labels);

// Fraction of benign samples rejected when each is checked under its
// predicted label.
double false_positive_rate(const BaardDetector& detector, const Matrix& benign,
                           std::span<const int> predicted);

struct DefenseScore {
  double accuracy_on_adv = 0.0;
  double undefended_accuracy = 0.0;
  double fpr = 0.0;
  double clean_accuracy = 0.0;
  // Rejected share of the successful adversarial samples; NaN when none.
  double tpr = 0.0;
  std::size_t adversarial_count = 0;
  std::size_t success_count = 0;
  std::size_t rejected = 0;
  std::array<std::size_t, 3> stage_rejects{};  // by first firing stage
};

// Full scoring of one adversarial set against a benign reference set.
DefenseScore score_defense(const Classifier& classifier, const BaardDetector& detector,
                           const AdversarialSet& adversarial, const Dataset& benign);

// ---------------------------------------------------------------------------

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double q = 0.0;
};

struct RocCurve {
  std::vector<RocPoint> points;  // sorted by fpr, then tpr
  double auc = 0.0;
  // Fewer than two distinct operating points: the AUC is only the anchored
  // interpolation through a single point.
  bool degenerate = false;
};

using DetectorFitter = std::function<BaardDetector(double q)>;

// For each q: fit, then measure FPR on the benign set and TPR on the
// adversarial set (each sample checked under its predicted label). AUC is the
// trapezoid rule over the points anchored at (0,0) and (1,1).
RocCurve roc_sweep(const DetectorFitter& fit, const Matrix& benign,
                   std::span<const int> benign_predicted, const Matrix& adversarial,
                   std::span<const int> adversarial_predicted, std::span<const double> q_grid);

double trapezoid_auc(std::vector<RocPoint> points);

// Single-stage fitter that refits only the stage's thresholds (stage 2/3) or
// boxes (stage 1) for each q. Calibration pools are computed once.
DetectorFitter stage_fitter(const BaardDetector& base, Stage stage, const Dataset& validation);

// ---------------------------------------------------------------------------

struct KSweepRow {
  std::size_t k = 0;
  double accuracy_on_adv = 0.0;
  double fpr = 0.0;
};

struct KSweepResult {
  std::vector<KSweepRow> rows;
  std::size_t selected_k = 0;
};

// Largest k whose FPR stays within `tolerance` of the lowest FPR in the table.
std::size_t select_k(std::span<const KSweepRow> rows, double tolerance = 0.01);

struct KSweepData {
  const Dataset* train = nullptr;
  const Dataset* calibration = nullptr;  // benign, true labels
  const Dataset* benign_eval = nullptr;  // benign held-out set for FPR
  const AdversarialSet* adversarial = nullptr;
  const Classifier* classifier = nullptr;
};

// Runs stage 2 or 3 alone for every k at a fixed q.
KSweepResult sweep_k(Stage stage, std::span<const std::size_t> k_grid, double q,
                     Metric metric, const KSweepData& data);

}  // namespace baard
