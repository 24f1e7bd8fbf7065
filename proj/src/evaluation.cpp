#include "baard/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>

#include "baard/error.hpp"
#include "baard/random.hpp"

namespace baard {

std::string_view to_string(AttackKind k) {
  switch (k) {
    case AttackKind::kFgsm: return "fgsm";
    case AttackKind::kPgd: return "pgd";
    case AttackKind::kDeepFool: return "deepfool";
    case AttackKind::kBoundary: return "boundary";
    case AttackKind::kDecisionTree: return "tree";
  }
  return "?";
}

AttackKind attack_from_string(std::string_view name) {
  for (auto k : {AttackKind::kFgsm, AttackKind::kPgd, AttackKind::kDeepFool,
                 AttackKind::kBoundary, AttackKind::kDecisionTree}) {
    if (to_string(k) == name) return k;
  }
  throw InvalidArgument("unknown attack '" + std::string(name) + "'");
}

bool is_budgeted(AttackKind k) { return k == AttackKind::kFgsm || k == AttackKind::kPgd; }

void parallel_for(std::size_t n, std::size_t workers,
                  const std::function<void(std::size_t)>& fn) {
  workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(n, 1));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
            next = n;
          }
        }
      });
    }
  }
  if (failure) std::rethrow_exception(failure);
}

std::size_t AdversarialSet::success_count() const {
  return static_cast<std::size_t>(std::count(success.begin(), success.end(), 1));
}

AdversarialSet generate_adversarial(const Classifier& model, const Dataset& source,
                                    AttackKind kind, const AttackBudget& budget,
                                    const Matrix& start_pool, std::size_t workers) {
  const auto* diff = dynamic_cast<const DifferentiableClassifier*>(&model);
  const auto* tree = dynamic_cast<const CartTree*>(&model);
  if ((kind == AttackKind::kFgsm || kind == AttackKind::kPgd || kind == AttackKind::kDeepFool) &&
      diff == nullptr) {
    throw InvalidArgument(std::string(to_string(kind)) + " needs a differentiable classifier, got " +
                          model.kind());
  }
  if (kind == AttackKind::kDecisionTree && tree == nullptr) {
    throw InvalidArgument("tree attack needs a decision tree classifier, got " + model.kind());
  }

  const std::size_t n = source.size();
  std::vector<AttackResult> results(n);
  parallel_for(n, workers, [&](std::size_t i) {
    AttackBudget b = budget;
    b.seed = stream_seed(budget.seed, i);
    const auto x = source.samples.row(i);
    const int y = source.labels[i];
    switch (kind) {
      case AttackKind::kFgsm: results[i] = fgsm(*diff, x, y, b); break;
      case AttackKind::kPgd: results[i] = pgd(*diff, x, y, b); break;
      case AttackKind::kDeepFool: results[i] = deepfool(*diff, x, y, b); break;
      case AttackKind::kBoundary: {
        if (model.predict(x) != y) {
          results[i] = boundary_attack(model, x, y, x, b);
        } else {
          const auto start = find_adversarial_start(model, start_pool, x, y, b.seed);
          results[i] = boundary_attack(model, x, y, start, b);
        }
        break;
      }
      case AttackKind::kDecisionTree: results[i] = decision_tree_attack(*tree, x, y, b); break;
    }
  });

  AdversarialSet out;
  out.samples = Matrix(n, source.feature_dim());
  for (std::size_t i = 0; i < n; ++i) {
    std::copy(results[i].x_adv.begin(), results[i].x_adv.end(), out.samples.row(i).begin());
    out.true_labels.push_back(source.labels[i]);
    out.predicted.push_back(model.predict(results[i].x_adv));
    out.success.push_back(results[i].success ? 1 : 0);
    out.norms.push_back(results[i].perturbation_norm);
    out.source_index.push_back(i);
  }
  return out;
}

double detector_score(const Classifier& classifier, const BaardDetector& detector,
                      const Matrix& adversarial, std::span<const int> true_labels) {
  if (adversarial.rows() == 0) throw InvalidArgument("detector score of an empty set");
  if (true_labels.size() != adversarial.rows()) throw InvalidArgument("label count mismatch");
  std::size_t good = 0;
  for (std::size_t i = 0; i < adversarial.rows(); ++i) {
    const int pred = classifier.predict(adversarial.row(i));
    if (pred == true_labels[i] || detector.detect(adversarial.row(i), pred).rejected) ++good;
  }
  return static_cast<double>(good) / static_cast<double>(adversarial.rows());
}

double false_positive_rate(const BaardDetector& detector, const Matrix& benign,
                           std::span<const int> predicted) {
  if (benign.rows() == 0) throw InvalidArgument("false positive rate of an empty set");
  if (predicted.size() != benign.rows()) throw InvalidArgument("label count mismatch");
  std::size_t rejected = 0;
  for (std::size_t i = 0; i < benign.rows(); ++i) {
    if (detector.detect(benign.row(i), predicted[i]).rejected) ++rejected;
  }
  return static_cast<double>(rejected) / static_cast<double>(benign.rows());
}

DefenseScore score_defense(const Classifier& classifier, const BaardDetector& detector,
                           const AdversarialSet& adversarial, const Dataset& benign) {
  if (adversarial.size() == 0 || benign.size() == 0) {
    throw InvalidArgument("cannot score an empty set");
  }
  DefenseScore s;
  std::vector<int> benign_pred(benign.size());
  std::size_t clean_ok = 0;
  for (std::size_t i = 0; i < benign.size(); ++i) {
    benign_pred[i] = classifier.predict(benign.samples.row(i));
    if (benign_pred[i] == benign.labels[i]) ++clean_ok;
  }
  s.clean_accuracy = static_cast<double>(clean_ok) / static_cast<double>(benign.size());
  s.fpr = false_positive_rate(detector, benign.samples, benign_pred);

  std::size_t undefended_ok = 0;
  std::size_t defended_ok = 0;
  std::size_t caught = 0;
  for (std::size_t i = 0; i < adversarial.size(); ++i) {
    const int pred = adversarial.predicted[i];
    const bool correct = pred == adversarial.true_labels[i];
    const Verdict v = detector.detect(adversarial.samples.row(i), pred);
    if (v.rejected) {
      ++s.rejected;
      ++s.stage_rejects[static_cast<std::size_t>(v.stage - 1)];
    }
    if (correct) ++undefended_ok;
    if (correct || v.rejected) ++defended_ok;
    if (adversarial.success[i] != 0) {
      ++s.success_count;
      if (v.rejected) ++caught;
    }
  }
  const auto n = static_cast<double>(adversarial.size());
  s.adversarial_count = adversarial.size();
  s.undefended_accuracy = static_cast<double>(undefended_ok) / n;
  s.accuracy_on_adv = static_cast<double>(defended_ok) / n;
  s.tpr = s.success_count == 0 ? std::numeric_limits<double>::quiet_NaN()
                               : static_cast<double>(caught) / static_cast<double>(s.success_count);
  return s;
}

double trapezoid_auc(std::vector<RocPoint> points) {
  points.push_back({0.0, 0.0, 0.0});
  points.push_back({1.0, 1.0, 0.0});
  std::sort(points.begin(), points.end(), [](const RocPoint& a, const RocPoint& b) {
    return a.fpr != b.fpr ? a.fpr < b.fpr : a.tpr < b.tpr;
  });
  double auc = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i) {
    auc += (points[i].fpr - points[i - 1].fpr) * (points[i].tpr + points[i - 1].tpr) / 2.0;
  }
  return auc;
}

RocCurve roc_sweep(const DetectorFitter& fit, const Matrix& benign,
                   std::span<const int> benign_predicted, const Matrix& adversarial,
                   std::span<const int> adversarial_predicted, std::span<const double> q_grid) {
  if (q_grid.empty()) throw InvalidArgument("empty q grid");
  RocCurve curve;
  for (double q : q_grid) {
    const BaardDetector det = fit(q);
    RocPoint p;
    p.q = q;
    p.fpr = false_positive_rate(det, benign, benign_predicted);
    p.tpr = adversarial.rows() == 0
                ? 0.0
                : false_positive_rate(det, adversarial, adversarial_predicted);
    curve.points.push_back(p);
  }
  std::sort(curve.points.begin(), curve.points.end(), [](const RocPoint& a, const RocPoint& b) {
    return a.fpr != b.fpr ? a.fpr < b.fpr : a.tpr < b.tpr;
  });
  std::size_t distinct = 0;
  for (std::size_t i = 0; i < curve.points.size(); ++i) {
    if (i == 0 || curve.points[i].fpr != curve.points[i - 1].fpr ||
        curve.points[i].tpr != curve.points[i - 1].tpr) {
      ++distinct;
    }
  }
  curve.degenerate = distinct < 2;
  curve.auc = trapezoid_auc(curve.points);
  return curve;
}

DetectorFitter stage_fitter(const BaardDetector& base, Stage stage, const Dataset& validation) {
  BaardDetector single = base;
  for (Stage s : {Stage::kApplicability, Stage::kReliability, Stage::kDecidability}) {
    single.set_enabled(s, s == stage);
  }
  switch (stage) {
    case Stage::kApplicability: {
      if (!base.train()) throw InvalidArgument("detector has no training set");
      auto train = base.train();
      return [single, train](double q) {
        BaardDetector det = single;
        ApplicabilityOptions app;
        app.q = q;
        app.noise_sd = det.options().noise_sd;
        app.seed = det.options().seed;
        app.trimming = det.options().trimming;
        det.set_applicability(fit_applicability(*train, app));
        return det;
      };
    }
    case Stage::kReliability: {
      if (!base.reliability()) throw InvalidArgument("reliability stage is not fitted");
      auto pools = reliability_pools(*base.reliability(), validation);
      return [single, pools = std::move(pools)](double q) {
        BaardDetector det = single;
        ReliabilityModel m = *det.reliability();
        m.q = q;
        m.thresholds = reliability_thresholds(pools, q);
        det.set_reliability(std::move(m));
        return det;
      };
    }
    case Stage::kDecidability: {
      if (!base.decidability()) throw InvalidArgument("decidability stage is not fitted");
      auto pools = decidability_pools(*base.decidability(), validation);
      return [single, pools = std::move(pools)](double q) {
        BaardDetector det = single;
        DecidabilityModel m = *det.decidability();
        m.q = q;
        m.thresholds = decidability_thresholds(pools, q);
        det.set_decidability(std::move(m));
        return det;
      };
    }
  }
  throw InvalidArgument("unknown stage");
}

std::size_t select_k(std::span<const KSweepRow> rows, double tolerance) {
  if (rows.empty()) throw InvalidArgument("empty k sweep");
  double best = std::numeric_limits<double>::infinity();
  for (const auto& r : rows) best = std::min(best, r.fpr);
  std::size_t chosen = 0;
  for (const auto& r : rows) {
    if (r.fpr <= best + tolerance) chosen = std::max(chosen, r.k);
  }
  return chosen;
}

KSweepResult sweep_k(Stage stage, std::span<const std::size_t> k_grid, double q, Metric metric,
                     const KSweepData& data) {
  if (stage == Stage::kApplicability) throw InvalidArgument("stage 1 has no k");
  if (!data.train || !data.calibration || !data.benign_eval || !data.adversarial ||
      !data.classifier) {
    throw InvalidArgument("k sweep needs all data sets and a classifier");
  }
  if (k_grid.empty()) throw InvalidArgument("empty k grid");
  std::vector<int> benign_pred(data.benign_eval->size());
  for (std::size_t i = 0; i < benign_pred.size(); ++i) {
    benign_pred[i] = data.classifier->predict(data.benign_eval->samples.row(i));
  }
  KSweepResult out;
  for (std::size_t k : k_grid) {
    DetectorOptions opts;
    opts.metric = metric;
    opts.enabled = {false, stage == Stage::kReliability, stage == Stage::kDecidability};
    opts.k2 = k;
    opts.k3 = k;
    opts.q2 = q;
    opts.q3 = q;
    const auto det = BaardDetector::fit(*data.train, *data.calibration, opts);
    KSweepRow row;
    row.k = k;
    row.accuracy_on_adv = detector_score(*data.classifier, det, data.adversarial->samples,
                                         data.adversarial->true_labels);
    row.fpr = false_positive_rate(det, data.benign_eval->samples, benign_pred);
    out.rows.push_back(row);
  }
  out.selected_k = select_k(out.rows);
  return out;
}

}  // namespace baard
