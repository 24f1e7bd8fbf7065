#include "baard/detector.hpp"

#include <algorithm>
#include <cmath>

#include "baard/classifiers.hpp"
#include "baard/random.hpp"

namespace baard {

double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw InvalidArgument("quantile of an empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw InvalidArgument("quantile level must lie in [0, 1]");
  const double h = static_cast<double>(sorted.size() - 1) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= sorted.size()) return sorted.back();
  const double frac = h - static_cast<double>(lo);
  if (frac == 0.0) return sorted[lo];
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

double quantile(std::vector<double> values, double q) {
  std::ranges::sort(values);
  return quantile_sorted(values, q);
}

IndexBuilder ball_tree_builder(std::size_t leaf_size) {
  return [leaf_size](const Matrix& points, std::vector<int> payload, Metric metric) {
    return std::unique_ptr<NeighborIndex>(
        std::make_unique<BallTree>(points, std::move(payload), metric, leaf_size));
  };
}

namespace {

void check_label(int label, std::size_t classes) {
  if (label < 0 || static_cast<std::size_t>(label) >= classes) {
    throw InvalidArgument("label " + std::to_string(label) + " out of range");
  }
}

void check_quantile(double q, const char* name) {
  if (!(q > 0.0 && q <= 1.0)) {
    throw InvalidArgument(std::string(name) + " must lie in (0, 1]");
  }
}

// k nearest neighbours of a calibration sample. When the sample itself is one
// of the indexed points, that zero-distance self match is dropped once.
std::vector<Neighbor> neighbors_excluding_self(const NeighborIndex& index,
                                               std::span<const double> x, std::size_t k) {
  const std::size_t want = std::min(k + 1, index.size());
  auto found = index.query(x, want);
  std::vector<Neighbor> out;
  out.reserve(k);
  bool dropped = false;
  for (const auto& nb : found) {
    if (!dropped && nb.distance == 0.0) {
      // Payload is a training row id; find its stored position to compare.
      bool same = false;
      for (std::size_t i = 0; i < index.size(); ++i) {
        if (index.payload(i) == nb.payload) {
          const auto p = index.point(i);
          same = std::equal(p.begin(), p.end(), x.begin(), x.end());
          break;
        }
      }
      if (same) {
        dropped = true;
        continue;
      }
    }
    if (out.size() < k) out.push_back(nb);
  }
  return out;
}

double mean_of(const std::vector<Neighbor>& nbs) {
  double s = 0.0;
  for (const auto& nb : nbs) s += nb.distance;
  return s / static_cast<double>(nbs.size());
}

std::vector<double> class_fraction(const std::vector<Neighbor>& nbs,
                                   const std::vector<int>& labels, int classes) {
  std::vector<double> counts(static_cast<std::size_t>(classes), 0.0);
  for (const auto& nb : nbs) counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(nb.payload)])] += 1.0;
  for (double& c : counts) c /= static_cast<double>(nbs.size());
  return counts;
}

// Box over the columns of samples trimmed symmetrically at level alpha.
ClassBox trimmed_box(const std::vector<std::vector<double>>& sorted_cols, double lower_q,
                     double upper_q) {
  ClassBox box;
  for (const auto& col : sorted_cols) {
    box.low.push_back(quantile_sorted(col, lower_q));
    box.high.push_back(quantile_sorted(col, upper_q));
  }
  return box;
}

double coverage(const Matrix& samples, const ClassBox& box) {
  std::size_t inside = 0;
  for (std::size_t i = 0; i < samples.rows(); ++i) {
    const auto x = samples.row(i);
    bool ok = true;
    for (std::size_t j = 0; j < x.size() && ok; ++j) ok = x[j] >= box.low[j] && x[j] <= box.high[j];
    inside += ok ? 1 : 0;
  }
  return static_cast<double>(inside) / static_cast<double>(samples.rows());
}

}  // namespace

// ---------------------------------------------------------------------------

ApplicabilityModel fit_applicability(const Dataset& train, const ApplicabilityOptions& options) {
  check_quantile(options.q, "q1");
  if (options.noise_sd < 0.0) throw InvalidArgument("noise_sd must be non-negative");
  ApplicabilityModel model;
  model.q = options.q;
  Rng rng(options.seed);
  for (int c = 0; c < train.class_count; ++c) {
    Matrix samples = train.class_samples(c);
    if (samples.rows() == 0) {
      throw InvalidArgument("class " + std::to_string(c) + " has no training samples");
    }
    if (options.augment) samples = options.augment(samples, c);
    if (options.noise_sd > 0.0) {
      const std::size_t n = samples.rows();
      std::vector<double> noisy(samples.cols());
      for (std::size_t i = 0; i < n; ++i) {
        const auto x = samples.row(i);
        for (std::size_t j = 0; j < x.size(); ++j) noisy[j] = x[j] + options.noise_sd * rng.normal();
        samples.append_row(noisy);
      }
    }
    std::vector<std::vector<double>> cols(samples.cols());
    for (std::size_t j = 0; j < samples.cols(); ++j) {
      cols[j].reserve(samples.rows());
      for (std::size_t i = 0; i < samples.rows(); ++i) cols[j].push_back(samples(i, j));
      std::ranges::sort(cols[j]);
    }
    if (options.trimming == BoxTrimming::kPerFeature || options.q == 1.0) {
      model.boxes.push_back(trimmed_box(cols, 1.0 - options.q, options.q));
      continue;
    }
    // Largest trim level whose box still covers a q fraction of the class.
    double lo = 0.0;
    double hi = 0.5;
    for (int it = 0; it < 60; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (coverage(samples, trimmed_box(cols, mid, 1.0 - mid)) >= options.q) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    model.boxes.push_back(trimmed_box(cols, lo, 1.0 - lo));
  }
  return model;
}

bool check_applicability(const ApplicabilityModel& model, std::span<const double> x, int label) {
  check_label(label, model.boxes.size());
  const auto& box = model.boxes[static_cast<std::size_t>(label)];
  if (x.size() != box.low.size()) throw InvalidArgument("applicability: dimension mismatch");
  for (std::size_t j = 0; j < x.size(); ++j) {
    if (x[j] < box.low[j] || x[j] > box.high[j]) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------

double ReliabilityModel::mean_distance(std::span<const double> x, int label) const {
  check_label(label, class_indices.size());
  return mean_of(class_indices[static_cast<std::size_t>(label)]->query(x, k));
}

std::vector<std::vector<double>> reliability_pools(const ReliabilityModel& model,
                                                   const Dataset& validation) {
  std::vector<std::vector<double>> pools(model.class_indices.size());
  for (std::size_t i = 0; i < validation.size(); ++i) {
    const int c = validation.labels[i];
    const auto& index = *model.class_indices[static_cast<std::size_t>(c)];
    pools[static_cast<std::size_t>(c)].push_back(
        mean_of(neighbors_excluding_self(index, validation.samples.row(i), model.k)));
  }
  return pools;
}

std::vector<double> reliability_thresholds(const std::vector<std::vector<double>>& pools,
                                           double q) {
  std::vector<double> t;
  for (std::size_t c = 0; c < pools.size(); ++c) {
    if (pools[c].empty()) {
      throw InvalidArgument("validation set has no samples of class " + std::to_string(c));
    }
    t.push_back(quantile(pools[c], q));
  }
  return t;
}

ReliabilityModel fit_reliability(const Dataset& train, const Dataset& validation,
                                 std::size_t k, double q, Metric metric,
                                 const IndexBuilder& builder) {
  check_quantile(q, "q2");
  if (k == 0) throw InvalidArgument("k2 must be at least 1");
  if (validation.feature_dim() != train.feature_dim()) {
    throw InvalidArgument("validation and training feature dimensions differ");
  }
  ReliabilityModel model;
  model.k = k;
  model.q = q;
  model.metric = metric;
  for (int c = 0; c < train.class_count; ++c) {
    Matrix points(0, train.feature_dim());
    std::vector<int> rows;
    for (std::size_t i = 0; i < train.size(); ++i) {
      if (train.labels[i] == c) {
        points.append_row(train.samples.row(i));
        rows.push_back(static_cast<int>(i));
      }
    }
    if (points.rows() <= k) {
      throw InvalidArgument("class " + std::to_string(c) + " has " +
                            std::to_string(points.rows()) + " training points; k2 = " +
                            std::to_string(k) + " needs more");
    }
    model.class_indices.push_back(builder(points, std::move(rows), metric));
  }
  model.thresholds = reliability_thresholds(reliability_pools(model, validation), q);
  return model;
}

bool check_reliability(const ReliabilityModel& model, std::span<const double> x, int label) {
  return model.mean_distance(x, label) <= model.thresholds[static_cast<std::size_t>(label)];
}

// ---------------------------------------------------------------------------

double DecidabilityModel::class_probability(std::span<const double> x, int label) const {
  check_label(label, static_cast<std::size_t>(class_count));
  return class_fraction(index->query(x, k), train_labels, class_count)[static_cast<std::size_t>(label)];
}

std::vector<std::vector<double>> decidability_pools(const DecidabilityModel& model,
                                                    const Dataset& validation) {
  std::vector<std::vector<double>> pools(static_cast<std::size_t>(model.class_count));
  for (std::size_t i = 0; i < validation.size(); ++i) {
    const int c = validation.labels[i];
    const auto nbs = neighbors_excluding_self(*model.index, validation.samples.row(i), model.k);
    pools[static_cast<std::size_t>(c)].push_back(
        class_fraction(nbs, model.train_labels, model.class_count)[static_cast<std::size_t>(c)]);
  }
  return pools;
}

std::vector<double> decidability_thresholds(const std::vector<std::vector<double>>& pools,
                                            double q) {
  std::vector<double> t;
  for (std::size_t c = 0; c < pools.size(); ++c) {
    if (pools[c].empty()) {
      throw InvalidArgument("validation set has no samples of class " + std::to_string(c));
    }
    t.push_back(quantile(pools[c], 1.0 - q));
  }
  return t;
}

DecidabilityModel fit_decidability(const Dataset& train, const Dataset& validation,
                                   std::size_t k, double q, Metric metric,
                                   const IndexBuilder& builder) {
  check_quantile(q, "q3");
  if (k == 0) throw InvalidArgument("k3 must be at least 1");
  if (k >= train.size()) {
    throw InvalidArgument("k3 = " + std::to_string(k) + " must be below the training size " +
                          std::to_string(train.size()));
  }
  if (validation.feature_dim() != train.feature_dim()) {
    throw InvalidArgument("validation and training feature dimensions differ");
  }
  DecidabilityModel model;
  model.k = k;
  model.q = q;
  model.metric = metric;
  model.class_count = train.class_count;
  model.train_labels = train.labels;
  std::vector<int> rows(train.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = static_cast<int>(i);
  model.index = builder(train.samples, std::move(rows), metric);
  model.thresholds = decidability_thresholds(decidability_pools(model, validation), q);
  return model;
}

bool check_decidability(const DecidabilityModel& model, std::span<const double> x, int label) {
  return model.class_probability(x, label) >= model.thresholds[static_cast<std::size_t>(label)];
}

// ---------------------------------------------------------------------------

BaardDetector::BaardDetector(const BaardDetector& other)
    : options_(other.options_),
      enabled_(other.enabled_),
      applicability_(other.applicability_),
      reliability_(other.reliability_),
      decidability_(other.decidability_),
      train_(other.train_) {
  for (std::size_t i = 0; i < counters_.size(); ++i) counters_[i].store(other.counters_[i].load());
}

BaardDetector::BaardDetector(BaardDetector&& other) noexcept
    : options_(other.options_),
      enabled_(other.enabled_),
      applicability_(std::move(other.applicability_)),
      reliability_(std::move(other.reliability_)),
      decidability_(std::move(other.decidability_)),
      train_(std::move(other.train_)) {
  for (std::size_t i = 0; i < counters_.size(); ++i) counters_[i].store(other.counters_[i].load());
}

BaardDetector& BaardDetector::operator=(const BaardDetector& other) {
  if (this != &other) *this = BaardDetector(other);
  return *this;
}

BaardDetector& BaardDetector::operator=(BaardDetector&& other) noexcept {
  options_ = other.options_;
  enabled_ = other.enabled_;
  applicability_ = std::move(other.applicability_);
  reliability_ = std::move(other.reliability_);
  decidability_ = std::move(other.decidability_);
  train_ = std::move(other.train_);
  for (std::size_t i = 0; i < counters_.size(); ++i) counters_[i].store(other.counters_[i].load());
  return *this;
}

void BaardDetector::reset_counters() {
  for (auto& c : counters_) c.store(0);
}

BaardDetector BaardDetector::fit(const Dataset& train, const Dataset& validation,
                                 const DetectorOptions& options, const IndexBuilder& builder) {
  const IndexBuilder build = builder ? builder : ball_tree_builder(options.leaf_size);
  BaardDetector det;
  det.options_ = options;
  det.enabled_ = options.enabled;
  det.train_ = std::make_shared<const Dataset>(train);
  if (options.enabled[0]) {
    ApplicabilityOptions app;
    app.q = options.q1;
    app.noise_sd = options.noise_sd;
    app.seed = options.seed;
    app.trimming = options.trimming;
    det.applicability_ = fit_applicability(train, app);
  }
  if (options.enabled[1]) {
    det.reliability_ = fit_reliability(train, validation, options.k2, options.q2, options.metric, build);
  }
  if (options.enabled[2]) {
    det.decidability_ = fit_decidability(train, validation, options.k3, options.q3, options.metric, build);
  }
  return det;
}

bool BaardDetector::stage_rejects(Stage stage, std::span<const double> x, int predicted) const {
  switch (stage) {
    case Stage::kApplicability:
      if (!applicability_) throw Error("applicability stage is not fitted");
      return !check_applicability(*applicability_, x, predicted);
    case Stage::kReliability:
      if (!reliability_) throw Error("reliability stage is not fitted");
      return !check_reliability(*reliability_, x, predicted);
    case Stage::kDecidability:
      if (!decidability_) throw Error("decidability stage is not fitted");
      return !check_decidability(*decidability_, x, predicted);
  }
  return false;
}

Verdict BaardDetector::detect(std::span<const double> x, int predicted) const {
  static constexpr Stage kOrder[] = {Stage::kApplicability, Stage::kReliability,
                                     Stage::kDecidability};
  for (Stage s : kOrder) {
    if (!enabled(s)) continue;
    counters_[index(s)].fetch_add(1, std::memory_order_relaxed);
    if (stage_rejects(s, x, predicted)) return {true, static_cast<int>(s)};
  }
  return {};
}

// ---------------------------------------------------------------------------

std::array<double, 2> RegionGrid::cell_center(std::size_t row, std::size_t col) const {
  const double r = static_cast<double>(resolution);
  return {bounds.x_min + (static_cast<double>(col) + 0.5) * (bounds.x_max - bounds.x_min) / r,
          bounds.y_min + (static_cast<double>(row) + 0.5) * (bounds.y_max - bounds.y_min) / r};
}

RegionGrid reject_region_grid(const BaardDetector& detector, const Classifier& classifier,
                              const Bounds2D& bounds, std::size_t resolution) {
  if (!detector.train() || detector.train()->feature_dim() != 2 || classifier.input_dim() != 2) {
    throw InvalidArgument("region grids need 2-D inputs");
  }
  if (resolution == 0) throw InvalidArgument("grid resolution must be at least 1");
  RegionGrid grid;
  grid.resolution = resolution;
  grid.bounds = bounds;
  const std::size_t cells = resolution * resolution;
  const int classes = detector.train()->class_count;
  grid.predicted.resize(cells);
  grid.rejects.resize(static_cast<std::size_t>(classes));
  for (auto& per_stage : grid.rejects) {
    for (auto& g : per_stage) g.assign(cells, 0);
  }
  const bool fitted[3] = {detector.applicability().has_value(),
                          detector.reliability().has_value(),
                          detector.decidability().has_value()};
  for (std::size_t row = 0; row < resolution; ++row) {
    for (std::size_t col = 0; col < resolution; ++col) {
      const auto p = grid.cell_center(row, col);
      const std::size_t cell = row * resolution + col;
      grid.predicted[cell] = classifier.predict(p);
      for (int label = 0; label < classes; ++label) {
        auto& g = grid.rejects[static_cast<std::size_t>(label)];
        for (int s = 0; s < 3; ++s) {
          if (!fitted[s]) continue;
          g[static_cast<std::size_t>(s)][cell] =
              detector.stage_rejects(static_cast<Stage>(s + 1), p, label) ? 1 : 0;
        }
        g[3][cell] = detector.detect(p, label).rejected ? 1 : 0;
      }
    }
  }
  return grid;
}

}  // namespace baard
