#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "baard/classifiers.hpp"
#include "baard/detector.hpp"
#include "baard/error.hpp"
#include "support/oracles.hpp"

using namespace baard;

namespace {

Dataset make(std::vector<std::vector<double>> rows, std::vector<int> labels, int classes = 2) {
  Dataset ds;
  for (const auto& r : rows) ds.samples.append_row(r);
  ds.labels = std::move(labels);
  ds.class_count = classes;
  for (int c = 0; c < classes; ++c) ds.label_names.push_back(std::to_string(c));
  return ds;
}

Split blob_split(std::uint64_t seed, std::size_t n = 200) {
  const Dataset ds = gen_blobs(n, {{0, 0}, {3, 0}, {0, 3}}, 1.0, seed);
  return stratified_split(ds, {0.5, 0.25, seed});
}

}  // namespace

TEST_CASE("quantile interpolates linearly") {
  CHECK(quantile({0.1, 0.2, 0.3}, 1.0) == 0.3);
  CHECK(quantile({3, 1, 2}, 0.0) == 1.0);
  CHECK(quantile({0, 10}, 0.25) == 2.5);
  std::vector<double> v;
  for (int i = 0; i <= 100; ++i) v.push_back(i / 100.0);
  CHECK(quantile(v, 0.95) == doctest::Approx(0.95));
  CHECK_THROWS_AS(quantile({}, 0.5), InvalidArgument);
  CHECK_THROWS_AS(quantile({1.0}, 1.5), InvalidArgument);
}

TEST_CASE("applicability boxes") {
  SUBCASE("min/max box at q = 1") {
    const Dataset ds = make({{0, 0}, {1, 1}, {5, 5}, {6, 6}}, {0, 0, 1, 1});
    const auto m = fit_applicability(ds, {});
    CHECK(m.boxes[0].low == std::vector<double>{0, 0});
    CHECK(m.boxes[0].high == std::vector<double>{1, 1});
    CHECK(check_applicability(m, std::vector<double>{0.5, 0.5}, 0));
    CHECK_FALSE(check_applicability(m, std::vector<double>{2, 0.5}, 0));
    CHECK(check_applicability(m, std::vector<double>{1, 0}, 0));
    CHECK_FALSE(check_applicability(m, std::vector<double>{0.5, 0.5}, 1));
    CHECK_THROWS_AS(check_applicability(m, std::vector<double>{0.5, 0.5}, 2), InvalidArgument);
  }
  SUBCASE("per-feature trimming takes the two quantiles") {
    std::vector<std::vector<double>> rows;
    std::vector<int> labels;
    for (int i = 0; i <= 100; ++i) {
      rows.push_back({i / 100.0});
      labels.push_back(0);
    }
    rows.push_back({5.0});
    labels.push_back(1);
    rows.push_back({6.0});
    labels.push_back(1);
    const Dataset ds = make(rows, labels);
    ApplicabilityOptions o;
    o.q = 0.95;
    o.trimming = BoxTrimming::kPerFeature;
    const auto m = fit_applicability(ds, o);
    CHECK(m.boxes[0].low[0] == doctest::Approx(0.05));
    CHECK(m.boxes[0].high[0] == doctest::Approx(0.95));
  }
  SUBCASE("joint coverage holds at least q of the class") {
    const Split s = blob_split(4, 400);
    for (double q : {0.9, 0.95, 0.99}) {
      ApplicabilityOptions o;
      o.q = q;
      const auto m = fit_applicability(s.train, o);
      for (int c = 0; c < 3; ++c) {
        const Matrix pts = s.train.class_samples(c);
        std::size_t inside = 0;
        for (std::size_t i = 0; i < pts.rows(); ++i) inside += check_applicability(m, pts.row(i), c);
        const double cover = static_cast<double>(inside) / static_cast<double>(pts.rows());
        CHECK(cover >= q);
        CHECK(cover <= q + 0.03);
        for (std::size_t j = 0; j < 2; ++j) CHECK(m.boxes[c].low[j] <= m.boxes[c].high[j]);
      }
    }
  }
  SUBCASE("noise augmentation only widens the box") {
    const Split s = blob_split(5);
    ApplicabilityOptions plain;
    ApplicabilityOptions noisy;
    noisy.noise_sd = 0.5;
    noisy.seed = 3;
    const auto a = fit_applicability(s.train, plain);
    const auto b = fit_applicability(s.train, noisy);
    for (int c = 0; c < 3; ++c) {
      for (std::size_t j = 0; j < 2; ++j) {
        CHECK(b.boxes[c].low[j] <= a.boxes[c].low[j]);
        CHECK(b.boxes[c].high[j] >= a.boxes[c].high[j]);
      }
    }
    CHECK(fit_applicability(s.train, noisy).boxes[0].low == b.boxes[0].low);
  }
  SUBCASE("the augment hook sees every class") {
    const Dataset ds = make({{0, 0}, {1, 1}, {5, 5}, {6, 6}}, {0, 0, 1, 1});
    ApplicabilityOptions o;
    o.augment = [](const Matrix& m, int c) {
      Matrix out = m;
      out.append_row(std::vector<double>{-10.0 * (c + 1), 0.0});
      return out;
    };
    const auto m = fit_applicability(ds, o);
    CHECK(m.boxes[0].low[0] == -10.0);
    CHECK(m.boxes[1].low[0] == -20.0);
  }
  SUBCASE("preconditions") {
    const Dataset ds = make({{0, 0}, {1, 1}}, {0, 0});
    CHECK_THROWS_AS(fit_applicability(ds, {}), InvalidArgument);
    ApplicabilityOptions o;
    o.q = 0.0;
    CHECK_THROWS_AS(fit_applicability(make({{0}, {1}}, {0, 1}), o), InvalidArgument);
  }
}

TEST_CASE("reliability") {
  SUBCASE("single-neighbour distance") {
    const Dataset train = make({{0}, {10}, {100}, {101}}, {0, 0, 1, 1});
    const Dataset val = make({{0.5}, {100.5}}, {0, 1});
    const auto m = fit_reliability(train, val, 1, 1.0, Metric::kL2);
    CHECK(m.thresholds[0] == 0.5);
    CHECK(m.thresholds[1] == 0.5);
    CHECK(m.mean_distance(std::vector<double>{0.25}, 0) == 0.25);
    CHECK(check_reliability(m, std::vector<double>{0.25}, 0));
    CHECK_FALSE(check_reliability(m, std::vector<double>{0.75 + 10.0 / 2.0}, 0));
    CHECK(check_reliability(m, std::vector<double>{10}, 0));
  }
  SUBCASE("threshold is the pool quantile and the comparison is strict") {
    const auto t = reliability_thresholds({{0.1, 0.2, 0.3}}, 1.0);
    CHECK(t[0] == 0.3);
    const Split s = blob_split(6);
    const auto m = fit_reliability(s.train, s.validation, 5, 1.0, Metric::kL2);
    const auto pools = reliability_pools(m, s.validation);
    for (std::size_t i = 0; i < s.validation.size(); ++i) {
      CHECK(check_reliability(m, s.validation.samples.row(i), s.validation.labels[i]));
    }
    for (int c = 0; c < 3; ++c) {
      CHECK(m.thresholds[c] == *std::max_element(pools[c].begin(), pools[c].end()));
    }
  }
  SUBCASE("self matches are skipped during calibration") {
    const Dataset train = make({{0}, {1}, {3}, {10}, {11}, {13}}, {0, 0, 0, 1, 1, 1});
    const Dataset val = make({{0}, {10}}, {0, 1});
    const auto m = fit_reliability(train, val, 1, 1.0, Metric::kL2);
    CHECK(m.thresholds[0] == 1.0);
    CHECK(m.thresholds[1] == 1.0);
  }
  SUBCASE("thresholds grow with q and the reject set shrinks") {
    const Split s = blob_split(7);
    const auto m = fit_reliability(s.train, s.validation, 5, 1.0, Metric::kL2);
    const auto pools = reliability_pools(m, s.validation);
    std::vector<double> prev(3, -1.0);
    for (double q : {0.5, 0.8, 0.9, 0.99, 1.0}) {
      const auto t = reliability_thresholds(pools, q);
      for (int c = 0; c < 3; ++c) CHECK(t[c] >= prev[c]);
      prev = t;
    }
  }
  SUBCASE("L2 thresholds scale with the data") {
    const Split s = blob_split(8);
    const auto scale = [](Dataset ds, double f) {
      for (std::size_t i = 0; i < ds.size(); ++i) {
        for (double& v : ds.samples.row(i)) v *= f;
      }
      return ds;
    };
    const auto a = fit_reliability(s.train, s.validation, 5, 0.9, Metric::kL2);
    const auto b = fit_reliability(scale(s.train, 4.0), scale(s.validation, 4.0), 5, 0.9, Metric::kL2);
    for (int c = 0; c < 3; ++c) CHECK(b.thresholds[c] == doctest::Approx(4.0 * a.thresholds[c]));
    const Dataset test = scale(s.test, 1.0);
    const Dataset test4 = scale(s.test, 4.0);
    for (std::size_t i = 0; i < test.size(); ++i) {
      CHECK(check_reliability(a, test.samples.row(i), test.labels[i]) ==
            check_reliability(b, test4.samples.row(i), test4.labels[i]));
    }
  }
  SUBCASE("class too small") {
    const Dataset train = make({{0}, {1}, {5}, {6}}, {0, 0, 1, 1});
    CHECK_THROWS_AS(fit_reliability(train, train, 2, 1.0, Metric::kL2), InvalidArgument);
  }
}

TEST_CASE("decidability") {
  SUBCASE("neighbour label fractions") {
    const Dataset train = make({{0}, {0.1}, {0.2}, {5}, {5.1}, {5.2}}, {0, 0, 1, 1, 1, 0});
    const Dataset val = make({{0.05}, {5.05}}, {0, 1});
    auto m = fit_decidability(train, val, 3, 1.0, Metric::kL2);
    CHECK(m.class_probability(std::vector<double>{0.0}, 0) == doctest::Approx(2.0 / 3.0));
    m.thresholds = {0.5, 0.5};
    CHECK(check_decidability(m, std::vector<double>{0.0}, 0));
    CHECK_FALSE(check_decidability(m, std::vector<double>{0.0}, 1));
    m.thresholds = {0.0, 0.0};
    CHECK(check_decidability(m, std::vector<double>{0.0}, 1));
  }
  SUBCASE("lower-tail threshold") {
    CHECK(decidability_thresholds({{0.6, 0.8, 1.0}}, 1.0)[0] == 0.6);
    CHECK(decidability_thresholds({{0.6, 0.8, 1.0}}, 0.5)[0] == 0.8);
  }
  SUBCASE("homogeneous neighbourhoods give a threshold of one that still accepts") {
    const Dataset ds = gen_blobs(30, {{0, 0}, {100, 100}}, 1.0, 2);
    const Split s = stratified_split(ds, {0.6, 0.2, 1});
    const auto m = fit_decidability(s.train, s.validation, 5, 1.0, Metric::kL2);
    CHECK(m.thresholds == std::vector<double>{1.0, 1.0});
    for (std::size_t i = 0; i < s.test.size(); ++i) {
      CHECK(check_decidability(m, s.test.samples.row(i), s.test.labels[i]));
    }
  }
  SUBCASE("k must be below the training size") {
    const Dataset train = make({{0}, {1}, {5}, {6}}, {0, 0, 1, 1});
    CHECK_THROWS_AS(fit_decidability(train, train, 4, 1.0, Metric::kL2), InvalidArgument);
  }
}

TEST_CASE("ball-tree and brute-force calibrations agree exactly") {
  const Split s = blob_split(9);
  for (Metric metric : {Metric::kL1, Metric::kL2, Metric::kCosine}) {
    for (double q : {0.9, 1.0}) {
      const auto a = fit_reliability(s.train, s.validation, 7, q, metric);
      const auto b = fit_reliability(s.train, s.validation, 7, q, metric, oracle::brute_builder());
      CHECK(a.thresholds == b.thresholds);
      const auto c = fit_decidability(s.train, s.validation, 20, q, metric);
      const auto d = fit_decidability(s.train, s.validation, 20, q, metric, oracle::brute_builder());
      CHECK(c.thresholds == d.thresholds);
    }
  }
}

TEST_CASE("chained detection") {
  const Split s = blob_split(10);
  DetectorOptions o;
  o.k3 = 30;
  BaardDetector det = BaardDetector::fit(s.train, s.validation, o);

  SUBCASE("each stage accepts its own calibration pool at q = 1") {
    for (std::size_t i = 0; i < s.train.size(); ++i) {
      CHECK_FALSE(det.stage_rejects(Stage::kApplicability, s.train.samples.row(i), s.train.labels[i]));
    }
    for (std::size_t i = 0; i < s.validation.size(); ++i) {
      const auto x = s.validation.samples.row(i);
      CHECK_FALSE(det.stage_rejects(Stage::kReliability, x, s.validation.labels[i]));
      CHECK_FALSE(det.stage_rejects(Stage::kDecidability, x, s.validation.labels[i]));
    }
  }
  SUBCASE("stage 1 short-circuits the rest") {
    det.reset_counters();
    const Verdict v = det.detect(std::vector<double>{100, 100}, 0);
    CHECK(v == Verdict{true, 1});
    CHECK(det.query_count(Stage::kApplicability) == 1);
    CHECK(det.query_count(Stage::kReliability) == 0);
    CHECK(det.query_count(Stage::kDecidability) == 0);
    const Verdict ok = det.detect(s.train.samples.row(0), s.train.labels[0]);
    CHECK(ok == Verdict{false, 0});
    CHECK(det.query_count(Stage::kDecidability) == 1);
  }
  SUBCASE("a point at another class's centre is rejected by stage 1") {
    const Dataset far = gen_blobs(50, {{0, 0}, {10, 10}}, 0.5, 3);
    const Split fs = stratified_split(far, {0.6, 0.2, 3});
    const auto d = BaardDetector::fit(fs.train, fs.validation, o);
    CHECK(d.detect(std::vector<double>{10, 10}, 0) == Verdict{true, 1});
  }
  SUBCASE("verdict is the OR of the enabled stages") {
    Rng rng(2);
    for (int i = 0; i < 500; ++i) {
      const std::vector<double> x = {rng.uniform(-3, 6), rng.uniform(-3, 6)};
      const int y = static_cast<int>(rng.index(3));
      bool any = false;
      int first = 0;
      for (Stage st : {Stage::kApplicability, Stage::kReliability, Stage::kDecidability}) {
        if (det.stage_rejects(st, x, y) && !any) {
          any = true;
          first = static_cast<int>(st);
        }
      }
      CHECK(det.detect(x, y) == Verdict{any, first});
    }
  }
  SUBCASE("disabled stages are skipped") {
    det.set_enabled(Stage::kApplicability, false);
    det.set_enabled(Stage::kReliability, false);
    det.set_enabled(Stage::kDecidability, false);
    CHECK_FALSE(det.detect(std::vector<double>{100, 100}, 0).rejected);
  }
  SUBCASE("an enabled but unfitted stage is an error") {
    DetectorOptions partial = o;
    partial.enabled = {true, false, true};
    BaardDetector d = BaardDetector::fit(s.train, s.validation, partial);
    CHECK_FALSE(d.reliability().has_value());
    d.set_enabled(Stage::kReliability, true);
    CHECK_THROWS_AS(d.detect(s.train.samples.row(0), s.train.labels[0]), Error);
  }
}

TEST_CASE("detector serialization") {
  const Split s = blob_split(11);
  DetectorOptions o;
  o.k3 = 30;
  o.q2 = 0.9;
  o.metric = Metric::kL1;
  o.enabled = {true, true, false};
  const BaardDetector det = BaardDetector::fit(s.train, s.validation, o);
  const auto doc = nlohmann::json::parse(detector_to_json(det).dump());
  const LoadedDetector back = detector_from_json(doc);
  CHECK(back.hash_matches());
  CHECK(back.detector.reliability()->thresholds == det.reliability()->thresholds);
  CHECK_FALSE(back.detector.enabled(Stage::kDecidability));
  CHECK(back.detector.options().metric == Metric::kL1);
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    const std::vector<double> x = {rng.uniform(-3, 6), rng.uniform(-3, 6)};
    const int y = static_cast<int>(rng.index(3));
    CHECK(back.detector.detect(x, y) == det.detect(x, y));
  }
  auto tampered = doc;
  tampered["train"]["samples"][0][0] = 123.0;
  CHECK_FALSE(detector_from_json(tampered).hash_matches());
}

TEST_CASE("region grid") {
  const Dataset xor_data = gen_xor(100, 0.3, 1);
  const Split s = stratified_split(xor_data, {0.6, 0.2, 2});
  MlpTrainOptions mo;
  mo.learning_rate = 0.1;
  const Mlp mlp = mlp_fit(s.train, {2, 16, 2}, mo);
  DetectorOptions o;
  o.k3 = 30;
  o.q1 = 0.95;
  o.q2 = 0.95;
  o.q3 = 0.95;
  const BaardDetector det = BaardDetector::fit(s.train, s.validation, o);

  const RegionGrid g = reject_region_grid(det, mlp, {}, 40);
  REQUIRE(g.rejects.size() == 2);
  for (std::size_t c = 0; c < 2; ++c) {
    std::array<std::size_t, 4> counts{};
    for (std::size_t i = 0; i < 40 * 40; ++i) {
      const bool any = g.rejects[c][0][i] || g.rejects[c][1][i] || g.rejects[c][2][i];
      CHECK(static_cast<bool>(g.rejects[c][3][i]) == any);
      for (std::size_t st = 0; st < 4; ++st) counts[st] += g.rejects[c][st][i];
    }
    for (std::size_t st = 0; st < 3; ++st) CHECK(counts[3] >= counts[st]);
  }
  const auto center = g.cell_center(0, 0);
  CHECK(center[0] == doctest::Approx(-2.0 + 2.0 / 40.0));

  const RegionGrid one = reject_region_grid(det, mlp, {-1, 3, 0, 2}, 1);
  CHECK(one.cell_center(0, 0) == std::array<double, 2>{1.0, 1.0});
  CHECK(one.predicted[0] == mlp.predict(std::vector<double>{1.0, 1.0}));

  const Dataset three = gen_blobs(30, {{0, 0, 0}, {1, 1, 1}}, 0.2, 1);
  const Split s3 = stratified_split(three, {0.6, 0.2, 1});
  DetectorOptions o3;
  o3.k3 = 10;
  const BaardDetector d3 = BaardDetector::fit(s3.train, s3.validation, o3);
  const CartTree tree = cart_fit(s3.train, {});
  CHECK_THROWS_AS(reject_region_grid(d3, tree, {}, 10), InvalidArgument);
}
