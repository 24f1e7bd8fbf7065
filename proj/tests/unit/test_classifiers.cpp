#include <doctest.h>

#include <cmath>
#include <numeric>

#include "baard/classifiers.hpp"
#include "baard/error.hpp"
#include "baard/random.hpp"
#include "support/oracles.hpp"

using namespace baard;

namespace {

double accuracy(const Classifier& c, const Dataset& ds) {
  std::size_t ok = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) ok += c.predict(ds.samples.row(i)) == ds.labels[i];
  return static_cast<double>(ok) / static_cast<double>(ds.size());
}

void check_distribution(const std::vector<double>& p) {
  double sum = 0.0;
  for (double v : p) {
    CHECK(v >= 0.0);
    sum += v;
  }
  CHECK(std::abs(sum - 1.0) <= 1e-9);
}

Dataset one_d(const std::vector<double>& xs, const std::vector<int>& ys) {
  Dataset ds;
  for (double x : xs) ds.samples.append_row(std::vector<double>{x});
  ds.labels = ys;
  ds.class_count = 2;
  ds.label_names = {"0", "1"};
  return ds;
}

}  // namespace

TEST_CASE("argmax ties go to the lowest id") {
  CHECK(argmax(std::vector<double>{0.2, 0.4, 0.4}) == 1);
  CHECK(argmax(std::vector<double>{0.5, 0.5}) == 0);
}

TEST_CASE("softmax is stable and normalized") {
  const auto p = softmax(std::vector<double>{1000.0, 1000.0, -1000.0});
  CHECK(p[0] == doctest::Approx(0.5));
  CHECK(p[2] == doctest::Approx(0.0));
  check_distribution(p);
}

TEST_CASE("MLP gradients match finite differences") {
  Rng rng(3);
  for (int net = 0; net < 10; ++net) {
    const std::size_t d = 2 + static_cast<std::size_t>(net % 4);
    const std::size_t c = 2 + static_cast<std::size_t>(net % 3);
    std::vector<std::size_t> sizes = {d};
    for (int h = 0; h < 1 + net % 3; ++h) sizes.push_back(4 + static_cast<std::size_t>(h));
    sizes.push_back(c);
    const Mlp model(sizes, static_cast<std::uint64_t>(net));
    std::vector<double> x(d);
    for (double& v : x) v = rng.uniform(-1, 1);
    const int y = static_cast<int>(rng.index(c));
    const auto exact = model.input_gradient(x, y);
    const auto approx = oracle::numeric_gradient(model, x, y);
    CHECK(oracle::max_relative_error(exact, approx) <= 1e-4);
  }
}

TEST_CASE("affine softmax gradient matches the closed form") {
  const std::vector<double> w = {1.0, -2.0, 0.5, 3.0};  // 2 x 2
  const Mlp model = oracle::affine_model(w, {0.1, -0.2}, 2);
  const std::vector<double> x = {0.3, 0.7};
  const auto z = model.logits(x);
  const auto p = softmax(z);
  for (int y = 0; y < 2; ++y) {
    const auto g = model.input_gradient(x, y);
    for (std::size_t j = 0; j < 2; ++j) {
      double want = 0.0;
      for (std::size_t k = 0; k < 2; ++k) {
        want += (p[k] - (static_cast<int>(k) == y ? 1.0 : 0.0)) * w[k * 2 + j];
      }
      CHECK(g[j] == doctest::Approx(want).epsilon(1e-12));
    }
  }
  const Matrix jac = model.logit_jacobian(x);
  for (std::size_t k = 0; k < 2; ++k) {
    for (std::size_t j = 0; j < 2; ++j) CHECK(jac(k, j) == w[k * 2 + j]);
  }
}

TEST_CASE("saturated prediction has a vanishing gradient") {
  const Mlp model = oracle::affine_model({100.0, 0.0, -100.0, 0.0}, {0.0, 0.0}, 2);
  const auto g = model.input_gradient(std::vector<double>{1.0, 0.0}, 0);
  CHECK(std::abs(g[0]) < 1e-12);
  CHECK(std::abs(g[1]) < 1e-12);
}

TEST_CASE("MLP training") {
  SUBCASE("separable blobs") {
    const Dataset ds = gen_blobs(100, {{0.2, 0.2}, {0.8, 0.8}}, 0.05, 1);
    MlpTrainOptions o;
    o.seed = 2;
    const Mlp m = mlp_fit(ds, {2, 8, 2}, o);
    CHECK(accuracy(m, ds) >= 0.99);
    const auto& h = m.loss_history();
    REQUIRE(h.size() == 200);
    std::size_t down = 0;
    for (std::size_t i = 1; i < h.size(); ++i) down += h[i] <= h[i - 1];
    CHECK(static_cast<double>(down) >= 0.9 * static_cast<double>(h.size() - 1));
  }
  SUBCASE("XOR with one hidden layer of 16") {
    const Dataset ds = minmax_normalize(gen_xor(250, 0.3, 7));
    MlpTrainOptions o;
    o.learning_rate = 0.1;
    o.epochs = 200;
    o.seed = 1;
    const Mlp m = mlp_fit(ds, {2, 16, 2}, o);
    CHECK(accuracy(m, ds) >= 0.95);
  }
  SUBCASE("zero epochs keeps the initialization") {
    const Dataset ds = gen_blobs(10, {{0, 0}, {1, 1}}, 0.1, 1);
    MlpTrainOptions o;
    o.epochs = 0;
    o.seed = 9;
    const Mlp m = mlp_fit(ds, {2, 3, 2}, o);
    const Mlp init({2, 3, 2}, 9);
    CHECK(m.layers()[0].weights == init.layers()[0].weights);
    CHECK(m.layers()[1].bias == init.layers()[1].bias);
  }
  SUBCASE("training is deterministic") {
    const Dataset ds = gen_blobs(30, {{0, 0}, {1, 1}}, 0.3, 1);
    MlpTrainOptions o;
    o.epochs = 20;
    o.seed = 4;
    CHECK(mlp_fit(ds, {2, 5, 2}, o).layers()[0].weights ==
          mlp_fit(ds, {2, 5, 2}, o).layers()[0].weights);
  }
  SUBCASE("shape errors") {
    const Dataset ds = gen_blobs(10, {{0, 0}, {1, 1}}, 0.1, 1);
    CHECK_THROWS_AS(mlp_fit(ds, {3, 4, 2}, {}), InvalidArgument);
    CHECK_THROWS_AS(mlp_fit(ds, {2, 4, 3}, {}), InvalidArgument);
    MlpTrainOptions bad;
    bad.learning_rate = 0.0;
    CHECK_THROWS_AS(mlp_fit(ds, {2, 4, 2}, bad), InvalidArgument);
  }
  SUBCASE("divergence names the epoch") {
    const Dataset ds = gen_blobs(20, {{0, 0}, {1e150, 1e150}}, 1.0, 1);
    MlpTrainOptions o;
    o.learning_rate = 1e10;
    o.epochs = 5;
    try {
      mlp_fit(ds, {2, 4, 2}, o);
      FAIL("expected divergence");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("epoch") != std::string::npos);
    }
  }
}

TEST_CASE("CART") {
  SUBCASE("single optimal split") {
    const Dataset ds = one_d({0.0, 0.1, 0.2, 0.3, 0.4, 0.6, 0.7, 0.8, 0.9, 1.0},
                             {0, 0, 0, 0, 0, 1, 1, 1, 1, 1});
    const CartTree t = cart_fit(ds, {});
    CHECK(t.depth() == 1);
    CHECK(t.nodes()[0].threshold > 0.4);
    CHECK(t.nodes()[0].threshold < 0.6);
    CHECK(accuracy(t, ds) == 1.0);
  }
  SUBCASE("pure data gives a leaf") {
    const Dataset ds = one_d({0.0, 0.5, 1.0}, {1, 1, 1});
    const CartTree t = cart_fit(ds, {});
    CHECK(t.nodes().size() == 1);
    CHECK(t.decision_path(std::vector<double>{0.3}).empty());
    CHECK(t.predict(std::vector<double>{7.0}) == 1);
  }
  SUBCASE("decision path of a depth-1 tree") {
    CartNode root{0, 0.5, 1, 2, -1, {1, 1}};
    CartNode left{-1, 0, -1, -1, 0, {1, 0}};
    CartNode right{-1, 0, -1, -1, 0, {0, 1}};
    const CartTree t(1, 2, {root, left, right});
    const auto path = t.decision_path(std::vector<double>{0.4});
    REQUIRE(path.size() == 1);
    CHECK(path[0].went_left);
    CHECK(path[0].feature == 0);
    CHECK(t.leaf_of(std::vector<double>{0.4}) == 1);
    CHECK(t.predict(std::vector<double>{0.5}) == 0);
    CHECK(t.predict(std::vector<double>{0.50001}) == 1);
  }
  SUBCASE("max_depth is respected and splits reduce impurity") {
    const Dataset ds = gen_xor(50, 0.4, 3);
    CartOptions o;
    o.max_depth = 3;
    const CartTree t = cart_fit(ds, o);
    CHECK(t.depth() <= 3);
    for (const auto& n : t.nodes()) {
      if (n.is_leaf()) continue;
      const auto gini = [](const std::vector<double>& c) {
        const double tot = std::accumulate(c.begin(), c.end(), 0.0);
        double s = 1.0;
        for (double v : c) s -= (v / tot) * (v / tot);
        return s * tot;
      };
      const auto& l = t.nodes()[static_cast<std::size_t>(n.left)];
      const auto& r = t.nodes()[static_cast<std::size_t>(n.right)];
      CHECK(gini(l.class_counts) + gini(r.class_counts) < gini(n.class_counts));
    }
  }
  SUBCASE("off-path features do not change the prediction") {
    const Dataset ds = oracle::uniform_points(300, 5, 8);
    CartOptions o;
    o.max_depth = 4;
    const CartTree t = cart_fit(ds, o);
    Rng rng(1);
    for (std::size_t i = 0; i < 50; ++i) {
      std::vector<double> x(ds.samples.row(i).begin(), ds.samples.row(i).end());
      const int p = t.predict(x);
      std::vector<bool> used(5, false);
      for (const auto& s : t.decision_path(x)) used[static_cast<std::size_t>(s.feature)] = true;
      for (std::size_t j = 0; j < 5; ++j) {
        if (used[j]) continue;
        x[j] = rng.uniform(-10, 10);
      }
      CHECK(t.predict(x) == p);
    }
  }
  SUBCASE("path replay reproduces the prediction") {
    const Dataset ds = gen_xor(40, 0.5, 5);
    const CartTree t = cart_fit(ds, {});
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const auto x = ds.samples.row(i);
      int node = 0;
      for (const auto& s : t.decision_path(x)) {
        CHECK(s.went_left == (x[static_cast<std::size_t>(s.feature)] <= s.threshold));
        const auto& n = t.nodes()[static_cast<std::size_t>(node)];
        node = s.went_left ? n.left : n.right;
      }
      CHECK(node == t.leaf_of(x));
      CHECK(t.leaf_class(node) == t.predict(x));
    }
  }
}

TEST_CASE("k-NN") {
  const Dataset ds = one_d({0.0, 1.0, 2.0, 10.0}, {0, 0, 1, 1});
  CHECK(knn_predict(ds, std::vector<double>{0.1}, 1, Metric::kL2) == std::vector<double>{1, 0});
  const auto three = knn_predict(ds, std::vector<double>{0.9}, 3, Metric::kL2);
  CHECK(three[0] == doctest::Approx(2.0 / 3.0));
  CHECK(three[1] == doctest::Approx(1.0 / 3.0));
  const auto all = knn_predict(ds, std::vector<double>{5.0}, 4, Metric::kL2);
  CHECK(all == std::vector<double>{0.5, 0.5});
  CHECK_THROWS_AS(knn_predict(ds, std::vector<double>{0.0}, 5, Metric::kL2), InvalidArgument);
  CHECK_THROWS_AS(KnnClassifier(ds, 0, Metric::kL2), InvalidArgument);

  const Dataset blobs = gen_blobs(50, {{0, 0}, {10, 10}}, 0.5, 4);
  const Split s = stratified_split(blobs, {0.6, 0.2, 1});
  const KnnClassifier knn(s.train, 1, Metric::kL2);
  CHECK(accuracy(knn, s.test) == 1.0);
}

TEST_CASE("probabilities are distributions for every classifier") {
  const Dataset ds = gen_blobs(40, {{0.2, 0.2, 0.2}, {0.8, 0.8, 0.2}, {0.5, 0.1, 0.9}}, 0.1, 2);
  MlpTrainOptions mo;
  mo.epochs = 20;
  const Mlp mlp = mlp_fit(ds, {3, 6, 3}, mo);
  const CartTree tree = cart_fit(ds, {});
  const KnnClassifier knn(ds, 5, Metric::kL1);
  Rng rng(10);
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> x = {rng.uniform(-1, 2), rng.uniform(-1, 2), rng.uniform(-1, 2)};
    for (const Classifier* c : std::initializer_list<const Classifier*>{&mlp, &tree, &knn}) {
      const auto p = c->predict_proba(x);
      REQUIRE(p.size() == 3);
      check_distribution(p);
      CHECK(c->predict(x) == argmax(p));
    }
  }
  CHECK(mlp.supports_gradient());
  CHECK_FALSE(tree.supports_gradient());
  CHECK_FALSE(knn.supports_gradient());
}

TEST_CASE("classifier serialization round-trips") {
  const Dataset ds = gen_blobs(30, {{0, 0}, {1, 1}}, 0.3, 6);
  MlpTrainOptions mo;
  mo.epochs = 10;
  const Mlp mlp = mlp_fit(ds, {2, 4, 2}, mo);
  const CartTree tree = cart_fit(ds, {});
  const KnnClassifier knn(ds, 3, Metric::kCosine);
  for (const Classifier* c : std::initializer_list<const Classifier*>{&mlp, &tree, &knn}) {
    const auto doc = classifier_to_json(*c);
    CHECK(doc.at("format").get<std::string>().rfind("baard." + c->kind() + "/", 0) == 0);
    const auto back = classifier_from_json(nlohmann::json::parse(doc.dump()));
    CHECK(back->kind() == c->kind());
    for (std::size_t i = 0; i < ds.size(); ++i) {
      CHECK(back->predict_proba(ds.samples.row(i)) == c->predict_proba(ds.samples.row(i)));
    }
  }
  nlohmann::json bad = classifier_to_json(mlp);
  bad["format"] = "baard.mlp/99";
  CHECK_THROWS(classifier_from_json(bad));
}
