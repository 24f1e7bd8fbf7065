#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "baard/data.hpp"
#include "baard/error.hpp"

using namespace baard;

TEST_CASE("parse_csv re-encodes labels by first appearance") {
  const Dataset ds = parse_csv("a,b,y\n0,0,neg\n1,1,pos\n2,0,neg\n", std::string("y"), true);
  CHECK(ds.size() == 3);
  CHECK(ds.feature_dim() == 2);
  CHECK(ds.class_count == 2);
  CHECK(ds.labels == std::vector<int>{0, 1, 0});
  CHECK(ds.label_names == std::vector<std::string>{"neg", "pos"});
  CHECK(ds.samples(2, 0) == 2.0);
}

TEST_CASE("parse_csv selects the label column by index and keeps feature order") {
  const Dataset ds = parse_csv("x,1.5,7\ny,2.5,8\n", std::size_t{0}, false);
  CHECK(ds.feature_dim() == 2);
  CHECK(ds.samples(0, 0) == 1.5);
  CHECK(ds.samples(1, 1) == 8.0);
  CHECK(ds.labels == std::vector<int>{0, 1});
}

TEST_CASE("parse_csv handles quoted fields") {
  const Dataset ds = parse_csv("\"f,1\",y\n1,\"a,b\"\n2,c\n", std::string("y"), true);
  CHECK(ds.label_names[0] == "a,b");
  CHECK(ds.size() == 2);
}

TEST_CASE("parse_csv reports non-finite values with their row") {
  std::string text = "a,y\n";
  for (int i = 0; i < 5; ++i) text += std::to_string(i) + ",c" + std::to_string(i % 2) + "\n";
  text += "inf,c0\n";
  try {
    parse_csv(text, std::string("y"), true);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.row() == 7);
    CHECK(e.column() == 1);
    CHECK(std::string(e.what()).find("row 7") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_csv("a,y\nnan,p\n1,q\n", std::string("y"), true), ParseError);
  CHECK_THROWS_AS(parse_csv("a,y\nabc,p\n1,q\n", std::string("y"), true), ParseError);
}

TEST_CASE("parse_csv rejects a single class and unknown label columns") {
  CHECK_THROWS_AS(parse_csv("a,y\n1,p\n2,p\n", std::string("y"), true), InvalidArgument);
  CHECK_THROWS(parse_csv("a,y\n1,p\n2,q\n", std::string("zz"), true));
}

TEST_CASE("load_csv names a missing file") {
  try {
    load_csv("/nonexistent/file.csv", std::string("y"), true);
    FAIL("expected an io error");
  } catch (const IoError& e) {
    CHECK(e.path() == "/nonexistent/file.csv");
  }
}

TEST_CASE("load_csv reads the shipped breast cancer file") {
  const auto path = std::filesystem::path(BAARD_SOURCE_DIR) / "data" / "breast_cancer.csv";
  const Dataset ds = load_csv(path, std::string("diagnosis"), true);
  CHECK(ds.size() == 569);
  CHECK(ds.feature_dim() == 30);
  CHECK(ds.class_count == 2);
}

TEST_CASE("min-max normalization") {
  Dataset ds;
  ds.samples = Matrix(3, 2, std::vector<double>{2, 5, 4, 5, 6, 5});
  ds.labels = {0, 1, 0};
  ds.class_count = 2;
  ds.label_names = {"a", "b"};
  const Dataset n = minmax_normalize(ds);
  CHECK(n.samples(0, 0) == 0.0);
  CHECK(n.samples(1, 0) == 0.5);
  CHECK(n.samples(2, 0) == 1.0);
  for (std::size_t i = 0; i < 3; ++i) CHECK(n.samples(i, 1) == 0.0);
  REQUIRE(n.norm.has_value());
  CHECK((*n.norm)[0] == FeatureRange{2, 6});

  SUBCASE("unseen values are not clipped") {
    std::vector<double> x = {8.0, 5.0};
    normalize_in_place(x, *n.norm);
    CHECK(x[0] == doctest::Approx(1.5));
  }
  SUBCASE("normalizing twice is rejected") {
    CHECK_THROWS_AS(minmax_normalize(n), InvalidArgument);
  }
  SUBCASE("denormalize round-trips") {
    const Dataset back = denormalize(n);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(std::abs(back.samples(i, 0) - ds.samples(i, 0)) <= 1e-12 * std::abs(ds.samples(i, 0)));
    }
  }
}

TEST_CASE("stratified split proportions and partition") {
  const Dataset ds = gen_blobs(100, {{0, 0}, {5, 5}}, 1.0, 3);
  const SplitIndices idx = stratified_split_indices(ds, {0.6, 0.2, 11});
  CHECK(idx.train.size() == 120);
  CHECK(idx.validation.size() == 40);
  CHECK(idx.test.size() == 40);
  std::set<std::size_t> all;
  for (const auto* part : {&idx.train, &idx.validation, &idx.test}) {
    for (auto i : *part) CHECK(all.insert(i).second);
  }
  CHECK(all.size() == ds.size());

  const Split s = stratified_split(ds, {0.6, 0.2, 11});
  CHECK(s.train.class_counts() == std::vector<std::size_t>{60, 60});
  CHECK(s.validation.class_counts() == std::vector<std::size_t>{20, 20});
  CHECK(s.test.class_counts() == std::vector<std::size_t>{20, 20});

  const SplitIndices again = stratified_split_indices(ds, {0.6, 0.2, 11});
  CHECK(again.train == idx.train);
  CHECK(again.test == idx.test);
  const SplitIndices other = stratified_split_indices(ds, {0.6, 0.2, 12});
  CHECK(other.train != idx.train);
}

TEST_CASE("stratified split rejects tiny classes and bad fractions") {
  Dataset ds = parse_csv("a,y\n1,p\n2,p\n3,p\n4,q\n5,q\n", std::string("y"), true);
  CHECK_THROWS_AS(stratified_split(ds, {0.6, 0.2, 0}), InvalidArgument);
  const Dataset ok = gen_blobs(10, {{0}, {1}}, 0.1, 0);
  CHECK_THROWS_AS(stratified_split(ok, {0.8, 0.2, 0}), InvalidArgument);
  CHECK_THROWS_AS(stratified_split(ok, {0.0, 0.2, 0}), InvalidArgument);
}

TEST_CASE("small classes keep a sample in every part") {
  const Dataset ds = gen_blobs(3, {{0}, {1}}, 0.1, 0);
  const Split s = stratified_split(ds, {0.6, 0.2, 0});
  CHECK(s.train.class_counts() == std::vector<std::size_t>{1, 1});
  CHECK(s.validation.class_counts() == std::vector<std::size_t>{1, 1});
  CHECK(s.test.class_counts() == std::vector<std::size_t>{1, 1});
}

TEST_CASE("gen_xor") {
  const Dataset exact = gen_xor(2, 0.0, 1);
  CHECK(exact.size() == 8);
  CHECK(exact.class_count == 2);
  for (std::size_t i = 0; i < exact.size(); ++i) {
    const double a = exact.samples(i, 0);
    const double b = exact.samples(i, 1);
    CHECK(std::abs(a) == 1.0);
    CHECK(std::abs(b) == 1.0);
    CHECK(exact.labels[i] == ((a > 0) == (b > 0) ? 0 : 1));
  }
  CHECK(gen_xor(50, 0.3, 4).samples == gen_xor(50, 0.3, 4).samples);
  CHECK(gen_xor(250, 0.3, 4).size() == 1000);
}

TEST_CASE("gen_blobs") {
  const Dataset a = gen_blobs(20, {{0, 0}, {10, 10}, {0, 10}}, 0.5, 9);
  CHECK(a.size() == 60);
  CHECK(a.class_count == 3);
  CHECK(a.class_counts() == std::vector<std::size_t>{20, 20, 20});
  CHECK(a.samples == gen_blobs(20, {{0, 0}, {10, 10}, {0, 10}}, 0.5, 9).samples);
  CHECK_THROWS_AS(gen_blobs(0, {{0}, {1}}, 0.5, 0), InvalidArgument);
  CHECK_THROWS_AS(gen_blobs(5, {{0}}, 0.5, 0), InvalidArgument);
}

TEST_CASE("content_hash tracks samples and labels") {
  Dataset a = gen_blobs(10, {{0, 0}, {1, 1}}, 0.2, 1);
  const auto h = content_hash(a);
  CHECK(h == content_hash(gen_blobs(10, {{0, 0}, {1, 1}}, 0.2, 1)));
  Dataset b = a;
  b.samples(3, 1) += 1e-12;
  CHECK(content_hash(b) != h);
  Dataset c = a;
  c.labels[0] = 1 - c.labels[0];
  CHECK(content_hash(c) != h);
}
