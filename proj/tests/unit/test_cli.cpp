#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cli.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out;
  std::ostringstream err;
  const int code = baard::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("baard_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string quickstart() {
  return (fs::path(BAARD_SOURCE_DIR) / "configs" / "xor_quickstart.json").string();
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

std::string read(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) out.push_back(line);
  return out;
}

}  // namespace

TEST_CASE("usage errors exit with 2") {
  CHECK(run({}).code == baard::cli::kValidationError);
  CHECK(run({"frobnicate"}).code == baard::cli::kValidationError);
  CHECK(run({"run"}).code == baard::cli::kValidationError);
  CHECK(run({"run", "--config", quickstart(), "--workers", "0"}).code ==
        baard::cli::kValidationError);
  CHECK(run({"--help"}).code == baard::cli::kOk);
}

TEST_CASE("run") {
  const fs::path dir = fresh_dir("run");

  SUBCASE("quickstart writes the report and versions the output directory") {
    const fs::path out = dir / "out";
    const Result r = run({"run", "--config", quickstart(), "--out", out.string(), "--seed", "0",
                          "--workers", "4", "--quiet"});
    REQUIRE(r.code == baard::cli::kOk);
    CHECK(r.err.empty());
    CHECK(lines_of(r.out).at(0) == out.string());
    CHECK(fs::exists(out / "report.json"));
    CHECK(fs::exists(out / "report.csv"));
    CHECK(fs::exists(out / "grid_predicted.csv"));
    CHECK(fs::exists(out / "grid_label0_chained.csv"));
    const json doc = json::parse(read(out / "report.json"));
    CHECK(doc["config"]["seeds"] == json::array({0}));

    const Result again = run({"run", "--config", quickstart(), "--out", out.string(), "--seed",
                              "0", "--quiet"});
    REQUIRE(again.code == baard::cli::kOk);
    CHECK(lines_of(again.out).at(0) == out.string() + "-1");
    CHECK(read(out / "report.csv") == read(dir / "out-1" / "report.csv"));
  }
  SUBCASE("out of range quantile names the key") {
    json cfg = json::parse(read(quickstart()));
    cfg["detector"]["q2"] = 1.5;
    write(dir / "bad.json", cfg.dump());
    const Result r = run({"run", "--config", (dir / "bad.json").string(), "--out",
                          (dir / "o").string()});
    CHECK(r.code == baard::cli::kValidationError);
    CHECK(r.err.find("detector.q2") != std::string::npos);
    CHECK_FALSE(fs::exists(dir / "o"));
  }
  SUBCASE("missing dataset is a runtime error naming the path") {
    json cfg = json::parse(read(quickstart()));
    cfg["dataset"] = {{"source", "csv"}, {"path", "missing.csv"}};
    write(dir / "nodata.json", cfg.dump());
    const Result r = run({"run", "--config", (dir / "nodata.json").string(), "--out",
                          (dir / "o").string()});
    CHECK(r.code == baard::cli::kRuntimeError);
    CHECK(r.err.find("missing.csv") != std::string::npos);
  }
  SUBCASE("missing config file") {
    const Result r = run({"run", "--config", (dir / "none.json").string()});
    CHECK(r.code == baard::cli::kRuntimeError);
  }
  fs::remove_all(dir);
}

TEST_CASE("train, attack, fit-detector, detect, grid") {
  const fs::path dir = fresh_dir("pipeline");
  const Result tr = run({"train", "--config", quickstart(), "--out", dir.string(), "--quiet"});
  REQUIRE(tr.code == baard::cli::kOk);
  CHECK(tr.out.rfind("test_accuracy,", 0) == 0);
  for (const char* f : {"classifier.json", "train.csv", "validation.csv", "test.csv", "split.json"}) {
    CHECK(fs::exists(dir / f));
  }

  const Result fit = run({"fit-detector", "--config", quickstart(), "--train",
                          (dir / "train.csv").string(), "--validation",
                          (dir / "validation.csv").string(), "--meta",
                          (dir / "split.json").string(), "--out",
                          (dir / "detector.json").string(), "--quiet"});
  REQUIRE(fit.code == baard::cli::kOk);
  REQUIRE(fs::exists(dir / "detector.json"));

  const auto detect = [&](const std::string& input, bool raw = false) {
    std::vector<std::string> args = {"detect", "--detector", (dir / "detector.json").string(),
                                     "--classifier", (dir / "classifier.json").string(),
                                     "--input", input};
    if (raw) args.push_back("--raw");
    return run(args);
  };

  SUBCASE("training points pass stage 1, far points fail it") {
    const auto train_lines = lines_of(read(dir / "train.csv"));
    std::string features = "x0,x1\n";
    for (std::size_t i = 1; i <= 20; ++i) {
      const auto& l = train_lines.at(i);
      features += l.substr(0, l.rfind(',')) + "\n";
    }
    features += "5,5\n-4,3\n";
    write(dir / "in.csv", features);
    const Result r = detect((dir / "in.csv").string());
    REQUIRE(r.code == baard::cli::kOk);
    const auto lines = lines_of(r.out);
    REQUIRE(lines.size() == 24);
    CHECK(lines[0] == "index,predicted,verdict,stage");
    std::size_t accepted = 0;
    for (std::size_t i = 1; i <= 20; ++i) {
      CHECK(lines[i].substr(lines[i].rfind(',')) != ",1");
      accepted += lines[i].find(",accept,") != std::string::npos;
    }
    CHECK(accepted >= 18);
    CHECK(lines[21].find(",reject,1") != std::string::npos);
    CHECK(lines[22].find(",reject,1") != std::string::npos);
    CHECK(lines[23].rfind("# rows=22 ", 0) == 0);
  }
  SUBCASE("raw inputs are normalized with the stored ranges") {
    write(dir / "raw.csv", "0.9,0.95\n");
    const Result normalized = detect((dir / "raw.csv").string());
    const Result raw = detect((dir / "raw.csv").string(), true);
    REQUIRE(raw.code == baard::cli::kOk);
    CHECK(normalized.out != raw.out);
  }
  SUBCASE("empty input") {
    write(dir / "empty.csv", "");
    const Result r = detect((dir / "empty.csv").string());
    CHECK(r.code == baard::cli::kOk);
    CHECK(r.out.find("# rows=0 ") != std::string::npos);
  }
  SUBCASE("bad rows and widths") {
    write(dir / "bad.csv", "0.1,0.2\n0.1,abc\n");
    CHECK(detect((dir / "bad.csv").string()).code == baard::cli::kValidationError);
    write(dir / "wide.csv", "0.1,0.2,0.3\n");
    CHECK(detect((dir / "wide.csv").string()).code == baard::cli::kValidationError);
    CHECK(detect((dir / "nothere.csv").string()).code == baard::cli::kRuntimeError);
  }
  SUBCASE("tampered training data triggers a warning") {
    json doc = json::parse(read(dir / "detector.json"));
    doc["train"]["samples"][0][0] = doc["train"]["samples"][0][0].get<double>() + 1e-3;
    write(dir / "detector.json", doc.dump());
    write(dir / "one.csv", "0.5,0.5\n");
    const Result r = detect((dir / "one.csv").string());
    CHECK(r.code == baard::cli::kOk);
    CHECK(r.err.find("WARNING") != std::string::npos);
  }
  SUBCASE("attack") {
    const Result r = run({"attack", "--classifier", (dir / "classifier.json").string(), "--data",
                          (dir / "test.csv").string(), "--attack", "fgsm", "--epsilon", "0.1",
                          "0.3", "--out", (dir / "adv").string(), "--quiet"});
    REQUIRE(r.code == baard::cli::kOk);
    const auto lines = lines_of(r.out);
    REQUIRE(lines.size() == 2);
    CHECK(fs::exists(lines[0].substr(0, lines[0].find(','))));
    const auto rows = lines_of(read(lines[1].substr(0, lines[1].find(','))));
    CHECK(rows.at(0).rfind("index,label,success,perturbation_norm,x0", 0) == 0);
    CHECK(rows.size() == lines_of(read(dir / "test.csv")).size());

    const Result bad = run({"attack", "--classifier", (dir / "classifier.json").string(),
                            "--data", (dir / "test.csv").string(), "--attack", "tree",
                            "--out", (dir / "adv").string()});
    CHECK(bad.code == baard::cli::kValidationError);
  }
  SUBCASE("grid") {
    const Result r = run({"grid", "--detector", (dir / "detector.json").string(), "--classifier",
                          (dir / "classifier.json").string(), "--resolution", "8", "--bounds",
                          "0", "1", "0", "1", "--out", (dir / "grid").string()});
    REQUIRE(r.code == baard::cli::kOk);
    const auto raster = lines_of(read(dir / "grid" / "grid_label1_stage2.csv"));
    CHECK(raster.size() == 8);
  }
  fs::remove_all(dir);
}
