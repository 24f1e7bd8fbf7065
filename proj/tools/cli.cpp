#include "cli.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "baard/classifiers.hpp"
#include "baard/config.hpp"
#include "baard/error.hpp"
#include "baard/experiment.hpp"
#include "baard/random.hpp"

namespace baard::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
  std::string config;
  std::string out;
  std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

void add_common(CLI::App& cmd, Common& c, bool config_required) {
  auto* opt = cmd.add_option("--config", c.config, "experiment config (JSON)");
  if (config_required) opt->required();
  cmd.add_option("--out", c.out, "output location");
  cmd.add_option("--workers", c.workers, "worker threads")->check(CLI::PositiveNumber);
  cmd.add_option("--seed", c.seed, "use this single seed instead of the config's list");
  cmd.add_flag("--quiet", c.quiet, "suppress progress messages");
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path.string(), "cannot open");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path.string(), "cannot write");
  out << text;
}

ExperimentConfig config_with_overrides(const Common& c) {
  ExperimentConfig cfg = load_config(c.config);
  if (c.seed) cfg.seeds = {*c.seed};
  if (!c.out.empty()) cfg.output_dir = c.out;
  return cfg;
}

// Labelled CSV written by `train`: features then a "label" column of class ids.
std::string dataset_csv(const Dataset& ds) {
  std::ostringstream out;
  for (std::size_t j = 0; j < ds.feature_dim(); ++j) out << "x" << j << ",";
  out << "label\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (double v : ds.samples.row(i)) out << format_number(v) << ",";
    out << ds.labels[i] << "\n";
  }
  return out.str();
}

// Reads a CSV from dataset_csv and restores the class ids, which the generic
// loader re-encodes by first appearance.
Dataset load_id_csv(const fs::path& path, int class_count) {
  Dataset ds = load_csv(path, std::string("label"), true);
  for (int& y : ds.labels) {
    const std::string& name = ds.label_names[static_cast<std::size_t>(y)];
    int id = -1;
    const auto [p, ec] = std::from_chars(name.data(), name.data() + name.size(), id);
    if (ec != std::errc() || p != name.data() + name.size() || id < 0 || id >= class_count) {
      throw InvalidArgument(path.string() + ": label '" + name + "' is not a class id below " +
                            std::to_string(class_count));
    }
    y = id;
  }
  ds.class_count = class_count;
  ds.label_names.clear();
  for (int c = 0; c < class_count; ++c) ds.label_names.push_back(std::to_string(c));
  return ds;
}

std::unique_ptr<Classifier> load_classifier(const fs::path& path) {
  try {
    return classifier_from_json(read_json(path));
  } catch (const json::exception& e) {
    throw Error("malformed classifier file " + path.string() + ": " + e.what());
  }
}

LoadedDetector load_detector(const fs::path& path) {
  try {
    return detector_from_json(read_json(path));
  } catch (const json::exception& e) {
    throw Error("malformed detector file " + path.string() + ": " + e.what());
  }
}

// Unlabelled feature rows. A first line that does not parse as numbers is
// taken as a header.
Matrix load_features(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string(), "cannot open input");
  Matrix m;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const auto fields = split_csv_record(line);
    std::vector<double> row;
    bool numeric = true;
    for (std::size_t j = 0; j < fields.size(); ++j) {
      std::string f = fields[j];
      const auto b = f.find_first_not_of(" \t");
      const auto e = f.find_last_not_of(" \t");
      f = b == std::string::npos ? "" : f.substr(b, e - b + 1);
      double v = 0.0;
      const auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec != std::errc() || p != f.data() + f.size() || f.empty() || !std::isfinite(v)) {
        if (m.rows() == 0 && line_no == 1) {
          numeric = false;
          break;
        }
        throw ParseError(line_no, j + 1, "expected a finite number, got '" + f + "'");
      }
      row.push_back(v);
    }
    if (!numeric) continue;
    if (m.rows() > 0 && row.size() != m.cols()) {
      throw ParseError(line_no, row.size(), "expected " + std::to_string(m.cols()) + " fields");
    }
    m.append_row(row);
  }
  return m;
}

void note(const Common& c, std::ostream& err, const std::string& msg) {
  if (!c.quiet) err << msg << "\n";
}

// --------------------------------------------------------------------------

int cmd_run(const Common& c, std::ostream& out, std::ostream& err) {
  ExperimentConfig cfg = config_with_overrides(c);
  const fs::path dir = versioned_output_dir(cfg.output_dir);
  if (dir != cfg.output_dir) note(c, err, cfg.output_dir.string() + " exists, writing to " + dir.string());
  note(c, err, "running " + std::to_string(cfg.seeds.size()) + " seed(s) on " + cfg.dataset.name);
  const ExperimentReport report = run_experiment(cfg, c.workers);
  write_report(report, dir);
  out << dir.string() << "\n";
  return kOk;
}

int cmd_train(const Common& c, std::ostream& out, std::ostream& err) {
  ExperimentConfig cfg = config_with_overrides(c);
  const fs::path dir = c.out.empty() ? cfg.output_dir : fs::path(c.out);
  const std::uint64_t seed = cfg.seeds.front();
  const Dataset full = load_dataset(cfg.dataset);
  const Split split = prepare_split(full, cfg, seed);
  note(c, err, "training " + cfg.classifier.kind + " on " + std::to_string(split.train.size()) + " samples");
  const auto model = train_classifier(cfg.classifier, split.train, stream_seed(seed, 1));
  std::size_t ok = 0;
  for (std::size_t i = 0; i < split.test.size(); ++i) {
    ok += model->predict(split.test.samples.row(i)) == split.test.labels[i];
  }
  const double acc = static_cast<double>(ok) / static_cast<double>(split.test.size());

  write_text(dir / "classifier.json", classifier_to_json(*model).dump() + "\n");
  write_text(dir / "train.csv", dataset_csv(split.train));
  write_text(dir / "validation.csv", dataset_csv(split.validation));
  write_text(dir / "test.csv", dataset_csv(split.test));
  json meta;
  meta["seed"] = seed;
  meta["class_count"] = full.class_count;
  meta["label_names"] = full.label_names;
  if (split.train.norm) {
    json norm = json::array();
    for (const auto& r : *split.train.norm) norm.push_back({r.min, r.max});
    meta["normalization"] = norm;
  } else {
    meta["normalization"] = nullptr;
  }
  meta["test_accuracy"] = acc;
  write_text(dir / "split.json", meta.dump(2) + "\n");
  out << "test_accuracy," << format_number(acc) << "\n";
  return kOk;
}

struct AttackArgs {
  std::string classifier;
  std::string data;
  std::string attack;
  std::vector<double> epsilons;
  std::string norm;
  std::size_t max_iter = 0;
};

int cmd_attack(const Common& c, const AttackArgs& a, std::ostream& out, std::ostream& err) {
  std::vector<AttackSpec> specs;
  std::vector<std::uint64_t> seeds = {0};
  if (!c.config.empty()) {
    const ExperimentConfig cfg = config_with_overrides(c);
    specs = cfg.attacks;
    seeds = cfg.seeds;
  }
  if (c.seed) seeds = {*c.seed};
  if (!a.attack.empty()) {
    AttackSpec s;
    try {
      s.kind = attack_from_string(a.attack);
      if (!a.norm.empty()) s.norm = norm_from_string(a.norm);
    } catch (const InvalidArgument& e) {
      throw ConfigError(a.norm.empty() ? "--attack" : "--attack/--norm", e.what());
    }
    if (s.kind == AttackKind::kDeepFool || s.kind == AttackKind::kBoundary) s.norm = Norm::kL2;
    s.epsilons = is_budgeted(s.kind) ? (a.epsilons.empty() ? s.epsilons : a.epsilons)
                                     : std::vector<double>{0.0};
    if (a.max_iter > 0) s.max_iter = a.max_iter;
    if (s.kind == AttackKind::kFgsm) s.max_iter = 1;
    specs = {s};
  }
  if (specs.empty()) throw ConfigError("attacks", "no attack given (use --attack or a config)");

  const auto model = load_classifier(a.classifier);
  const Dataset data = load_id_csv(a.data, model->class_count());
  if (data.feature_dim() != model->input_dim()) {
    throw InvalidArgument("data has " + std::to_string(data.feature_dim()) +
                          " features, classifier expects " + std::to_string(model->input_dim()));
  }
  const fs::path dir = c.out.empty() ? fs::path("adversarial") : fs::path(c.out);
  std::size_t cell = 0;
  for (const auto& spec : specs) {
    for (double eps : spec.epsilons) {
      const AttackBudget budget = make_budget(spec, eps, stream_seed(stream_seed(seeds.front(), 3), cell++));
      const AdversarialSet adv =
          generate_adversarial(*model, data, spec.kind, budget, data.samples, c.workers);
      std::ostringstream csv;
      csv << "index,label,success,perturbation_norm";
      for (std::size_t j = 0; j < data.feature_dim(); ++j) csv << ",x" << j;
      csv << "\n";
      for (std::size_t i = 0; i < adv.size(); ++i) {
        csv << adv.source_index[i] << "," << adv.true_labels[i] << ","
            << static_cast<int>(adv.success[i]) << "," << format_number(adv.norms[i]);
        for (double v : adv.samples.row(i)) csv << "," << format_number(v);
        csv << "\n";
      }
      std::string name = "adv_" + std::string(to_string(spec.kind)) + "_" +
                         std::string(to_string(spec.norm));
      if (is_budgeted(spec.kind)) name += "_" + format_number(eps);
      const fs::path file = dir / (name + ".csv");
      write_text(file, csv.str());
      note(c, err, file.string() + ": " + std::to_string(adv.success_count()) + "/" +
                       std::to_string(adv.size()) + " successful");
      out << file.string() << "," << adv.success_count() << "," << adv.size() << "\n";
    }
  }
  return kOk;
}

struct FitArgs {
  std::string train;
  std::string validation;
  std::string meta;
};

int cmd_fit_detector(const Common& c, const FitArgs& a, std::ostream& out, std::ostream& err) {
  DetectorOptions opts;
  std::uint64_t seed = 0;
  if (!c.config.empty()) {
    const ExperimentConfig cfg = config_with_overrides(c);
    opts = cfg.detector;
    seed = cfg.seeds.front();
  }
  if (c.seed) seed = *c.seed;
  opts.seed = stream_seed(seed, 2);

  int class_count = 0;
  std::optional<Normalization> norm;
  std::vector<std::string> names;
  if (!a.meta.empty()) {
    const json meta = read_json(a.meta);
    class_count = meta.at("class_count").get<int>();
    names = meta.at("label_names").get<std::vector<std::string>>();
    if (!meta.at("normalization").is_null()) {
      Normalization n;
      for (const auto& r : meta.at("normalization")) n.push_back({r.at(0).get<double>(), r.at(1).get<double>()});
      norm = std::move(n);
    }
  }
  if (class_count == 0) {
    // Without metadata the class count is the largest id seen plus one.
    const Dataset probe = load_csv(a.train, std::string("label"), true);
    for (const auto& n : probe.label_names) class_count = std::max(class_count, std::stoi(n) + 1);
  }
  Dataset train = load_id_csv(a.train, class_count);
  const Dataset validation = load_id_csv(a.validation, class_count);
  train.norm = norm;
  if (!names.empty()) train.label_names = names;

  note(c, err, "fitting detector on " + std::to_string(train.size()) + " training and " +
                   std::to_string(validation.size()) + " validation samples");
  const BaardDetector det = BaardDetector::fit(train, validation, opts);
  const fs::path file = c.out.empty() ? fs::path("detector.json") : fs::path(c.out);
  write_text(file, detector_to_json(det).dump() + "\n");
  out << file.string() << "\n";
  return kOk;
}

struct DetectArgs {
  std::string detector;
  std::string classifier;
  std::string input;
  bool raw = false;
};

int cmd_detect(const Common& c, const DetectArgs& a, std::ostream& out, std::ostream& err) {
  const LoadedDetector loaded = load_detector(a.detector);
  if (!loaded.hash_matches()) {
    err << "WARNING: detector training data hash mismatch (stored " << std::hex
        << loaded.stored_hash << ", computed " << loaded.computed_hash << std::dec
        << "); the detector file may have been edited or corrupted\n";
  }
  const auto model = load_classifier(a.classifier);
  const BaardDetector& det = loaded.detector;
  Matrix x = load_features(a.input);
  if (x.rows() > 0 && x.cols() != model->input_dim()) {
    throw InvalidArgument("input has " + std::to_string(x.cols()) + " features, classifier expects " +
                          std::to_string(model->input_dim()));
  }
  if (det.train() && det.train()->feature_dim() != model->input_dim()) {
    throw InvalidArgument("detector and classifier disagree on the input dimension");
  }
  if (a.raw) {
    if (!det.train() || !det.train()->norm) {
      throw InvalidArgument("--raw needs a detector fitted on normalized data");
    }
    for (std::size_t i = 0; i < x.rows(); ++i) normalize_in_place(x.row(i), *det.train()->norm);
  }
  out << "index,predicted,verdict,stage\n";
  std::array<std::size_t, 3> by_stage{};
  std::size_t rejected = 0;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const int pred = model->predict(x.row(i));
    const Verdict v = det.detect(x.row(i), pred);
    if (v.rejected) {
      ++rejected;
      ++by_stage[static_cast<std::size_t>(v.stage - 1)];
    }
    out << i << "," << pred << "," << (v.rejected ? "reject" : "accept") << "," << v.stage << "\n";
  }
  out << "# rows=" << x.rows() << " accepted=" << x.rows() - rejected << " rejected=" << rejected
      << " stage1=" << by_stage[0] << " stage2=" << by_stage[1] << " stage3=" << by_stage[2]
      << "\n";
  note(c, err, std::to_string(rejected) + " of " + std::to_string(x.rows()) + " rejected");
  return kOk;
}

struct GridArgs {
  std::string detector;
  std::string classifier;
  std::size_t resolution = 0;
  std::vector<double> bounds;
};

int cmd_grid(const Common& c, const GridArgs& a, std::ostream& out, std::ostream& err) {
  GridSpec spec;
  if (!c.config.empty()) spec = config_with_overrides(c).grid;
  if (a.resolution > 0) spec.resolution = a.resolution;
  if (!a.bounds.empty()) {
    if (a.bounds.size() != 4 || a.bounds[0] >= a.bounds[1] || a.bounds[2] >= a.bounds[3]) {
      throw ConfigError("--bounds", "expected x_min x_max y_min y_max with min < max");
    }
    spec.bounds = {a.bounds[0], a.bounds[1], a.bounds[2], a.bounds[3]};
  }
  const LoadedDetector loaded = load_detector(a.detector);
  if (!loaded.hash_matches()) err << "WARNING: detector training data hash mismatch\n";
  const auto model = load_classifier(a.classifier);
  const RegionGrid grid = reject_region_grid(loaded.detector, *model, spec.bounds, spec.resolution);
  const fs::path dir = c.out.empty() ? fs::path("grid") : fs::path(c.out);
  fs::create_directories(dir);
  write_text(dir / "grid_predicted.csv", grid_predicted_csv(grid));
  static constexpr const char* kNames[] = {"stage1", "stage2", "stage3", "chained"};
  for (std::size_t label = 0; label < grid.rejects.size(); ++label) {
    for (std::size_t s = 0; s < 4; ++s) {
      const fs::path file = dir / ("grid_label" + std::to_string(label) + "_" + kNames[s] + ".csv");
      write_text(file, grid_csv(grid, static_cast<int>(label), s));
      out << file.string() << "\n";
    }
  }
  note(c, err, "wrote " + std::to_string(grid.rejects.size() * 4 + 1) + " rasters to " + dir.string());
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Adversarial-example detection experiments", "baard"};
  app.require_subcommand(1);
  app.footer("Exit codes: 0 success, 1 runtime failure, 2 invalid input or configuration.");

  Common common;
  AttackArgs attack;
  FitArgs fit;
  DetectArgs detect;
  GridArgs grid;

  auto* run_cmd = app.add_subcommand("run", "run a full experiment from a config");
  add_common(*run_cmd, common, true);

  auto* train_cmd = app.add_subcommand("train", "train a classifier and write the data split");
  add_common(*train_cmd, common, true);

  auto* attack_cmd = app.add_subcommand("attack", "generate adversarial examples");
  add_common(*attack_cmd, common, false);
  attack_cmd->add_option("--classifier", attack.classifier, "classifier file")->required();
  attack_cmd->add_option("--data", attack.data, "labelled CSV written by train")->required();
  attack_cmd->add_option("--attack", attack.attack, "fgsm, pgd, deepfool, boundary or tree");
  attack_cmd->add_option("--epsilon", attack.epsilons, "perturbation budgets");
  attack_cmd->add_option("--norm", attack.norm, "linf or l2");
  attack_cmd->add_option("--max-iter", attack.max_iter, "iteration limit");

  auto* fit_cmd = app.add_subcommand("fit-detector", "fit and save a detector");
  add_common(*fit_cmd, common, false);
  fit_cmd->add_option("--train", fit.train, "training CSV written by train")->required();
  fit_cmd->add_option("--validation", fit.validation, "validation CSV written by train")->required();
  fit_cmd->add_option("--meta", fit.meta, "split.json written by train");

  auto* detect_cmd = app.add_subcommand("detect", "check inputs with a saved detector");
  add_common(*detect_cmd, common, false);
  detect_cmd->add_option("--detector", detect.detector, "detector file")->required();
  detect_cmd->add_option("--classifier", detect.classifier, "classifier file")->required();
  detect_cmd->add_option("--input", detect.input, "CSV of feature rows")->required();
  detect_cmd->add_flag("--raw", detect.raw, "inputs are unnormalized; apply the stored ranges");

  auto* grid_cmd = app.add_subcommand("grid", "write accept/reject rasters for 2-D data");
  add_common(*grid_cmd, common, false);
  grid_cmd->add_option("--detector", grid.detector, "detector file")->required();
  grid_cmd->add_option("--classifier", grid.classifier, "classifier file")->required();
  grid_cmd->add_option("--resolution", grid.resolution, "cells per axis");
  grid_cmd->add_option("--bounds", grid.bounds, "x_min x_max y_min y_max")->expected(4);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kValidationError;
  }

  try {
    if (run_cmd->parsed()) return cmd_run(common, out, err);
    if (train_cmd->parsed()) return cmd_train(common, out, err);
    if (attack_cmd->parsed()) return cmd_attack(common, attack, out, err);
    if (fit_cmd->parsed()) return cmd_fit_detector(common, fit, out, err);
    if (detect_cmd->parsed()) return cmd_detect(common, detect, out, err);
    if (grid_cmd->parsed()) return cmd_grid(common, grid, out, err);
  } catch (const ConfigError& e) {
    err << "error: invalid configuration: " << e.what() << "\n";
    return kValidationError;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kValidationError;
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << "\n";
    return kValidationError;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kRuntimeError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kValidationError;
}

}  // namespace baard::cli
