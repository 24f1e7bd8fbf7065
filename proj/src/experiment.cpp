#include "baard/experiment.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <map>
#include <sstream>

#include "baard/error.hpp"
#include "baard/random.hpp"

namespace baard {

using nlohmann::json;

std::string format_number(double v) {
  if (std::isnan(v)) return "";
  return json(v).dump();
}

Split prepare_split(const Dataset& full, const ExperimentConfig& config, std::uint64_t seed) {
  SplitSpec spec;
  spec.train_fraction = config.train_fraction;
  spec.validation_fraction = config.validation_fraction;
  spec.seed = seed;
  Split split = stratified_split(full, spec);
  if (config.normalize) {
    const Normalization norm = fit_minmax(split.train);
    split.train = apply_normalization(split.train, norm);
    split.validation = apply_normalization(split.validation, norm);
    split.test = apply_normalization(split.test, norm);
  }
  return split;
}

std::unique_ptr<Classifier> train_classifier(const ClassifierSpec& spec, const Dataset& train,
                                             std::uint64_t seed) {
  if (spec.kind == "mlp") {
    std::vector<std::size_t> sizes = {train.feature_dim()};
    sizes.insert(sizes.end(), spec.hidden.begin(), spec.hidden.end());
    sizes.push_back(static_cast<std::size_t>(train.class_count));
    MlpTrainOptions opts;
    opts.epochs = spec.epochs;
    opts.learning_rate = spec.learning_rate;
    opts.batch_size = spec.batch_size;
    opts.seed = seed;
    return std::make_unique<Mlp>(mlp_fit(train, sizes, opts));
  }
  if (spec.kind == "cart") {
    CartOptions opts;
    opts.max_depth = spec.max_depth;
    opts.min_leaf = spec.min_leaf;
    opts.seed = seed;
    return std::make_unique<CartTree>(cart_fit(train, opts));
  }
  if (spec.kind == "knn") return std::make_unique<KnnClassifier>(train, spec.k, spec.metric);
  throw InvalidArgument("unknown classifier kind '" + spec.kind + "'");
}

AttackBudget make_budget(const AttackSpec& spec, double epsilon, std::uint64_t seed) {
  AttackBudget b;
  b.epsilon = epsilon;
  b.norm = spec.norm;
  b.max_iter = spec.max_iter;
  b.step_size = spec.step_size;
  b.seed = seed;
  b.overshoot = spec.overshoot;
  b.margin = spec.margin;
  return b;
}

namespace {

struct SeedState {
  Split split;
  std::unique_ptr<Classifier> classifier;
  BaardDetector detector;
  std::vector<int> test_pred;
  std::vector<int> val_pred;
  double clean_accuracy = 0.0;
  double fpr = 0.0;
  std::array<std::size_t, 3> benign_stage_rejects{};
};

struct CellSpec {
  std::size_t seed_index = 0;
  std::size_t attack_index = 0;
  std::size_t epsilon_index = 0;
};

struct CellResult {
  DefenseScore score;
  std::array<std::optional<RocCurve>, 3> roc;
};

template <typename F>
auto in_phase(const std::string& phase, F&& fn) {
  try {
    return fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const IoError&) {
    throw;
  } catch (const std::exception& e) {
    throw Error(phase + ": " + e.what());
  }
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::uint64_t classifier_seed(std::uint64_t s) { return stream_seed(s, 1); }
std::uint64_t detector_seed(std::uint64_t s) { return stream_seed(s, 2); }
std::uint64_t attack_seed(std::uint64_t s, std::size_t cell) {
  return stream_seed(stream_seed(s, 3), cell);
}

std::vector<int> predictions(const Classifier& c, const Matrix& m) {
  std::vector<int> out(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) out[i] = c.predict(m.row(i));
  return out;
}

SeedState run_seed(const Dataset& full, const ExperimentConfig& cfg, std::uint64_t seed) {
  SeedState st;
  st.split = in_phase("split", [&] { return prepare_split(full, cfg, seed); });
  st.classifier = in_phase("train classifier", [&] {
    return train_classifier(cfg.classifier, st.split.train, classifier_seed(seed));
  });
  st.test_pred = predictions(*st.classifier, st.split.test.samples);
  st.val_pred = predictions(*st.classifier, st.split.validation.samples);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < st.test_pred.size(); ++i) ok += st.test_pred[i] == st.split.test.labels[i];
  st.clean_accuracy = static_cast<double>(ok) / static_cast<double>(st.test_pred.size());

  st.detector = in_phase("fit detector", [&] {
    DetectorOptions opts = cfg.detector;
    opts.seed = detector_seed(seed);
    return BaardDetector::fit(st.split.train, st.split.validation, opts);
  });
  std::size_t rejected = 0;
  for (std::size_t i = 0; i < st.test_pred.size(); ++i) {
    const Verdict v = st.detector.detect(st.split.test.samples.row(i), st.test_pred[i]);
    if (v.rejected) {
      ++rejected;
      ++st.benign_stage_rejects[static_cast<std::size_t>(v.stage - 1)];
    }
  }
  st.fpr = static_cast<double>(rejected) / static_cast<double>(st.test_pred.size());
  return st;
}

CellResult run_cell(const ExperimentConfig& cfg, const SeedState& st, std::uint64_t seed,
                    std::size_t cell_id, const AttackSpec& attack, double epsilon,
                    std::size_t workers) {
  CellResult out;
  const std::string name = std::string(to_string(attack.kind));
  const AttackBudget budget = make_budget(attack, epsilon, attack_seed(seed, cell_id));
  const AdversarialSet adv_test = in_phase("attack " + name, [&] {
    return generate_adversarial(*st.classifier, st.split.test, attack.kind, budget,
                                st.split.train.samples, workers);
  });
  out.score = score_defense(*st.classifier, st.detector, adv_test, st.split.test);

  if (cfg.roc_q_grid.empty()) return out;
  AttackBudget val_budget = budget;
  val_budget.seed = stream_seed(budget.seed, 0x5EED);
  const AdversarialSet adv_val = in_phase("attack " + name + " (validation)", [&] {
    return generate_adversarial(*st.classifier, st.split.validation, attack.kind, val_budget,
                                st.split.train.samples, workers);
  });
  Matrix successful;
  std::vector<int> successful_pred;
  for (std::size_t i = 0; i < adv_val.size(); ++i) {
    if (adv_val.success[i] == 0) continue;
    successful.append_row(adv_val.samples.row(i));
    successful_pred.push_back(adv_val.predicted[i]);
  }
  if (successful.rows() == 0) return out;
  for (Stage s : {Stage::kApplicability, Stage::kReliability, Stage::kDecidability}) {
    const auto i = static_cast<std::size_t>(s) - 1;
    if (!cfg.detector.enabled[i]) continue;
    const auto fitter = stage_fitter(st.detector, s, st.split.validation);
    out.roc[i] = roc_sweep(fitter, st.split.validation.samples, st.val_pred, successful,
                           successful_pred, cfg.roc_q_grid);
  }
  return out;
}

json roc_json(const RocCurve& c) {
  json pts = json::array();
  for (const auto& p : c.points) pts.push_back({{"q", p.q}, {"fpr", p.fpr}, {"tpr", p.tpr}});
  return {{"points", pts}, {"auc", c.auc}, {"degenerate", c.degenerate}};
}

// Mean and sample standard deviation of the non-NaN values.
json summarize(const std::vector<double>& values) {
  double sum = 0.0;
  std::size_t n = 0;
  for (double v : values) {
    if (std::isnan(v)) continue;
    sum += v;
    ++n;
  }
  if (n == 0) return {{"mean", nullptr}, {"sd", nullptr}, {"n", 0}};
  const double mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (double v : values) {
    if (!std::isnan(v)) ss += (v - mean) * (v - mean);
  }
  const double sd = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
  return {{"mean", mean}, {"sd", sd}, {"n", n}};
}

json nan_to_null(double v) { return std::isnan(v) ? json(nullptr) : json(v); }

}  // namespace

ExperimentReport run_experiment(const ExperimentConfig& cfg, std::size_t workers) {
  const Dataset full = in_phase("load dataset", [&] { return load_dataset(cfg.dataset); });
  if (cfg.grid.enabled && full.feature_dim() != 2) {
    throw ConfigError("evaluation.grid", "region grids need 2-D data, dataset has " +
                                             std::to_string(full.feature_dim()) + " features");
  }
  const std::size_t n_seeds = cfg.seeds.size();

  std::vector<SeedState> states(n_seeds);
  parallel_for(n_seeds, workers,
               [&](std::size_t i) { states[i] = run_seed(full, cfg, cfg.seeds[i]); });

  std::vector<CellSpec> cells;
  for (std::size_t s = 0; s < n_seeds; ++s) {
    for (std::size_t a = 0; a < cfg.attacks.size(); ++a) {
      for (std::size_t e = 0; e < cfg.attacks[a].epsilons.size(); ++e) cells.push_back({s, a, e});
    }
  }
  // Cells run concurrently; spare workers go to the per-input attack loop.
  const std::size_t inner = std::max<std::size_t>(1, workers / std::max<std::size_t>(cells.size(), 1));
  std::vector<CellResult> results(cells.size());
  parallel_for(cells.size(), workers, [&](std::size_t i) {
    const CellSpec& c = cells[i];
    const auto& attack = cfg.attacks[c.attack_index];
    // Cell id within the seed so the seed's cells do not depend on the seed list.
    std::size_t local = 0;
    for (std::size_t a = 0; a < c.attack_index; ++a) local += cfg.attacks[a].epsilons.size();
    local += c.epsilon_index;
    results[i] = run_cell(cfg, states[c.seed_index], cfg.seeds[c.seed_index], local, attack,
                          attack.epsilons[c.epsilon_index], inner);
  });

  ExperimentReport report;
  json runs = json::array();
  for (std::size_t s = 0; s < n_seeds; ++s) {
    const auto& st = states[s];
    json run;
    run["seed"] = cfg.seeds[s];
    run["sizes"] = {{"train", st.split.train.size()},
                    {"validation", st.split.validation.size()},
                    {"test", st.split.test.size()}};
    run["clean_accuracy"] = st.clean_accuracy;
    run["fpr"] = st.fpr;
    run["benign_stage_rejects"] = st.benign_stage_rejects;
    json thr;
    if (st.detector.reliability()) thr["stage2"] = st.detector.reliability()->thresholds;
    if (st.detector.decidability()) thr["stage3"] = st.detector.decidability()->thresholds;
    run["thresholds"] = thr;
    runs.push_back(run);
  }

  std::ostringstream csv;
  csv << "dataset,classifier,attack,norm,epsilon,seed,clean_acc,adv_acc_undefended,"
         "adv_acc_defended,fpr,tpr,n_adv,n_success,stage1_rejects,stage2_rejects,stage3_rejects\n";
  const std::string prefix = cfg.dataset.name + "," + cfg.classifier.kind + ",";
  if (cfg.attacks.empty()) {
    for (std::size_t s = 0; s < n_seeds; ++s) {
      const auto& st = states[s];
      csv << prefix << "none,,," << cfg.seeds[s] << "," << format_number(st.clean_accuracy)
          << ",,," << format_number(st.fpr) << ",,,," << st.benign_stage_rejects[0] << ","
          << st.benign_stage_rejects[1] << "," << st.benign_stage_rejects[2] << "\n";
    }
  }

  json cell_docs = json::array();
  using Key = std::pair<std::size_t, std::size_t>;
  std::map<Key, std::map<std::string, std::vector<double>>> grouped;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const CellSpec& c = cells[i];
    const auto& attack = cfg.attacks[c.attack_index];
    const double eps = attack.epsilons[c.epsilon_index];
    const auto& st = states[c.seed_index];
    const auto& sc = results[i].score;
    const double success_rate =
        static_cast<double>(sc.success_count) / static_cast<double>(sc.adversarial_count);

    json cd;
    cd["seed"] = cfg.seeds[c.seed_index];
    cd["attack"] = to_string(attack.kind);
    cd["norm"] = to_string(attack.norm);
    cd["epsilon"] = is_budgeted(attack.kind) ? json(eps) : json(nullptr);
    cd["clean_accuracy"] = st.clean_accuracy;
    cd["adv_acc_undefended"] = sc.undefended_accuracy;
    cd["adv_acc_defended"] = sc.accuracy_on_adv;
    cd["fpr"] = sc.fpr;
    cd["tpr"] = nan_to_null(sc.tpr);
    cd["n_adv"] = sc.adversarial_count;
    cd["n_success"] = sc.success_count;
    cd["n_failed"] = sc.adversarial_count - sc.success_count;
    cd["rejected"] = sc.rejected;
    cd["stage_rejects"] = sc.stage_rejects;
    json roc;
    for (std::size_t s = 0; s < 3; ++s) {
      if (results[i].roc[s]) roc["stage" + std::to_string(s + 1)] = roc_json(*results[i].roc[s]);
    }
    if (!roc.is_null()) cd["roc"] = roc;
    cell_docs.push_back(cd);

    auto& g = grouped[{c.attack_index, c.epsilon_index}];
    g["clean_accuracy"].push_back(st.clean_accuracy);
    g["adv_acc_undefended"].push_back(sc.undefended_accuracy);
    g["adv_acc_defended"].push_back(sc.accuracy_on_adv);
    g["fpr"].push_back(sc.fpr);
    g["tpr"].push_back(sc.tpr);
    g["success_rate"].push_back(success_rate);
    for (std::size_t s = 0; s < 3; ++s) {
      g["stage" + std::to_string(s + 1) + "_rejects"].push_back(
          static_cast<double>(sc.stage_rejects[s]));
      if (results[i].roc[s]) {
        g["stage" + std::to_string(s + 1) + "_auc"].push_back(results[i].roc[s]->auc);
      }
    }

    csv << prefix << to_string(attack.kind) << "," << to_string(attack.norm) << ","
        << (is_budgeted(attack.kind) ? format_number(eps) : "") << "," << cfg.seeds[c.seed_index]
        << "," << format_number(st.clean_accuracy) << "," << format_number(sc.undefended_accuracy)
        << "," << format_number(sc.accuracy_on_adv) << "," << format_number(sc.fpr) << ","
        << format_number(sc.tpr) << "," << sc.adversarial_count << "," << sc.success_count << ","
        << sc.stage_rejects[0] << "," << sc.stage_rejects[1] << "," << sc.stage_rejects[2]
        << "\n";
  }

  std::vector<double> clean;
  std::vector<double> fpr;
  for (const auto& st : states) {
    clean.push_back(st.clean_accuracy);
    fpr.push_back(st.fpr);
  }
  json summary;
  summary["clean"] = {{"clean_accuracy", summarize(clean)}, {"fpr", summarize(fpr)}};
  json attack_summary = json::array();
  for (const auto& [key, metrics] : grouped) {
    const auto& attack = cfg.attacks[key.first];
    json entry;
    entry["attack"] = to_string(attack.kind);
    entry["norm"] = to_string(attack.norm);
    entry["epsilon"] = is_budgeted(attack.kind) ? json(attack.epsilons[key.second]) : json(nullptr);
    json m;
    for (const auto& [name, values] : metrics) m[name] = summarize(values);
    entry["metrics"] = m;
    attack_summary.push_back(entry);
  }
  summary["attacks"] = attack_summary;

  json& doc = report.doc;
  doc["format"] = "baard.report/1";
  doc["generated_at"] = utc_timestamp();
  doc["config"] = config_to_json(cfg);
  doc["dataset"] = {{"name", cfg.dataset.name},
                    {"samples", full.size()},
                    {"features", full.feature_dim()},
                    {"classes", full.class_count},
                    {"label_names", full.label_names}};
  doc["runs"] = runs;
  doc["cells"] = cell_docs;
  doc["summary"] = summary;

  if (cfg.grid.enabled) {
    const auto& st = states.front();
    report.grid = in_phase("region grid", [&] {
      return reject_region_grid(st.detector, *st.classifier, cfg.grid.bounds, cfg.grid.resolution);
    });
    json files = json::array();
    files.push_back("grid_predicted.csv");
    for (int c = 0; c < full.class_count; ++c) {
      for (const char* s : {"stage1", "stage2", "stage3", "chained"}) {
        files.push_back("grid_label" + std::to_string(c) + "_" + s + ".csv");
      }
    }
    doc["grid"] = {{"seed", cfg.seeds.front()},
                   {"resolution", cfg.grid.resolution},
                   {"bounds",
                    {cfg.grid.bounds.x_min, cfg.grid.bounds.x_max, cfg.grid.bounds.y_min,
                     cfg.grid.bounds.y_max}},
                   {"files", files}};
  }
  report.csv = csv.str();
  return report;
}

std::string grid_csv(const RegionGrid& grid, int label, std::size_t stage) {
  const auto& cells = grid.rejects.at(static_cast<std::size_t>(label)).at(stage);
  std::string out;
  for (std::size_t r = 0; r < grid.resolution; ++r) {
    for (std::size_t c = 0; c < grid.resolution; ++c) {
      if (c > 0) out += ',';
      out += cells[r * grid.resolution + c] != 0 ? '1' : '0';
    }
    out += '\n';
  }
  return out;
}

std::string grid_predicted_csv(const RegionGrid& grid) {
  std::string out;
  for (std::size_t r = 0; r < grid.resolution; ++r) {
    for (std::size_t c = 0; c < grid.resolution; ++c) {
      if (c > 0) out += ',';
      out += std::to_string(grid.predicted[r * grid.resolution + c]);
    }
    out += '\n';
  }
  return out;
}

namespace {

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path.string(), "cannot write");
  out << text;
  if (!out) throw IoError(path.string(), "write failed");
}

}  // namespace

void write_report(const ExperimentReport& report, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError(dir.string(), "cannot create output directory");
  write_file(dir / "report.json", report.doc.dump(2) + "\n");
  write_file(dir / "report.csv", report.csv);
  if (report.grid) {
    const auto& g = *report.grid;
    write_file(dir / "grid_predicted.csv", grid_predicted_csv(g));
    static constexpr const char* kNames[] = {"stage1", "stage2", "stage3", "chained"};
    for (std::size_t c = 0; c < g.rejects.size(); ++c) {
      for (std::size_t s = 0; s < 4; ++s) {
        write_file(dir / ("grid_label" + std::to_string(c) + "_" + kNames[s] + ".csv"),
                   grid_csv(g, static_cast<int>(c), s));
      }
    }
  }
}

std::filesystem::path versioned_output_dir(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  const auto taken = [](const fs::path& p) {
    return fs::exists(p) && !(fs::is_directory(p) && fs::is_empty(p));
  };
  if (!taken(dir)) return dir;
  for (std::size_t i = 1;; ++i) {
    fs::path candidate = dir;
    candidate += "-" + std::to_string(i);
    if (!taken(candidate)) return candidate;
  }
}

}  // namespace baard
