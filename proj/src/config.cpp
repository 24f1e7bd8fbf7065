#include "baard/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "baard/error.hpp"

namespace baard {

using nlohmann::json;

namespace {

// Reads the fields of one JSON object and remembers which keys were used so
// that leftovers can be reported as unknown.
class ObjectReader {
 public:
  ObjectReader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError(display(path_), "expected an object");
  }

  std::string key_path(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  const json* find(const std::string& key) {
    seen_.insert(key);
    const auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  const json& require(const std::string& key) {
    const json* v = find(key);
    if (v == nullptr) throw ConfigError(key_path(key), "required key is missing");
    return *v;
  }

  void number(const std::string& key, double& out) {
    if (const json* v = find(key)) out = as_number(*v, key_path(key));
  }

  void count(const std::string& key, std::size_t& out) {
    if (const json* v = find(key)) out = as_count(*v, key_path(key));
  }

  void flag(const std::string& key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) throw ConfigError(key_path(key), "expected true or false");
      out = v->get<bool>();
    }
  }

  void text(const std::string& key, std::string& out) {
    if (const json* v = find(key)) out = as_text(*v, key_path(key));
  }

  void seed(const std::string& key, std::uint64_t& out) {
    if (const json* v = find(key)) out = as_seed(*v, key_path(key));
  }

  void finish() const {
    for (const auto& [key, value] : obj_.items()) {
      if (!seen_.contains(key)) throw ConfigError(key_path(key), "unknown key");
    }
  }

  static std::string display(const std::string& p) { return p.empty() ? "<root>" : p; }

  static double as_number(const json& v, const std::string& path) {
    if (!v.is_number()) throw ConfigError(path, "expected a number");
    return v.get<double>();
  }

  static std::size_t as_count(const json& v, const std::string& path) {
    return static_cast<std::size_t>(as_seed(v, path));
  }

  static std::uint64_t as_seed(const json& v, const std::string& path) {
    const bool ok = v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
    if (!ok) throw ConfigError(path, "expected a non-negative integer");
    return v.get<std::uint64_t>();
  }

  static std::string as_text(const json& v, const std::string& path) {
    if (!v.is_string()) throw ConfigError(path, "expected a string");
    return v.get<std::string>();
  }

 private:
  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

void check(bool ok, const std::string& path, const std::string& what) {
  if (!ok) throw ConfigError(path, what);
}

std::vector<double> number_list(const json& v, const std::string& path) {
  check(v.is_array(), path, "expected an array of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out.push_back(ObjectReader::as_number(v[i], path + "[" + std::to_string(i) + "]"));
  }
  return out;
}

void check_q(double q, const std::string& path) {
  check(q > 0.0 && q <= 1.0, path, "must be in (0, 1], got " + json(q).dump());
}

DatasetSpec parse_dataset(const json& doc, const std::filesystem::path& base_dir) {
  ObjectReader r(doc, "dataset");
  DatasetSpec spec;
  const std::string source = ObjectReader::as_text(r.require("source"), "dataset.source");
  r.text("name", spec.name);
  if (source == "csv") {
    spec.source = DatasetSource::kCsv;
    std::filesystem::path p = ObjectReader::as_text(r.require("path"), "dataset.path");
    spec.path = p.is_relative() && !base_dir.empty() ? base_dir / p : p;
    if (const json* v = r.find("label_column")) {
      if (v->is_string()) {
        spec.label_column = v->get<std::string>();
      } else {
        spec.label_column = ObjectReader::as_count(*v, "dataset.label_column");
      }
    }
    r.flag("has_header", spec.has_header);
    if (spec.name.empty()) spec.name = spec.path.stem().string();
  } else if (source == "xor" || source == "blobs") {
    spec.source = source == "xor" ? DatasetSource::kXor : DatasetSource::kBlobs;
    r.count("n_per_class", spec.n_per_class);
    r.number("noise_sd", spec.noise_sd);
    r.seed("seed", spec.seed);
    check(spec.n_per_class >= 3, "dataset.n_per_class", "must be at least 3");
    check(spec.noise_sd >= 0.0, "dataset.noise_sd", "must be non-negative");
    if (spec.source == DatasetSource::kBlobs) {
      const json& c = r.require("centers");
      check(c.is_array() && c.size() >= 2, "dataset.centers", "expected at least two centres");
      for (std::size_t i = 0; i < c.size(); ++i) {
        const std::string p = "dataset.centers[" + std::to_string(i) + "]";
        spec.centers.push_back(number_list(c[i], p));
        check(!spec.centers.back().empty() &&
                  spec.centers.back().size() == spec.centers.front().size(),
              p, "centres must share a non-zero dimension");
      }
    }
    if (spec.name.empty()) spec.name = source;
  } else {
    throw ConfigError("dataset.source", "expected csv, xor or blobs, got '" + source + "'");
  }
  r.finish();
  return spec;
}

ClassifierSpec parse_classifier(const json& doc) {
  ObjectReader r(doc, "classifier");
  ClassifierSpec spec;
  spec.kind = ObjectReader::as_text(r.require("kind"), "classifier.kind");
  if (spec.kind == "mlp") {
    if (const json* v = r.find("hidden")) {
      check(v->is_array(), "classifier.hidden", "expected an array of layer widths");
      spec.hidden.clear();
      for (std::size_t i = 0; i < v->size(); ++i) {
        const std::string p = "classifier.hidden[" + std::to_string(i) + "]";
        spec.hidden.push_back(ObjectReader::as_count((*v)[i], p));
        check(spec.hidden.back() >= 1, p, "layer width must be at least 1");
      }
    }
    r.count("epochs", spec.epochs);
    r.number("learning_rate", spec.learning_rate);
    r.count("batch_size", spec.batch_size);
    check(spec.epochs >= 1, "classifier.epochs", "must be at least 1");
    check(spec.learning_rate > 0.0, "classifier.learning_rate", "must be positive");
    check(spec.batch_size >= 1, "classifier.batch_size", "must be at least 1");
  } else if (spec.kind == "cart") {
    r.count("max_depth", spec.max_depth);
    r.count("min_leaf", spec.min_leaf);
    check(spec.max_depth >= 1, "classifier.max_depth", "must be at least 1");
    check(spec.min_leaf >= 1, "classifier.min_leaf", "must be at least 1");
  } else if (spec.kind == "knn") {
    r.count("k", spec.k);
    check(spec.k >= 1, "classifier.k", "must be at least 1");
    std::string metric = std::string(to_string(spec.metric));
    r.text("metric", metric);
    try {
      spec.metric = metric_from_string(metric);
    } catch (const InvalidArgument& e) {
      throw ConfigError("classifier.metric", e.what());
    }
  } else {
    throw ConfigError("classifier.kind", "expected mlp, cart or knn, got '" + spec.kind + "'");
  }
  r.finish();
  return spec;
}

AttackSpec parse_attack(const json& doc, const std::string& path) {
  ObjectReader r(doc, path);
  AttackSpec spec;
  const std::string name = ObjectReader::as_text(r.require("name"), path + ".name");
  try {
    spec.kind = attack_from_string(name);
  } catch (const InvalidArgument& e) {
    throw ConfigError(path + ".name", e.what());
  }
  spec.norm = spec.kind == AttackKind::kDeepFool || spec.kind == AttackKind::kBoundary
                  ? Norm::kL2
                  : Norm::kLinf;
  if (is_budgeted(spec.kind)) {
    std::string norm = std::string(to_string(spec.norm));
    r.text("norm", norm);
    try {
      spec.norm = norm_from_string(norm);
    } catch (const InvalidArgument& e) {
      throw ConfigError(path + ".norm", e.what());
    }
    check(spec.kind != AttackKind::kFgsm || spec.norm == Norm::kLinf, path + ".norm",
          "fgsm supports linf only");
    spec.epsilons = number_list(r.require("epsilons"), path + ".epsilons");
    check(!spec.epsilons.empty(), path + ".epsilons", "must not be empty");
    for (double e : spec.epsilons) check(e >= 0.0, path + ".epsilons", "must be non-negative");
    if (const json* v = r.find("step_size")) {
      spec.step_size = ObjectReader::as_number(*v, path + ".step_size");
      check(*spec.step_size > 0.0, path + ".step_size", "must be positive");
    }
  } else {
    spec.epsilons = {0.0};
  }
  if (spec.kind == AttackKind::kFgsm) {
    spec.max_iter = 1;
  } else {
    r.count("max_iter", spec.max_iter);
    check(spec.max_iter >= 1, path + ".max_iter", "must be at least 1");
  }
  if (spec.kind == AttackKind::kDeepFool) {
    r.number("overshoot", spec.overshoot);
    check(spec.overshoot >= 0.0, path + ".overshoot", "must be non-negative");
  }
  if (spec.kind == AttackKind::kDecisionTree) {
    r.number("margin", spec.margin);
    check(spec.margin > 0.0, path + ".margin", "must be positive");
  }
  r.finish();
  return spec;
}

DetectorOptions parse_detector(const json& doc) {
  ObjectReader r(doc, "detector");
  DetectorOptions o;
  r.count("k2", o.k2);
  r.count("k3", o.k3);
  r.number("q1", o.q1);
  r.number("q2", o.q2);
  r.number("q3", o.q3);
  r.number("noise_sd", o.noise_sd);
  r.count("leaf_size", o.leaf_size);
  check(o.k2 >= 1, "detector.k2", "must be at least 1");
  check(o.k3 >= 1, "detector.k3", "must be at least 1");
  check_q(o.q1, "detector.q1");
  check_q(o.q2, "detector.q2");
  check_q(o.q3, "detector.q3");
  check(o.noise_sd >= 0.0, "detector.noise_sd", "must be non-negative");
  check(o.leaf_size >= 1, "detector.leaf_size", "must be at least 1");
  std::string metric = std::string(to_string(o.metric));
  r.text("metric", metric);
  try {
    o.metric = metric_from_string(metric);
  } catch (const InvalidArgument& e) {
    throw ConfigError("detector.metric", e.what());
  }
  std::string trimming = o.trimming == BoxTrimming::kJointCoverage ? "joint_coverage" : "per_feature";
  r.text("trimming", trimming);
  if (trimming == "joint_coverage") {
    o.trimming = BoxTrimming::kJointCoverage;
  } else if (trimming == "per_feature") {
    o.trimming = BoxTrimming::kPerFeature;
  } else {
    throw ConfigError("detector.trimming", "expected joint_coverage or per_feature");
  }
  if (const json* v = r.find("stages")) {
    check(v->is_array() && v->size() == 3, "detector.stages", "expected three booleans");
    for (std::size_t i = 0; i < 3; ++i) {
      check((*v)[i].is_boolean(), "detector.stages[" + std::to_string(i) + "]",
            "expected true or false");
      o.enabled[i] = (*v)[i].get<bool>();
    }
  }
  r.finish();
  return o;
}

}  // namespace

ExperimentConfig parse_config(const json& doc, const std::filesystem::path& base_dir) {
  ObjectReader r(doc, "");
  ExperimentConfig cfg;
  cfg.dataset = parse_dataset(r.require("dataset"), base_dir);

  if (const json* v = r.find("split")) {
    ObjectReader s(*v, "split");
    s.number("train", cfg.train_fraction);
    s.number("validation", cfg.validation_fraction);
    s.finish();
    check(cfg.train_fraction > 0.0, "split.train", "must be positive");
    check(cfg.validation_fraction > 0.0, "split.validation", "must be positive");
    check(cfg.train_fraction + cfg.validation_fraction < 1.0, "split",
          "train + validation must leave a test share");
  }
  r.flag("normalize", cfg.normalize);
  cfg.classifier = parse_classifier(r.require("classifier"));

  if (const json* v = r.find("attacks")) {
    check(v->is_array(), "attacks", "expected an array");
    for (std::size_t i = 0; i < v->size(); ++i) {
      cfg.attacks.push_back(parse_attack((*v)[i], "attacks[" + std::to_string(i) + "]"));
    }
  }
  if (const json* v = r.find("detector")) cfg.detector = parse_detector(*v);

  if (const json* v = r.find("evaluation")) {
    ObjectReader e(*v, "evaluation");
    if (const json* g = e.find("roc_q_grid")) {
      cfg.roc_q_grid = number_list(*g, "evaluation.roc_q_grid");
      for (double q : cfg.roc_q_grid) check_q(q, "evaluation.roc_q_grid");
    }
    if (const json* g = e.find("grid")) {
      ObjectReader gr(*g, "evaluation.grid");
      cfg.grid.enabled = true;
      gr.flag("enabled", cfg.grid.enabled);
      gr.count("resolution", cfg.grid.resolution);
      check(cfg.grid.resolution >= 1, "evaluation.grid.resolution", "must be at least 1");
      if (const json* b = gr.find("bounds")) {
        const auto vals = number_list(*b, "evaluation.grid.bounds");
        check(vals.size() == 4 && vals[0] < vals[1] && vals[2] < vals[3],
              "evaluation.grid.bounds", "expected [x_min, x_max, y_min, y_max] with min < max");
        cfg.grid.bounds = {vals[0], vals[1], vals[2], vals[3]};
      }
      gr.finish();
    }
    e.finish();
  }

  if (const json* v = r.find("seeds")) {
    check(v->is_array() && !v->empty(), "seeds", "expected a non-empty array");
    cfg.seeds.clear();
    for (std::size_t i = 0; i < v->size(); ++i) {
      cfg.seeds.push_back(ObjectReader::as_seed((*v)[i], "seeds[" + std::to_string(i) + "]"));
    }
  }
  if (const json* v = r.find("output_dir")) {
    cfg.output_dir = ObjectReader::as_text(*v, "output_dir");
  }
  r.finish();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path.string(), "cannot open config");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("<root>", std::string("malformed JSON: ") + e.what());
  }
  return parse_config(doc, path.parent_path());
}

json config_to_json(const ExperimentConfig& c) {
  json ds;
  ds["name"] = c.dataset.name;
  switch (c.dataset.source) {
    case DatasetSource::kCsv:
      ds["source"] = "csv";
      ds["path"] = c.dataset.path.string();
      if (const auto* s = std::get_if<std::string>(&c.dataset.label_column)) {
        ds["label_column"] = *s;
      } else {
        ds["label_column"] = std::get<std::size_t>(c.dataset.label_column);
      }
      ds["has_header"] = c.dataset.has_header;
      break;
    case DatasetSource::kXor:
    case DatasetSource::kBlobs:
      ds["source"] = c.dataset.source == DatasetSource::kXor ? "xor" : "blobs";
      ds["n_per_class"] = c.dataset.n_per_class;
      ds["noise_sd"] = c.dataset.noise_sd;
      ds["seed"] = c.dataset.seed;
      if (c.dataset.source == DatasetSource::kBlobs) ds["centers"] = c.dataset.centers;
      break;
  }

  json cl;
  cl["kind"] = c.classifier.kind;
  if (c.classifier.kind == "mlp") {
    cl["hidden"] = c.classifier.hidden;
    cl["epochs"] = c.classifier.epochs;
    cl["learning_rate"] = c.classifier.learning_rate;
    cl["batch_size"] = c.classifier.batch_size;
  } else if (c.classifier.kind == "cart") {
    cl["max_depth"] = c.classifier.max_depth;
    cl["min_leaf"] = c.classifier.min_leaf;
  } else {
    cl["k"] = c.classifier.k;
    cl["metric"] = to_string(c.classifier.metric);
  }

  json attacks = json::array();
  for (const auto& a : c.attacks) {
    json j;
    j["name"] = to_string(a.kind);
    if (is_budgeted(a.kind)) {
      j["norm"] = to_string(a.norm);
      j["epsilons"] = a.epsilons;
      if (a.step_size) j["step_size"] = *a.step_size;
    }
    if (a.kind != AttackKind::kFgsm) j["max_iter"] = a.max_iter;
    if (a.kind == AttackKind::kDeepFool) j["overshoot"] = a.overshoot;
    if (a.kind == AttackKind::kDecisionTree) j["margin"] = a.margin;
    attacks.push_back(j);
  }

  const auto& d = c.detector;
  json det = {
      {"k2", d.k2},
      {"k3", d.k3},
      {"q1", d.q1},
      {"q2", d.q2},
      {"q3", d.q3},
      {"metric", to_string(d.metric)},
      {"trimming", d.trimming == BoxTrimming::kJointCoverage ? "joint_coverage" : "per_feature"},
      {"stages", d.enabled},
      {"noise_sd", d.noise_sd},
      {"leaf_size", d.leaf_size},
  };

  json eval;
  eval["roc_q_grid"] = c.roc_q_grid;
  eval["grid"] = {{"enabled", c.grid.enabled},
                  {"resolution", c.grid.resolution},
                  {"bounds",
                   {c.grid.bounds.x_min, c.grid.bounds.x_max, c.grid.bounds.y_min,
                    c.grid.bounds.y_max}}};

  json out;
  out["dataset"] = ds;
  out["split"] = {{"train", c.train_fraction}, {"validation", c.validation_fraction}};
  out["normalize"] = c.normalize;
  out["classifier"] = cl;
  out["attacks"] = attacks;
  out["detector"] = det;
  out["evaluation"] = eval;
  out["seeds"] = c.seeds;
  out["output_dir"] = c.output_dir.string();
  return out;
}

Dataset load_dataset(const DatasetSpec& spec) {
  switch (spec.source) {
    case DatasetSource::kCsv:
      return load_csv(spec.path, spec.label_column, spec.has_header);
    case DatasetSource::kXor:
      return gen_xor(spec.n_per_class, spec.noise_sd, spec.seed);
    case DatasetSource::kBlobs:
      return gen_blobs(spec.n_per_class, spec.centers, spec.noise_sd, spec.seed);
  }
  throw InvalidArgument("unknown dataset source");
}

}  // namespace baard
