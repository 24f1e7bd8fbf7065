#include <cstdio>

#include "baard/detector.hpp"

namespace baard {

using nlohmann::json;

namespace {

constexpr const char* kFormat = "baard.detector/1";

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t parse_hex(const std::string& s) {
  std::size_t used = 0;
  const auto v = std::stoull(s, &used, 16);
  if (used != s.size()) throw InvalidArgument("malformed hash '" + s + "'");
  return v;
}

std::string trimming_name(BoxTrimming t) {
  return t == BoxTrimming::kPerFeature ? "per_feature" : "joint_coverage";
}

BoxTrimming trimming_from(const std::string& s) {
  if (s == "per_feature") return BoxTrimming::kPerFeature;
  if (s == "joint_coverage") return BoxTrimming::kJointCoverage;
  throw InvalidArgument("unknown box trimming '" + s + "'");
}

}  // namespace

json detector_to_json(const BaardDetector& detector) {
  const auto& train = detector.train();
  if (!train) throw InvalidArgument("detector has no training data to serialize");
  const auto& o = detector.options();
  json doc;
  doc["format"] = kFormat;
  doc["options"] = {{"q1", o.q1},
                    {"q2", o.q2},
                    {"q3", o.q3},
                    {"k2", o.k2},
                    {"k3", o.k3},
                    {"metric", std::string(to_string(o.metric))},
                    {"noise_sd", o.noise_sd},
                    {"trimming", trimming_name(o.trimming)},
                    {"leaf_size", o.leaf_size},
                    {"seed", o.seed}};
  doc["enabled"] = {detector.enabled(Stage::kApplicability), detector.enabled(Stage::kReliability),
                    detector.enabled(Stage::kDecidability)};

  if (const auto& app = detector.applicability()) {
    json boxes = json::array();
    for (const auto& box : app->boxes) boxes.push_back({{"low", box.low}, {"high", box.high}});
    doc["applicability"] = {{"q", app->q}, {"boxes", boxes}};
  } else {
    doc["applicability"] = nullptr;
  }
  if (const auto& rel = detector.reliability()) {
    doc["reliability"] = {{"k", rel->k},
                          {"q", rel->q},
                          {"metric", std::string(to_string(rel->metric))},
                          {"thresholds", rel->thresholds}};
  } else {
    doc["reliability"] = nullptr;
  }
  if (const auto& dec = detector.decidability()) {
    doc["decidability"] = {{"k", dec->k},
                           {"q", dec->q},
                           {"metric", std::string(to_string(dec->metric))},
                           {"thresholds", dec->thresholds}};
  } else {
    doc["decidability"] = nullptr;
  }

  json rows = json::array();
  for (std::size_t i = 0; i < train->size(); ++i) {
    const auto r = train->samples.row(i);
    rows.push_back(std::vector<double>(r.begin(), r.end()));
  }
  doc["train"] = {{"samples", rows},
                  {"labels", train->labels},
                  {"class_count", train->class_count},
                  {"label_names", train->label_names},
                  {"content_hash", hex(content_hash(*train))}};
  if (train->norm) {
    json norm = json::array();
    for (const auto& r : *train->norm) norm.push_back({r.min, r.max});
    doc["normalization"] = norm;
  } else {
    doc["normalization"] = nullptr;
  }
  return doc;
}

LoadedDetector detector_from_json(const json& doc) {
  if (doc.at("format").get<std::string>() != kFormat) {
    throw InvalidArgument("not a detector document (format '" +
                          doc.at("format").get<std::string>() + "')");
  }
  const auto& t = doc.at("train");
  Dataset train;
  const auto rows = t.at("samples").get<std::vector<std::vector<double>>>();
  train.samples = Matrix(0, rows.empty() ? 0 : rows.front().size());
  for (const auto& r : rows) train.samples.append_row(r);
  train.labels = t.at("labels").get<std::vector<int>>();
  train.class_count = t.at("class_count").get<int>();
  train.label_names = t.at("label_names").get<std::vector<std::string>>();
  if (!doc.at("normalization").is_null()) {
    Normalization norm;
    for (const auto& r : doc.at("normalization")) {
      norm.push_back({r.at(0).get<double>(), r.at(1).get<double>()});
    }
    train.norm = std::move(norm);
  }
  train.validate();

  const auto& jo = doc.at("options");
  DetectorOptions o;
  o.q1 = jo.at("q1").get<double>();
  o.q2 = jo.at("q2").get<double>();
  o.q3 = jo.at("q3").get<double>();
  o.k2 = jo.at("k2").get<std::size_t>();
  o.k3 = jo.at("k3").get<std::size_t>();
  o.metric = metric_from_string(jo.at("metric").get<std::string>());
  o.noise_sd = jo.at("noise_sd").get<double>();
  o.trimming = trimming_from(jo.at("trimming").get<std::string>());
  o.leaf_size = jo.at("leaf_size").get<std::size_t>();
  o.seed = jo.at("seed").get<std::uint64_t>();
  const auto enabled = doc.at("enabled").get<std::vector<bool>>();
  if (enabled.size() != 3) throw InvalidArgument("'enabled' must list three stages");
  o.enabled = {enabled[0], enabled[1], enabled[2]};

  LoadedDetector out;
  out.stored_hash = parse_hex(t.at("content_hash").get<std::string>());
  out.computed_hash = content_hash(train);

  BaardDetector det(o, std::make_shared<const Dataset>(train));
  const auto builder = ball_tree_builder(o.leaf_size);

  if (!doc.at("applicability").is_null()) {
    ApplicabilityModel app;
    app.q = doc["applicability"].at("q").get<double>();
    for (const auto& b : doc["applicability"].at("boxes")) {
      app.boxes.push_back({b.at("low").get<std::vector<double>>(),
                           b.at("high").get<std::vector<double>>()});
    }
    if (app.boxes.size() != static_cast<std::size_t>(train.class_count)) {
      throw InvalidArgument("applicability boxes do not match the class count");
    }
    det.set_applicability(std::move(app));
  }
  if (!doc.at("reliability").is_null()) {
    const auto& jr = doc["reliability"];
    ReliabilityModel rel;
    rel.k = jr.at("k").get<std::size_t>();
    rel.q = jr.at("q").get<double>();
    rel.metric = metric_from_string(jr.at("metric").get<std::string>());
    rel.thresholds = jr.at("thresholds").get<std::vector<double>>();
    for (int c = 0; c < train.class_count; ++c) {
      Matrix points(0, train.feature_dim());
      std::vector<int> ids;
      for (std::size_t i = 0; i < train.size(); ++i) {
        if (train.labels[i] == c) {
          points.append_row(train.samples.row(i));
          ids.push_back(static_cast<int>(i));
        }
      }
      rel.class_indices.push_back(builder(points, std::move(ids), rel.metric));
    }
    det.set_reliability(std::move(rel));
  }
  if (!doc.at("decidability").is_null()) {
    const auto& jd = doc["decidability"];
    DecidabilityModel dec;
    dec.k = jd.at("k").get<std::size_t>();
    dec.q = jd.at("q").get<double>();
    dec.metric = metric_from_string(jd.at("metric").get<std::string>());
    dec.thresholds = jd.at("thresholds").get<std::vector<double>>();
    dec.class_count = train.class_count;
    dec.train_labels = train.labels;
    std::vector<int> ids(train.size());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
    dec.index = builder(train.samples, std::move(ids), dec.metric);
    det.set_decidability(std::move(dec));
  }
  for (int s = 0; s < 3; ++s) det.set_enabled(static_cast<Stage>(s + 1), o.enabled[static_cast<std::size_t>(s)]);
  out.detector = std::move(det);
  return out;
}

}  // namespace baard
